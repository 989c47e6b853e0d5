//! CSV and JSON export of traces and reports.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::montecarlo::MomentReport;
use crate::detection::DetectionReport;
use crate::error::{Error, Result};
use crate::federation::{Role, RoundTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::invalid("format", format!("expected csv or json, got `{other}`"))),
        }
    }
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io("<csv>", io),
        other => Error::structural(format!("csv: {other:?}")),
    }
}

/// One row of a CSV trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub round: usize,
    pub client_id: usize,
    pub role: Role,
    pub params: Vec<f64>,
    pub loss: Option<f64>,
}

/// Writes `round, client_id, role, p0..p{d−1}[, loss]`, one row per upload.
/// The `loss` column is present when any upload carries a training loss.
/// Floats use the shortest representation that parses back exactly.
pub fn write_trace_csv<W: Write>(trace: &[RoundTrace], out: W) -> Result<()> {
    let dim = trace.first().map_or(0, |r| r.broadcast.dim());
    let with_loss = trace.iter().flat_map(|r| &r.uploads).any(|u| u.loss.is_some());
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["round", "client_id", "role"].iter().map(|s| s.to_string()).collect();
    header.extend((0..dim).map(|d| format!("p{d}")));
    if with_loss {
        header.push("loss".into());
    }
    w.write_record(&header).map_err(csv_err)?;
    for r in trace {
        for u in &r.uploads {
            let mut rec = vec![r.round.to_string(), u.client.to_string(), u.role.as_str().to_string()];
            rec.extend(u.params.iter().map(|p| p.to_string()));
            if with_loss {
                rec.push(u.loss.map_or_else(String::new, |l| l.to_string()));
            }
            w.write_record(&rec).map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Parses a CSV trace written by [`write_trace_csv`].
pub fn read_trace_csv(path: impl AsRef<Path>) -> Result<Vec<TraceRow>> {
    let path = path.as_ref();
    let parse_err = |m: String| Error::Parse {
        path: path.to_path_buf(),
        message: m,
    };
    let mut r = csv::Reader::from_path(path).map_err(|e| parse_err(e.to_string()))?;
    let header = r.headers().map_err(|e| parse_err(e.to_string()))?.clone();
    let with_loss = header.iter().next_back() == Some("loss");
    let dim = header.len() - 3 - with_loss as usize;
    r.records()
        .map(|rec| {
            let rec = rec.map_err(|e| parse_err(e.to_string()))?;
            let num = |i: usize| -> Result<f64> { rec[i].parse().map_err(|e| parse_err(format!("column {i}: {e}"))) };
            let role = match &rec[2] {
                "fair" => Role::Fair,
                "rider" => Role::Rider,
                other => return Err(parse_err(format!("unknown role `{other}`"))),
            };
            Ok(TraceRow {
                round: rec[0].parse().map_err(|e| parse_err(format!("round: {e}")))?,
                client_id: rec[1].parse().map_err(|e| parse_err(format!("client_id: {e}")))?,
                role,
                params: (0..dim).map(|d| num(3 + d)).collect::<Result<_>>()?,
                loss: match with_loss && !rec[3 + dim].is_empty() {
                    true => Some(num(3 + dim)?),
                    false => None,
                },
            })
        })
        .collect()
}

/// Serialises `value` as pretty JSON.
pub fn write_json<T: Serialize, W: Write>(value: &T, mut out: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| Error::structural(e.to_string()))?;
    writeln!(out).map_err(|e| Error::io("<json>", e))
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: format!("at `{}`: {}", e.path(), e.inner()),
    })
}

/// One row per checkpoint and coordinate.
pub fn write_report_csv<W: Write>(report: &MomentReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "round",
        "coordinate",
        "replicates",
        "mean",
        "variance",
        "mean_standard_error",
        "variance_standard_error",
        "theory_mean",
        "theory_variance",
        "exact_variance",
    ])
    .map_err(csv_err)?;
    for c in &report.checkpoints {
        for d in 0..c.mean.len() {
            w.write_record([
                c.round.to_string(),
                d.to_string(),
                c.replicates.to_string(),
                c.mean[d].to_string(),
                c.variance[d].to_string(),
                c.mean_standard_error[d].to_string(),
                c.variance_standard_error[d].to_string(),
                c.theory_mean.to_string(),
                c.theory_variance.to_string(),
                c.exact_variance.map_or_else(String::new, |v| v.to_string()),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

/// One row per client and round.
pub fn write_detection_csv<W: Write>(report: &DetectionReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "round",
        "client_id",
        "role",
        "flagged_plain",
        "increment_rms",
        "consecutive_flag_count",
    ])
    .map_err(csv_err)?;
    for e in &report.entries {
        w.write_record([
            e.round.to_string(),
            e.client.to_string(),
            e.role.as_str().to_string(),
            e.flagged_plain.to_string(),
            e.increment_rms.to_string(),
            e.consecutive_flag_count.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

/// Writes a trace to `path` in the requested format.
pub fn write_trace(trace: &[RoundTrace], path: impl AsRef<Path>, format: Format) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let relabel = |e: Error| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    };
    match format {
        Format::Csv => write_trace_csv(trace, &mut out).map_err(relabel)?,
        Format::Json => write_json(&trace, &mut out).map_err(relabel)?,
    }
    out.flush().map_err(|e| Error::io(path, e))
}
