//! Server-side inspection of uploads against the broadcast model.
//!
//! A plain free-rider returns the broadcast bit for bit and is caught by an
//! exact comparison. Disguised free-riders are not flagged; their increment
//! statistics are reported so that non-decaying or mis-shaped noise can be
//! inspected.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federation::{Role, RoundTrace};
use crate::types::ParameterVector;

/// Largest accepted comparison tolerance.
pub const MAX_TOLERANCE: f64 = 1e-15;

fn check_tolerance(tolerance: f64) -> Result<()> {
    if !(0.0..=MAX_TOLERANCE).contains(&tolerance) {
        return Err(Error::domain(format!(
            "detection tolerance must lie in [0, {MAX_TOLERANCE:e}], got {tolerance}"
        )));
    }
    Ok(())
}

/// Flags every upload whose coordinates all lie within `tolerance` of the
/// broadcast. With `tolerance == 0` this is exact equality.
pub fn flag_plain(broadcast: &ParameterVector, uploads: &[ParameterVector], tolerance: f64) -> Result<Vec<bool>> {
    check_tolerance(tolerance)?;
    uploads
        .iter()
        .map(|u| Ok(u.max_abs_diff(broadcast)? <= tolerance))
        .collect()
}

/// Root mean square of `upload − broadcast`.
pub fn increment_rms(broadcast: &ParameterVector, upload: &ParameterVector) -> Result<f64> {
    let d = upload.sub(broadcast)?;
    Ok((d.iter().map(|x| x * x).sum::<f64>() / d.dim() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClientRoundStatus {
    pub round: usize,
    pub client: usize,
    pub role: Role,
    pub flagged_plain: bool,
    pub increment_rms: f64,
    /// Rounds in a row, up to and including this one, in which the client was flagged.
    pub consecutive_flag_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientSummary {
    pub client: usize,
    pub role: Role,
    pub rounds: usize,
    pub flagged_rounds: usize,
    pub flag_rate: f64,
    pub mean_increment_rms: f64,
    /// Least-squares slope of `ln rms` against `ln(t + 1)`; `None` with fewer
    /// than two positive observations.
    pub log_log_slope: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub tolerance: f64,
    pub entries: Vec<ClientRoundStatus>,
    pub clients: Vec<ClientSummary>,
}

fn log_log_slope(rms: &[(usize, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rms
        .iter()
        .filter(|(_, r)| *r > 0.0)
        .map(|&(t, r)| (((t + 1) as f64).ln(), r.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Inspects every upload of a recorded run.
pub fn detect(trace: &[RoundTrace], tolerance: f64) -> Result<DetectionReport> {
    check_tolerance(tolerance)?;
    let mut entries = Vec::new();
    let mut streak: Vec<usize> = Vec::new();
    // per client: role, (round, rms) observations, flagged rounds
    type History = (Role, Vec<(usize, f64)>, usize);
    let mut history: Vec<History> = Vec::new();
    for r in trace {
        let params: Vec<ParameterVector> = r.uploads.iter().map(|u| u.params.clone()).collect();
        let flags = flag_plain(&r.broadcast, &params, tolerance)?;
        for (u, flagged) in r.uploads.iter().zip(flags) {
            if u.client >= streak.len() {
                streak.resize(u.client + 1, 0);
                history.resize(u.client + 1, (u.role, Vec::new(), 0));
            }
            streak[u.client] = if flagged { streak[u.client] + 1 } else { 0 };
            let rms = increment_rms(&r.broadcast, &u.params)?;
            let h = &mut history[u.client];
            h.0 = u.role;
            h.1.push((r.round, rms));
            h.2 += flagged as usize;
            entries.push(ClientRoundStatus {
                round: r.round,
                client: u.client,
                role: u.role,
                flagged_plain: flagged,
                increment_rms: rms,
                consecutive_flag_count: streak[u.client],
            });
        }
    }
    let clients = history
        .into_iter()
        .enumerate()
        .filter(|(_, h)| !h.1.is_empty())
        .map(|(client, (role, rms, flagged))| ClientSummary {
            client,
            role,
            rounds: rms.len(),
            flagged_rounds: flagged,
            flag_rate: flagged as f64 / rms.len() as f64,
            mean_increment_rms: rms.iter().map(|r| r.1).sum::<f64>() / rms.len() as f64,
            log_log_slope: log_log_slope(&rms),
        })
        .collect();
    Ok(DetectionReport {
        tolerance,
        entries,
        clients,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::{FreeRiderSpec, NoiseSchedule};
    use crate::federation::{run_training, FairClient, Scenario, Scheme};
    use crate::local::OuClientSpec;

    fn pv(v: &[f64]) -> ParameterVector {
        ParameterVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn exact_copy_is_flagged() {
        let b = pv(&[0.1, 0.2]);
        let flags = flag_plain(&b, &[b.clone(), pv(&[0.1, 0.2 + 1e-12])], 0.0).unwrap();
        assert_eq!(flags, vec![true, false]);
        assert!(flag_plain(&b, std::slice::from_ref(&b), 1e-3).is_err());
        assert!(flag_plain(&b, std::slice::from_ref(&b), -1.0).is_err());
        assert!(flag_plain(&b, &[pv(&[1.0])], 0.0).is_err());
    }

    fn scenario(riders: Vec<FreeRiderSpec>) -> Scenario {
        let fair = vec![
            FairClient::Ou(OuClientSpec::new(100, 0.5, pv(&[1.0, -1.0]), 0.1).unwrap()),
            FairClient::Ou(OuClientSpec::new(100, 0.5, pv(&[0.0, 2.0]), 0.1).unwrap()),
        ];
        Scenario::new(fair, riders, Scheme::FedAvg, 40, ParameterVector::zeros(2).unwrap(), 5).unwrap()
    }

    #[test]
    fn plain_riders_flagged_every_round_fair_never() {
        let s = scenario(vec![FreeRiderSpec::plain(100)]);
        let report = detect(&run_training(&s).unwrap(), 0.0).unwrap();
        assert_eq!(report.entries.len(), 40 * 3);
        for e in &report.entries {
            assert_eq!(e.flagged_plain, e.role == Role::Rider);
            if e.role == Role::Rider {
                assert_eq!(e.consecutive_flag_count, e.round + 1);
                assert_eq!(e.increment_rms, 0.0);
            }
        }
        let rider = &report.clients[2];
        assert_eq!((rider.flagged_rounds, rider.flag_rate), (40, 1.0));
        assert_eq!(rider.log_log_slope, None);
        assert_eq!(report.clients[0].flagged_rounds, 0);
    }

    #[test]
    fn disguised_riders_pass_and_decay_shows_in_slope() {
        let s = scenario(vec![
            FreeRiderSpec::disguised(50, NoiseSchedule::Fixed { phi: 0.2 }),
            FreeRiderSpec::disguised(50, NoiseSchedule::PowerDecay { sigma: 1.0, gamma: 1.0 }),
        ]);
        let report = detect(&run_training(&s).unwrap(), 0.0).unwrap();
        assert!(report.entries.iter().all(|e| !e.flagged_plain));
        let fixed = report.clients[2].log_log_slope.unwrap();
        let decaying = report.clients[3].log_log_slope.unwrap();
        assert!(fixed.abs() < 0.3, "{fixed}");
        assert!((decaying + 1.0).abs() < 0.3, "{decaying}");
    }

    #[test]
    fn slope_of_power_law() {
        let rms: Vec<(usize, f64)> = (0..10).map(|t| (t, 3.0 * ((t + 1) as f64).powf(-0.7))).collect();
        assert!((log_log_slope(&rms).unwrap() + 0.7).abs() < 1e-12);
        assert!(detect(&[], 0.0).unwrap().entries.is_empty());
    }
}
