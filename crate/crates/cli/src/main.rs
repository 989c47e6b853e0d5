//! `freeride`: simulate, replicate and analyse free-rider attacks.
//!
//! Exit codes: 0 on success, 1 on invalid input (bad flags, scenario or
//! preconditions), 2 on failures while running.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use freeride_core::detection::detect;
use freeride_core::harness::{
    band_experiment, load_scenario, monte_carlo, read_json, write_detection_csv, write_json, write_report_csv,
    write_trace_csv, LoadedScenario,
};
use freeride_core::theory::{
    decaying_noise_asymptotic_variance, stationary_variance, variance_monotonic_in_mk, TheoryInputs,
};
use freeride_core::{run_training, Error, Result, RoundTrace};

#[derive(Parser)]
#[command(name = "freeride", version, about = "Free-rider attacks on federated averaging")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one training and export the per-client trace.
    Simulate(SimulateArgs),
    /// Estimate moments of the attacked-minus-fair gap over replicates.
    Montecarlo(MonteCarloArgs),
    /// Print the closed-form asymptotics of a scenario.
    Theory(TheoryArgs),
    /// Flag plain free-riders in a JSON trace.
    Detect(DetectArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario JSON file.
    #[arg(long)]
    scenario: PathBuf,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ScenarioArgs {
    fn load(&self) -> Result<LoadedScenario> {
        let mut loaded = load_scenario(&self.scenario)?;
        if let Some(seed) = self.seed {
            loaded.scenario.seed = seed;
        }
        Ok(loaded)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Output path (default: the scenario's `output.trace`, else stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Instead of a trace, compare the attacked run with this many fair-only
    /// seeds (SGD clients only) and emit the band report as JSON.
    #[arg(long, value_name = "SEEDS")]
    fair_band: Option<usize>,
    /// Standard deviation of the random initial parameters in band mode.
    #[arg(long, default_value_t = 0.0, requires = "fair_band")]
    init_scale: f64,
}

#[derive(Args)]
struct MonteCarloArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Number of replicates (default: the scenario's `replicate_count`).
    #[arg(long)]
    replicates: Option<usize>,
    /// Comma-separated checkpoint rounds (default: 50,100,200).
    #[arg(long, value_delimiter = ',')]
    checkpoints: Option<Vec<usize>>,
    /// Output path (default: the scenario's `output.report`, else stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Args)]
struct TheoryArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Also tabulate the plain variance over these free-rider totals M_K.
    #[arg(long, value_delimiter = ',')]
    mk_grid: Option<Vec<u64>>,
}

#[derive(Args)]
struct DetectArgs {
    /// Trace written by `simulate --format json`.
    #[arg(long)]
    trace: PathBuf,
    /// Largest coordinate difference still counted as an exact copy.
    #[arg(long, default_value_t = 0.0)]
    tolerance: f64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| Error::Io {
            path: p.to_path_buf(),
            source: e,
        })?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn finish(mut out: Box<dyn Write>, path: Option<&Path>) -> Result<()> {
    out.flush().map_err(|e| Error::Io {
        path: path.map_or_else(|| PathBuf::from("<stdout>"), Path::to_path_buf),
        source: e,
    })
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let loaded = args.scenario.load()?;
    let path = args.out.or(loaded.output.trace);
    let mut out = open_output(path.as_deref())?;
    if let Some(seeds) = args.fair_band {
        let report = band_experiment(&loaded.scenario, seeds, args.init_scale)?;
        write_json(&report, &mut out)?;
        return finish(out, path.as_deref());
    }
    let trace = run_training(&loaded.scenario)?;
    match args.format {
        Format::Csv => write_trace_csv(&trace, &mut out)?,
        Format::Json => write_json(&trace, &mut out)?,
    }
    finish(out, path.as_deref())
}

fn montecarlo(args: MonteCarloArgs) -> Result<()> {
    let loaded = args.scenario.load()?;
    let replicates = args.replicates.unwrap_or(loaded.replicates);
    let checkpoints = args.checkpoints.unwrap_or(loaded.checkpoints);
    let report = monte_carlo(&loaded.scenario, replicates, &checkpoints)?;
    let path = args.out.or(loaded.output.report);
    let mut out = open_output(path.as_deref())?;
    match args.format {
        Format::Csv => write_report_csv(&report, &mut out)?,
        Format::Json => write_json(&report, &mut out)?,
    }
    finish(out, path.as_deref())
}

fn theory(args: TheoryArgs) -> Result<()> {
    let loaded = args.scenario.load()?;
    let inputs = TheoryInputs::from_scenario(&loaded.scenario)?;
    let variance = decaying_noise_asymptotic_variance(&inputs)?;
    let exact = stationary_variance(&inputs)?;
    let mut out = io::stdout().lock();
    let lines = [
        format!("N = {}", inputs.total()),
        format!("M_K = {}", inputs.rider_total()),
        format!("epsilon = {:.6}", inputs.epsilon()),
        format!("ratio = {:.6}", inputs.ratio()),
        format!("asymptotic_mean = {:.6}", 0.0),
        format!("asymptotic_variance = {variance:.6}"),
        format!("stationary_variance = {exact:.6}"),
    ];
    for l in lines {
        writeln!(out, "{l}").map_err(stdout_err)?;
    }
    if let Some(grid) = args.mk_grid {
        let report = variance_monotonic_in_mk(&inputs.fair, &grid)?;
        writeln!(out, "M_K\tN\tplain_variance").map_err(stdout_err)?;
        for p in &report.points {
            writeln!(out, "{}\t{}\t{:.6}", p.rider_samples, p.total_samples, p.variance).map_err(stdout_err)?;
        }
        writeln!(out, "strictly_increasing = {}", report.strictly_increasing).map_err(stdout_err)?;
    }
    Ok(())
}

fn stdout_err(e: io::Error) -> Error {
    Error::Io {
        path: PathBuf::from("<stdout>"),
        source: e,
    }
}

fn detect_cmd(args: DetectArgs) -> Result<()> {
    let trace: Vec<RoundTrace> = read_json(&args.trace)?;
    let report = detect(&trace, args.tolerance)?;
    let mut out = open_output(args.out.as_deref())?;
    match args.format {
        Format::Csv => write_detection_csv(&report, &mut out)?,
        Format::Json => write_json(&report, &mut out)?,
    }
    finish(out, args.out.as_deref())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Montecarlo(a) => montecarlo(a),
        Command::Theory(a) => theory(a),
        Command::Detect(a) => detect_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
