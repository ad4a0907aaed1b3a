//! Command-line front end. Every subcommand writes one JSON report (or, for
//! `simulate`, a CSV plus a JSON truth file) and maps failures to exit codes:
//! 0 ok, 1 input or usage problem, 2 statistical failure or raised flag.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::dataset::{load_dataset, Dataset};
use crate::error::{Error, Result};
use crate::estimation::{
    fit_pattern, fitted_net_effects, pattern_discovery, proposition1_diagnostic, FittedNetEffect,
    PatternSuggestion, Proposition1Report, Residual,
};
use crate::net_effects::{exact_net_effects, verify_decomposition, DecompositionReport};
use crate::pattern::{parse_pattern, PatternSpec};
use crate::report::SCHEMA_VERSION;
use crate::simulator::{g_oracle, simulate, DgpSpec, DEFAULT_SEED};
use crate::stats::VarianceMode;
use crate::target::{SkippedTarget, StrataMode};

/// Largest tolerated `|θ − decomposition|` before `diagnose` raises a flag.
pub const DECOMPOSITION_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Parser)]
#[command(name = "seqnet", version, about = "Net effects of treatment sequences by point parametrization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a pattern of net effects to a dataset.
    Estimate(EstimateArgs),
    /// Exact net-effect table of a dataset, or the causal truth of a process.
    Oracle(OracleArgs),
    /// Draw a dataset from a data-generating process.
    Simulate(SimulateArgs),
    /// Covariance and decomposition checks on a dataset.
    Diagnose(DiagnoseArgs),
    /// Merge parameters of a fitted pattern that the data cannot tell apart.
    SuggestPattern(SuggestArgs),
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Observation CSV.
    #[arg(long)]
    data: PathBuf,
    /// `known:<sigma2>` or `estimated`.
    #[arg(long, default_value = "estimated", value_parser = parse_variance)]
    variance_mode: VarianceMode,
    /// Write the report here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    #[command(flatten)]
    common: DataArgs,
    /// Pattern file; the saturated pattern when omitted.
    #[arg(long)]
    pattern: Option<PathBuf>,
    /// Condition only on the previous treatment and covariate.
    #[arg(long)]
    markov: bool,
}

#[derive(Debug, Args)]
struct OracleArgs {
    /// Observation CSV whose exact net-effect table is wanted.
    #[arg(long, conflicts_with = "dgp", required_unless_present = "dgp")]
    data: Option<PathBuf>,
    /// Data-generating process whose causal net effects are wanted.
    #[arg(long)]
    dgp: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    dgp: PathBuf,
    /// Number of units.
    #[arg(long)]
    n: usize,
    /// Overrides the seed of the process file.
    #[arg(long)]
    seed: Option<u64>,
    /// CSV destination; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Truth JSON destination; defaults to `<out>.truth.json`.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    common: DataArgs,
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
}

#[derive(Debug, Args)]
struct SuggestArgs {
    #[command(flatten)]
    common: DataArgs,
    /// Indicator pattern to coarsen; the saturated pattern when omitted.
    #[arg(long)]
    pattern: Option<PathBuf>,
    #[arg(long)]
    markov: bool,
    /// Level of the equality tests.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
}

fn parse_variance(s: &str) -> std::result::Result<VarianceMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Serialize)]
pub struct FitReport {
    pub schema_version: u32,
    pub mode: StrataMode,
    pub variance_mode: VarianceMode,
    pub pattern: String,
    pub names: Vec<String>,
    pub phi_hat: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub fitted_net_effects: Vec<FittedNetEffect>,
    pub residuals: Vec<Residual>,
    pub dropped_targets: Vec<SkippedTarget>,
    pub rank: usize,
    pub chi2: f64,
    pub df: usize,
    pub pattern_p_value: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct DiagnoseReport {
    pub schema_version: u32,
    pub proposition1: Proposition1Report,
    pub decomposition: DecompositionReport,
    pub flags: usize,
}

#[derive(Debug, Serialize)]
struct SuggestReport {
    schema_version: u32,
    #[serde(flatten)]
    suggestion: PatternSuggestion,
}

/// Parses `args` (including the program name) and runs the subcommand,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Estimate(a) => cmd_estimate(&a),
        Command::Oracle(a) => cmd_oracle(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Diagnose(a) => cmd_diagnose(&a),
        Command::SuggestPattern(a) => cmd_suggest(&a),
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| {
        Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })
}

fn read_data(path: &Path) -> Result<Dataset> {
    let file = File::open(path)
        .map_err(|e| Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    load_dataset(BufReader::new(file))
}

fn read_pattern(path: Option<&Path>, d: &Dataset) -> Result<PatternSpec> {
    match path {
        Some(p) => parse_pattern(&read_text(p)?),
        None => Ok(PatternSpec::saturated(d.table())),
    }
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn mode(markov: bool) -> StrataMode {
    if markov {
        StrataMode::Markov
    } else {
        StrataMode::Full
    }
}

/// The report `estimate` prints.
pub fn estimate_report(
    d: &Dataset,
    spec: &PatternSpec,
    mode: StrataMode,
    variance: VarianceMode,
) -> Result<FitReport> {
    let fit = fit_pattern(spec, d.table(), mode, variance)?;
    let fitted = fitted_net_effects(&fit, spec, d.table())?;
    Ok(FitReport {
        schema_version: SCHEMA_VERSION,
        mode,
        variance_mode: variance,
        pattern: spec.to_string(),
        names: spec.names().into_iter().map(String::from).collect(),
        std_errors: fit.std_errors(),
        pattern_p_value: fit.pattern_p_value(),
        phi_hat: fit.phi_hat,
        covariance: fit.covariance,
        fitted_net_effects: fitted,
        residuals: fit.residuals,
        dropped_targets: fit.dropped_targets,
        rank: fit.rank,
        chi2: fit.chi2,
        df: fit.df,
    })
}

fn cmd_estimate(a: &EstimateArgs) -> Result<i32> {
    let d = read_data(&a.common.data)?;
    let spec = read_pattern(a.pattern.as_deref(), &d)?;
    let report = estimate_report(&d, &spec, mode(a.markov), a.common.variance_mode)?;
    write_json(&report, a.common.out.as_deref())?;
    Ok(0)
}

fn cmd_oracle(a: &OracleArgs) -> Result<i32> {
    if let Some(path) = &a.dgp {
        let dgp = DgpSpec::parse(&read_text(path)?)?;
        write_json(&g_oracle(&dgp)?.dump(), a.out.as_deref())?;
    } else {
        let d = read_data(a.data.as_deref().expect("clap requires one source"))?;
        write_json(&exact_net_effects(d.table())?.dump(), a.out.as_deref())?;
    }
    Ok(0)
}

fn cmd_simulate(a: &SimulateArgs) -> Result<i32> {
    let mut dgp = DgpSpec::parse(&read_text(&a.dgp)?)?;
    if let Some(seed) = a.seed {
        dgp = dgp.with_seed(seed);
    }
    let d = simulate(&dgp, a.n)?;
    let truth_path = a.truth.clone().or_else(|| {
        a.out.as_ref().map(|p| {
            let mut s = p.clone().into_os_string();
            s.push(".truth.json");
            PathBuf::from(s)
        })
    });
    match &a.out {
        Some(p) => d.write_csv(BufWriter::new(File::create(p)?))?,
        None => d.write_csv(io::stdout().lock())?,
    }
    if let Some(p) = truth_path {
        write_json(&g_oracle(&dgp)?.dump(), Some(&p))?;
    }
    Ok(0)
}

/// The report `diagnose` prints; `flags` counts raised flags.
pub fn diagnose_report(
    d: &Dataset,
    variance: VarianceMode,
    reps: usize,
    seed: u64,
) -> Result<DiagnoseReport> {
    let proposition1 = proposition1_diagnostic(d, variance, reps, seed)?;
    let decomposition = verify_decomposition(d.table());
    let flags =
        proposition1.flags().count() + decomposition.flagged(DECOMPOSITION_TOLERANCE).len();
    for w in &proposition1.warnings {
        log::warn!("{w}");
    }
    Ok(DiagnoseReport {
        schema_version: SCHEMA_VERSION,
        proposition1,
        decomposition,
        flags,
    })
}

fn cmd_diagnose(a: &DiagnoseArgs) -> Result<i32> {
    let d = read_data(&a.common.data)?;
    let report = diagnose_report(&d, a.common.variance_mode, a.reps, a.seed)?;
    write_json(&report, a.common.out.as_deref())?;
    if report.flags > 0 {
        eprintln!("diagnose: {} flag(s) raised", report.flags);
        return Ok(2);
    }
    Ok(0)
}

fn cmd_suggest(a: &SuggestArgs) -> Result<i32> {
    if !(a.alpha > 0.0 && a.alpha < 1.0) {
        return Err(Error::Usage("alpha must lie in (0, 1)".into()));
    }
    let d = read_data(&a.common.data)?;
    let spec = read_pattern(a.pattern.as_deref(), &d)?;
    let fit = fit_pattern(&spec, d.table(), mode(a.markov), a.common.variance_mode)?;
    let suggestion = pattern_discovery(&fit, &spec, a.alpha)?;
    write_json(
        &SuggestReport {
            schema_version: SCHEMA_VERSION,
            suggestion,
        },
        a.common.out.as_deref(),
    )?;
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn help_and_bad_flags() {
        assert_eq!(run(["seqnet", "--help"]), 0);
        assert_eq!(run(["seqnet", "estimate"]), 1);
        assert_eq!(run(["seqnet", "estimate", "--data", "x.csv", "--variance-mode", "known:-1"]), 1);
    }

    #[test]
    fn missing_files_exit_one() {
        assert_eq!(run(["seqnet", "oracle", "--data", "/nonexistent/d.csv"]), 1);
    }
}
