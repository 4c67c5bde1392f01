//! Command-line front end.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::json;

use crate::adaptive::{adaptive_estimate, calibrate_c0_with, LepskiConfig, ResolutionGrid, KAPPA};
use crate::densities::{derive_seed, exact_t, sample, DensityDescriptor, TestDensity};
use crate::error::Error;
use crate::estimator::{
    estimate_truncated, truncated_exact, EstimatorConfig, TAG_SAMPLE, TAG_SPLIT,
};
use crate::harness::{export_results, run_experiment, ExperimentSpec};
use crate::needlets::{frame_diagnostics, NeedletFrame, DEFAULT_B};
use crate::theory::{oracle_table, reference_rows, write_table_csv, TableDefaults};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

const TAG_CALIBRATION: u64 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "needlet",
    version,
    about = "Needlet estimation of Sobolev functionals on S²"
)]
struct Cli {
    /// JSON file of flag defaults; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for randomized commands.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker thread cap.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output file (or directory for `experiment`); standard output otherwise.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Frame diagnostics: partition of unity, exactness, tightness, L^p scaling.
    FrameCheck(FrameCheckArgs),
    /// One simulated sample and one truncated estimate.
    Estimate(EstimateArgs),
    /// Lepski selection on one simulated sample.
    Lepski(LepskiArgs),
    /// Oracle and adjacent-rule levels from the bias-variance model.
    OracleTable(OracleTableArgs),
    /// Monte Carlo risk study from a JSON spec.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Args)]
struct FrameCheckArgs {
    #[arg(long)]
    b: Option<f64>,
    #[arg(long)]
    j_max: Option<usize>,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    /// Density descriptor as JSON, e.g. '{"kind":"zonal","degree":2,"alpha":0.1}'.
    #[arg(long)]
    density: Option<String>,
    #[arg(long)]
    r: Option<f64>,
    #[arg(long)]
    j: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    b: Option<f64>,
}

#[derive(Debug, Args)]
struct LepskiArgs {
    #[arg(long)]
    density: Option<String>,
    #[arg(long)]
    r: Option<f64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    b: Option<f64>,
    /// Fixed C₀; calibrated under the uniform pilot when absent.
    #[arg(long)]
    c0: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    calibration_replicates: Option<usize>,
    #[arg(long)]
    j_min: Option<usize>,
    #[arg(long)]
    j_max: Option<usize>,
}

#[derive(Debug, Args)]
struct OracleTableArgs {
    /// Comma-separated `s:n` pairs; the twelve reference rows by default.
    #[arg(long)]
    rows: Option<String>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    r: Option<f64>,
    #[arg(long)]
    b: Option<f64>,
    #[arg(long)]
    c_bias: Option<f64>,
    #[arg(long)]
    c_var: Option<f64>,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    /// Experiment spec (JSON).
    spec: PathBuf,
}

/// Keys accepted in a `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    seed: Option<u64>,
    threads: Option<usize>,
    output: Option<PathBuf>,
    density: Option<serde_json::Value>,
    r: Option<f64>,
    j: Option<usize>,
    n: Option<usize>,
    b: Option<f64>,
    c0: Option<f64>,
    kappa: Option<f64>,
    calibration_replicates: Option<usize>,
    j_min: Option<usize>,
    j_max: Option<usize>,
    rows: Option<String>,
    d: Option<usize>,
    c_bias: Option<f64>,
    c_var: Option<f64>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn load_config(path: Option<&Path>) -> CliResult<ConfigFile> {
    let Some(path) = path else {
        return Ok(ConfigFile::default());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))
}

fn parse_density(
    flag: Option<String>,
    config: Option<serde_json::Value>,
) -> CliResult<TestDensity> {
    let descriptor: DensityDescriptor = match (flag, config) {
        (Some(s), _) => serde_json::from_str(&s).map_err(|e| usage(format!("--density: {e}")))?,
        (None, Some(serde_json::Value::String(s))) => {
            serde_json::from_str(&s).map_err(|e| usage(format!("density: {e}")))?
        }
        (None, Some(v)) => serde_json::from_value(v).map_err(|e| usage(format!("density: {e}")))?,
        (None, None) => DensityDescriptor::Uniform {},
    };
    descriptor.build().map_err(|e| usage(e.to_string()))
}

fn require_seed(seed: Option<u64>) -> CliResult<u64> {
    seed.ok_or_else(|| usage("this command is randomized; pass --seed or set \"seed\" in --config"))
}

fn check_b(b: f64) -> CliResult<f64> {
    if b > 1.0 && b.is_finite() {
        Ok(b)
    } else {
        Err(usage(format!("band ratio B must exceed 1, got {b}")))
    }
}

fn check_r(r: f64) -> CliResult<f64> {
    if r >= 0.0 && r.is_finite() {
        Ok(r)
    } else {
        Err(usage(format!("r must be a finite value >= 0, got {r}")))
    }
}

fn emit(output: Option<&Path>, text: &str, stdout: &mut Vec<u8>) -> CliResult<()> {
    match output {
        Some(p) => fs::write(p, text)?,
        None => stdout.write_all(text.as_bytes())?,
    }
    Ok(())
}

fn to_json(v: &impl serde::Serialize) -> CliResult<String> {
    serde_json::to_string_pretty(v)
        .map(|s| s + "\n")
        .map_err(|e| CliError::Runtime(e.to_string()))
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            if code == EXIT_OK {
                let _ = stdout.write_all(rendered.as_bytes());
            } else {
                let _ = stderr.write_all(rendered.as_bytes());
            }
            return code;
        }
    };
    match dispatch(cli, stdout) {
        Ok(code) => code,
        Err(CliError::Usage(msg)) => {
            let _ = writeln!(stderr, "error: {msg}");
            EXIT_USAGE
        }
        Err(CliError::Runtime(msg)) => {
            let _ = writeln!(stderr, "error: {msg}");
            EXIT_FAILURE
        }
    }
}

fn dispatch(cli: Cli, stdout: &mut dyn Write) -> CliResult<i32> {
    let config = load_config(cli.config.as_deref())?;
    let threads = cli.threads.or(config.threads);
    let seed = cli.seed.or(config.seed);
    let output = cli.output.clone().or(config.output.clone());
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        if t == 0 {
            return Err(usage("--threads must be >= 1"));
        }
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut buf: Vec<u8> = Vec::new();
    let result = pool.install(|| {
        let out = &mut buf;
        match cli.command {
            Command::FrameCheck(a) => frame_check(a, config, seed, output.as_deref(), out),
            Command::Estimate(a) => estimate(a, config, seed, output.as_deref(), out),
            Command::Lepski(a) => lepski(a, config, seed, output.as_deref(), out),
            Command::OracleTable(a) => table(a, config, output.as_deref(), out),
            Command::Experiment(a) => experiment(a, seed, output, out),
        }
    });
    stdout.write_all(&buf)?;
    result
}

fn frame_check(
    a: FrameCheckArgs,
    config: ConfigFile,
    seed: Option<u64>,
    output: Option<&Path>,
    stdout: &mut Vec<u8>,
) -> CliResult<i32> {
    let b = check_b(a.b.or(config.b).unwrap_or(DEFAULT_B))?;
    let j_max = a.j_max.or(config.j_max).unwrap_or(4);
    let report = frame_diagnostics(b, j_max, seed.unwrap_or(0)).map_err(|e| match e {
        Error::DegreeTooLarge { .. } => usage(e.to_string()),
        other => CliError::from(other),
    })?;
    emit(output, &to_json(&report)?, stdout)?;
    Ok(if report.passed { EXIT_OK } else { EXIT_FAILURE })
}

fn estimate(
    a: EstimateArgs,
    config: ConfigFile,
    seed: Option<u64>,
    output: Option<&Path>,
    stdout: &mut Vec<u8>,
) -> CliResult<i32> {
    let f = parse_density(a.density, config.density)?;
    let r = check_r(a.r.or(config.r).unwrap_or(0.0))?;
    let b = check_b(a.b.or(config.b).unwrap_or(DEFAULT_B))?;
    let n = a.n.or(config.n).ok_or_else(|| usage("--n is required"))?;
    if n < 2 {
        return Err(usage(format!("--n must be >= 2, got {n}")));
    }
    let j =
        a.j.or(config.j)
            .unwrap_or_else(|| ResolutionGrid::default_j_max(n, r, 2, b));
    let seed = require_seed(seed)?;
    let frame = NeedletFrame::new(b, j).map_err(|e| usage(e.to_string()))?;
    let s = sample(&f, n, derive_seed(seed, TAG_SAMPLE, 0))?;
    let cfg = EstimatorConfig::new(r, j, derive_seed(seed, TAG_SPLIT, 0));
    let est = estimate_truncated(&s, &frame, &cfg)?;
    let truth = exact_t(&f, r);
    let report = json!({
        "value": est.value,
        "truth": truth,
        "error": est.value - truth,
        "truncated_truth": truncated_exact(&f, &frame, r, j)?,
        "per_level": est.per_level,
        "n": n,
        "r": r,
        "J": j,
        "B": b,
        "seed": seed,
        "density": f.descriptor(),
    });
    emit(output, &to_json(&report)?, stdout)?;
    Ok(EXIT_OK)
}

fn lepski(
    a: LepskiArgs,
    config: ConfigFile,
    seed: Option<u64>,
    output: Option<&Path>,
    stdout: &mut Vec<u8>,
) -> CliResult<i32> {
    let f = parse_density(a.density, config.density)?;
    let r = check_r(a.r.or(config.r).unwrap_or(0.0))?;
    let b = check_b(a.b.or(config.b).unwrap_or(DEFAULT_B))?;
    let n = a.n.or(config.n).ok_or_else(|| usage("--n is required"))?;
    if n < 2 {
        return Err(usage(format!("--n must be >= 2, got {n}")));
    }
    let j_min = a.j_min.or(config.j_min).unwrap_or(0);
    let j_max = a
        .j_max
        .or(config.j_max)
        .unwrap_or_else(|| ResolutionGrid::default_j_max(n, r, 2, b).max(j_min));
    let grid = ResolutionGrid::new(j_min, j_max, b).map_err(|e| usage(e.to_string()))?;
    let seed = require_seed(seed)?;
    let frame = NeedletFrame::new(b, j_max).map_err(|e| usage(e.to_string()))?;
    let fixed = a.c0.or(config.c0);
    let kappa = a.kappa.or(config.kappa).unwrap_or(KAPPA);
    let replicates = a
        .calibration_replicates
        .or(config.calibration_replicates)
        .unwrap_or(100);
    let (c0, policy) = match fixed {
        Some(c) => {
            if !(c > 0.0) {
                return Err(usage(format!("--c0 must be positive, got {c}")));
            }
            (c, json!({"policy": "fixed", "value": c}))
        }
        None if grid.len() == 1 => (1.0, json!({"policy": "fixed", "value": 1.0})),
        None => {
            if !(kappa > 0.0) {
                return Err(usage(format!("--kappa must be positive, got {kappa}")));
            }
            let c = calibrate_c0_with(
                &TestDensity::uniform(),
                &frame,
                &grid,
                r,
                n,
                replicates,
                derive_seed(seed, TAG_CALIBRATION, 0),
                kappa,
            )
            .map_err(|e| match e {
                Error::InvalidArgument(m) => usage(m),
                other => CliError::from(other),
            })?;
            (
                c,
                json!({"policy": "calibrated", "kappa": kappa, "replicates": replicates, "pilot": "uniform"}),
            )
        }
    };
    let cfg = LepskiConfig::new(c0, grid, r, 2)?;
    let s = sample(&f, n, derive_seed(seed, TAG_SAMPLE, 0))?;
    let est = adaptive_estimate(&s, &frame, &cfg, derive_seed(seed, TAG_SPLIT, 0))?;
    let report = json!({
        "J_hat": est.j_hat,
        "value": est.value,
        "truth": exact_t(&f, r),
        "levels": est.levels,
        "per_level_estimates": est.per_level_estimates,
        "thresholds": est.thresholds,
        "C0": c0,
        "C0_policy": policy,
        "n": n,
        "r": r,
        "B": b,
        "seed": seed,
    });
    emit(output, &to_json(&report)?, stdout)?;
    Ok(EXIT_OK)
}

fn parse_rows(spec: &str) -> CliResult<Vec<(f64, usize)>> {
    spec.split(',')
        .map(|item| {
            let (s, n) = item
                .trim()
                .split_once(':')
                .ok_or_else(|| usage(format!("row {item:?} is not of the form s:n")))?;
            let s: f64 = s
                .parse()
                .map_err(|_| usage(format!("bad smoothness in {item:?}")))?;
            let n: usize = n
                .parse()
                .map_err(|_| usage(format!("bad sample size in {item:?}")))?;
            Ok((s, n))
        })
        .collect()
}

fn table(
    a: OracleTableArgs,
    config: ConfigFile,
    output: Option<&Path>,
    stdout: &mut Vec<u8>,
) -> CliResult<i32> {
    let rows = match a.rows.or(config.rows) {
        Some(s) => parse_rows(&s)?,
        None => reference_rows(),
    };
    let defaults = TableDefaults {
        d: a.d.or(config.d).unwrap_or(2),
        r: check_r(a.r.or(config.r).unwrap_or(1.0))?,
        b: check_b(a.b.or(config.b).unwrap_or(DEFAULT_B))?,
        c_bias: a.c_bias.or(config.c_bias).unwrap_or(1.0),
        c_var: a.c_var.or(config.c_var).unwrap_or(1.0),
    };
    let table = oracle_table(&rows, &defaults).map_err(|e| usage(e.to_string()))?;
    let mut buf = Vec::new();
    write_table_csv(&table, &defaults, &mut buf)?;
    emit(output, &String::from_utf8_lossy(&buf), stdout)?;
    Ok(EXIT_OK)
}

fn experiment(
    a: ExperimentArgs,
    seed: Option<u64>,
    output: Option<PathBuf>,
    stdout: &mut Vec<u8>,
) -> CliResult<i32> {
    let text = fs::read_to_string(&a.spec)
        .map_err(|e| usage(format!("cannot read spec {}: {e}", a.spec.display())))?;
    let mut spec: ExperimentSpec = serde_json::from_str(&text)
        .map_err(|e| usage(format!("spec {}: {e}", a.spec.display())))?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let dir = output.unwrap_or_else(|| PathBuf::from("experiment-output"));
    let curve = run_experiment(&spec)?;
    for path in export_results(&curve, &dir)? {
        writeln!(stdout, "{}", path.display())?;
    }
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let mut full = vec!["needlet"];
        full.extend_from_slice(args);
        let code = run(full, &mut out, &mut err);
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn rows_parse() {
        assert_eq!(
            parse_rows("2.2:1000, 3:20000").unwrap(),
            vec![(2.2, 1000), (3.0, 20000)]
        );
        assert!(parse_rows("2.2-1000").is_err());
    }

    #[test]
    fn unknown_subcommand_is_usage_error() {
        assert_eq!(call(&["bogus"]).0, EXIT_USAGE);
        assert_eq!(call(&[]).0, EXIT_USAGE);
        assert_eq!(call(&["--help"]).0, EXIT_OK);
    }

    #[test]
    fn zero_threads_rejected() {
        assert_eq!(call(&["--threads", "0", "oracle-table"]).0, EXIT_USAGE);
    }
}
