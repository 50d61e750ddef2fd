//! Command-line front end. Data goes to `--output` (or stdout), diagnostics
//! to stderr.

use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

use crate::estimator::{estimate, sweep_n, EstimateError, EstimateResult};
use crate::genpos::{check_general_position, perturb_with, GenPosError, GenPosReport, PerturbOptions, Scope};
use crate::geometry::Rejection;
use crate::oracle::{grid_min, vertex_min, GridMin, GridSpec, OracleError, VertexMin};
use crate::problem::{ProblemFileError, ProblemSpec, DEFAULT_TOL};
use crate::witness::{build_witness_m1, inclusion_check, InclusionReport, WitnessError, WitnessSet};

#[derive(Debug, Parser)]
#[command(
    name = "nwidth",
    version,
    about = "Order estimates for widths of intersections of anisotropic balls"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Human,
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScopeArg {
    Full,
    Sampled,
}

/// Options shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct RunConfig {
    /// Problem file (JSON).
    #[arg(long, short)]
    pub input: PathBuf,
    /// Write data here instead of stdout.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    pub tol: f64,
    #[arg(long, value_enum, default_value_t = Format::Human)]
    pub format: Format,
}

#[derive(Debug, Clone, Args)]
pub struct ScopeConfig {
    /// How much of the predicate-3 matrix family to test.
    #[arg(long, value_enum, default_value_t = ScopeArg::Full)]
    pub scope: ScopeArg,
    /// Matrices per index set at `--scope sampled`.
    #[arg(long, default_value_t = 64)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl ScopeConfig {
    fn scope(&self) -> Scope {
        match self.scope {
            ScopeArg::Full => Scope::full(),
            ScopeArg::Sampled => Scope::Sampled {
                per_index_set: self.samples,
                seed: self.seed,
            },
        }
    }
}

/// Inclusive range `a..b`, `a..=b` or `a:b`. Empty when `a > b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NRange {
    pub start: u64,
    pub end: u64,
}

impl FromStr for NRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, b) = s
            .split_once("..=")
            .or_else(|| s.split_once(".."))
            .or_else(|| s.split_once(':'))
            .ok_or_else(|| format!("expected START..END, got {s:?}"))?;
        let parse = |t: &str| t.trim().parse::<u64>().map_err(|e| format!("{t:?}: {e}"));
        Ok(NRange {
            start: parse(a)?,
            end: parse(b)?,
        })
    }
}

impl NRange {
    pub fn values(&self) -> Vec<u64> {
        (self.start..=self.end).collect()
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Structured minimum and its certificate.
    Estimate {
        #[command(flatten)]
        config: RunConfig,
        /// Override the width index n.
        #[arg(long)]
        n: Option<u64>,
    },
    /// One estimate per n, as CSV.
    Sweep {
        #[command(flatten)]
        config: RunConfig,
        #[arg(long, conflicts_with = "n")]
        n_range: Option<NRange>,
        /// Comma-separated list of n values.
        #[arg(long, value_delimiter = ',')]
        n: Vec<u64>,
    },
    /// Compare the estimate with the simplex-grid and vertex oracles.
    Oracle {
        #[command(flatten)]
        config: RunConfig,
        /// Grid resolution r (step 1/r).
        #[arg(long, default_value_t = 400)]
        grid: u32,
        #[arg(long)]
        n: Option<u64>,
    },
    /// General-position report.
    Genpos {
        #[command(flatten)]
        config: RunConfig,
        #[command(flatten)]
        scope: ScopeConfig,
    },
    /// Write a nearby problem in general position.
    Perturb {
        #[command(flatten)]
        config: RunConfig,
        #[command(flatten)]
        scope: ScopeConfig,
        #[arg(long, default_value_t = 1e-3)]
        epsilon: f64,
    },
    /// Single-ball witness and inclusion check.
    Witness {
        #[command(flatten)]
        config: RunConfig,
        /// Ball index; defaults to the winner when it has m = 1.
        #[arg(long)]
        ball: Option<usize>,
        #[arg(long, default_value_t = 1e-9)]
        slack: f64,
        #[arg(long)]
        n: Option<u64>,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Io(_) => 3,
            CliError::Internal(_) => 4,
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<ProblemFileError> for CliError {
    fn from(e: ProblemFileError) -> Self {
        match e {
            ProblemFileError::Parse(_) => CliError::Io(e.to_string()),
            ProblemFileError::Invalid(_) => CliError::Validation(e.to_string()),
        }
    }
}

impl From<EstimateError> for CliError {
    fn from(e: EstimateError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<WitnessError> for CliError {
    fn from(e: WitnessError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<GenPosError> for CliError {
    fn from(e: GenPosError) -> Self {
        match e {
            GenPosError::RetryExhausted { .. } => CliError::Internal(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Internal(e.to_string())
    }
}

/// `v` to 12 significant digits, plain notation for moderate exponents.
pub fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf" } else { "-inf" }.into();
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.11e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    let negative = mantissa.starts_with('-');
    let digits: String = mantissa.chars().filter(char::is_ascii_digit).collect();
    let trim = |s: String| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    };
    let body = if (-5..12).contains(&exp) {
        if exp >= 0 {
            let split = exp as usize + 1;
            trim(format!("{}.{}", &digits[..split], &digits[split..]))
        } else {
            trim(format!("0.{}{}", "0".repeat((-exp - 1) as usize), digits))
        }
    } else {
        format!("{}e{exp}", trim(format!("{}.{}", &digits[..1], &digits[1..])))
    };
    if negative {
        format!("-{body}")
    } else {
        body
    }
}

fn join_nums(v: &[f64]) -> String {
    v.iter().map(|&x| fmt_num(x)).collect::<Vec<_>>().join(";")
}

fn join_idx(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(";")
}

fn read_problem(config: &RunConfig, n: Option<u64>) -> Result<ProblemSpec, CliError> {
    let text =
        fs::read_to_string(&config.input).map_err(|e| CliError::Io(format!("{}: {e}", config.input.display())))?;
    let problem = ProblemSpec::from_json(&text)?;
    let problem = match n {
        Some(n) => problem.with_n(n),
        None => problem,
    };
    problem.check().map_err(|e| CliError::Validation(e.to_string()))?;
    if !(config.tol > 0.0 && config.tol < 1.0) {
        return Err(CliError::Validation(format!("tol = {} must lie in (0, 1)", config.tol)));
    }
    Ok(problem)
}

fn emit(config: &RunConfig, data: &[u8], stdout: &mut dyn Write) -> Result<(), CliError> {
    match &config.output {
        Some(path) => fs::write(path, data).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?,
        None => stdout.write_all(data)?,
    }
    Ok(())
}

fn json_line<T: Serialize>(v: &T) -> Result<Vec<u8>, CliError> {
    let mut s = serde_json::to_vec_pretty(v)?;
    s.push(b'\n');
    Ok(s)
}

const CSV_HEADER: [&str; 8] = ["n", "log_value", "value", "m", "Z_kind", "I", "lambda", "theta"];

fn csv_record(n: u64, r: &EstimateResult) -> [String; 8] {
    let w = &r.winner;
    [
        n.to_string(),
        fmt_num(r.log_value.log()),
        fmt_num(r.log_value.value()),
        w.m.to_string(),
        w.z.kind.to_string(),
        join_idx(&w.z.index_set),
        join_nums(&w.weights.lambda),
        join_nums(&w.weights.theta()),
    ]
}

fn report_rejections(r: &EstimateResult, stderr: &mut dyn Write) -> io::Result<()> {
    if r.rejections.is_empty() {
        return Ok(());
    }
    let (mut singular, mut weight, mut omega, mut arity) = (0, 0, 0, 0);
    for rej in &r.rejections {
        match rej.rejection {
            Rejection::Singular { .. } => singular += 1,
            Rejection::NonPositiveWeight { .. } => weight += 1,
            Rejection::OmegaOutOfRange { .. } => omega += 1,
            Rejection::Arity { .. } => arity += 1,
        }
    }
    writeln!(
        stderr,
        "rejected {} of {} candidates: {singular} singular, {weight} nonpositive weight, {omega} omega out of range, {arity} arity",
        r.rejections.len(),
        r.candidate_count
    )
}

fn human_estimate(r: &EstimateResult) -> String {
    let w = &r.winner;
    let mut s = String::new();
    let mut line = |k: &str, v: String| s.push_str(&format!("{k:<11}{v}\n"));
    line("value", fmt_num(r.log_value.value()));
    line("log_value", fmt_num(r.log_value.log()));
    line("m", w.m.to_string());
    line("balls", join_idx(&w.ball_indices).replace(';', " "));
    line("Z", w.z.to_string());
    line("lambda", join_nums(&w.weights.lambda).replace(';', " "));
    line("theta", join_nums(&w.weights.theta()).replace(';', " "));
    line("runners_up", r.runners_up.len().to_string());
    s
}

fn cmd_estimate(
    config: &RunConfig,
    n: Option<u64>,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<(), CliError> {
    let problem = read_problem(config, n)?;
    let r = estimate(&problem, config.tol)?;
    report_rejections(&r, stderr)?;
    for c in &r.runners_up {
        writeln!(
            stderr,
            "runner-up within slack: m={} balls={:?} Z={} log={}",
            c.m,
            c.ball_indices,
            c.z,
            fmt_num(c.log_value.log())
        )?;
    }
    let data = match config.format {
        Format::Human => human_estimate(&r).into_bytes(),
        Format::Json => json_line(&r)?,
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(CSV_HEADER)?;
            w.write_record(csv_record(problem.n, &r))?;
            w.into_inner().map_err(|e| CliError::Internal(e.to_string()))?
        }
    };
    emit(config, &data, stdout)
}

#[derive(Serialize)]
struct SweepRow {
    n: u64,
    result: Option<EstimateResult>,
    error: Option<String>,
}

fn cmd_sweep(
    config: &RunConfig,
    n_values: Vec<u64>,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<(), CliError> {
    let problem = read_problem(config, None)?;
    let rows = sweep_n(&problem, &n_values, config.tol);
    for (n, r) in &rows {
        if let Err(e) = r {
            writeln!(stderr, "warning: n = {n}: {e}")?;
        }
    }
    let data = if config.format == Format::Json {
        let rows: Vec<SweepRow> = rows
            .into_iter()
            .map(|(n, r)| match r {
                Ok(r) => SweepRow {
                    n,
                    result: Some(r),
                    error: None,
                },
                Err(e) => SweepRow {
                    n,
                    result: None,
                    error: Some(e.to_string()),
                },
            })
            .collect();
        json_line(&rows)?
    } else {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER)?;
        for (n, r) in &rows {
            match r {
                Ok(r) => w.write_record(csv_record(*n, r))?,
                Err(_) => {
                    let mut rec = vec![String::new(); CSV_HEADER.len()];
                    rec[0] = n.to_string();
                    w.write_record(rec)?
                }
            }
        }
        w.into_inner().map_err(|e| CliError::Internal(e.to_string()))?
    };
    emit(config, &data, stdout)
}

fn general_position(problem: &ProblemSpec, tol: f64, seed: u64) -> Result<GenPosReport, CliError> {
    match check_general_position(problem, tol, Scope::full()) {
        Err(GenPosError::CapacityError { .. }) => Ok(check_general_position(
            problem,
            tol,
            Scope::Sampled {
                per_index_set: 64,
                seed,
            },
        )?),
        other => Ok(other?),
    }
}

#[derive(Serialize)]
struct OracleOutput {
    estimate_log: f64,
    grid: GridMin,
    vertex: VertexMin,
    general_position: bool,
    pass: bool,
}

fn cmd_oracle(
    config: &RunConfig,
    r: u32,
    n: Option<u64>,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<(), CliError> {
    let problem = read_problem(config, n)?;
    let grid = GridSpec::new(r)?;
    let est = estimate(&problem, config.tol)?.log_value.log();
    let g = grid_min(&problem, &grid)?;
    let v = vertex_min(&problem, config.tol)?;
    let gp = general_position(&problem, config.tol, 0)?.is_general_position;
    let pass = est <= g.log_value + 1e-9 && g.log_value <= est + g.error_bound;
    if !gp {
        writeln!(
            stderr,
            "note: input is not in general position; the comparison is reported only"
        )?;
    }
    let data = match config.format {
        Format::Json => json_line(&OracleOutput {
            estimate_log: est,
            grid: g,
            vertex: v,
            general_position: gp,
            pass,
        })?,
        _ => {
            let verdict = if pass { "PASS" } else { "FAIL" };
            format!(
                "estimate     {} (log {})\ngrid_min     {} (log {}, r = {r}, {} points)\nerror_bound  {}\nvertex_min   {} (log {})\ngeneral_position {gp}\nequivalence  {verdict}\n",
                fmt_num(est.exp()),
                fmt_num(est),
                fmt_num(g.log_value.exp()),
                fmt_num(g.log_value),
                g.points,
                fmt_num(g.error_bound),
                fmt_num(v.log_value.exp()),
                fmt_num(v.log_value),
            )
            .into_bytes()
        }
    };
    emit(config, &data, stdout)
}

fn cmd_genpos(config: &RunConfig, scope: &ScopeConfig, stdout: &mut dyn Write) -> Result<(), CliError> {
    let problem = read_problem(config, None)?;
    let report = check_general_position(&problem, config.tol, scope.scope())?;
    let data = match config.format {
        Format::Json => json_line(&report)?,
        _ => {
            let mut s = format!("is_general_position {}\n", report.is_general_position);
            s.push_str(&format!(
                "predicate1_violations {}\n",
                report.predicate1_violations.len()
            ));
            for v in &report.predicate1_violations {
                s.push_str(&format!("  I={:?} balls={:?}\n", v.index_set, v.balls));
            }
            s.push_str(&format!(
                "predicate2_violations {}\n",
                report.predicate2_violations.len()
            ));
            for v in &report.predicate2_violations {
                s.push_str(&format!("  Z={} balls={:?} {:?}\n", v.plane, v.balls, v.failure));
            }
            let label = match report.predicate3_scope {
                Scope::Full { .. } => "full",
                Scope::Sampled { .. } => "sampled",
            };
            s.push_str(&format!(
                "predicate3_violations {} (scope {label})\n",
                report.predicate3_violations.len()
            ));
            for v in &report.predicate3_violations {
                s.push_str(&format!(
                    "  I={:?} balls={:?} rows={:?}\n",
                    v.index_set, v.balls, v.rows
                ));
            }
            s.into_bytes()
        }
    };
    emit(config, &data, stdout)
}

fn cmd_perturb(
    config: &RunConfig,
    scope: &ScopeConfig,
    epsilon: f64,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<(), CliError> {
    let problem = read_problem(config, None)?;
    let opts = PerturbOptions {
        tol: config.tol,
        scope: scope.scope(),
        ..PerturbOptions::new(epsilon, scope.seed)
    };
    let out = perturb_with(&problem, &opts)?;
    writeln!(stderr, "nudges: {}", out.nudges)?;
    emit(config, out.problem.to_json().as_bytes(), stdout)
}

#[derive(Serialize)]
struct WitnessOutput {
    witness: WitnessSet,
    inclusion: InclusionReport,
    estimate_log: f64,
}

fn cmd_witness(
    config: &RunConfig,
    ball: Option<usize>,
    slack: f64,
    n: Option<u64>,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<(), CliError> {
    let problem = read_problem(config, n)?;
    let est = estimate(&problem, config.tol)?;
    let alpha = match ball {
        Some(a) => a,
        None if est.winner.m == 1 => est.winner.ball_indices[0],
        None => {
            return Err(CliError::Validation(format!(
                "the winner has m = {}; pass --ball to choose a ball",
                est.winner.m
            )))
        }
    };
    if est.winner.m != 1 || est.winner.ball_indices[0] != alpha {
        writeln!(
            stderr,
            "note: ball {alpha} is not the m = 1 winner; inclusion is not guaranteed"
        )?;
    }
    let w = build_witness_m1(&problem, alpha)?;
    let inc = inclusion_check(&problem, &w, slack);
    let data = match config.format {
        Format::Json => json_line(&WitnessOutput {
            witness: w,
            inclusion: inc,
            estimate_log: est.log_value.log(),
        })?,
        _ => {
            let mut s = String::new();
            s.push_str(&format!("alpha        {}\n", w.alpha));
            s.push_str(&format!("case         {:?}\n", w.case));
            s.push_str(&format!("s            {}\n", join_nums(&w.s).replace(';', " ")));
            let u: Vec<String> = w.u.iter().map(u64::to_string).collect();
            s.push_str(&format!("u            {}\n", u.join(" ")));
            s.push_str(&format!("scale_log    {}\n", fmt_num(w.scale_log)));
            s.push_str(&format!("theoremA_log {}\n", fmt_num(w.theorem_a_log_value)));
            s.push_str(&format!("witness_log  {}\n", fmt_num(w.witness_log_value)));
            s.push_str(&format!("estimate_log {}\n", fmt_num(est.log_value.log())));
            let verdict = |b: bool| if b { "PASS" } else { "FAIL" };
            s.push_str(&format!(
                "inclusion    {} (slack {})\n",
                verdict(inc.passes),
                fmt_num(slack)
            ));
            for e in &inc.entries {
                s.push_str(&format!(
                    "  beta {} lhs {} rhs {} {}\n",
                    e.beta,
                    fmt_num(e.lhs_log),
                    fmt_num(e.rhs_log),
                    verdict(e.passes)
                ));
            }
            s.into_bytes()
        }
    };
    emit(config, &data, stdout)
}

pub fn run(cli: Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Estimate { config, n } => cmd_estimate(&config, n, stdout, stderr),
        Command::Sweep { config, n_range, n } => {
            let values = match n_range {
                Some(r) => r.values(),
                None => n,
            };
            cmd_sweep(&config, values, stdout, stderr)
        }
        Command::Oracle { config, grid, n } => cmd_oracle(&config, grid, n, stdout, stderr),
        Command::Genpos { config, scope } => cmd_genpos(&config, &scope, stdout),
        Command::Perturb { config, scope, epsilon } => cmd_perturb(&config, &scope, epsilon, stdout, stderr),
        Command::Witness { config, ball, slack, n } => cmd_witness(&config, ball, slack, n, stdout, stderr),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_format() {
        assert_eq!(fmt_num(0.35355339059327373), "0.353553390593");
        assert_eq!(fmt_num(-1.0397207708399179), "-1.03972077084");
        assert_eq!(fmt_num(4.0), "4");
        assert_eq!(fmt_num(0.25), "0.25");
        assert_eq!(fmt_num(1e-7), "1e-7");
        assert_eq!(fmt_num(123456789012345.0), "1.23456789012e14");
        assert_eq!(fmt_num(f64::INFINITY), "inf");
        assert_eq!(fmt_num(0.0), "0");
        assert_eq!(fmt_num(0.000123), "0.000123");
    }

    #[test]
    fn n_range_parsing() {
        assert_eq!("1..8".parse::<NRange>().unwrap().values().len(), 8);
        assert_eq!("1..=8".parse::<NRange>().unwrap().values().len(), 8);
        assert_eq!("3:5".parse::<NRange>().unwrap().values(), vec![3, 4, 5]);
        assert!("5..1".parse::<NRange>().unwrap().values().is_empty());
        assert!("x..1".parse::<NRange>().is_err());
    }
}
