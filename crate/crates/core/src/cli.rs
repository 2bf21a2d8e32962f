//! `tfbound` command-line front end.
//!
//! One JSON config schema is shared by all subcommands; each subcommand reads
//! the sections it needs and unknown keys are rejected. Exit codes: 0 ok,
//! 1 usage, 2 config, 3 runtime.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::bounds::{
    best_family_bound, covering_constant, evaluate_family, finite_class_offset_bound, log_cover_l11_linear,
    log_cover_rank_linear, norm_complexity_terms, rank_allocation, rank_components, AllocationResult, BoundFamily,
    BoundReport, DeltaGrid, FamilyInputs, NormComplexity, RankCaps, RANK_COVER_CONSTANT,
};
use crate::erm_lab::{
    read_result, run_experiment, tail_input_law, write_result, write_result_csv, ExperimentConfig, ExperimentResult,
    ExperimentSettings,
};
use crate::error::EXACT_ENUMERATION_LIMIT;
use crate::error::{invalid, Error, Result};
use crate::loss::{LossKind, LossModel};
use crate::matrix_kit::{sample_matrix, EntryLaw, RngStream};
use crate::offset_mc::{
    build_class_sample, class_sample_from_params, offset_complexity_exact, offset_complexity_mc, OffsetEstimate,
};
use crate::tails::{
    heavy_tail_probability, heavy_tail_term, optimal_threshold, subgaussian_tail_probability, subgaussian_tail_term,
    TailModel, TailRegime,
};
use crate::transformer::{project_params, ArchSpec, ParamBudget, TransformerParams};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "tfbound",
    version,
    about = "Excess-risk bounds and offset complexity for small Transformers"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON config file (for `report`: a stored experiment result).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Overrides the config's master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on this value.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Evaluate bound families and their term decomposition.
    Bound,
    /// Covering numbers, complexity terms and the rank allocation.
    Cover,
    /// Exact and Monte Carlo offset Rademacher complexity of a finite class.
    Offset,
    /// Tail terms, thresholds and truncation rates.
    Tails,
    /// Run an ERM experiment.
    Erm,
    /// Render a stored experiment result.
    Report,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
    Table,
}

fn default_samples() -> usize {
    10_000
}

fn default_draws() -> u64 {
    100_000
}

/// Top-level config file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub arch: Option<ArchSpec>,
    #[serde(default)]
    pub budget: Option<ParamBudget>,
    #[serde(default)]
    pub tail: Option<TailModel>,
    #[serde(default)]
    pub experiment: Option<ExperimentSettings>,
    #[serde(default)]
    pub offset: Option<OffsetSection>,
    #[serde(default)]
    pub delta_grid: Option<DeltaGrid>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub bound: Option<BoundSection>,
    #[serde(default)]
    pub cover: Option<CoverSection>,
    #[serde(default)]
    pub tails: Option<TailsSection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundSection {
    pub families: Vec<BoundFamily>,
    pub n: Vec<u64>,
    /// Fixed delta; when absent, delta is minimized over `delta_grid`.
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub approx: f64,
    #[serde(default)]
    pub log_cover: Option<f64>,
    #[serde(default)]
    pub threshold: Option<f64>,
    #[serde(default)]
    pub ranks: Option<RankCaps>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoverSection {
    pub epsilon: f64,
    #[serde(default)]
    pub ranks: Option<RankCaps>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OffsetSection {
    pub n_points: usize,
    pub grid_size: usize,
    #[serde(default = "default_loss")]
    pub loss: LossKind,
    #[serde(default)]
    pub noise_sd: f64,
    /// Offset weight; defaults to 1 / (2 value_cap).
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default = "default_draws")]
    pub draws: u64,
}

fn default_loss() -> LossKind {
    LossKind::Squared
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailsSection {
    pub n: Vec<u64>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Loss Lipschitz constant; defaults to the budget's kappa, else 1.
    #[serde(default)]
    pub kappa: Option<f64>,
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Runtime(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParameter(_) | Error::Config(_) | Error::Json(_) => CliError::Config(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn need<T: Clone>(v: &Option<T>, name: &str, cmd: &str) -> CliResult<T> {
    v.clone()
        .ok_or_else(|| CliError::Config(format!("`{cmd}` needs a `{name}` section in the config")))
}

pub fn load_config(path: &Path) -> Result<ConfigFile> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.workers {
        Some(0) => Err(CliError::Config("--workers must be at least 1".into())),
        Some(w) => match rayon::ThreadPoolBuilder::new().num_threads(w).build() {
            Ok(pool) => pool.install(|| execute(&cli)),
            Err(e) => Err(CliError::Runtime(format!("cannot start worker pool: {e}"))),
        },
        None => execute(&cli),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(CliError::Config(msg)) => {
            eprintln!("config error: {msg}");
            EXIT_CONFIG
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            EXIT_RUNTIME
        }
    }
}

fn execute(cli: &Cli) -> CliResult<()> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config <path> is required".into()))?;
    if cli.command == Command::Report {
        let result = read_result(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        return emit(cli, render_experiment(&result, cli.format)?);
    }
    let cfg = load_config(path)?;
    let seed = cli.seed.or(cfg.seed).unwrap_or(0);
    match cli.command {
        Command::Bound => {
            let reports = bound_reports(&cfg)?;
            emit(cli, render_bounds(&reports, cli.format)?)
        }
        Command::Cover => {
            let report = cover_report(&cfg)?;
            emit(cli, render_cover(&report, cli.format)?)
        }
        Command::Offset => {
            let report = offset_report(&cfg, seed)?;
            emit(cli, render_offset(&report, cli.format)?)
        }
        Command::Tails => {
            let report = tails_report(&cfg, seed)?;
            emit(cli, render_tails(&report, cli.format)?)
        }
        Command::Erm => {
            let config = ExperimentConfig {
                arch: need(&cfg.arch, "arch", "erm")?,
                budget: need(&cfg.budget, "budget", "erm")?,
                tail: cfg.tail.clone(),
                delta_grid: cfg.delta_grid.unwrap_or_default(),
                master_seed: seed,
                experiment: need(&cfg.experiment, "experiment", "erm")?,
            };
            config.validate()?;
            let result = run_experiment(&config)?;
            if result.failed_cells == result.cells.len() {
                let first = result.cells.iter().find_map(|c| c.error.clone()).unwrap_or_default();
                return Err(CliError::Runtime(format!(
                    "every experiment cell failed; first error: {first}"
                )));
            }
            match &cli.out {
                Some(out) if cli.format == Format::Json => {
                    write_result(&result, out)?;
                    Ok(())
                }
                _ => emit(cli, render_experiment(&result, cli.format)?),
            }
        }
        Command::Report => unreachable!("handled above"),
    }
}

fn emit(cli: &Cli, text: String) -> CliResult<()> {
    match &cli.out {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn bound_reports(cfg: &ConfigFile) -> Result<Vec<BoundReport>> {
    let arch = cfg
        .arch
        .ok_or_else(|| Error::Config("`bound` needs an `arch` section".into()))?;
    let budget = cfg
        .budget
        .clone()
        .ok_or_else(|| Error::Config("`bound` needs a `budget` section".into()))?;
    let sec = cfg
        .bound
        .clone()
        .ok_or_else(|| Error::Config("`bound` needs a `bound` section".into()))?;
    if sec.families.is_empty() || sec.n.is_empty() {
        return Err(invalid("bound section needs at least one family and one n"));
    }
    let grid = cfg.delta_grid.unwrap_or_default();
    let inputs = FamilyInputs {
        log_cover: sec.log_cover,
        ranks: sec.ranks,
        tail: cfg.tail.clone(),
        threshold: sec.threshold,
    };
    let mut out = Vec::new();
    for &family in &sec.families {
        for &n in &sec.n {
            out.push(match sec.delta {
                Some(delta) => evaluate_family(family, &arch, &budget, &inputs, n, delta, sec.approx)?,
                None => best_family_bound(family, &arch, &budget, &inputs, n, sec.approx, &grid)?,
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearCover {
    pub matrix: String,
    pub rows: usize,
    pub cols: usize,
    pub norm_cap: f64,
    pub l11: f64,
    pub rank: usize,
    pub rank_cover: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentAllocation {
    pub name: String,
    pub rank: usize,
    pub weight: f64,
    pub epsilon: f64,
    pub b: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverReport {
    pub epsilon: f64,
    pub c1: f64,
    pub linear: Vec<LinearCover>,
    pub norm_complexity: NormComplexity,
    /// max(0, log(Gamma^3 / eps^2)).
    pub norm_log_cover: f64,
    pub components: Vec<ComponentAllocation>,
    pub allocation: AllocationResult,
}

pub fn cover_report(cfg: &ConfigFile) -> Result<CoverReport> {
    let arch = cfg
        .arch
        .ok_or_else(|| Error::Config("`cover` needs an `arch` section".into()))?;
    let budget = cfg
        .budget
        .clone()
        .ok_or_else(|| Error::Config("`cover` needs a `budget` section".into()))?;
    let sec = cfg
        .cover
        .clone()
        .ok_or_else(|| Error::Config("`cover` needs a `cover` section".into()))?;
    arch.validate()?;
    budget.validate()?;
    let eps = sec.epsilon;
    let ranks = match sec.ranks {
        Some(r) => r,
        None => RankCaps::from_budget(&budget, &arch)?,
    };
    let (d, k) = (arch.embed_dim, arch.value_dim);
    let bx = budget.b_input;
    let linear = [
        ("W_QK", d, d, budget.b_qk, ranks.qk),
        ("W_v", d, k, budget.b_v, ranks.v),
        ("W_c", k, d, budget.b_c, ranks.c),
    ]
    .into_iter()
    .map(|(name, rows, cols, cap, rank)| {
        Ok(LinearCover {
            matrix: name.to_string(),
            rows,
            cols,
            norm_cap: cap,
            l11: log_cover_l11_linear(bx, cap, eps, rows, cols)?,
            rank,
            rank_cover: log_cover_rank_linear(bx, cap, eps, rank)?,
        })
    })
    .collect::<Result<Vec<_>>>()?;
    let norm_complexity = norm_complexity_terms(&budget, &arch);
    if !(eps > 0.0) {
        return Err(invalid(format!("epsilon must be positive, got {eps}")));
    }
    let norm_log_cover = (3.0 * norm_complexity.total().ln() - 2.0 * eps.ln()).max(0.0);
    let comps = rank_components(&arch, &budget, &ranks)?;
    let r: Vec<f64> = comps.iter().map(|c| c.rank as f64).collect();
    let beta: Vec<f64> = comps.iter().map(|c| c.weight).collect();
    let allocation = rank_allocation(&r, &vec![RANK_COVER_CONSTANT; r.len()], &beta, eps, bx)?;
    let components = comps
        .iter()
        .enumerate()
        .map(|(i, c)| ComponentAllocation {
            name: c.name.clone(),
            rank: c.rank,
            weight: c.weight,
            epsilon: allocation.epsilons[i],
            b: allocation.b[i],
        })
        .collect();
    Ok(CoverReport {
        epsilon: eps,
        c1: covering_constant(&budget, &arch),
        linear,
        norm_complexity,
        norm_log_cover,
        components,
        allocation,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OffsetReport {
    pub n_points: usize,
    pub grid_size: usize,
    pub value_cap: f64,
    pub beta: f64,
    pub exact: Option<OffsetEstimate>,
    pub monte_carlo: OffsetEstimate,
    /// (1 + log N) / (2 n beta) with N = grid_size + 1 (the teacher row).
    pub finite_class_bound: f64,
}

/// Offset complexity of a random finite class around a random teacher. The
/// class always contains the teacher, so the complexity is nonnegative.
pub fn offset_report(cfg: &ConfigFile, seed: u64) -> Result<OffsetReport> {
    let arch = cfg
        .arch
        .ok_or_else(|| Error::Config("`offset` needs an `arch` section".into()))?;
    let budget = cfg
        .budget
        .clone()
        .ok_or_else(|| Error::Config("`offset` needs a `budget` section".into()))?;
    let sec = cfg
        .offset
        .clone()
        .ok_or_else(|| Error::Config("`offset` needs an `offset` section".into()))?;
    arch.validate()?;
    budget.validate()?;
    if sec.n_points == 0 || sec.grid_size == 0 {
        return Err(invalid("offset section needs n_points >= 1 and grid_size >= 1"));
    }
    let loss = LossModel::new(sec.loss, sec.noise_sd);
    let base = RngStream::new(seed, 0);
    let teacher = project_params(
        &TransformerParams::sample(&arch, 1.0, &mut base.child(0).rng())?,
        &budget,
        &arch,
    )?;
    let law = EntryLaw::UniformBall { radius: budget.b_input };
    let mut xrng = base.child(1).rng();
    let xs = (0..sec.n_points)
        .map(|_| sample_matrix(&law, arch.seq_len, arch.embed_dim, &mut xrng))
        .collect::<Result<Vec<_>>>()?;
    let grid = build_class_sample(
        &arch,
        &budget,
        &loss,
        &teacher,
        &xs,
        sec.grid_size,
        &mut base.child(2).rng(),
    )?;
    let zero = class_sample_from_params(&arch, &loss, &teacher, std::slice::from_ref(&teacher), &xs)?;
    let fc = grid.with_row(zero.values().row(0))?;
    let beta = match sec.beta {
        Some(b) if b > 0.0 => b,
        Some(b) => return Err(invalid(format!("beta must be positive, got {b}"))),
        None if fc.value_cap() > 0.0 => 1.0 / (2.0 * fc.value_cap()),
        None => 1.0,
    };
    let exact = if sec.n_points <= EXACT_ENUMERATION_LIMIT {
        Some(offset_complexity_exact(&fc, beta)?)
    } else {
        None
    };
    let monte_carlo = offset_complexity_mc(&fc, beta, sec.draws, &base.child(3))?;
    Ok(OffsetReport {
        n_points: sec.n_points,
        grid_size: sec.grid_size,
        value_cap: fc.value_cap(),
        beta,
        exact,
        monte_carlo,
        finite_class_bound: finite_class_offset_bound(fc.num_functions() as f64, sec.n_points as u64, beta),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailsRow {
    pub n: u64,
    pub threshold: f64,
    pub tail_probability_bound: f64,
    pub truncation_term: f64,
    pub empirical_truncation_rate: f64,
    pub truncation_rate_se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailsReport {
    pub regime: TailRegime,
    pub kappa: f64,
    pub samples: usize,
    pub rows: Vec<TailsRow>,
}

pub fn tails_report(cfg: &ConfigFile, seed: u64) -> Result<TailsReport> {
    let tail = cfg
        .tail
        .clone()
        .ok_or_else(|| Error::Config("`tails` needs a `tail` section".into()))?;
    let sec = cfg
        .tails
        .clone()
        .ok_or_else(|| Error::Config("`tails` needs a `tails` section".into()))?;
    tail.validate()?;
    if sec.n.is_empty() || sec.samples < 2 {
        return Err(invalid("tails section needs at least one n and samples >= 2"));
    }
    let kappa = sec.kappa.or(cfg.budget.as_ref().map(|b| b.kappa)).unwrap_or(1.0);
    let law = tail_input_law(&tail);
    let mut rng = RngStream::new(seed, 0).rng();
    let norms = (0..sec.samples)
        .map(|_| Ok(sample_matrix(&law, tail.seq_len, tail.embed_dim, &mut rng)?.norm_fro()))
        .collect::<Result<Vec<f64>>>()?;
    let rows = sec
        .n
        .iter()
        .map(|&n| {
            let m = optimal_threshold(&tail, n)?;
            let (prob, term) = match tail.regime {
                TailRegime::Subgaussian => (
                    subgaussian_tail_probability(&tail, m)?,
                    subgaussian_tail_term(kappa, &tail, m)?,
                ),
                TailRegime::Heavytail => (heavy_tail_probability(&tail, m)?, heavy_tail_term(&tail, kappa, m)?),
            };
            let rate = norms.iter().filter(|&&v| v > m).count() as f64 / norms.len() as f64;
            Ok(TailsRow {
                n,
                threshold: m,
                tail_probability_bound: prob,
                truncation_term: term,
                empirical_truncation_rate: rate,
                truncation_rate_se: (rate * (1.0 - rate) / norms.len() as f64).sqrt(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TailsReport {
        regime: tail.regime,
        kappa,
        samples: sec.samples,
        rows,
    })
}

/// %g-style formatting with 6 significant digits.
pub fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    let s = if (-5..6).contains(&exp) {
        format!("{:.*}", (5 - exp).max(0) as usize, x)
    } else {
        format!("{x:.5e}")
    };
    trim_zeros(&s)
}

fn trim_zeros(s: &str) -> String {
    let (mant, exp) = match s.find('e') {
        Some(i) => (&s[..i], &s[i..]),
        None => (s, ""),
    };
    let mant = if mant.contains('.') {
        mant.trim_end_matches('0').trim_end_matches('.')
    } else {
        mant
    };
    format!("{mant}{exp}")
}

fn opt6(v: Option<f64>) -> String {
    v.map(sig6).unwrap_or_else(|| "-".into())
}

fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let line = |cells: Vec<&str>, out: &mut String| {
        let parts: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(header.to_vec(), &mut out);
    for r in rows {
        line(r.iter().map(String::as_str).collect(), &mut out);
    }
    out
}

fn csv_text(header: &[&str], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn json_text<T: Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn tabular(format: Format, header: &[&str], full: Vec<Vec<String>>, short: Vec<Vec<String>>) -> Result<String> {
    match format {
        Format::Csv => csv_text(header, &full),
        _ => Ok(table(header, &short)),
    }
}

#[derive(Serialize)]
struct BoundOutput<'a> {
    reports: &'a [BoundReport],
}

pub fn render_bounds(reports: &[BoundReport], format: Format) -> Result<String> {
    if format == Format::Json {
        return json_text(&BoundOutput { reports });
    }
    let header = [
        "family",
        "arch",
        "n",
        "delta",
        "penalty",
        "log_cover",
        "complexity",
        "discretization",
        "truncation",
        "approximation",
        "total",
        "threshold",
    ];
    let row = |r: &BoundReport, f: &dyn Fn(f64) -> String| -> Vec<String> {
        vec![
            r.family.label().to_string(),
            r.arch.map(|a| a.label().to_string()).unwrap_or_default(),
            r.n.to_string(),
            f(r.delta),
            f(r.penalty_constant),
            f(r.log_cover),
            f(r.complexity_term),
            f(r.discretization_term),
            f(r.truncation_term),
            f(r.approximation_term),
            f(r.total),
            r.threshold.map(f).unwrap_or_default(),
        ]
    };
    let full = reports.iter().map(|r| row(r, &|x| x.to_string())).collect();
    let short = reports.iter().map(|r| row(r, &sig6)).collect();
    tabular(format, &header, full, short)
}

pub fn render_cover(report: &CoverReport, format: Format) -> Result<String> {
    let header = ["component", "rank", "weight", "epsilon", "b"];
    let rows = |f: &dyn Fn(f64) -> String| -> Vec<Vec<String>> {
        report
            .components
            .iter()
            .map(|c| vec![c.name.clone(), c.rank.to_string(), f(c.weight), f(c.epsilon), f(c.b)])
            .collect()
    };
    match format {
        Format::Json => Ok(json_text(report)?),
        Format::Csv => Ok(csv_text(&header, &rows(&|x| x.to_string()))?),
        Format::Table => {
            let mut out = format!(
                "epsilon {}  C1 {}  Gamma {}  norm log cover {}\n\n",
                sig6(report.epsilon),
                sig6(report.c1),
                sig6(report.norm_complexity.total()),
                sig6(report.norm_log_cover)
            );
            let lin: Vec<Vec<String>> = report
                .linear
                .iter()
                .map(|l| {
                    vec![
                        l.matrix.clone(),
                        format!("{}x{}", l.rows, l.cols),
                        sig6(l.norm_cap),
                        sig6(l.l11),
                        l.rank.to_string(),
                        sig6(l.rank_cover),
                    ]
                })
                .collect();
            out += &table(
                &["matrix", "shape", "cap", "l11_log_cover", "rank", "rank_log_cover"],
                &lin,
            );
            out += "\n";
            out += &table(&header, &rows(&sig6));
            let _ = writeln!(
                out,
                "\nmultiplier {}  objective {}  objective at allocation {}{}",
                sig6(report.allocation.multiplier),
                sig6(report.allocation.objective),
                sig6(report.allocation.objective_at_allocation),
                if report.allocation.consistent {
                    ""
                } else {
                    "  (mismatch)"
                }
            );
            Ok(out)
        }
    }
}

pub fn render_offset(report: &OffsetReport, format: Format) -> Result<String> {
    let header = ["method", "value", "std_error", "n_draws", "beta", "finite_class_bound"];
    let rows = |f: &dyn Fn(f64) -> String| -> Vec<Vec<String>> {
        report
            .exact
            .iter()
            .chain(std::iter::once(&report.monte_carlo))
            .map(|e| {
                vec![
                    match e.method {
                        crate::offset_mc::EstimateMethod::Exact => "exact".to_string(),
                        crate::offset_mc::EstimateMethod::MonteCarlo => "monte_carlo".to_string(),
                    },
                    f(e.value),
                    f(e.std_error),
                    e.n_draws.to_string(),
                    f(e.beta),
                    f(report.finite_class_bound),
                ]
            })
            .collect()
    };
    match format {
        Format::Json => Ok(json_text(report)?),
        _ => Ok(tabular(format, &header, rows(&|x| x.to_string()), rows(&sig6))?),
    }
}

pub fn render_tails(report: &TailsReport, format: Format) -> Result<String> {
    let header = [
        "n",
        "threshold",
        "tail_prob_bound",
        "truncation_term",
        "truncation_rate",
        "rate_se",
    ];
    let rows = |f: &dyn Fn(f64) -> String| -> Vec<Vec<String>> {
        report
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.n.to_string(),
                    f(r.threshold),
                    f(r.tail_probability_bound),
                    f(r.truncation_term),
                    f(r.empirical_truncation_rate),
                    f(r.truncation_rate_se),
                ]
            })
            .collect()
    };
    match format {
        Format::Json => Ok(json_text(report)?),
        _ => Ok(tabular(format, &header, rows(&|x| x.to_string()), rows(&sig6))?),
    }
}

pub fn render_experiment(result: &ExperimentResult, format: Format) -> Result<String> {
    match format {
        Format::Json => Ok(json_text(result)?),
        Format::Csv => {
            let mut buf = Vec::new();
            write_result_csv(result, &mut buf)?;
            Ok(String::from_utf8(buf).expect("csv output is utf-8"))
        }
        Format::Table => {
            let mut rows = Vec::new();
            for cell in &result.cells {
                match &cell.metrics {
                    Some(m) => {
                        for b in &m.bounds {
                            rows.push(vec![
                                cell.n.to_string(),
                                cell.seed.to_string(),
                                b.family.label().to_string(),
                                sig6(m.empirical),
                                sig6(m.se),
                                sig6(b.bound),
                                opt6(b.ratio),
                                sig6(m.truncation_rate),
                                sig6(m.optimizer_gap),
                            ]);
                        }
                    }
                    None => rows.push(vec![
                        cell.n.to_string(),
                        cell.seed.to_string(),
                        "failed".into(),
                        cell.error.clone().unwrap_or_default(),
                    ]),
                }
            }
            let mut out = table(
                &[
                    "n",
                    "seed",
                    "family",
                    "empirical",
                    "se",
                    "bound",
                    "ratio",
                    "trunc_rate",
                    "opt_gap",
                ],
                &rows,
            );
            out += "\n";
            let med: Vec<Vec<String>> = result
                .medians
                .iter()
                .map(|m| vec![m.n.to_string(), opt6(m.median_empirical), m.ok_cells.to_string()])
                .collect();
            out += &table(&["n", "median_empirical", "ok_cells"], &med);
            let _ = writeln!(
                out,
                "\nfailed cells: {}  median inversions: {}",
                result.failed_cells, result.median_inversions
            );
            Ok(out)
        }
    }
}
