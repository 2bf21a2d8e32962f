//! Synthetic ERM experiments: teacher-student data, projected gradient
//! descent under the parameter budget, held-out excess risk, and the bound
//! families evaluated on the same cells.
//!
//! Random streams: replicate `seed` under master seed `s` uses
//! `RngStream::new(s, seed)`; child 0 draws the teacher, and children 1..=3
//! (each further split by n) draw training data, test data and optimizer
//! initializations. Cells therefore never share randomness, and the teacher
//! is the same across the n grid for one replicate.

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{best_family_bound, BoundFamily, DeltaGrid, FamilyInputs};
use crate::error::{invalid, Error, Result};
use crate::loss::{LossKind, LossModel};
use crate::matrix_kit::{project_frobenius_ball, sample_matrix, EntryLaw, Mat, RngStream};
use crate::tails::{optimal_threshold, TailModel, TailRegime};
use crate::transformer::{forward, output_bound, project_params, ArchSpec, ParamBudget, TransformerParams};

pub const MIN_TEST_SIZE: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataRegime {
    Bounded,
    Subgaussian,
    Heavytail,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub step_size: f64,
    pub steps: usize,
    pub restarts: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Truncation {
    Auto,
    Fixed(f64),
}

fn unit() -> f64 {
    1.0
}

fn default_test_size() -> usize {
    MIN_TEST_SIZE
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSettings {
    pub data_regime: DataRegime,
    pub loss: LossKind,
    pub noise_sd: f64,
    pub n_grid: Vec<usize>,
    #[serde(default = "default_test_size")]
    pub n_test: usize,
    pub seeds: Vec<u64>,
    pub optimizer: OptimizerConfig,
    pub bound_families: Vec<BoundFamily>,
    #[serde(default)]
    pub truncation: Option<Truncation>,
    /// Entry standard deviation for teacher and initial parameters before projection.
    #[serde(default = "unit")]
    pub param_sd: f64,
    /// Log covering number for the offset-generic family.
    #[serde(default)]
    pub generic_log_cover: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub arch: ArchSpec,
    pub budget: ParamBudget,
    #[serde(default)]
    pub tail: Option<TailModel>,
    #[serde(default)]
    pub delta_grid: DeltaGrid,
    #[serde(default)]
    pub master_seed: u64,
    pub experiment: ExperimentSettings,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        self.arch.validate()?;
        self.budget.validate()?;
        self.delta_grid.validate()?;
        self.loss_model().validate()?;
        if e.n_grid.is_empty() || e.n_grid[0] == 0 || e.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("n_grid must be nonempty, positive and strictly ascending"));
        }
        if e.n_test < MIN_TEST_SIZE {
            return Err(invalid(format!(
                "n_test must be at least {MIN_TEST_SIZE}, got {}",
                e.n_test
            )));
        }
        if e.seeds.is_empty() {
            return Err(invalid("seeds must be nonempty"));
        }
        let opt = &e.optimizer;
        if opt.restarts == 0 || !(opt.step_size > 0.0) || !opt.step_size.is_finite() {
            return Err(invalid("optimizer needs restarts >= 1 and a positive step size"));
        }
        if !(e.param_sd > 0.0) || !e.param_sd.is_finite() {
            return Err(invalid("param_sd must be positive"));
        }
        if e.bound_families.is_empty() {
            return Err(invalid("bound_families must be nonempty"));
        }
        for fam in &e.bound_families {
            let ok = match fam {
                BoundFamily::OffsetGeneric => e.generic_log_cover.is_some(),
                BoundFamily::Norm | BoundFamily::Rank => e.data_regime == DataRegime::Bounded,
                BoundFamily::Subgaussian => e.data_regime == DataRegime::Subgaussian,
                BoundFamily::Heavytail => e.data_regime == DataRegime::Heavytail,
            };
            if !ok {
                return Err(invalid(format!(
                    "bound family {} does not apply to the {:?} regime with this config",
                    fam.label(),
                    e.data_regime
                )));
            }
        }
        match e.data_regime {
            DataRegime::Bounded => {
                if e.truncation.is_some() {
                    return Err(invalid("truncation applies only to unbounded regimes"));
                }
                let ob = output_bound(&self.arch, &self.budget);
                if self.budget.b_target < ob {
                    return Err(invalid(format!(
                        "bounded regime needs B >= output bound {ob}, got B = {}",
                        self.budget.b_target
                    )));
                }
            }
            DataRegime::Subgaussian | DataRegime::Heavytail => {
                let tail = self
                    .tail
                    .as_ref()
                    .ok_or_else(|| invalid("unbounded regimes need a tail model"))?;
                tail.validate()?;
                let want = if e.data_regime == DataRegime::Subgaussian {
                    TailRegime::Subgaussian
                } else {
                    TailRegime::Heavytail
                };
                if tail.regime != want {
                    return Err(invalid("tail model regime does not match data_regime"));
                }
                if (tail.seq_len, tail.embed_dim) != (self.arch.seq_len, self.arch.embed_dim) {
                    return Err(invalid("tail model T x d must match the architecture"));
                }
                if e.data_regime == DataRegime::Heavytail {
                    if e.loss != LossKind::Squared {
                        return Err(invalid("the heavy-tail regime uses the robust squared loss"));
                    }
                    let (beta, c, x_min) = (tail.beta.unwrap(), tail.scale.unwrap(), tail.x_min.unwrap());
                    if c < x_min.powf(beta) {
                        return Err(invalid(format!(
                            "tail constant C = {c} is below x_min^beta = {} of the sampled Pareto law",
                            x_min.powf(beta)
                        )));
                    }
                }
                if let Some(Truncation::Fixed(m)) = e.truncation {
                    if !(m > 0.0) || !m.is_finite() {
                        return Err(invalid(format!("truncation level must be positive, got {m}")));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn loss_model(&self) -> LossModel {
        let e = &self.experiment;
        match (e.data_regime, &self.tail) {
            (DataRegime::Heavytail, Some(t)) => LossModel::robust_squared(t.alpha, e.noise_sd),
            _ => LossModel::new(e.loss, e.noise_sd),
        }
    }

    pub fn input_law(&self) -> EntryLaw {
        match (self.experiment.data_regime, &self.tail) {
            (DataRegime::Subgaussian | DataRegime::Heavytail, Some(t)) => tail_input_law(t),
            _ => EntryLaw::UniformBall {
                radius: self.budget.b_input,
            },
        }
    }

    /// Truncation level for sample size n (None in the bounded regime).
    pub fn threshold(&self, n: usize) -> Result<Option<f64>> {
        if self.experiment.data_regime == DataRegime::Bounded {
            return Ok(None);
        }
        match self.experiment.truncation {
            Some(Truncation::Fixed(m)) => Ok(Some(m)),
            _ => {
                let tail = self
                    .tail
                    .as_ref()
                    .ok_or_else(|| invalid("unbounded regimes need a tail model"))?;
                Ok(Some(optimal_threshold(tail, n.max(2) as u64)?))
            }
        }
    }

    /// Lipschitz constant of the loss over the (truncated) class.
    pub fn kappa(&self, threshold: Option<f64>) -> f64 {
        let budget = self.effective_budget(threshold);
        self.loss_model()
            .lipschitz(self.budget.b_target, output_bound(&self.arch, &budget))
    }

    fn effective_budget(&self, threshold: Option<f64>) -> ParamBudget {
        match threshold {
            Some(m) => ParamBudget {
                b_input: m,
                b_cls: m,
                ..self.budget.clone()
            },
            None => self.budget.clone(),
        }
    }
}

/// Entry law used to simulate a tail regime. Sub-Gaussian entries get
/// sd nu / sqrt(max(T, d)); heavy tails use symmetric Pareto entries with
/// the model's beta and x_min.
pub fn tail_input_law(tail: &TailModel) -> EntryLaw {
    match tail.regime {
        TailRegime::Subgaussian => EntryLaw::Gaussian {
            sd: tail.nu.unwrap_or(1.0) / (tail.seq_len.max(tail.embed_dim) as f64).sqrt(),
        },
        TailRegime::Heavytail => EntryLaw::Pareto {
            tail_index: tail.beta.unwrap_or(3.0),
            x_min: tail.x_min.unwrap_or(1.0),
        },
    }
}

/// Training inputs as fed to the model (truncated when a threshold is set),
/// labels, and the teacher outputs on the raw inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub xs: Vec<Mat>,
    pub ys: Vec<f64>,
    pub teacher_outputs: Vec<f64>,
    pub truncation_rate: f64,
}

/// Teacher drawn with Gaussian entries and projected onto the budget.
pub fn sample_teacher<R: Rng + ?Sized>(config: &ExperimentConfig, rng: &mut R) -> Result<TransformerParams> {
    let raw = TransformerParams::sample(&config.arch, config.experiment.param_sd, rng)?;
    project_params(&raw, &config.budget, &config.arch)
}

fn sample_inputs<R: Rng + ?Sized>(config: &ExperimentConfig, n: usize, rng: &mut R) -> Result<Vec<Mat>> {
    let law = config.input_law();
    let (t, d) = (config.arch.seq_len, config.arch.embed_dim);
    (0..n).map(|_| sample_matrix(&law, t, d, rng)).collect()
}

fn truncate_inputs(xs: &[Mat], threshold: Option<f64>) -> Result<(Vec<Mat>, f64)> {
    let Some(m) = threshold else {
        return Ok((xs.to_vec(), 0.0));
    };
    let mut count = 0usize;
    let out = xs
        .iter()
        .map(|x| {
            let p = project_frobenius_ball(x, m)?;
            if p != *x {
                count += 1;
            }
            Ok(p)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((out, count as f64 / xs.len().max(1) as f64))
}

pub fn generate_dataset<R: Rng + ?Sized>(
    config: &ExperimentConfig,
    teacher: &TransformerParams,
    n: usize,
    rng: &mut R,
) -> Result<Dataset> {
    if n == 0 {
        return Err(invalid("dataset size must be at least 1"));
    }
    let loss = config.loss_model();
    let raw = sample_inputs(config, n, rng)?;
    if config.experiment.data_regime == DataRegime::Bounded {
        let cap = config.budget.b_input * (1.0 + 1e-12);
        if let Some(x) = raw.iter().find(|x| x.spectral_norm() > cap) {
            return Err(invalid(format!(
                "sampled input has spectral norm {} > B_X",
                x.spectral_norm()
            )));
        }
    }
    let teacher_outputs = raw
        .iter()
        .map(|x| forward(teacher, x, &config.arch))
        .collect::<Result<Vec<_>>>()?;
    let ys = teacher_outputs.iter().map(|&f| loss.sample_label(f, rng)).collect();
    let (xs, truncation_rate) = truncate_inputs(&raw, config.threshold(n)?)?;
    Ok(Dataset {
        xs,
        ys,
        teacher_outputs,
        truncation_rate,
    })
}

pub fn empirical_risk(params: &TransformerParams, data: &Dataset, spec: &ArchSpec, loss: &LossModel) -> Result<f64> {
    let mut total = 0.0;
    for (x, y) in data.xs.iter().zip(&data.ys) {
        total += loss.loss(*y, forward(params, x, spec)?);
    }
    Ok(total / data.xs.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub params: TransformerParams,
    pub empirical_risk: f64,
    /// Final empirical risk of each restart.
    pub restart_risks: Vec<f64>,
}

const FD_STEP: f64 = 1e-6;
const MAX_HALVINGS: usize = 40;

fn descend(
    config: &ExperimentConfig,
    data: &Dataset,
    start: TransformerParams,
    loss: &LossModel,
) -> Result<(TransformerParams, f64)> {
    let spec = &config.arch;
    let opt = &config.experiment.optimizer;
    let risk = |p: &TransformerParams| -> Result<f64> {
        let r = empirical_risk(p, data, spec, loss)?;
        if r.is_finite() {
            Ok(r)
        } else {
            Err(Error::OptimizerFailure(format!(
                "empirical risk became {r} (n = {})",
                data.xs.len()
            )))
        }
    };
    let mut current = project_params(&start, &config.budget, spec)?;
    let mut value = risk(&current)?;
    let mut step = opt.step_size;
    let mut scratch = current.clone();
    for _ in 0..opt.steps {
        let theta = current.flatten();
        let mut grad = vec![0.0; theta.len()];
        let mut probe = theta.clone();
        for i in 0..theta.len() {
            probe[i] = theta[i] + FD_STEP;
            scratch.assign_flat(&probe);
            let up = risk(&scratch)?;
            probe[i] = theta[i] - FD_STEP;
            scratch.assign_flat(&probe);
            let down = risk(&scratch)?;
            probe[i] = theta[i];
            grad[i] = (up - down) / (2.0 * FD_STEP);
        }
        if grad.iter().all(|g| *g == 0.0) {
            break;
        }
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let moved: Vec<f64> = theta.iter().zip(&grad).map(|(t, g)| t - step * g).collect();
            scratch.assign_flat(&moved);
            let candidate = project_params(&scratch, &config.budget, spec)?;
            let v = risk(&candidate)?;
            if v < value {
                current = candidate;
                value = v;
                step = (step * 1.5).min(opt.step_size * 16.0);
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok((current, value))
}

/// Best of `restarts` projected gradient descent runs. Restart 0 starts at
/// `init` when given; restart r otherwise starts from a projected Gaussian
/// draw from `stream.child(r)`.
pub fn train_erm(
    config: &ExperimentConfig,
    data: &Dataset,
    init: Option<&TransformerParams>,
    stream: &RngStream,
) -> Result<TrainOutcome> {
    if data.xs.is_empty() {
        return Err(invalid("training set is empty"));
    }
    let loss = config.loss_model();
    let mut best: Option<(TransformerParams, f64)> = None;
    let mut restart_risks = Vec::with_capacity(config.experiment.optimizer.restarts);
    for r in 0..config.experiment.optimizer.restarts {
        let start = match (r, init) {
            (0, Some(p)) => p.clone(),
            _ => TransformerParams::sample(
                &config.arch,
                config.experiment.param_sd,
                &mut stream.child(r as u64).rng(),
            )?,
        };
        let (params, value) = descend(config, data, start, &loss)?;
        restart_risks.push(value);
        if best.as_ref().is_none_or(|(_, b)| value < *b) {
            best = Some((params, value));
        }
    }
    let (params, empirical_risk) = best.expect("at least one restart");
    Ok(TrainOutcome {
        params,
        empirical_risk,
        restart_risks,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub mean: f64,
    pub std_error: f64,
}

/// Monte Carlo estimate of R(f) - R(f*) on fresh inputs: the conditional
/// excess loss of f on (truncated) inputs against the teacher on raw inputs.
pub fn estimate_excess_risk<R: Rng + ?Sized>(
    fitted: &TransformerParams,
    teacher: &TransformerParams,
    config: &ExperimentConfig,
    threshold: Option<f64>,
    n_test: usize,
    rng: &mut R,
) -> Result<RiskEstimate> {
    if n_test < MIN_TEST_SIZE {
        return Err(invalid(format!("n_test must be at least {MIN_TEST_SIZE}")));
    }
    let loss = config.loss_model();
    let raw = sample_inputs(config, n_test, rng)?;
    let (fed, _) = truncate_inputs(&raw, threshold)?;
    let mut vals = Vec::with_capacity(n_test);
    for (x, xf) in raw.iter().zip(&fed) {
        let fs = forward(teacher, x, &config.arch)?;
        let f = forward(fitted, xf, &config.arch)?;
        vals.push(loss.conditional_excess(f, fs));
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Ok(RiskEstimate {
        mean,
        std_error: (var / n).sqrt(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyResult {
    pub family: BoundFamily,
    pub bound: f64,
    pub delta: f64,
    /// bound / empirical; absent when the empirical excess risk is not positive.
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub empirical: f64,
    pub se: f64,
    pub kappa: f64,
    pub threshold: Option<f64>,
    pub train_risk: f64,
    pub teacher_train_risk: f64,
    /// max(0, train_risk - teacher_train_risk).
    pub optimizer_gap: f64,
    pub truncation_rate: f64,
    pub bounds: Vec<FamilyResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub n: usize,
    pub seed: u64,
    pub metrics: Option<CellMetrics>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MedianRow {
    pub n: usize,
    pub median_empirical: Option<f64>,
    pub ok_cells: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub cells: Vec<CellResult>,
    pub medians: Vec<MedianRow>,
    pub failed_cells: usize,
    /// Adjacent decreases of n where the median empirical excess risk rose.
    pub median_inversions: usize,
}

fn replicate_stream(config: &ExperimentConfig, seed: u64) -> RngStream {
    RngStream::new(config.master_seed, seed)
}

fn run_cell(config: &ExperimentConfig, teacher: &TransformerParams, n: usize, seed: u64) -> Result<CellMetrics> {
    let base = replicate_stream(config, seed);
    let threshold = config.threshold(n)?;
    let data = generate_dataset(config, teacher, n, &mut base.child(1).child(n as u64).rng())?;
    let fit = train_erm(config, &data, None, &base.child(3).child(n as u64))?;
    let loss = config.loss_model();
    let teacher_train_risk = empirical_risk(teacher, &data, &config.arch, &loss)?;
    let est = estimate_excess_risk(
        &fit.params,
        teacher,
        config,
        threshold,
        config.experiment.n_test,
        &mut base.child(2).child(n as u64).rng(),
    )?;
    let kappa = config.kappa(threshold);
    let budget = ParamBudget {
        kappa,
        ..config.budget.clone()
    };
    let inputs = FamilyInputs {
        log_cover: config.experiment.generic_log_cover,
        ranks: None,
        tail: config.tail.clone(),
        threshold,
    };
    let mut bounds = Vec::new();
    for &family in &config.experiment.bound_families {
        let rep = best_family_bound(
            family,
            &config.arch,
            &budget,
            &inputs,
            n as u64,
            0.0,
            &config.delta_grid,
        )?;
        bounds.push(FamilyResult {
            family,
            bound: rep.total,
            delta: rep.delta,
            ratio: (est.mean > 0.0).then(|| rep.total / est.mean),
        });
    }
    Ok(CellMetrics {
        empirical: est.mean,
        se: est.std_error,
        kappa,
        threshold,
        train_risk: fit.empirical_risk,
        teacher_train_risk,
        optimizer_gap: (fit.empirical_risk - teacher_train_risk).max(0.0),
        truncation_rate: data.truncation_rate,
        bounds,
    })
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    })
}

/// Runs every (n, seed) cell. Cells are independent work units; a failing
/// cell is recorded with its error and does not abort the grid.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let e = &config.experiment;
    let teachers = e
        .seeds
        .iter()
        .map(|&s| sample_teacher(config, &mut replicate_stream(config, s).child(0).rng()))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> = e
        .n_grid
        .iter()
        .flat_map(|&n| (0..e.seeds.len()).map(move |k| (n, k)))
        .collect();
    let cells: Vec<CellResult> = jobs
        .par_iter()
        .map(|&(n, k)| {
            let seed = e.seeds[k];
            match run_cell(config, &teachers[k], n, seed) {
                Ok(m) => CellResult {
                    n,
                    seed,
                    metrics: Some(m),
                    error: None,
                },
                Err(err) => CellResult {
                    n,
                    seed,
                    metrics: None,
                    error: Some(err.to_string()),
                },
            }
        })
        .collect();
    let medians: Vec<MedianRow> = e
        .n_grid
        .iter()
        .map(|&n| {
            let vals: Vec<f64> = cells
                .iter()
                .filter(|c| c.n == n)
                .filter_map(|c| c.metrics.as_ref().map(|m| m.empirical))
                .collect();
            MedianRow {
                n,
                ok_cells: vals.len(),
                median_empirical: median(vals),
            }
        })
        .collect();
    let median_inversions = medians
        .windows(2)
        .filter(|w| matches!((w[0].median_empirical, w[1].median_empirical), (Some(a), Some(b)) if b > a))
        .count();
    Ok(ExperimentResult {
        config: config.clone(),
        failed_cells: cells.iter().filter(|c| c.metrics.is_none()).count(),
        cells,
        medians,
        median_inversions,
    })
}

pub const CSV_COLUMNS: [&str; 9] = [
    "n",
    "seed",
    "family",
    "empirical",
    "se",
    "bound",
    "ratio",
    "truncation_rate",
    "optimizer_gap",
];

fn opt_str(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One CSV row per (n, seed, family); failed cells leave numeric fields empty.
pub fn result_csv_rows(result: &ExperimentResult) -> Vec<[String; 9]> {
    let mut rows = Vec::new();
    for cell in &result.cells {
        for (i, family) in result.config.experiment.bound_families.iter().enumerate() {
            let m = cell.metrics.as_ref();
            let fam = m.map(|m| &m.bounds[i]);
            rows.push([
                cell.n.to_string(),
                cell.seed.to_string(),
                family.label().to_string(),
                opt_str(m.map(|m| m.empirical)),
                opt_str(m.map(|m| m.se)),
                opt_str(fam.map(|f| f.bound)),
                opt_str(fam.and_then(|f| f.ratio)),
                opt_str(m.map(|m| m.truncation_rate)),
                opt_str(m.map(|m| m.optimizer_gap)),
            ]);
        }
    }
    rows
}

pub fn write_result_csv<W: std::io::Write>(result: &ExperimentResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for row in result_csv_rows(result) {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `<path>` as JSON and the same path with a `.csv` extension.
pub fn write_result(result: &ExperimentResult, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(result)?;
    std::fs::write(path, json + "\n")?;
    let file = std::fs::File::create(path.with_extension("csv"))?;
    write_result_csv(result, std::io::BufWriter::new(file))
}

pub fn read_result(path: &Path) -> Result<ExperimentResult> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}
