//! Offset Rademacher complexity of finite classes, exact and Monte Carlo,
//! plus matrix Rademacher/Gaussian series bounds.
//!
//! For a class sample `G` (row j = function j, column i = sample point i):
//!
//! ```text
//! R(G, beta) = E_tau max_j [ (1/n) sum_i tau_i G_ji - (beta/n) sum_i G_ji^2 ]
//! ```
//!
//! All parallel work is split into fixed chunks whose partial results are
//! combined in index order, so outputs do not depend on the thread count.

use std::io::{BufRead, Write};

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result, EXACT_ENUMERATION_LIMIT};
use crate::loss::LossModel;
use crate::matrix_kit::{Mat, RngStream};
use crate::transformer::{forward, project_params, ArchSpec, ParamBudget, TransformerParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ClassRepr")]
pub struct FunctionClassSample {
    values: Mat,
    value_cap: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassRepr {
    values: Mat,
    value_cap: f64,
}

impl TryFrom<ClassRepr> for FunctionClassSample {
    type Error = Error;
    fn try_from(r: ClassRepr) -> Result<Self> {
        FunctionClassSample::with_cap(r.values, r.value_cap)
    }
}

impl FunctionClassSample {
    /// Class sample with the cap set to the largest absolute entry.
    pub fn new(values: Mat) -> Result<Self> {
        let cap = values.max_abs();
        Self::with_cap(values, cap)
    }

    pub fn with_cap(values: Mat, value_cap: f64) -> Result<Self> {
        if values.rows() == 0 || values.cols() == 0 {
            return Err(invalid("class sample needs at least one function and one point"));
        }
        if !values.is_finite() {
            return Err(invalid("class sample entries must be finite"));
        }
        if !(value_cap >= values.max_abs()) || !value_cap.is_finite() {
            return Err(invalid(format!(
                "value_cap {value_cap} is below the largest entry {}",
                values.max_abs()
            )));
        }
        Ok(FunctionClassSample { values, value_cap })
    }

    pub fn values(&self) -> &Mat {
        &self.values
    }

    pub fn value_cap(&self) -> f64 {
        self.value_cap
    }

    pub fn num_functions(&self) -> usize {
        self.values.rows()
    }

    pub fn num_points(&self) -> usize {
        self.values.cols()
    }

    /// Appends a row (another function).
    pub fn with_row(&self, row: &[f64]) -> Result<Self> {
        if row.len() != self.num_points() {
            return Err(invalid("row length must equal the number of sample points"));
        }
        let mut data = self.values.data().to_vec();
        data.extend_from_slice(row);
        let values = Mat::from_vec(self.num_functions() + 1, self.num_points(), data)?;
        let cap = self.value_cap.max(values.max_abs());
        Self::with_cap(values, cap)
    }

    /// CSV dump: a `# value_cap=<v>` line, then one row per function.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut out = out;
        writeln!(out, "# value_cap={}", self.value_cap)?;
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        for j in 0..self.num_functions() {
            w.write_record(self.values.row(j).iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: BufRead>(mut input: R) -> Result<Self> {
        let mut first = String::new();
        input.read_line(&mut first)?;
        let cap: f64 = first
            .trim()
            .strip_prefix("# value_cap=")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| invalid("class sample CSV must start with '# value_cap=<number>'"))?;
        let mut rows = Vec::new();
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(input);
        for rec in rdr.records() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| invalid(format!("bad CSV entry {s:?}: {e}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        Self::with_cap(Mat::from_rows(&rows)?, cap)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateMethod {
    Exact,
    MonteCarlo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OffsetEstimate {
    pub value: f64,
    pub std_error: f64,
    pub method: EstimateMethod,
    pub n_draws: u64,
    pub beta: f64,
}

/// Compensated summation.
#[derive(Clone, Copy, Debug, Default)]
struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(self) -> f64 {
        self.sum + self.comp
    }
}

/// Inner maximum for a fixed sign pattern, given the running sums
/// s_j = sum_i tau_i G_ji and penalties q_j = beta sum_i G_ji^2.
fn inner_max(s: &[f64], q: &[f64], inv_n: f64) -> f64 {
    s.iter()
        .zip(q)
        .map(|(sj, qj)| (sj - qj) * inv_n)
        .fold(f64::NEG_INFINITY, f64::max)
}

fn penalties(fc: &FunctionClassSample, beta: f64) -> Vec<f64> {
    (0..fc.num_functions())
        .map(|j| beta * fc.values.row(j).iter().map(|v| v * v).sum::<f64>())
        .collect()
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta >= 0.0) || !beta.is_finite() {
        return Err(invalid(format!("beta must be nonnegative, got {beta}")));
    }
    Ok(())
}

const GRAY_BITS: usize = 12;

/// Average of the inner max over all 2^n sign vectors.
///
/// The top `n - 12` bits index chunks evaluated in parallel; inside a chunk
/// the low bits follow a Gray code, so each step updates the sums by one
/// column. Every chunk restarts its sums from scratch.
pub fn offset_complexity_exact(fc: &FunctionClassSample, beta: f64) -> Result<OffsetEstimate> {
    check_beta(beta)?;
    let n = fc.num_points();
    if n > EXACT_ENUMERATION_LIMIT {
        return Err(Error::SizeLimit {
            n,
            limit: EXACT_ENUMERATION_LIMIT,
        });
    }
    let m = fc.num_functions();
    let g = &fc.values;
    let q = penalties(fc, beta);
    let inv_n = 1.0 / n as f64;
    let low = n.min(GRAY_BITS);
    let high = n - low;

    let chunk_sums: Vec<f64> = (0..1u64 << high)
        .into_par_iter()
        .map(|chunk| {
            // tau_i = +1 when bit i is set; low bits start all negative.
            let mut s = vec![0.0; m];
            for (j, sj) in s.iter_mut().enumerate() {
                let row = g.row(j);
                for (i, &g) in row.iter().enumerate() {
                    let positive = i >= low && (chunk >> (i - low)) & 1 == 1;
                    *sj += if positive { g } else { -g };
                }
            }
            let mut acc = Neumaier::default();
            acc.add(inner_max(&s, &q, inv_n));
            let mut gray = 0u64;
            for step in 1u64..(1u64 << low) {
                let bit = step.trailing_zeros() as usize;
                gray ^= 1 << bit;
                let sign = if (gray >> bit) & 1 == 1 { 2.0 } else { -2.0 };
                for (j, sj) in s.iter_mut().enumerate() {
                    *sj += sign * g[(j, bit)];
                }
                acc.add(inner_max(&s, &q, inv_n));
            }
            acc.value()
        })
        .collect();

    let mut total = Neumaier::default();
    for c in chunk_sums {
        total.add(c);
    }
    Ok(OffsetEstimate {
        value: total.value() / (1u64 << n) as f64,
        std_error: 0.0,
        method: EstimateMethod::Exact,
        n_draws: 1u64 << n,
        beta,
    })
}

pub const MIN_MC_DRAWS: u64 = 100;
const MC_BLOCK: u64 = 4096;

/// Running mean and sum of squared deviations.
#[derive(Clone, Copy, Debug, Default)]
struct Moments {
    count: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.count += 1.0;
        let d = x - self.mean;
        self.mean += d / self.count;
        self.m2 += d * (x - self.mean);
    }

    fn merge(self, o: Moments) -> Moments {
        if o.count == 0.0 {
            return self;
        }
        if self.count == 0.0 {
            return o;
        }
        let count = self.count + o.count;
        let d = o.mean - self.mean;
        Moments {
            count,
            mean: self.mean + d * o.count / count,
            m2: self.m2 + o.m2 + d * d * self.count * o.count / count,
        }
    }

    fn std_error(&self) -> f64 {
        if self.count < 2.0 {
            return 0.0;
        }
        (self.m2 / (self.count - 1.0) / self.count).sqrt()
    }
}

/// Runs `draws` evaluations in blocks of 4096, block b drawing from
/// `stream.child(b)`, and merges block moments in order.
fn block_moments(
    draws: u64,
    stream: &RngStream,
    eval: impl Fn(&mut rand_chacha::ChaCha20Rng) -> f64 + Sync,
) -> Moments {
    let blocks = draws.div_ceil(MC_BLOCK);
    let parts: Vec<Moments> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream.child(b).rng();
            let len = MC_BLOCK.min(draws - b * MC_BLOCK);
            let mut mom = Moments::default();
            for _ in 0..len {
                mom.push(eval(&mut rng));
            }
            mom
        })
        .collect();
    parts.into_iter().fold(Moments::default(), Moments::merge)
}

fn random_signs<R: RngCore>(rng: &mut R, out: &mut [f64]) {
    for chunk in out.chunks_mut(64) {
        let bits = rng.next_u64();
        for (i, t) in chunk.iter_mut().enumerate() {
            *t = if (bits >> i) & 1 == 1 { 1.0 } else { -1.0 };
        }
    }
}

/// Sample mean of the inner max over i.i.d. sign vectors.
pub fn offset_complexity_mc(
    fc: &FunctionClassSample,
    beta: f64,
    n_draws: u64,
    stream: &RngStream,
) -> Result<OffsetEstimate> {
    check_beta(beta)?;
    if n_draws < MIN_MC_DRAWS {
        return Err(invalid(format!(
            "Monte Carlo needs at least {MIN_MC_DRAWS} draws, got {n_draws}"
        )));
    }
    let n = fc.num_points();
    let m = fc.num_functions();
    let q = penalties(fc, beta);
    let inv_n = 1.0 / n as f64;
    let mom = block_moments(n_draws, stream, |rng| {
        let mut tau = vec![0.0; n];
        random_signs(rng, &mut tau);
        let s: Vec<f64> = (0..m)
            .map(|j| fc.values.row(j).iter().zip(&tau).map(|(g, t)| g * t).sum())
            .collect();
        inner_max(&s, &q, inv_n)
    });
    Ok(OffsetEstimate {
        value: mom.mean,
        std_error: mom.std_error(),
        method: EstimateMethod::MonteCarlo,
        n_draws,
        beta,
    })
}

/// Class sample for explicitly given functions: entry (j, i) is the
/// conditional excess loss of `functions[j]` over the teacher at `xs[i]`.
pub fn class_sample_from_params(
    spec: &ArchSpec,
    loss: &LossModel,
    teacher: &TransformerParams,
    functions: &[TransformerParams],
    xs: &[Mat],
) -> Result<FunctionClassSample> {
    loss.validate()?;
    if functions.is_empty() || xs.is_empty() {
        return Err(invalid("class sample needs at least one function and one input"));
    }
    let fstar = xs
        .iter()
        .map(|x| forward(teacher, x, spec))
        .collect::<Result<Vec<f64>>>()?;
    let mut data = Vec::with_capacity(functions.len() * xs.len());
    for f in functions {
        for (x, fs) in xs.iter().zip(&fstar) {
            data.push(loss.conditional_excess(forward(f, x, spec)?, *fs));
        }
    }
    FunctionClassSample::new(Mat::from_vec(functions.len(), xs.len(), data)?)
}

/// Finite-grid proxy for the excess-loss class: `grid_size` random parameter
/// sets (standard normal entries) projected onto the budget.
pub fn build_class_sample<R: Rng + ?Sized>(
    spec: &ArchSpec,
    budget: &ParamBudget,
    loss: &LossModel,
    teacher: &TransformerParams,
    xs: &[Mat],
    grid_size: usize,
    rng: &mut R,
) -> Result<FunctionClassSample> {
    if grid_size == 0 {
        return Err(invalid("grid_size must be at least 1"));
    }
    let functions = (0..grid_size)
        .map(|_| project_params(&TransformerParams::sample(spec, 1.0, rng)?, budget, spec))
        .collect::<Result<Vec<_>>>()?;
    class_sample_from_params(spec, loss, teacher, &functions, xs)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesBounds {
    /// max(||sum B B^T||, ||sum B^T B||).
    pub v: f64,
    /// sqrt(2 v log(d1 + d2)).
    pub mean_bound: f64,
    pub d1: usize,
    pub d2: usize,
}

impl SeriesBounds {
    /// (d1 + d2) exp(-t^2 / (2 v)).
    pub fn tail(&self, t: f64) -> f64 {
        (self.d1 + self.d2) as f64 * (-t * t / (2.0 * self.v)).exp()
    }
}

pub fn matrix_series_bounds(bs: &[Mat]) -> Result<SeriesBounds> {
    let first = bs
        .first()
        .ok_or_else(|| invalid("matrix series needs at least one matrix"))?;
    let (d1, d2) = first.shape();
    let mut left = Mat::zeros(d1, d1);
    let mut right = Mat::zeros(d2, d2);
    for b in bs {
        if b.shape() != (d1, d2) {
            return Err(invalid("all series matrices must share one shape"));
        }
        let bt = b.transpose();
        left = left.add(&b.matmul(&bt));
        right = right.add(&bt.matmul(b));
    }
    let v = left.spectral_norm().max(right.spectral_norm());
    Ok(SeriesBounds {
        v,
        mean_bound: (2.0 * v * ((d1 + d2) as f64).ln()).sqrt(),
        d1,
        d2,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeriesCoefficients {
    Gaussian,
    Rademacher,
}

/// Spectral norms of `draws` independent realizations of sum_k c_k B_k.
pub fn series_norm_samples(bs: &[Mat], coeffs: SeriesCoefficients, draws: u64, stream: &RngStream) -> Result<Vec<f64>> {
    let first = bs
        .first()
        .ok_or_else(|| invalid("matrix series needs at least one matrix"))?;
    let (d1, d2) = first.shape();
    if bs.iter().any(|b| b.shape() != (d1, d2)) {
        return Err(invalid("all series matrices must share one shape"));
    }
    let blocks = draws.div_ceil(MC_BLOCK);
    let parts: Vec<Vec<f64>> = (0..blocks)
        .into_par_iter()
        .map(|blk| {
            let mut rng = stream.child(blk).rng();
            let len = MC_BLOCK.min(draws - blk * MC_BLOCK);
            (0..len)
                .map(|_| {
                    let mut z = Mat::zeros(d1, d2);
                    for b in bs {
                        let c = match coeffs {
                            SeriesCoefficients::Gaussian => rng.sample::<f64, _>(StandardNormal),
                            SeriesCoefficients::Rademacher => {
                                if rng.random::<bool>() {
                                    1.0
                                } else {
                                    -1.0
                                }
                            }
                        };
                        for (zi, bi) in z.data_mut().iter_mut().zip(b.data()) {
                            *zi += c * bi;
                        }
                    }
                    z.spectral_norm()
                })
                .collect()
        })
        .collect();
    Ok(parts.concat())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fc(rows: &[Vec<f64>]) -> FunctionClassSample {
        FunctionClassSample::new(Mat::from_rows(rows).unwrap()).unwrap()
    }

    fn brute_force(fc: &FunctionClassSample, beta: f64) -> f64 {
        let n = fc.num_points();
        let mut total = 0.0;
        for mask in 0u32..1 << n {
            let mut best = f64::NEG_INFINITY;
            for j in 0..fc.num_functions() {
                let row = fc.values().row(j);
                let mut lin = 0.0;
                let mut quad = 0.0;
                for (i, &g) in row.iter().enumerate() {
                    let t = if mask >> i & 1 == 1 { 1.0 } else { -1.0 };
                    lin += t * g;
                    quad += g * g;
                }
                best = best.max(lin / n as f64 - beta * quad / n as f64);
            }
            total += best;
        }
        total / (1u64 << n) as f64
    }

    #[test]
    fn exact_examples() {
        for beta in [0.0, 0.3, 2.0] {
            assert_eq!(offset_complexity_exact(&fc(&[vec![0.0; 5]]), beta).unwrap().value, 0.0);
        }
        for n in [1, 4, 13] {
            let v = offset_complexity_exact(&fc(&[vec![1.0; n]]), 0.7).unwrap().value;
            assert!((v + 0.7).abs() < 1e-12, "n={n}: {v}");
        }
        let two = fc(&[vec![0.0], vec![1.0]]);
        assert_eq!(offset_complexity_exact(&two, 0.5).unwrap().value, 0.25);
        let big = fc(&[vec![0.0; 21]]);
        assert!(matches!(
            offset_complexity_exact(&big, 1.0),
            Err(Error::SizeLimit { n: 21, .. })
        ));
    }

    #[test]
    fn exact_matches_brute_force_across_chunking() {
        let mut rng = RngStream::new(3, 1).rng();
        for n in [3, 12, 14] {
            let rows: Vec<Vec<f64>> = (0..4)
                .map(|_| (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())
                .collect();
            let c = fc(&rows);
            let a = offset_complexity_exact(&c, 0.4).unwrap().value;
            let b = brute_force(&c, 0.4);
            assert!((a - b).abs() < 1e-12, "n={n}: {a} vs {b}");
        }
    }

    #[test]
    fn mc_is_deterministic_and_rejects_few_draws() {
        let c = fc(&[vec![0.1, -0.4, 0.3], vec![0.0; 3]]);
        let s = RngStream::new(11, 2);
        let a = offset_complexity_mc(&c, 0.5, 5000, &s).unwrap();
        let b = offset_complexity_mc(&c, 0.5, 5000, &s).unwrap();
        assert_eq!(a, b);
        assert!(a.value >= -4.0 * a.std_error);
        assert!(offset_complexity_mc(&c, 0.5, 99, &s).is_err());
    }

    #[test]
    fn mc_matches_exact_at_n10() {
        let mut rng = RngStream::new(8, 0).rng();
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..10).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())
            .collect();
        let c = fc(&rows);
        let exact = offset_complexity_exact(&c, 0.25).unwrap().value;
        let mc = offset_complexity_mc(&c, 0.25, 100_000, &RngStream::new(9, 0)).unwrap();
        assert!((mc.value - exact).abs() < 4.0 * mc.std_error);
    }

    #[test]
    fn mc_std_error_shrinks_with_draws() {
        let mut rng = RngStream::new(21, 0).rng();
        let rows: Vec<Vec<f64>> = (0..3).map(|_| (0..30).map(|_| rng.random::<f64>()).collect()).collect();
        let c = fc(&rows);
        let mut ratios = Vec::new();
        for t in 0..5 {
            let s = RngStream::new(100 + t, 0);
            let a = offset_complexity_mc(&c, 0.1, 20_000, &s).unwrap().std_error;
            let b = offset_complexity_mc(&c, 0.1, 40_000, &s.child(99)).unwrap().std_error;
            ratios.push(b / a);
        }
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        assert!((mean - 0.5f64.sqrt()).abs() < 0.2 * 0.5f64.sqrt(), "{ratios:?}");
    }

    #[test]
    fn cap_must_cover_entries() {
        let m = Mat::from_rows(&[vec![0.5, -2.0]]).unwrap();
        assert!(FunctionClassSample::with_cap(m.clone(), 1.0).is_err());
        assert!(FunctionClassSample::with_cap(m.clone(), 3.0).is_ok());
        assert_eq!(FunctionClassSample::new(m).unwrap().value_cap(), 2.0);
        assert!(Mat::from_rows(&[vec![f64::NAN]]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let c = FunctionClassSample::with_cap(Mat::from_rows(&[vec![0.1, 1.0 / 3.0], vec![-2e-17, 4.0]]).unwrap(), 5.0)
            .unwrap();
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let back = FunctionClassSample::read_csv(&buf[..]).unwrap();
        assert_eq!(back, c);
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<FunctionClassSample>(&json).unwrap(), c);
        assert!(serde_json::from_str::<FunctionClassSample>(
            r#"{"values":{"rows":1,"cols":1,"data":[2.0]},"value_cap":1.0}"#
        )
        .is_err());
    }

    #[test]
    fn series_identity_example() {
        let s = matrix_series_bounds(&[Mat::identity(2)]).unwrap();
        assert_eq!(s.v, 1.0);
        assert!((s.mean_bound - (2.0 * 4f64.ln()).sqrt()).abs() < 1e-15);
        assert!((s.mean_bound - 1.6651).abs() < 1e-4);
        assert!(matrix_series_bounds(&[]).is_err());
        assert!(matrix_series_bounds(&[Mat::identity(2), Mat::identity(3)]).is_err());
    }
}
