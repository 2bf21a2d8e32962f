//! Dense row-major matrices, the norms and projections used by the bounds,
//! a one-sided Jacobi SVD, and counter-based random streams.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatRepr", into = "MatRepr")]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatRepr {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<MatRepr> for Mat {
    type Error = crate::error::Error;

    fn try_from(r: MatRepr) -> Result<Self> {
        Mat::from_vec(r.rows, r.cols, r.data)
    }
}

impl From<Mat> for MatRepr {
    fn from(m: Mat) -> Self {
        MatRepr {
            rows: m.rows,
            cols: m.cols,
            data: m.data,
        }
    }
}

impl Mat {
    /// Builds a matrix from row-major entries, rejecting empty shapes and
    /// non-finite values.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(invalid(format!("matrix shape {rows}x{cols} must be nonempty")));
        }
        if data.len() != rows * cols {
            return Err(invalid(format!(
                "matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid("matrix entries must be finite"));
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(invalid("ragged rows"));
        }
        Mat::from_vec(r, c, rows.concat())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix shape must be nonempty");
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Mat::zeros(values.len(), values.len());
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    /// Column vector (len x 1).
    pub fn column(values: &[f64]) -> Self {
        Mat::from_vec(values.len(), 1, values.to_vec()).expect("finite column")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a = self.row(i);
            let o = out.row_mut(i);
            for (k, &aik) in a.iter().enumerate() {
                if aik == 0.0 {
                    continue;
                }
                for (oj, bkj) in o.iter_mut().zip(other.row(k)) {
                    *oj += aik * bkj;
                }
            }
        }
        out
    }

    /// Row vector times matrix: `v^T self`.
    pub fn left_mul(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.rows, "vector-matrix shape mismatch");
        let mut out = vec![0.0; self.cols];
        for (k, &vk) in v.iter().enumerate() {
            for (oj, bkj) in out.iter_mut().zip(self.row(k)) {
                *oj += vk * bkj;
            }
        }
        out
    }

    /// Matrix times column vector.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols, "matrix-vector shape mismatch");
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    pub fn scaled(&self, s: f64) -> Mat {
        self.map(|v| v * s)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add(&self, other: &Mat) -> Mat {
        assert_eq!(self.shape(), other.shape(), "add shape mismatch");
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &Mat) -> Mat {
        assert_eq!(self.shape(), other.shape(), "sub shape mismatch");
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn norm_fro(&self) -> f64 {
        norm2(&self.data)
    }

    pub fn norm_l11(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Largest singular value, via the full Jacobi SVD.
    pub fn spectral_norm(&self) -> f64 {
        self.singular_values().first().copied().unwrap_or(0.0)
    }

    pub fn singular_values(&self) -> Vec<f64> {
        self.svd().singular_values
    }

    /// Number of singular values above `rel_tol * sigma_max`.
    pub fn numerical_rank(&self, rel_tol: f64) -> usize {
        let sv = self.singular_values();
        let top = sv.first().copied().unwrap_or(0.0);
        if top == 0.0 {
            return 0;
        }
        sv.iter().filter(|&&s| s > rel_tol * top).count()
    }

    pub fn svd(&self) -> Svd {
        if self.rows >= self.cols {
            jacobi_svd(self)
        } else {
            let t = jacobi_svd(&self.transpose());
            Svd {
                u: t.v,
                singular_values: t.singular_values,
                v: t.u,
            }
        }
    }
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Thin SVD `A = U diag(s) V^T` with singular values in descending order.
/// `u` is rows x p and `v` is cols x p with p = min(rows, cols); columns of
/// `u` that belong to zero singular values are zero.
#[derive(Clone, Debug)]
pub struct Svd {
    pub u: Mat,
    pub singular_values: Vec<f64>,
    pub v: Mat,
}

const JACOBI_MAX_SWEEPS: usize = 80;

/// One-sided (Hestenes) Jacobi for rows >= cols.
fn jacobi_svd(a: &Mat) -> Svd {
    let (m, n) = a.shape();
    debug_assert!(m >= n);
    // column-major working copies
    let mut u: Vec<Vec<f64>> = (0..n).map(|j| (0..m).map(|i| a[(i, j)]).collect()).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&u[p], &u[p]);
                let beta = dot(&u[q], &u[q]);
                let gamma = dot(&u[p], &u[q]);
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut u, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<(f64, usize)> = u.iter().enumerate().map(|(j, col)| (norm2(col), j)).collect();
    order.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));

    let mut um = Mat::zeros(m, n);
    let mut vm = Mat::zeros(n, n);
    let mut sv = Vec::with_capacity(n);
    for (k, &(sigma, j)) in order.iter().enumerate() {
        sv.push(sigma);
        for i in 0..m {
            um[(i, k)] = if sigma > 0.0 { u[j][i] / sigma } else { 0.0 };
        }
        for i in 0..n {
            vm[(i, k)] = v[j][i];
        }
    }
    Svd {
        u: um,
        singular_values: sv,
        v: vm,
    }
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(q);
    for (xp, xq) in left[p].iter_mut().zip(right[0].iter_mut()) {
        let a = *xp;
        let b = *xq;
        *xp = c * a - s * b;
        *xq = s * a + c * b;
    }
}

/// Row-wise softmax with per-row max subtraction.
pub fn row_softmax(a: &Mat) -> Mat {
    let mut out = a.clone();
    for i in 0..out.rows() {
        softmax_in_place(out.row_mut(i));
    }
    out
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

// Points within a few ulps of the boundary count as inside, so that a
// rescaled point is a fixed point of the projection.
const PROJECTION_SLACK: f64 = 1e-14;

/// Truncation onto the Frobenius ball of radius `radius`.
pub fn project_frobenius_ball(x: &Mat, radius: f64) -> Result<Mat> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(invalid(format!(
            "ball radius must be positive and finite, got {radius}"
        )));
    }
    let norm = x.norm_fro();
    if norm <= radius * (1.0 + PROJECTION_SLACK) {
        Ok(x.clone())
    } else {
        Ok(x.scaled(radius / norm))
    }
}

/// Maps each row r to r / max(1, ||r||_2).
pub fn project_rows_unit_ball(x: &Mat) -> Mat {
    let mut out = x.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let norm = norm2(row);
        if norm > 1.0 + PROJECTION_SLACK {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    out
}

/// Best rank-`r` approximation in Frobenius norm.
pub fn rank_truncate(w: &Mat, r: usize) -> Result<Mat> {
    let p = w.rows().min(w.cols());
    if r == 0 || r > p {
        return Err(invalid(format!("rank cap {r} outside 1..={p}")));
    }
    if r == p {
        return Ok(w.clone());
    }
    let svd = w.svd();
    let mut out = Mat::zeros(w.rows(), w.cols());
    for k in 0..r {
        let s = svd.singular_values[k];
        if s == 0.0 {
            break;
        }
        for i in 0..w.rows() {
            let us = svd.u[(i, k)] * s;
            for j in 0..w.cols() {
                out[(i, j)] += us * svd.v[(j, k)];
            }
        }
    }
    Ok(out)
}

/// Entry law for random matrices.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum EntryLaw {
    /// i.i.d. N(0, sd^2) entries.
    Gaussian { sd: f64 },
    /// Uniform on the Frobenius ball of the given radius.
    UniformBall { radius: f64 },
    /// Random sign times a Pareto magnitude with P(|x| > t) = (t / x_min)^(-tail_index).
    Pareto { tail_index: f64, x_min: f64 },
    /// Student t entries with `dof` degrees of freedom.
    StudentT { dof: f64 },
}

impl EntryLaw {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            EntryLaw::Gaussian { sd } => sd > 0.0 && sd.is_finite(),
            EntryLaw::UniformBall { radius } => radius > 0.0 && radius.is_finite(),
            EntryLaw::Pareto { tail_index, x_min } => {
                tail_index > 2.0 && tail_index.is_finite() && x_min > 0.0 && x_min.is_finite()
            }
            EntryLaw::StudentT { dof } => dof > 2.0 && dof.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("invalid entry law parameters: {self:?}")))
        }
    }
}

pub fn sample_matrix<R: Rng + ?Sized>(law: &EntryLaw, rows: usize, cols: usize, rng: &mut R) -> Result<Mat> {
    law.validate()?;
    if rows == 0 || cols == 0 {
        return Err(invalid(format!("matrix shape {rows}x{cols} must be nonempty")));
    }
    let len = rows * cols;
    let data: Vec<f64> = match *law {
        EntryLaw::Gaussian { sd } => (0..len).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect(),
        EntryLaw::UniformBall { radius } => {
            let mut dir: Vec<f64> = (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let norm = norm2(&dir);
            let u: f64 = rng.random();
            let scale = if norm > 0.0 {
                radius * u.powf(1.0 / len as f64) / norm
            } else {
                0.0
            };
            dir.iter_mut().for_each(|v| *v *= scale);
            dir
        }
        EntryLaw::Pareto { tail_index, x_min } => (0..len)
            .map(|_| {
                let u = 1.0 - rng.random::<f64>();
                let mag = x_min * u.powf(-1.0 / tail_index);
                if rng.random::<bool>() {
                    mag
                } else {
                    -mag
                }
            })
            .collect(),
        EntryLaw::StudentT { dof } => {
            let dist = StudentT::new(dof).map_err(|e| invalid(format!("student t: {e}")))?;
            (0..len).map(|_| dist.sample(rng)).collect()
        }
    };
    Mat::from_vec(rows, cols, data)
}

/// A (seed, stream) pair naming an independent ChaCha20 keystream.
///
/// The same pair always yields the same sequence; work units derive their
/// own stream with [`RngStream::child`] so results never depend on how the
/// units are scheduled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        RngStream { seed, stream_id }
    }

    pub fn rng(&self) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }

    pub fn child(&self, index: u64) -> RngStream {
        RngStream {
            seed: self.seed,
            stream_id: splitmix64(self.stream_id ^ splitmix64(index.wrapping_add(0xA076_1D64_78BD_642F))),
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
