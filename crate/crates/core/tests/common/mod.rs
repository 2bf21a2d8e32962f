#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::Rng;
use transformer_bounds::matrix_kit::Mat;
use transformer_bounds::transformer::{ArchKind, ArchSpec, BudgetMode, ParamBudget, TransformerParams};

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

#[allow(clippy::too_many_arguments)]
pub fn budget(b_v: f64, b_c: f64, b_qk: f64, b_w: f64, b_x: f64, b_big_x: f64, b: f64, kappa: f64) -> ParamBudget {
    ParamBudget {
        b_v,
        b_c,
        b_qk,
        b_w,
        b_cls: b_x,
        b_input: b_big_x,
        b_target: b,
        kappa,
        ..ParamBudget::all_ones()
    }
}

pub fn random_budget<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> ParamBudget {
    let mut draw = || rng.random_range(lo..hi);
    ParamBudget {
        b_v: draw(),
        b_c: draw(),
        b_qk: draw(),
        b_w: draw(),
        b_cls: draw(),
        b_input: draw(),
        b_target: draw(),
        kappa: draw(),
        mode: BudgetMode::Spectral,
        ..ParamBudget::all_ones()
    }
}

/// Hand-written oracles, evaluated straight from the closed forms.
pub mod oracle {
    use super::*;

    fn t(x: f64) -> f64 {
        x.powf(2.0 / 3.0)
    }

    pub fn c1(spec: &ArchSpec, b: &ParamBudget) -> f64 {
        match b.c1 {
            Some(c) => c,
            None => (1.0 + 2.0 * (spec.embed_dim * spec.value_dim) as f64).ln(),
        }
    }

    pub fn penalty(spec: &ArchSpec, b: &ParamBudget) -> f64 {
        let lead = 2.0 * b.kappa * b.b_target;
        let chain = b.b_w * b.b_c * b.b_v * b.l_sigma * b.b_input;
        match spec.kind {
            ArchKind::SingleHead => lead + 2.0 * b.kappa * chain,
            ArchKind::MultiHead => lead + 2.0 * b.kappa * spec.heads as f64 * chain,
            ArchKind::MultiLayer => 2.0 * b.kappa * b.b_target + 2.0 * b.kappa * b.b_w,
        }
    }

    pub fn alpha(b: &ParamBudget, i: usize, layers: usize) -> f64 {
        let mut a = 1.0;
        for _ in i..=layers {
            a *= b.l_sigma * b.b_c * b.b_v * (1.0 + 4.0 * b.b_qk);
        }
        a
    }

    pub fn tau(b: &ParamBudget, i: usize, layers: usize) -> f64 {
        let a = alpha(b, i, layers);
        t(a) + t(2.0 * a * b.l_sigma * b.b_c * b.b_v) + t(a * b.l_sigma * b.b_v)
    }

    /// Gamma entering log(Gamma^3 / delta^2).
    pub fn gamma(spec: &ArchSpec, b: &ParamBudget) -> f64 {
        let k = c1(spec, b).powf(1.0 / 3.0);
        let bx = b.b_cls;
        match spec.kind {
            ArchKind::SingleHead => {
                let first = t(b.b_w * b.l_sigma) + t(b.b_w * b.l_sigma * b.b_c * b.b_v);
                let second = t(b.b_w * b.l_sigma * b.b_c * b.b_v) + 1.0;
                k * t(bx) * first + k * t(bx) * second
            }
            ArchKind::MultiHead => {
                let h = spec.heads as f64;
                k * t(bx) * (t(h * b.b_w * b.l_sigma) + 2.0 * t(h * b.b_w * b.l_sigma * b.b_c * b.b_v))
                    + k * t(bx) * t(h)
            }
            ArchKind::MultiLayer => {
                let l = spec.layers;
                let a1 = alpha(b, 1, l);
                let g = k * t(2.0 * b.l_sigma * b.b_c * b.b_v * a1 * b.b_w * bx * bx)
                    + k * t(bx) * (1.0 + t(a1 * b.b_w) + t(a1 * b.b_w * b.l_sigma * b.b_v));
                let eta = k * t(b.b_w) * (2..=l).map(|i| tau(b, i, l)).sum::<f64>();
                g + eta
            }
        }
    }

    pub fn norm_total(spec: &ArchSpec, b: &ParamBudget, n: u64, delta: f64, approx: f64) -> f64 {
        let g = gamma(spec, b);
        let log_n = (g * g * g / (delta * delta)).ln().max(0.0);
        2.0 * penalty(spec, b) / n as f64 * (1.0 + log_n) + 8.0 * b.kappa * delta + approx
    }

    /// (rank, weight) pairs in the order W_c, W_QK, W_v, w (single layer) or
    /// w, c_1..c_L, v_1..v_L, QK_1..QK_L (multi-layer).
    pub fn rank_weights(spec: &ArchSpec, b: &ParamBudget, r_c: usize, r_qk: usize, r_v: usize) -> Vec<(f64, f64)> {
        match spec.kind {
            ArchKind::SingleHead | ArchKind::MultiHead => {
                let h = if spec.kind == ArchKind::MultiHead {
                    spec.heads as f64
                } else {
                    1.0
                };
                vec![
                    (r_c as f64, h * b.b_w * b.l_sigma),
                    (r_qk as f64, h * 2.0 * b.b_w * b.l_sigma * b.b_c * b.b_v),
                    (r_v as f64, h * b.b_w * b.l_sigma * b.b_c),
                    (1.0, h * b.b_c),
                ]
            }
            ArchKind::MultiLayer => {
                let l = spec.layers;
                let mut out = vec![(1.0, 1.0)];
                for i in 1..=l {
                    out.push((r_c as f64, alpha(b, i, l) * b.b_w));
                }
                for i in 1..=l {
                    out.push((r_v as f64, alpha(b, i, l) * b.b_w * b.l_sigma * b.b_v));
                }
                for i in 1..=l {
                    out.push((r_qk as f64, alpha(b, i, l) * 2.0 * b.l_sigma * b.b_c * b.b_v * b.b_w));
                }
                out
            }
        }
    }

    pub fn rank_log_cover(comps: &[(f64, f64)], b_input: f64, delta: f64) -> f64 {
        let s: f64 = comps.iter().map(|(r, _)| 0.5 * r).sum();
        comps
            .iter()
            .map(|&(r, w)| {
                let b_sq = b_input * w * s / (0.5 * r);
                (0.5 * r * (b_sq / delta / delta).ln()).max(0.0)
            })
            .sum()
    }

    pub fn rank_total(
        spec: &ArchSpec,
        b: &ParamBudget,
        ranks: (usize, usize, usize),
        n: u64,
        delta: f64,
        approx: f64,
    ) -> f64 {
        let comps = rank_weights(spec, b, ranks.0, ranks.1, ranks.2);
        let log_n = rank_log_cover(&comps, b.b_input, delta);
        2.0 * penalty(spec, b) / n as f64 * (1.0 + log_n) + 8.0 * b.kappa * delta + approx
    }

    /// E_tau max_j [ (1/n) sum tau_i g_ji - (beta/n) sum g_ji^2 ] by plain
    /// enumeration of all sign vectors.
    pub fn offset_enumerate(rows: &[Vec<f64>], beta: f64) -> f64 {
        let n = rows[0].len();
        let mut acc = 0.0;
        for mask in 0u64..(1u64 << n) {
            let mut best = f64::NEG_INFINITY;
            for row in rows {
                let mut v = 0.0;
                for (i, g) in row.iter().enumerate() {
                    let s = if mask >> i & 1 == 1 { 1.0 } else { -1.0 };
                    v += s * g - beta * g * g;
                }
                best = best.max(v / n as f64);
            }
            acc += best;
        }
        acc / (1u64 << n) as f64
    }
}

pub fn to_na(m: &Mat) -> DMatrix<f64> {
    DMatrix::from_fn(m.rows(), m.cols(), |i, j| m.row(i)[j])
}

fn na_softmax_rows(a: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = a.clone();
    for i in 0..a.nrows() {
        let mx = a.row(i).max();
        let mut z = 0.0;
        for j in 0..a.ncols() {
            out[(i, j)] = (a[(i, j)] - mx).exp();
            z += out[(i, j)];
        }
        for j in 0..a.ncols() {
            out[(i, j)] /= z;
        }
    }
    out
}

fn row_project(a: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = a.clone();
    for i in 0..a.nrows() {
        let n = a.row(i).norm();
        if n > 1.0 {
            out.row_mut(i).scale_mut(1.0 / n);
        }
    }
    out
}

/// Step-by-step evaluation with full T x T attention matrices in nalgebra.
pub fn forward_oracle(params: &TransformerParams, x: &Mat, spec: &ArchSpec) -> f64 {
    let act = |v: f64| spec.activation.apply(v);
    let w = nalgebra::DVector::from_column_slice(&params.readout);
    let head = |x: &DMatrix<f64>, h: &transformer_bounds::transformer::HeadParams| {
        let scores = x * to_na(&h.w_qk) * x.transpose();
        let attn = na_softmax_rows(&scores);
        (attn * x * to_na(&h.w_v)).map(act) * to_na(&h.w_c)
    };
    let x0 = to_na(x);
    let cls = spec.cls_index;
    match spec.kind {
        ArchKind::SingleHead | ArchKind::MultiHead => {
            let mut y = DMatrix::zeros(spec.seq_len, spec.embed_dim);
            for h in &params.blocks[0] {
                y += head(&x0, h);
            }
            y.row(cls).transpose().dot(&w)
        }
        ArchKind::MultiLayer => {
            let mut cur = x0;
            for layer in &params.blocks {
                let phi = head(&cur, &layer[0]);
                cur = row_project(&row_project(&phi).map(act));
            }
            cur.row(cls).transpose().dot(&w)
        }
    }
}

/// Gaussian T x d matrix rescaled to spectral norm u * cap, u uniform on [0, 1].
pub fn bounded_input<R: Rng>(rng: &mut R, t: usize, d: usize, cap: f64) -> Mat {
    use rand_distr::{Distribution, StandardNormal};
    let data: Vec<f64> = (0..t * d).map(|_| StandardNormal.sample(rng)).collect();
    let m = Mat::from_vec(t, d, data).unwrap();
    let s = m.spectral_norm();
    let u: f64 = rng.random_range(0.0..=1.0);
    m.scaled(u * cap / s)
}

pub fn arch_of(kind: ArchKind) -> ArchSpec {
    match kind {
        ArchKind::SingleHead => ArchSpec::single_head(3, 2, 2),
        ArchKind::MultiHead => ArchSpec::multi_head(3, 2, 2, 2),
        ArchKind::MultiLayer => ArchSpec::multi_layer(3, 2, 2),
    }
}

/// m x n class with entries uniform on [0, cap] (or [-cap, cap]).
pub fn random_class<R: Rng>(
    rng: &mut R,
    m: usize,
    n: usize,
    cap: f64,
    signed: bool,
) -> transformer_bounds::offset_mc::FunctionClassSample {
    let lo = if signed { -cap } else { 0.0 };
    let data: Vec<f64> = (0..m * n).map(|_| rng.random_range(lo..=cap)).collect();
    transformer_bounds::offset_mc::FunctionClassSample::with_cap(Mat::from_vec(m, n, data).unwrap(), cap).unwrap()
}

pub fn rows_of(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

/// Random list of `count` matrices of shape d1 x d2 with Gaussian entries.
pub fn random_series<R: Rng>(rng: &mut R, count: usize, d1: usize, d2: usize) -> Vec<Mat> {
    use rand_distr::{Distribution, StandardNormal};
    (0..count)
        .map(|_| {
            let data: Vec<f64> = (0..d1 * d2).map(|_| StandardNormal.sample(rng)).collect();
            Mat::from_vec(d1, d2, data).unwrap()
        })
        .collect()
}

pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}
