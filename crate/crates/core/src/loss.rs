//! Losses, label noise, and conditional excess losses g(x; f).

use std::f64::consts::{PI, SQRT_2};
use std::sync::OnceLock;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{invalid, Result};
use crate::tails::catoni_psi;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Squared,
    Absolute,
    Logistic,
}

/// A loss together with the conditional law of Y given f*(X).
///
/// Squared and absolute losses use Y = f* + N(0, noise_sd^2). Logistic loss
/// uses labels in {-1, +1} with P(Y = 1) = sigmoid(f*). With `robust_alpha`
/// set, the squared loss is wrapped as (1/alpha) psi(alpha (y - f)^2).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossModel {
    pub kind: LossKind,
    pub noise_sd: f64,
    pub robust_alpha: Option<f64>,
}

impl LossModel {
    pub fn new(kind: LossKind, noise_sd: f64) -> Self {
        LossModel {
            kind,
            noise_sd,
            robust_alpha: None,
        }
    }

    pub fn robust_squared(alpha: f64, noise_sd: f64) -> Self {
        LossModel {
            kind: LossKind::Squared,
            noise_sd,
            robust_alpha: Some(alpha),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sd >= 0.0) || !self.noise_sd.is_finite() {
            return Err(invalid(format!("noise_sd must be nonnegative, got {}", self.noise_sd)));
        }
        if let Some(a) = self.robust_alpha {
            if self.kind != LossKind::Squared {
                return Err(invalid("the robust wrapper is only defined for squared loss"));
            }
            if !(a > 0.0) || !a.is_finite() {
                return Err(invalid(format!("robust loss scale must be positive, got {a}")));
            }
        }
        Ok(())
    }

    pub fn loss(&self, y: f64, f: f64) -> f64 {
        match (self.kind, self.robust_alpha) {
            (LossKind::Squared, None) => (y - f) * (y - f),
            (LossKind::Squared, Some(a)) => catoni_psi(a * (y - f) * (y - f)) / a,
            (LossKind::Absolute, _) => (y - f).abs(),
            (LossKind::Logistic, _) => softplus(-y * f),
        }
    }

    /// d loss / d f.
    pub fn loss_derivative(&self, y: f64, f: f64) -> f64 {
        match (self.kind, self.robust_alpha) {
            (LossKind::Squared, None) => 2.0 * (f - y),
            (LossKind::Squared, Some(a)) => {
                let u = a * (y - f) * (y - f);
                2.0 * (f - y) * (1.0 + u) / (1.0 + u + 0.5 * u * u)
            }
            (LossKind::Absolute, _) => (f - y).signum(),
            (LossKind::Logistic, _) => -y * sigmoid(-y * f),
        }
    }

    pub fn sample_label<R: Rng + ?Sized>(&self, fstar: f64, rng: &mut R) -> f64 {
        match self.kind {
            LossKind::Logistic => {
                if rng.random::<f64>() < sigmoid(fstar) {
                    1.0
                } else {
                    -1.0
                }
            }
            _ => {
                let z: f64 = StandardNormal.sample(rng);
                fstar + self.noise_sd * z
            }
        }
    }

    /// E[loss(Y, f) - loss(Y, f*) | f*(X) = fstar].
    pub fn conditional_excess(&self, f: f64, fstar: f64) -> f64 {
        let s = self.noise_sd;
        let a = f - fstar;
        match (self.kind, self.robust_alpha) {
            (LossKind::Squared, None) => a * a,
            (LossKind::Squared, Some(alpha)) => {
                if s == 0.0 {
                    return catoni_psi(alpha * a * a) / alpha;
                }
                gaussian_expectation(|z| {
                    let e = s * z;
                    (catoni_psi(alpha * (e - a) * (e - a)) - catoni_psi(alpha * e * e)) / alpha
                })
            }
            (LossKind::Absolute, _) => gaussian_abs_mean(a, s) - gaussian_abs_mean(0.0, s),
            (LossKind::Logistic, _) => {
                let p = sigmoid(fstar);
                p * (softplus(-f) - softplus(-fstar)) + (1.0 - p) * (softplus(f) - softplus(fstar))
            }
        }
    }

    /// Lipschitz constant of the loss in f over outputs bounded by
    /// `output_bound` and targets bounded by `b_target`.
    pub fn lipschitz(&self, b_target: f64, output_bound: f64) -> f64 {
        match self.kind {
            LossKind::Squared => 2.0 * (b_target + output_bound),
            LossKind::Absolute | LossKind::Logistic => 1.0,
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^x) without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// E|a + s Z| for standard normal Z.
pub fn gaussian_abs_mean(a: f64, s: f64) -> f64 {
    if s == 0.0 {
        return a.abs();
    }
    let u = a / s;
    s * (2.0 / PI).sqrt() * (-0.5 * u * u).exp() + a * (1.0 - erfc(u / SQRT_2))
}

pub const HERMITE_POINTS: usize = 64;

/// Nodes and weights of the 64-point Gauss-Hermite rule for weight e^(-x^2).
pub fn gauss_hermite() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| hermite_rule(HERMITE_POINTS))
}

/// Newton iteration on the orthonormal Hermite recurrence, seeded with the
/// usual asymptotic guesses for the largest roots.
fn hermite_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    let pim4 = PI.powf(-0.25);
    let nf = n as f64;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut z = 0.0f64;
    for i in 0..n.div_ceil(2) {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// E[h(Z)] for standard normal Z by Gauss-Hermite quadrature.
pub fn gaussian_expectation(h: impl Fn(f64) -> f64) -> f64 {
    let (x, w) = gauss_hermite();
    let total: f64 = x.iter().zip(w).map(|(xi, wi)| wi * h(SQRT_2 * xi)).sum();
    total / PI.sqrt()
}
