//! Truncation and tail terms for unbounded inputs.
//!
//! Two regimes are supported. Sub-Gaussian inputs satisfy
//! `P(||X||_F >= t) <= (T + d) exp(-t^2 / (2 nu^2))`; heavy-tailed inputs have
//! entries with `P(|X_ij| > t) <= C t^(-beta)`, `beta > 2`. The `nu` stored in
//! a [`TailModel`] is the exponent scale of the sub-Gaussian tail. It is not
//! the same object as [`second_moment_proxy`], which estimates
//! `max(||E X^T X||, ||E X X^T||)`; the two differ dimensionally and are kept
//! apart on purpose.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::matrix_kit::{project_frobenius_ball, Mat};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TailRegime {
    Subgaussian,
    Heavytail,
}

fn unit() -> f64 {
    1.0
}

fn default_c_trunc() -> f64 {
    2.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailModel {
    pub regime: TailRegime,
    /// Sub-Gaussian exponent scale.
    #[serde(default)]
    pub nu: Option<f64>,
    /// Heavy-tail index.
    #[serde(default)]
    pub beta: Option<f64>,
    /// Heavy-tail entrywise constant.
    #[serde(rename = "C", default)]
    pub scale: Option<f64>,
    #[serde(default)]
    pub x_min: Option<f64>,
    pub seq_len: usize,
    pub embed_dim: usize,
    /// Cap on the derivative of the robust-loss influence function.
    #[serde(rename = "B_psi", default = "unit")]
    pub b_psi: f64,
    /// Robust-loss scale.
    #[serde(default = "unit")]
    pub alpha: f64,
    /// Multiplier for the sub-Gaussian truncation term.
    #[serde(rename = "C_trunc", default = "default_c_trunc")]
    pub c_trunc: f64,
}

impl TailModel {
    pub fn subgaussian(nu: f64, seq_len: usize, embed_dim: usize) -> Self {
        TailModel {
            regime: TailRegime::Subgaussian,
            nu: Some(nu),
            beta: None,
            scale: None,
            x_min: None,
            seq_len,
            embed_dim,
            b_psi: 1.0,
            alpha: 1.0,
            c_trunc: 2.0,
        }
    }

    pub fn heavytail(beta: f64, scale: f64, x_min: f64, seq_len: usize, embed_dim: usize) -> Self {
        TailModel {
            regime: TailRegime::Heavytail,
            nu: None,
            beta: Some(beta),
            scale: Some(scale),
            x_min: Some(x_min),
            ..TailModel::subgaussian(1.0, seq_len, embed_dim)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seq_len == 0 || self.embed_dim == 0 {
            return Err(invalid("tail model needs T >= 1 and d >= 1"));
        }
        for (name, v) in [("B_psi", self.b_psi), ("alpha", self.alpha), ("C_trunc", self.c_trunc)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(invalid(format!("{name} must be positive, got {v}")));
            }
        }
        let heavy_fields = self.beta.is_some() || self.scale.is_some() || self.x_min.is_some();
        match self.regime {
            TailRegime::Subgaussian => {
                if heavy_fields {
                    return Err(invalid("sub-Gaussian tail model must not set beta, C or x_min"));
                }
                let nu = self.nu.ok_or_else(|| invalid("sub-Gaussian tail model needs nu"))?;
                if !(nu > 0.0) || !nu.is_finite() {
                    return Err(invalid(format!("nu must be positive, got {nu}")));
                }
            }
            TailRegime::Heavytail => {
                if self.nu.is_some() {
                    return Err(invalid("heavy-tail model must not set nu"));
                }
                let (beta, c, x_min) = match (self.beta, self.scale, self.x_min) {
                    (Some(b), Some(c), Some(x)) => (b, c, x),
                    _ => return Err(invalid("heavy-tail model needs beta, C and x_min")),
                };
                if !(beta > 2.0) || !beta.is_finite() {
                    return Err(invalid(format!("tail index beta must exceed 2, got {beta}")));
                }
                if !(c > 0.0) || !(x_min > 0.0) {
                    return Err(invalid("C and x_min must be positive"));
                }
            }
        }
        Ok(())
    }

    fn nu(&self) -> Result<f64> {
        match (self.regime, self.nu) {
            (TailRegime::Subgaussian, Some(nu)) if nu > 0.0 => Ok(nu),
            _ => Err(invalid("operation needs a sub-Gaussian tail model")),
        }
    }

    fn heavy(&self) -> Result<(f64, f64)> {
        match (self.regime, self.beta, self.scale) {
            (TailRegime::Heavytail, Some(beta), Some(c)) => {
                if !(beta > 2.0) {
                    return Err(invalid(format!("tail index beta must exceed 2, got {beta}")));
                }
                Ok((beta, c))
            }
            _ => Err(invalid("operation needs a heavy-tail model")),
        }
    }

    fn dim_sum(&self) -> f64 {
        (self.seq_len + self.embed_dim) as f64
    }

    fn dim_product(&self) -> f64 {
        (self.seq_len * self.embed_dim) as f64
    }
}

/// max(||mean X^T X||_2, ||mean X X^T||_2) over the samples.
pub fn second_moment_proxy(samples: &[Mat]) -> Result<f64> {
    let first = samples
        .first()
        .ok_or_else(|| invalid("second moment proxy needs at least one sample"))?;
    let (t, d) = first.shape();
    let mut gram_cols = Mat::zeros(d, d);
    let mut gram_rows = Mat::zeros(t, t);
    for x in samples {
        if x.shape() != (t, d) {
            return Err(invalid("samples must share one shape"));
        }
        let xt = x.transpose();
        gram_cols = gram_cols.add(&xt.matmul(x));
        gram_rows = gram_rows.add(&x.matmul(&xt));
    }
    let inv = 1.0 / samples.len() as f64;
    Ok(gram_cols
        .scaled(inv)
        .spectral_norm()
        .max(gram_rows.scaled(inv).spectral_norm()))
}

/// (T + d) exp(-t^2 / (2 nu^2)).
pub fn subgaussian_tail_probability(tail: &TailModel, t: f64) -> Result<f64> {
    let nu = tail.nu()?;
    Ok(tail.dim_sum() * (-t * t / (2.0 * nu * nu)).exp())
}

/// Upper bound on E[||X||_F^2 1(||X||_F > M)] implied by the sub-Gaussian tail:
/// (T + d)(M^2 + 2 nu^2) exp(-M^2 / (2 nu^2)).
pub fn subgaussian_tail_moment(tail: &TailModel, m: f64) -> Result<f64> {
    let nu = tail.nu()?;
    Ok(tail.dim_sum() * (m * m + 2.0 * nu * nu) * (-m * m / (2.0 * nu * nu)).exp())
}

/// C_trunc kappa (T + d)(M^2 + 2 nu^2) exp(-M^2 / (2 nu^2)).
pub fn subgaussian_tail_term(kappa: f64, tail: &TailModel, m: f64) -> Result<f64> {
    if !(m >= 0.0) || !m.is_finite() {
        return Err(invalid(format!("threshold must be nonnegative, got {m}")));
    }
    Ok(tail.c_trunc * kappa * subgaussian_tail_moment(tail, m)?)
}

/// C (T d)^(1 + beta/2) t^(-beta): union bound on P(||X||_2 > t) from the
/// entrywise tail.
pub fn heavy_tail_probability(tail: &TailModel, t: f64) -> Result<f64> {
    let (beta, c) = tail.heavy()?;
    Ok(c * tail.dim_product().powf(1.0 + beta / 2.0) * t.powf(-beta))
}

/// C' (beta / (beta - 2)) M^(2 - beta) with C' = C (T d)^(1 + beta/2): bound on
/// E[||X||_2^2 1(||X||_2 > M)].
pub fn heavy_tail_moment(tail: &TailModel, m: f64) -> Result<f64> {
    let (beta, c) = tail.heavy()?;
    let c_prime = c * tail.dim_product().powf(1.0 + beta / 2.0);
    Ok(c_prime * beta / (beta - 2.0) * m.powf(2.0 - beta))
}

/// kappa B_psi C (T d)^(1 + beta/2) (beta / (beta - 2)) M^(2 - beta).
pub fn heavy_tail_term(tail: &TailModel, kappa: f64, m: f64) -> Result<f64> {
    if !(m > 0.0) || !m.is_finite() {
        return Err(invalid(format!("threshold must be positive, got {m}")));
    }
    Ok(kappa * tail.b_psi * heavy_tail_moment(tail, m)?)
}

/// nu sqrt(2 log(dim_sum * n)).
pub fn subgaussian_threshold(nu: f64, dim_sum: f64, n: f64) -> f64 {
    nu * (2.0 * (dim_sum * n).ln()).sqrt()
}

/// Truncation level balancing complexity growth against the tail term:
/// nu sqrt(2 log((T + d) n)) for sub-Gaussian inputs, n^(1/(beta - 2)) for
/// heavy tails.
pub fn optimal_threshold(tail: &TailModel, n: u64) -> Result<f64> {
    if n < 2 {
        return Err(invalid(format!("threshold selection needs n >= 2, got {n}")));
    }
    match tail.regime {
        TailRegime::Subgaussian => Ok(subgaussian_threshold(tail.nu()?, tail.dim_sum(), n as f64)),
        TailRegime::Heavytail => {
            let (beta, _) = tail.heavy()?;
            Ok((n as f64).powf(1.0 / (beta - 2.0)))
        }
    }
}

/// Increasing branch of Catoni's influence function, log(1 + x + x^2/2).
pub fn catoni_psi(x: f64) -> f64 {
    (x + 0.5 * x * x).ln_1p()
}

/// psi'(x) = (1 + x) / (1 + x + x^2/2); lies in (0, 1] for x >= 0.
pub fn catoni_psi_derivative(x: f64) -> f64 {
    (1.0 + x) / (1.0 + x + 0.5 * x * x)
}

/// (1/alpha) psi(alpha * loss) for a nonnegative base loss.
pub fn robust_loss(loss: f64, alpha: f64) -> Result<f64> {
    if !(loss >= 0.0) {
        return Err(invalid(format!("base loss must be nonnegative, got {loss}")));
    }
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(invalid(format!("robust loss scale must be positive, got {alpha}")));
    }
    Ok(catoni_psi(alpha * loss) / alpha)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TruncatedData {
    pub data: Vec<(Mat, f64)>,
    /// Fraction of inputs with ||X||_F > M.
    pub rate: f64,
}

pub fn truncate_dataset(data: &[(Mat, f64)], m: f64) -> Result<TruncatedData> {
    let mut truncated = 0usize;
    let out = data
        .iter()
        .map(|(x, y)| {
            let p = project_frobenius_ball(x, m)?;
            if p != *x {
                truncated += 1;
            }
            Ok((p, *y))
        })
        .collect::<Result<Vec<_>>>()?;
    let rate = if data.is_empty() {
        0.0
    } else {
        truncated as f64 / data.len() as f64
    };
    Ok(TruncatedData { data: out, rate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix_kit::{sample_matrix, EntryLaw, RngStream};

    #[test]
    fn second_moment_examples() {
        assert_eq!(second_moment_proxy(&[Mat::identity(2)]).unwrap(), 1.0);
        assert_eq!(second_moment_proxy(&[Mat::zeros(3, 2), Mat::zeros(3, 2)]).unwrap(), 0.0);
        assert!(second_moment_proxy(&[]).is_err());
        assert!(second_moment_proxy(&[Mat::zeros(3, 2), Mat::zeros(2, 3)]).is_err());
    }

    #[test]
    fn second_moment_gaussian() {
        let mut rng = RngStream::new(77, 0).rng();
        let law = EntryLaw::Gaussian { sd: 1.0 };
        let xs: Vec<Mat> = (0..10_000)
            .map(|_| sample_matrix(&law, 3, 2, &mut rng).unwrap())
            .collect();
        let v = second_moment_proxy(&xs).unwrap();
        assert!((v - 3.0).abs() <= 0.05 * 3.0, "proxy {v}");
    }

    #[test]
    fn subgaussian_term_examples() {
        let tail = TailModel::subgaussian(1.5, 3, 2);
        let at_zero = subgaussian_tail_term(2.0, &tail, 0.0).unwrap();
        assert!((at_zero - 2.0 * 2.0 * 5.0 * 2.0 * 1.5 * 1.5).abs() < 1e-12);
        // decreasing beyond 2 nu
        let mut prev = f64::INFINITY;
        for i in 0..200 {
            let m = 3.0 + 0.05 * i as f64;
            let v = subgaussian_tail_term(1.0, &tail, m).unwrap();
            assert!(v < prev);
            prev = v;
        }
        assert!(subgaussian_tail_term(1.0, &tail, -1.0).is_err());
        assert!(subgaussian_tail_term(1.0, &TailModel::heavytail(3.0, 1.0, 1.0, 3, 2), 1.0).is_err());
    }

    #[test]
    fn heavy_term_examples() {
        let tail = TailModel::heavytail(4.0, 1.0, 1.0, 1, 1);
        assert!((heavy_tail_term(&tail, 1.0, 1.0).unwrap() - 2.0).abs() < 1e-15);
        let a = heavy_tail_term(&tail, 1.0, 1.5).unwrap();
        let b = heavy_tail_term(&tail, 1.0, 6.0).unwrap();
        assert!((a / b - 16.0).abs() < 1e-12);
        let mut bad = tail.clone();
        bad.beta = Some(2.0);
        assert!(heavy_tail_term(&bad, 1.0, 1.0).is_err());
        assert!(bad.validate().is_err());
        assert!(heavy_tail_term(&tail, 1.0, 0.0).is_err());
    }

    #[test]
    fn threshold_examples() {
        let heavy = TailModel::heavytail(4.0, 1.0, 1.0, 2, 2);
        assert!((optimal_threshold(&heavy, 16).unwrap() - 4.0).abs() < 1e-12);
        let e = std::f64::consts::E;
        assert!((subgaussian_threshold(1.0, 2.0, e / 2.0) - 2f64.sqrt()).abs() < 1e-15);
        let sub = TailModel::subgaussian(1.0, 1, 1);
        assert!(optimal_threshold(&sub, 1).is_err());
        let m = optimal_threshold(&sub, 50).unwrap();
        assert!((m - (2.0 * 100f64.ln()).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn robust_loss_examples() {
        assert_eq!(robust_loss(0.0, 1.0).unwrap(), 0.0);
        assert!((robust_loss(1.0, 1.0).unwrap() - 2.5f64.ln()).abs() < 1e-15);
        assert!(robust_loss(-0.1, 1.0).is_err());
        assert!(robust_loss(1.0, 0.0).is_err());
    }

    #[test]
    fn robust_loss_finite_differences() {
        let mut rng = RngStream::new(3, 9).rng();
        use rand::Rng;
        for _ in 0..50 {
            let l: f64 = rng.random_range(1e-3..1.0);
            let alpha: f64 = rng.random_range(0.1..3.0);
            let h = 1e-6;
            let fd = (robust_loss(l + h, alpha).unwrap() - robust_loss(l - h, alpha).unwrap()) / (2.0 * h);
            let exact = catoni_psi_derivative(alpha * l);
            assert!((fd - exact).abs() < 1e-8, "{fd} vs {exact}");
            assert!(exact > 0.0 && exact <= 1.0);
        }
    }

    #[test]
    fn robust_loss_bounds_and_limit() {
        for i in 0..=100 {
            let l = 0.1 * i as f64;
            for alpha in [1e-3, 0.5, 1.0, 10.0] {
                assert!(robust_loss(l, alpha).unwrap() <= l + 1e-15);
            }
            // l - rho(l) = alpha^2 l^3 / 6 + O(alpha^3 l^4)
            let gap = l - robust_loss(l, 1e-4).unwrap();
            assert!(
                gap >= -1e-15 && gap <= 1e-8 * l.powi(3) / 6.0 + 1e-12,
                "l {l} gap {gap}"
            );
            if l <= 8.0 {
                assert!(gap < 1e-6);
            }
        }
    }

    #[test]
    fn truncation_examples() {
        let data = vec![(Mat::identity(2).scaled(0.1), 1.0), (Mat::zeros(2, 2), -1.0)];
        let t = truncate_dataset(&data, 1.0).unwrap();
        assert_eq!(t.data, data);
        assert_eq!(t.rate, 0.0);

        let data = vec![(Mat::identity(2), 1.0), (Mat::diag(&[0.0, 3.0]), 2.0)];
        let t = truncate_dataset(&data, 1e-9).unwrap();
        assert_eq!(t.rate, 1.0);
        let again = truncate_dataset(&t.data, 1e-9).unwrap();
        assert_eq!(again.data, t.data);
        for ((a, _), (b, _)) in data.iter().zip(&t.data) {
            assert!(b.norm_fro() <= a.norm_fro());
        }
    }

    #[test]
    fn tail_model_validation() {
        assert!(TailModel::subgaussian(1.0, 2, 2).validate().is_ok());
        assert!(TailModel::heavytail(3.0, 1.0, 1.0, 2, 2).validate().is_ok());
        let mut both = TailModel::subgaussian(1.0, 2, 2);
        both.beta = Some(3.0);
        assert!(both.validate().is_err());
        let json = r#"{"regime":"heavytail","beta":3.0,"C":1.0,"x_min":1.0,"seq_len":2,"embed_dim":2}"#;
        let parsed: TailModel = serde_json::from_str(json).unwrap();
        assert_eq!(parsed, TailModel::heavytail(3.0, 1.0, 1.0, 2, 2));
        assert!(serde_json::from_str::<TailModel>(
            r#"{"regime":"subgaussian","nu":1,"seq_len":1,"embed_dim":1,"typo":1}"#
        )
        .is_err());
    }
}
