//! Closed-form excess-risk bounds.
//!
//! Every family has the same shape:
//!
//! ```text
//! total = (2 M / n) (1 + log N) + 8 kappa delta + truncation + approximation
//! ```
//!
//! where `M` is the offset penalty scale of the architecture and `log N` a
//! log covering number at scale `delta`. The families differ in how `log N`
//! is obtained: supplied directly (offset-generic), from l1,1 norm budgets
//! (norm), from rank caps through an optimal covering allocation (rank), or
//! from either of those on truncated inputs plus a tail term (subgaussian,
//! heavytail).

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::tails::{heavy_tail_term, optimal_threshold, subgaussian_tail_term, TailModel, TailRegime};
use crate::transformer::{rank_caps, ArchKind, ArchSpec, ParamBudget};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundFamily {
    OffsetGeneric,
    Norm,
    Rank,
    Subgaussian,
    Heavytail,
}

impl BoundFamily {
    pub fn label(self) -> &'static str {
        match self {
            BoundFamily::OffsetGeneric => "offset-generic",
            BoundFamily::Norm => "norm",
            BoundFamily::Rank => "rank",
            BoundFamily::Subgaussian => "subgaussian",
            BoundFamily::Heavytail => "heavytail",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundInputs {
    pub arch: ArchSpec,
    pub budget: ParamBudget,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundReport {
    pub family: BoundFamily,
    pub arch: Option<ArchKind>,
    pub n: u64,
    pub delta: f64,
    pub penalty_constant: f64,
    pub log_cover: f64,
    pub complexity_term: f64,
    pub discretization_term: f64,
    pub truncation_term: f64,
    pub approximation_term: f64,
    pub total: f64,
    /// Truncation threshold M for the unbounded families.
    pub threshold: Option<f64>,
    pub notes: Vec<String>,
    pub inputs: Option<BoundInputs>,
}

impl BoundReport {
    fn recompute_total(&mut self) {
        self.total = self.complexity_term + self.discretization_term + self.truncation_term + self.approximation_term;
    }
}

/// Offset penalty scale: 2 kappa B + 2 kappa B_w B_c B_v L_sigma B_X for a
/// single head, with a factor H on the second term for H heads, and
/// 2 kappa (B + B_w) for the multi-layer model.
pub fn penalty_constant(spec: &ArchSpec, budget: &ParamBudget) -> f64 {
    let k = budget.kappa;
    let head = budget.b_w * budget.b_c * budget.b_v * budget.l_sigma * budget.b_input;
    match spec.kind {
        ArchKind::SingleHead => 2.0 * k * budget.b_target + 2.0 * k * head,
        ArchKind::MultiHead => 2.0 * k * budget.b_target + 2.0 * k * spec.heads as f64 * head,
        ArchKind::MultiLayer => 2.0 * k * (budget.b_target + budget.b_w),
    }
}

/// (2 penalty / n)(1 + log_cover) + 8 kappa delta + approx.
pub fn excess_risk_from_log_cover(
    penalty: f64,
    n: u64,
    log_cover: f64,
    kappa: f64,
    delta: f64,
    approx: f64,
) -> Result<BoundReport> {
    if n == 0 {
        return Err(invalid("sample size n must be at least 1"));
    }
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(invalid(format!(
            "discretization scale must be nonnegative, got {delta}"
        )));
    }
    if !(log_cover >= 0.0) || !log_cover.is_finite() {
        return Err(invalid(format!(
            "log covering number must be nonnegative, got {log_cover}"
        )));
    }
    if !(approx >= 0.0) || !(penalty >= 0.0) || !(kappa >= 0.0) {
        return Err(invalid("penalty, kappa and approximation term must be nonnegative"));
    }
    let mut report = BoundReport {
        family: BoundFamily::OffsetGeneric,
        arch: None,
        n,
        delta,
        penalty_constant: penalty,
        log_cover,
        complexity_term: 2.0 * penalty / n as f64 * (1.0 + log_cover),
        discretization_term: 8.0 * kappa * delta,
        truncation_term: 0.0,
        approximation_term: approx,
        total: 0.0,
        threshold: None,
        notes: Vec::new(),
        inputs: None,
    };
    report.recompute_total();
    Ok(report)
}

/// Log covering number of {x -> W x : ||W||_{1,1} <= B_W} on ||x|| <= B_x:
/// (B_x^2 B_W^2 / eps^2) log(2 d k + 1).
pub fn log_cover_l11_linear(b_x: f64, b_w: f64, eps: f64, d: usize, k: usize) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(invalid(format!("covering scale must be positive, got {eps}")));
    }
    Ok(b_x * b_x * b_w * b_w / (eps * eps) * (2.0 * d as f64 * k as f64 + 1.0).ln())
}

/// Log covering number of rank-r linear maps with spectral norm <= B_W:
/// (r/2) log(4 B_x^2 B_W^2 r / eps^2), floored at zero.
pub fn log_cover_rank_linear(b_x: f64, b_w: f64, eps: f64, r: usize) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(invalid(format!("covering scale must be positive, got {eps}")));
    }
    if r == 0 {
        return Err(invalid("rank must be at least 1"));
    }
    let r = r as f64;
    Ok((r / 2.0 * (4.0 * b_x * b_x * b_w * b_w * r / (eps * eps)).ln()).max(0.0))
}

/// Covering constant of the l1,1 linear class: the override in the budget,
/// else log(2 d k + 1).
pub fn covering_constant(budget: &ParamBudget, spec: &ArchSpec) -> f64 {
    budget
        .c1
        .unwrap_or_else(|| (2.0 * spec.embed_dim as f64 * spec.value_dim as f64 + 1.0).ln())
}

/// alpha_i = c^(L - i + 1), i = 1..L, with c = L_sigma B_c B_v (1 + 4 B_QK).
pub fn alpha_products(budget: &ParamBudget, layers: usize) -> Vec<f64> {
    let c = budget.l_sigma * budget.b_c * budget.b_v * (1.0 + 4.0 * budget.b_qk);
    (1..=layers).map(|i| c.powi((layers - i + 1) as i32)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum NormComplexity {
    #[serde(rename = "SH")]
    SingleHead { gamma: f64 },
    #[serde(rename = "MH")]
    MultiHead { gamma: f64 },
    #[serde(rename = "ML")]
    MultiLayer {
        gamma: f64,
        eta: f64,
        /// tau_2, ..., tau_L.
        tau: Vec<f64>,
    },
}

impl NormComplexity {
    /// The quantity whose cube enters log(Gamma^3 / delta^2).
    pub fn total(&self) -> f64 {
        match self {
            NormComplexity::SingleHead { gamma } | NormComplexity::MultiHead { gamma } => *gamma,
            NormComplexity::MultiLayer { gamma, eta, .. } => gamma + eta,
        }
    }
}

fn p23(x: f64) -> f64 {
    x.powf(2.0 / 3.0)
}

pub fn norm_complexity_terms(budget: &ParamBudget, spec: &ArchSpec) -> NormComplexity {
    let c1 = covering_constant(budget, spec).cbrt();
    let (bw, bc, bv, ls, bx) = (budget.b_w, budget.b_c, budget.b_v, budget.l_sigma, budget.b_cls);
    match spec.kind {
        ArchKind::SingleHead => {
            let gamma =
                c1 * p23(bx) * (p23(bw * ls) + p23(bw * ls * bc * bv)) + c1 * p23(bx) * (p23(bw * ls * bc * bv) + 1.0);
            NormComplexity::SingleHead { gamma }
        }
        ArchKind::MultiHead => {
            let h = spec.heads as f64;
            let gamma = c1 * p23(bx) * (p23(h * bw * ls) + 2.0 * p23(h * bw * ls * bc * bv)) + c1 * p23(bx) * p23(h);
            NormComplexity::MultiHead { gamma }
        }
        ArchKind::MultiLayer => {
            let alpha = alpha_products(budget, spec.layers);
            let tau: Vec<f64> = alpha[1..]
                .iter()
                .map(|&a| p23(a) + p23(2.0 * a * ls * bc * bv) + p23(a * ls * bv))
                .collect();
            let a1 = alpha[0];
            let gamma = c1 * p23(2.0 * ls * bc * bv * a1 * bw * bx * bx)
                + c1 * p23(bx) * (1.0 + p23(a1 * bw) + p23(a1 * bw * ls * bv));
            let eta = c1 * p23(bw) * tau.iter().sum::<f64>();
            NormComplexity::MultiLayer { gamma, eta, tau }
        }
    }
}

/// Norm-based bound with log N = log(Gamma^3 / delta^2), floored at zero.
pub fn norm_bound(spec: &ArchSpec, budget: &ParamBudget, n: u64, delta: f64, approx: f64) -> Result<BoundReport> {
    spec.validate()?;
    budget.validate()?;
    if !(delta > 0.0) {
        return Err(invalid(format!("norm bound needs delta > 0, got {delta}")));
    }
    let gamma = norm_complexity_terms(budget, spec).total();
    let log_cover = (3.0 * gamma.ln() - 2.0 * delta.ln()).max(0.0);
    let mut report = excess_risk_from_log_cover(
        penalty_constant(spec, budget),
        n,
        log_cover,
        budget.kappa,
        delta,
        approx,
    )?;
    report.family = BoundFamily::Norm;
    report.arch = Some(spec.kind);
    report.inputs = Some(BoundInputs {
        arch: *spec,
        budget: budget.clone(),
    });
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AllocationResult {
    pub epsilons: Vec<f64>,
    /// Lagrange multiplier 2 sum(r C) / eps.
    pub multiplier: f64,
    /// sum r_i C_i log(b_i^2 / eps^2) with the effective bounds b_i.
    pub objective: f64,
    /// sum r_j C_j log(r_j B_X^2 / eps_j^2) evaluated at the allocation.
    pub objective_at_allocation: f64,
    pub b: Vec<f64>,
    /// Whether the two objective evaluations agree to 1e-9 relative.
    pub consistent: bool,
}

/// Minimizes sum r_j C_j log(r_j B_X^2 / eps_j^2) subject to
/// sum beta_j eps_j = eps: eps_j = eps r_j C_j / (beta_j sum_k r_k C_k).
pub fn rank_allocation(r: &[f64], c: &[f64], beta: &[f64], eps: f64, b_input: f64) -> Result<AllocationResult> {
    let m = r.len();
    if m == 0 || c.len() != m || beta.len() != m {
        return Err(invalid(format!(
            "allocation needs equal nonzero lengths (r {}, C {}, beta {})",
            r.len(),
            c.len(),
            beta.len()
        )));
    }
    if r.iter().any(|&v| !(v >= 1.0)) || c.iter().any(|&v| !(v > 0.0)) || beta.iter().any(|&v| !(v > 0.0)) {
        return Err(invalid("allocation needs r_j >= 1, C_j > 0 and beta_j > 0"));
    }
    if !(eps > 0.0) || !(b_input > 0.0) {
        return Err(invalid("allocation needs eps > 0 and B_X > 0"));
    }
    let weights: Vec<f64> = r.iter().zip(c).map(|(a, b)| a * b).collect();
    let total: f64 = weights.iter().sum();
    let epsilons: Vec<f64> = weights.iter().zip(beta).map(|(w, b)| eps * w / (b * total)).collect();
    let b: Vec<f64> = weights
        .iter()
        .zip(beta)
        .map(|(w, bj)| (b_input * bj * total).sqrt() / w.sqrt())
        .collect();
    let objective: f64 = weights
        .iter()
        .zip(&b)
        .map(|(w, bi)| w * (bi * bi / (eps * eps)).ln())
        .sum();
    let objective_at_allocation: f64 = weights
        .iter()
        .zip(r)
        .zip(&epsilons)
        .map(|((w, rj), ej)| w * (rj * b_input * b_input / (ej * ej)).ln())
        .sum();
    let consistent = (objective - objective_at_allocation).abs() <= 1e-9 * objective.abs().max(1.0);
    Ok(AllocationResult {
        epsilons,
        multiplier: 2.0 * total / eps,
        objective,
        objective_at_allocation,
        b,
        consistent,
    })
}

/// Rank caps for the covered components; `w` is the readout (rank 1).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankCaps {
    pub c: usize,
    pub qk: usize,
    pub v: usize,
    pub w: usize,
}

impl RankCaps {
    /// Caps from the budget, defaulting to full rank.
    pub fn from_budget(budget: &ParamBudget, spec: &ArchSpec) -> Result<Self> {
        let (v, c, qk) = rank_caps(budget, spec)?;
        Ok(RankCaps { c, qk, v, w: 1 })
    }

    pub fn validate(&self, spec: &ArchSpec) -> Result<()> {
        let (d, k) = (spec.embed_dim, spec.value_dim);
        let checks = [
            ("r_c", self.c, d.min(k)),
            ("r_QK", self.qk, d),
            ("r_v", self.v, d.min(k)),
            ("r_w", self.w, 1),
        ];
        for (name, r, max) in checks {
            if r == 0 || r > max {
                return Err(invalid(format!("{name} = {r} outside 1..={max}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankComponent {
    pub name: String,
    pub rank: usize,
    pub weight: f64,
}

/// Covering constant per component, from the (r/2) prefactor of the low-rank
/// covering number.
pub const RANK_COVER_CONSTANT: f64 = 0.5;

/// Components covered by the rank bound with their error-propagation weights.
pub fn rank_components(spec: &ArchSpec, budget: &ParamBudget, ranks: &RankCaps) -> Result<Vec<RankComponent>> {
    spec.validate()?;
    ranks.validate(spec)?;
    let (bw, bc, bv, ls) = (budget.b_w, budget.b_c, budget.b_v, budget.l_sigma);
    let comp = |name: String, rank: usize, weight: f64| RankComponent { name, rank, weight };
    Ok(match spec.kind {
        ArchKind::SingleHead | ArchKind::MultiHead => {
            let h = if spec.kind == ArchKind::MultiHead {
                spec.heads as f64
            } else {
                1.0
            };
            vec![
                comp("W_c".into(), ranks.c, h * bw * ls),
                comp("W_QK".into(), ranks.qk, h * 2.0 * bw * ls * bc * bv),
                comp("W_v".into(), ranks.v, h * bw * ls * bc),
                comp("w".into(), ranks.w, h * bc),
            ]
        }
        ArchKind::MultiLayer => {
            let l = spec.layers;
            let alpha = alpha_products(budget, l);
            let mut out = Vec::with_capacity(3 * l + 1);
            out.push(comp("w".into(), ranks.w, 1.0));
            for (i, a) in alpha.iter().enumerate() {
                out.push(comp(format!("layer{}.W_c", i + 1), ranks.c, a * bw));
            }
            for (i, a) in alpha.iter().enumerate() {
                out.push(comp(format!("layer{}.W_v", i + 1), ranks.v, a * bw * ls * bv));
            }
            for (i, a) in alpha.iter().enumerate() {
                out.push(comp(
                    format!("layer{}.W_QK", i + 1),
                    ranks.qk,
                    a * 2.0 * ls * bc * bv * bw,
                ));
            }
            out
        }
    })
}

/// Rank-based bound: log N = sum_i r_i C_i log(b_i^2 / delta^2) with each
/// component floored at zero, from the allocation at eps = delta.
pub fn rank_bound(
    spec: &ArchSpec,
    budget: &ParamBudget,
    ranks: &RankCaps,
    n: u64,
    delta: f64,
    approx: f64,
) -> Result<BoundReport> {
    budget.validate()?;
    if !(delta > 0.0) {
        return Err(invalid(format!("rank bound needs delta > 0, got {delta}")));
    }
    let comps = rank_components(spec, budget, ranks)?;
    let r: Vec<f64> = comps.iter().map(|c| c.rank as f64).collect();
    let c = vec![RANK_COVER_CONSTANT; comps.len()];
    let beta: Vec<f64> = comps.iter().map(|c| c.weight).collect();
    let alloc = rank_allocation(&r, &c, &beta, delta, budget.b_input)?;
    let log_cover: f64 = r
        .iter()
        .zip(&c)
        .zip(&alloc.b)
        .map(|((ri, ci), bi)| (ri * ci * (bi * bi / (delta * delta)).ln()).max(0.0))
        .sum();
    let mut report = excess_risk_from_log_cover(
        penalty_constant(spec, budget),
        n,
        log_cover,
        budget.kappa,
        delta,
        approx,
    )?;
    report.family = BoundFamily::Rank;
    report.arch = Some(spec.kind);
    if !alloc.consistent {
        report.notes.push(format!(
            "allocation objective mismatch: effective-bound form {:.6e} vs direct evaluation {:.6e}",
            alloc.objective, alloc.objective_at_allocation
        ));
    }
    report.inputs = Some(BoundInputs {
        arch: *spec,
        budget: budget.clone(),
    });
    Ok(report)
}

/// (1 + log N) / (2 n beta): expected maximum of the offset process over a
/// finite class of size N.
pub fn finite_class_offset_bound(class_size: f64, n: u64, beta: f64) -> f64 {
    (1.0 + class_size.ln()) / (2.0 * n as f64 * beta)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeltaGrid {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl Default for DeltaGrid {
    fn default() -> Self {
        DeltaGrid {
            min: 1e-6,
            max: 1.0,
            points: 32,
        }
    }
}

impl DeltaGrid {
    pub fn validate(&self) -> Result<()> {
        if !(self.min > 0.0) || !(self.max > self.min) || !self.max.is_finite() || self.points < 2 {
            return Err(invalid(format!(
                "delta grid needs 0 < min < max and >= 2 points, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Log-spaced points from `min` to `max` inclusive.
    pub fn values(&self) -> Vec<f64> {
        let (lo, hi) = (self.min.ln(), self.max.ln());
        let steps = (self.points - 1) as f64;
        (0..self.points)
            .map(|i| match i {
                0 => self.min,
                i if i == self.points - 1 => self.max,
                i => (lo + (hi - lo) * i as f64 / steps).exp(),
            })
            .collect()
    }
}

/// The smallest-total report over the grid (first one on ties).
pub fn minimize_over_delta(grid: &DeltaGrid, eval: impl Fn(f64) -> Result<BoundReport>) -> Result<BoundReport> {
    grid.validate()?;
    let mut best: Option<BoundReport> = None;
    for delta in grid.values() {
        let report = eval(delta)?;
        if best.as_ref().is_none_or(|b| report.total < b.total) {
            best = Some(report);
        }
    }
    Ok(best.expect("grid has at least two points"))
}

/// Family-specific inputs beyond the architecture and budget.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FamilyInputs {
    /// Required by offset-generic.
    pub log_cover: Option<f64>,
    /// Rank caps for rank and heavytail; defaults to the budget caps.
    pub ranks: Option<RankCaps>,
    /// Required by subgaussian and heavytail.
    pub tail: Option<TailModel>,
    /// Truncation threshold; defaults to the optimal threshold for n.
    pub threshold: Option<f64>,
}

/// Budget seen by the truncated class: input bounds replaced by M.
pub fn truncated_budget(budget: &ParamBudget, threshold: f64) -> ParamBudget {
    ParamBudget {
        b_input: threshold,
        b_cls: threshold,
        ..budget.clone()
    }
}

fn tail_for(inputs: &FamilyInputs, regime: TailRegime, family: BoundFamily) -> Result<&TailModel> {
    let tail = inputs
        .tail
        .as_ref()
        .ok_or_else(|| invalid(format!("{} bound needs a tail model", family.label())))?;
    tail.validate()?;
    if tail.regime != regime {
        return Err(invalid(format!(
            "{} bound needs a {:?} tail model",
            family.label(),
            regime
        )));
    }
    Ok(tail)
}

fn threshold_for(inputs: &FamilyInputs, tail: &TailModel, n: u64) -> Result<f64> {
    match inputs.threshold {
        Some(m) if m > 0.0 && m.is_finite() => Ok(m),
        Some(m) => Err(invalid(format!("truncation threshold must be positive, got {m}"))),
        None => optimal_threshold(tail, n.max(2)),
    }
}

pub fn evaluate_family(
    family: BoundFamily,
    spec: &ArchSpec,
    budget: &ParamBudget,
    inputs: &FamilyInputs,
    n: u64,
    delta: f64,
    approx: f64,
) -> Result<BoundReport> {
    spec.validate()?;
    budget.validate()?;
    match family {
        BoundFamily::OffsetGeneric => {
            let log_cover = inputs
                .log_cover
                .ok_or_else(|| invalid("offset-generic bound needs a log covering number"))?;
            let mut report = excess_risk_from_log_cover(
                penalty_constant(spec, budget),
                n,
                log_cover,
                budget.kappa,
                delta,
                approx,
            )?;
            report.arch = Some(spec.kind);
            report.inputs = Some(BoundInputs {
                arch: *spec,
                budget: budget.clone(),
            });
            Ok(report)
        }
        BoundFamily::Norm => norm_bound(spec, budget, n, delta, approx),
        BoundFamily::Rank => {
            let ranks = match inputs.ranks {
                Some(r) => r,
                None => RankCaps::from_budget(budget, spec)?,
            };
            rank_bound(spec, budget, &ranks, n, delta, approx)
        }
        BoundFamily::Subgaussian => {
            let tail = tail_for(inputs, TailRegime::Subgaussian, family)?;
            let m = threshold_for(inputs, tail, n)?;
            let mut report = norm_bound(spec, &truncated_budget(budget, m), n, delta, approx)?;
            report.family = family;
            report.threshold = Some(m);
            report.truncation_term = subgaussian_tail_term(budget.kappa, tail, m)?;
            report.inputs = Some(BoundInputs {
                arch: *spec,
                budget: budget.clone(),
            });
            report
                .notes
                .push("nu is used as the exponent scale of the sub-Gaussian tail".to_string());
            report.recompute_total();
            Ok(report)
        }
        BoundFamily::Heavytail => {
            let tail = tail_for(inputs, TailRegime::Heavytail, family)?;
            let m = threshold_for(inputs, tail, n)?;
            let ranks = match inputs.ranks {
                Some(r) => r,
                None => RankCaps::from_budget(budget, spec)?,
            };
            let robust = ParamBudget {
                kappa: budget.kappa * tail.b_psi,
                ..truncated_budget(budget, m)
            };
            let mut report = rank_bound(spec, &robust, &ranks, n, delta, approx)?;
            report.family = family;
            report.threshold = Some(m);
            report.truncation_term = heavy_tail_term(tail, budget.kappa, m)?;
            report.inputs = Some(BoundInputs {
                arch: *spec,
                budget: budget.clone(),
            });
            report.recompute_total();
            Ok(report)
        }
    }
}

/// [`evaluate_family`] minimized over the delta grid.
pub fn best_family_bound(
    family: BoundFamily,
    spec: &ArchSpec,
    budget: &ParamBudget,
    inputs: &FamilyInputs,
    n: u64,
    approx: f64,
    grid: &DeltaGrid,
) -> Result<BoundReport> {
    minimize_over_delta(grid, |delta| {
        evaluate_family(family, spec, budget, inputs, n, delta, approx)
    })
}
