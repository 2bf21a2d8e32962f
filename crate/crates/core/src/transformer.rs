//! Single-head, multi-head and multi-layer attention models with a scalar
//! readout on the `[CLS]` row, plus budget projection and auditing.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::matrix_kit::{
    dot, norm2, project_rows_unit_ball, rank_truncate, sample_matrix, softmax_in_place, EntryLaw, Mat,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ArchKind {
    #[serde(rename = "SH")]
    SingleHead,
    #[serde(rename = "MH")]
    MultiHead,
    #[serde(rename = "ML")]
    MultiLayer,
}

impl ArchKind {
    pub fn label(self) -> &'static str {
        match self {
            ArchKind::SingleHead => "SH",
            ArchKind::MultiHead => "MH",
            ArchKind::MultiLayer => "ML",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// All supported activations are 1-Lipschitz with sigma(0) = 0.
    pub fn lipschitz(self) -> f64 {
        1.0
    }
}

fn one() -> usize {
    1
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub kind: ArchKind,
    /// Sequence length T.
    pub seq_len: usize,
    /// Embedding width d.
    pub embed_dim: usize,
    /// Value width k.
    pub value_dim: usize,
    #[serde(default = "one")]
    pub heads: usize,
    #[serde(default = "one")]
    pub layers: usize,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub cls_index: usize,
}

impl ArchSpec {
    pub fn single_head(seq_len: usize, embed_dim: usize, value_dim: usize) -> Self {
        ArchSpec {
            kind: ArchKind::SingleHead,
            seq_len,
            embed_dim,
            value_dim,
            heads: 1,
            layers: 1,
            activation: Activation::Relu,
            cls_index: 0,
        }
    }

    pub fn multi_head(seq_len: usize, embed_dim: usize, value_dim: usize, heads: usize) -> Self {
        ArchSpec {
            kind: ArchKind::MultiHead,
            heads,
            ..ArchSpec::single_head(seq_len, embed_dim, value_dim)
        }
    }

    pub fn multi_layer(seq_len: usize, embed_dim: usize, layers: usize) -> Self {
        ArchSpec {
            kind: ArchKind::MultiLayer,
            layers,
            ..ArchSpec::single_head(seq_len, embed_dim, embed_dim)
        }
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.seq_len == 0 || self.embed_dim == 0 || self.value_dim == 0 || self.heads == 0 || self.layers == 0 {
            return Err(invalid("T, d, k, H and L must all be at least 1"));
        }
        if self.cls_index >= self.seq_len {
            return Err(invalid(format!(
                "cls_index {} outside sequence of length {}",
                self.cls_index, self.seq_len
            )));
        }
        match self.kind {
            ArchKind::SingleHead if self.heads != 1 || self.layers != 1 => {
                Err(invalid("single-head architecture needs H = 1 and L = 1"))
            }
            ArchKind::MultiHead if self.layers != 1 => Err(invalid("multi-head architecture needs L = 1")),
            ArchKind::MultiLayer if self.heads != 1 => Err(invalid("multi-layer architecture uses one head per layer")),
            ArchKind::MultiLayer if self.value_dim != self.embed_dim => Err(invalid(format!(
                "multi-layer blocks need k = d for dimension preservation (k = {}, d = {})",
                self.value_dim, self.embed_dim
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BudgetMode {
    #[default]
    Spectral,
    L11,
    Rank,
}

/// Every constant that enters the excess-risk bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamBudget {
    #[serde(rename = "B_v")]
    pub b_v: f64,
    #[serde(rename = "B_c")]
    pub b_c: f64,
    #[serde(rename = "B_QK")]
    pub b_qk: f64,
    #[serde(rename = "B_w")]
    pub b_w: f64,
    /// Bound on the `[CLS]` input row norm.
    #[serde(rename = "B_x")]
    pub b_cls: f64,
    /// Bound on the input spectral norm.
    #[serde(rename = "B_X")]
    pub b_input: f64,
    /// Bound on |f*(X)|.
    #[serde(rename = "B")]
    pub b_target: f64,
    pub kappa: f64,
    #[serde(rename = "L_sigma", default = "unit")]
    pub l_sigma: f64,
    #[serde(rename = "r_v", default)]
    pub r_v: Option<usize>,
    #[serde(rename = "r_c", default)]
    pub r_c: Option<usize>,
    #[serde(rename = "r_QK", default)]
    pub r_qk: Option<usize>,
    #[serde(default)]
    pub mode: BudgetMode,
    /// Override for the linear-class covering constant; defaults to log(2dk + 1).
    #[serde(rename = "C1", default)]
    pub c1: Option<f64>,
}

fn unit() -> f64 {
    1.0
}

impl ParamBudget {
    /// Every bound constant equal to one, spectral mode.
    pub fn all_ones() -> Self {
        ParamBudget {
            b_v: 1.0,
            b_c: 1.0,
            b_qk: 1.0,
            b_w: 1.0,
            b_cls: 1.0,
            b_input: 1.0,
            b_target: 1.0,
            kappa: 1.0,
            l_sigma: 1.0,
            r_v: None,
            r_c: None,
            r_qk: None,
            mode: BudgetMode::Spectral,
            c1: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let named = [
            ("B_v", self.b_v),
            ("B_c", self.b_c),
            ("B_QK", self.b_qk),
            ("B_w", self.b_w),
            ("B_x", self.b_cls),
            ("B_X", self.b_input),
            ("B", self.b_target),
        ];
        for (name, v) in named {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(invalid(format!("{name} must be a nonnegative finite number, got {v}")));
            }
        }
        if !(self.kappa > 0.0) || !self.kappa.is_finite() {
            return Err(invalid(format!("kappa must be positive, got {}", self.kappa)));
        }
        if !(self.l_sigma > 0.0) || !self.l_sigma.is_finite() {
            return Err(invalid(format!("L_sigma must be positive, got {}", self.l_sigma)));
        }
        if let Some(c1) = self.c1 {
            if !(c1 > 0.0) || !c1.is_finite() {
                return Err(invalid(format!("C1 must be positive, got {c1}")));
            }
        }
        Ok(())
    }
}

/// Weights of one attention head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadParams {
    /// d x d query-key product.
    pub w_qk: Mat,
    /// d x k value map.
    pub w_v: Mat,
    /// k x d output map.
    pub w_c: Mat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformerParams {
    /// `blocks[l][h]` holds head h of layer l.
    pub blocks: Vec<Vec<HeadParams>>,
    pub readout: Vec<f64>,
}

impl TransformerParams {
    pub fn zeros(spec: &ArchSpec) -> Self {
        let (d, k) = (spec.embed_dim, spec.value_dim);
        let head = HeadParams {
            w_qk: Mat::zeros(d, d),
            w_v: Mat::zeros(d, k),
            w_c: Mat::zeros(k, d),
        };
        TransformerParams {
            blocks: vec![vec![head; spec.heads]; spec.layers],
            readout: vec![0.0; d],
        }
    }

    /// Gaussian entries with standard deviation `sd` (not projected).
    pub fn sample<R: Rng + ?Sized>(spec: &ArchSpec, sd: f64, rng: &mut R) -> Result<Self> {
        let law = EntryLaw::Gaussian { sd };
        let (d, k) = (spec.embed_dim, spec.value_dim);
        let mut blocks = Vec::with_capacity(spec.layers);
        for _ in 0..spec.layers {
            let mut heads = Vec::with_capacity(spec.heads);
            for _ in 0..spec.heads {
                heads.push(HeadParams {
                    w_qk: sample_matrix(&law, d, d, rng)?,
                    w_v: sample_matrix(&law, d, k, rng)?,
                    w_c: sample_matrix(&law, k, d, rng)?,
                });
            }
            blocks.push(heads);
        }
        let readout = sample_matrix(&law, 1, d, rng)?.data().to_vec();
        Ok(TransformerParams { blocks, readout })
    }

    pub fn check_shapes(&self, spec: &ArchSpec) -> Result<()> {
        let (d, k) = (spec.embed_dim, spec.value_dim);
        if self.blocks.len() != spec.layers {
            return Err(invalid(format!(
                "expected {} layers, found {}",
                spec.layers,
                self.blocks.len()
            )));
        }
        for (l, layer) in self.blocks.iter().enumerate() {
            if layer.len() != spec.heads {
                return Err(invalid(format!(
                    "layer {l}: expected {} heads, found {}",
                    spec.heads,
                    layer.len()
                )));
            }
            for (h, head) in layer.iter().enumerate() {
                if head.w_qk.shape() != (d, d) || head.w_v.shape() != (d, k) || head.w_c.shape() != (k, d) {
                    return Err(invalid(format!(
                        "layer {l} head {h}: shapes W_QK {:?}, W_v {:?}, W_c {:?} do not match d = {d}, k = {k}",
                        head.w_qk.shape(),
                        head.w_v.shape(),
                        head.w_c.shape()
                    )));
                }
            }
        }
        if self.readout.len() != d {
            return Err(invalid(format!(
                "readout has length {}, expected {d}",
                self.readout.len()
            )));
        }
        if self.readout.iter().any(|v| !v.is_finite()) {
            return Err(invalid("readout entries must be finite"));
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.blocks
            .iter()
            .flatten()
            .map(|h| h.w_qk.data().len() + h.w_v.data().len() + h.w_c.data().len())
            .sum::<usize>()
            + self.readout.len()
    }

    /// Concatenation of all weights: per layer and head W_QK, W_v, W_c, then the readout.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for head in self.blocks.iter().flatten() {
            out.extend_from_slice(head.w_qk.data());
            out.extend_from_slice(head.w_v.data());
            out.extend_from_slice(head.w_c.data());
        }
        out.extend_from_slice(&self.readout);
        out
    }

    /// Inverse of [`flatten`](Self::flatten); `flat` must have `num_params()` entries.
    pub fn assign_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params(), "flat parameter length mismatch");
        let mut pos = 0;
        for head in self.blocks.iter_mut().flatten() {
            for m in [&mut head.w_qk, &mut head.w_v, &mut head.w_c] {
                let n = m.data().len();
                m.data_mut().copy_from_slice(&flat[pos..pos + n]);
                pos += n;
            }
        }
        self.readout.copy_from_slice(&flat[pos..]);
    }
}

fn check_input(x: &Mat, spec: &ArchSpec) -> Result<()> {
    if x.shape() != (spec.seq_len, spec.embed_dim) {
        return Err(invalid(format!(
            "input shape {:?} does not match T x d = {} x {}",
            x.shape(),
            spec.seq_len,
            spec.embed_dim
        )));
    }
    Ok(())
}

fn check_kind(spec: &ArchSpec, expected: ArchKind) -> Result<()> {
    spec.validate()?;
    if spec.kind != expected {
        return Err(invalid(format!(
            "architecture kind {} used with the {} forward pass",
            spec.kind.label(),
            expected.label()
        )));
    }
    Ok(())
}

/// `[CLS]` row of sigma(softmax(X W_QK X^T) X W_v) W_c, computed from the
/// single attention row that feeds it.
pub fn head_cls_row(x: &Mat, head: &HeadParams, activation: Activation, cls: usize) -> Vec<f64> {
    let query = head.w_qk.left_mul(x.row(cls));
    let mut attn: Vec<f64> = (0..x.rows()).map(|j| dot(&query, x.row(j))).collect();
    softmax_in_place(&mut attn);
    let mixed = x.left_mul(&attn);
    let value: Vec<f64> = head
        .w_v
        .left_mul(&mixed)
        .into_iter()
        .map(|v| activation.apply(v))
        .collect();
    head.w_c.left_mul(&value)
}

/// Full T x d head output sigma(softmax(X W_QK X^T) X W_v) W_c.
pub fn head_output(x: &Mat, head: &HeadParams, activation: Activation) -> Mat {
    let mut scores = x.matmul(&head.w_qk).matmul(&x.transpose());
    for i in 0..scores.rows() {
        softmax_in_place(scores.row_mut(i));
    }
    scores
        .matmul(x)
        .matmul(&head.w_v)
        .map(|v| activation.apply(v))
        .matmul(&head.w_c)
}

pub fn forward_single_head(params: &TransformerParams, x: &Mat, spec: &ArchSpec) -> Result<f64> {
    check_kind(spec, ArchKind::SingleHead)?;
    params.check_shapes(spec)?;
    check_input(x, spec)?;
    let y = head_cls_row(x, &params.blocks[0][0], spec.activation, spec.cls_index);
    Ok(dot(&params.readout, &y))
}

pub fn forward_multi_head(params: &TransformerParams, x: &Mat, spec: &ArchSpec) -> Result<f64> {
    check_kind(spec, ArchKind::MultiHead)?;
    params.check_shapes(spec)?;
    check_input(x, spec)?;
    Ok(dot(&params.readout, &multi_head_cls(params, x, spec)))
}

fn multi_head_cls(params: &TransformerParams, x: &Mat, spec: &ArchSpec) -> Vec<f64> {
    let mut heads = params.blocks[0].iter();
    let first = heads.next().expect("at least one head");
    let mut acc = head_cls_row(x, first, spec.activation, spec.cls_index);
    for head in heads {
        let y = head_cls_row(x, head, spec.activation, spec.cls_index);
        acc.iter_mut().zip(&y).for_each(|(a, b)| *a += b);
    }
    acc
}

pub fn forward_multi_layer(params: &TransformerParams, x: &Mat, spec: &ArchSpec) -> Result<f64> {
    let states = multi_layer_states(params, x, spec)?;
    let last = states.last().expect("at least one layer");
    Ok(dot(&params.readout, last.row(spec.cls_index)))
}

/// Layer inputs X^(2), ..., X^(L+1) of the multi-layer recursion
/// X^(l+1) = Pi_norm(sigma(Pi_norm(Phi(X^(l))))).
pub fn multi_layer_states(params: &TransformerParams, x: &Mat, spec: &ArchSpec) -> Result<Vec<Mat>> {
    check_kind(spec, ArchKind::MultiLayer)?;
    params.check_shapes(spec)?;
    check_input(x, spec)?;
    let mut states = Vec::with_capacity(spec.layers);
    let mut current = x.clone();
    for layer in &params.blocks {
        let phi = head_output(&current, &layer[0], spec.activation);
        let activated = project_rows_unit_ball(&phi).map(|v| spec.activation.apply(v));
        current = project_rows_unit_ball(&activated);
        states.push(current.clone());
    }
    Ok(states)
}

/// Dispatches on `spec.kind`.
pub fn forward(params: &TransformerParams, x: &Mat, spec: &ArchSpec) -> Result<f64> {
    match spec.kind {
        ArchKind::SingleHead => forward_single_head(params, x, spec),
        ArchKind::MultiHead => forward_multi_head(params, x, spec),
        ArchKind::MultiLayer => forward_multi_layer(params, x, spec),
    }
}

/// Supremum of |f(X)| over the budget class: B_w B_c B_v L_sigma B_X for a
/// single head, H times that for H heads, and B_w after the final row projection.
pub fn output_bound(spec: &ArchSpec, budget: &ParamBudget) -> f64 {
    let head = budget.b_w * budget.b_c * budget.b_v * budget.l_sigma * budget.b_input;
    match spec.kind {
        ArchKind::SingleHead => head,
        ArchKind::MultiHead => spec.heads as f64 * head,
        ArchKind::MultiLayer => budget.b_w,
    }
}

/// Rank caps for (W_v, W_c, W_QK), defaulting to full rank.
pub fn rank_caps(budget: &ParamBudget, spec: &ArchSpec) -> Result<(usize, usize, usize)> {
    let (d, k) = (spec.embed_dim, spec.value_dim);
    let full_vc = d.min(k);
    let caps = (
        budget.r_v.unwrap_or(full_vc),
        budget.r_c.unwrap_or(full_vc),
        budget.r_qk.unwrap_or(d),
    );
    let checks = [("r_v", caps.0, full_vc), ("r_c", caps.1, full_vc), ("r_QK", caps.2, d)];
    for (name, r, max) in checks {
        if r == 0 || r > max {
            return Err(invalid(format!("{name} = {r} outside 1..={max}")));
        }
    }
    Ok(caps)
}

fn matrix_norm(m: &Mat, mode: BudgetMode) -> f64 {
    match mode {
        BudgetMode::L11 => m.norm_l11(),
        BudgetMode::Spectral | BudgetMode::Rank => m.spectral_norm(),
    }
}

fn shrink_to(m: &Mat, cap: f64, mode: BudgetMode) -> Mat {
    let norm = matrix_norm(m, mode);
    if norm > cap {
        if cap == 0.0 {
            m.scaled(0.0)
        } else {
            m.scaled(cap / norm)
        }
    } else {
        m.clone()
    }
}

/// Enforces the budget by norm scaling (and rank truncation in rank mode).
pub fn project_params(params: &TransformerParams, budget: &ParamBudget, spec: &ArchSpec) -> Result<TransformerParams> {
    spec.validate()?;
    params.check_shapes(spec)?;
    let caps = match budget.mode {
        BudgetMode::Rank => Some(rank_caps(budget, spec)?),
        _ => None,
    };
    let mut out = params.clone();
    for head in out.blocks.iter_mut().flatten() {
        if let Some((r_v, r_c, r_qk)) = caps {
            head.w_v = rank_truncate(&head.w_v, r_v)?;
            head.w_c = rank_truncate(&head.w_c, r_c)?;
            head.w_qk = rank_truncate(&head.w_qk, r_qk)?;
        }
        head.w_v = shrink_to(&head.w_v, budget.b_v, budget.mode);
        head.w_c = shrink_to(&head.w_c, budget.b_c, budget.mode);
        head.w_qk = shrink_to(&head.w_qk, budget.b_qk, budget.mode);
    }
    let norm = norm2(&out.readout);
    if norm > budget.b_w {
        let s = if budget.b_w == 0.0 { 0.0 } else { budget.b_w / norm };
        out.readout.iter_mut().for_each(|v| *v *= s);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintCheck {
    pub name: String,
    pub measured: f64,
    pub cap: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetAudit {
    pub checks: Vec<ConstraintCheck>,
    pub pass: bool,
}

pub const AUDIT_TOLERANCE: f64 = 1e-9;

pub fn check_budget(params: &TransformerParams, budget: &ParamBudget, spec: &ArchSpec) -> BudgetAudit {
    let mut checks = Vec::new();
    let mut push = |name: String, measured: f64, cap: f64| {
        let pass = measured <= cap + AUDIT_TOLERANCE * cap.max(1.0);
        checks.push(ConstraintCheck {
            name,
            measured,
            cap,
            pass,
        });
    };
    let norm_label = match budget.mode {
        BudgetMode::L11 => "l11",
        _ => "spectral",
    };
    let caps = match budget.mode {
        BudgetMode::Rank => rank_caps(budget, spec).ok(),
        _ => None,
    };
    for (l, layer) in params.blocks.iter().enumerate() {
        for (h, head) in layer.iter().enumerate() {
            let mats = [
                ("W_QK", &head.w_qk, budget.b_qk),
                ("W_v", &head.w_v, budget.b_v),
                ("W_c", &head.w_c, budget.b_c),
            ];
            for (name, m, cap) in mats {
                push(
                    format!("layer{l}.head{h}.{name}.{norm_label}"),
                    matrix_norm(m, budget.mode),
                    cap,
                );
            }
            if let Some((r_v, r_c, r_qk)) = caps {
                let ranks = [
                    ("W_QK", &head.w_qk, r_qk),
                    ("W_v", &head.w_v, r_v),
                    ("W_c", &head.w_c, r_c),
                ];
                for (name, m, cap) in ranks {
                    push(
                        format!("layer{l}.head{h}.{name}.rank"),
                        m.numerical_rank(1e-9) as f64,
                        cap as f64,
                    );
                }
            }
        }
    }
    push("readout.l2".to_string(), norm2(&params.readout), budget.b_w);
    let pass = checks.iter().all(|c| c.pass);
    BudgetAudit { checks, pass }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix_kit::RngStream;

    fn scalar(v: f64) -> Mat {
        Mat::from_vec(1, 1, vec![v]).unwrap()
    }

    fn tiny_params(spec: &ArchSpec) -> TransformerParams {
        let head = HeadParams {
            w_qk: scalar(0.0),
            w_v: scalar(1.0),
            w_c: scalar(1.0),
        };
        TransformerParams {
            blocks: vec![vec![head; spec.heads]; spec.layers],
            readout: vec![1.0],
        }
    }

    #[test]
    fn single_head_hand_examples() {
        let spec = ArchSpec::single_head(2, 1, 1);
        let p = tiny_params(&spec);
        let x = Mat::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        assert_eq!(forward_single_head(&p, &x, &spec).unwrap(), 1.0);
        let x = Mat::from_rows(&[vec![1.0], vec![3.0]]).unwrap();
        assert_eq!(forward_single_head(&p, &x, &spec).unwrap(), 2.0);
    }

    #[test]
    fn cls_row_matches_full_head_output() {
        let spec = ArchSpec::single_head(5, 3, 2).with_activation(Activation::Tanh);
        let mut rng = RngStream::new(3, 3).rng();
        let p = TransformerParams::sample(&spec, 0.7, &mut rng).unwrap();
        let x = sample_matrix(&EntryLaw::Gaussian { sd: 1.0 }, 5, 3, &mut rng).unwrap();
        let full = head_output(&x, &p.blocks[0][0], spec.activation);
        for cls in 0..5 {
            let row = head_cls_row(&x, &p.blocks[0][0], spec.activation, cls);
            for (a, b) in row.iter().zip(full.row(cls)) {
                assert!((a - b).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn shape_and_kind_errors() {
        let spec = ArchSpec::single_head(2, 1, 1);
        let p = tiny_params(&spec);
        let bad_x = Mat::zeros(3, 1);
        assert!(forward_single_head(&p, &bad_x, &spec).is_err());
        let x = Mat::zeros(2, 1);
        assert!(forward_multi_head(&p, &x, &spec).is_err());

        let ml = ArchSpec {
            value_dim: 2,
            ..ArchSpec::multi_layer(2, 1, 2)
        };
        assert!(ml.validate().is_err());
        let bad_cls = ArchSpec { cls_index: 2, ..spec };
        assert!(bad_cls.validate().is_err());
    }

    #[test]
    fn multi_head_degenerate_cases() {
        let mut rng = RngStream::new(5, 0).rng();
        let sh = ArchSpec::single_head(4, 3, 2);
        let mh1 = ArchSpec::multi_head(4, 3, 2, 1);
        let p = TransformerParams::sample(&sh, 1.0, &mut rng).unwrap();
        let x = sample_matrix(&EntryLaw::Gaussian { sd: 1.0 }, 4, 3, &mut rng).unwrap();
        let a = forward_single_head(&p, &x, &sh).unwrap();
        assert_eq!(a, forward_multi_head(&p, &x, &mh1).unwrap());

        let mh3 = ArchSpec::multi_head(4, 3, 2, 3);
        let p3 = TransformerParams {
            blocks: vec![vec![p.blocks[0][0].clone(); 3]],
            readout: p.readout.clone(),
        };
        let b = forward_multi_head(&p3, &x, &mh3).unwrap();
        assert!((b - 3.0 * a).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn multi_layer_identity_projection_case() {
        // rows of Phi already inside the unit ball and sigma = identity
        let spec = ArchSpec::multi_layer(3, 2, 1).with_activation(Activation::Identity);
        let mut rng = RngStream::new(8, 1).rng();
        let mut p = TransformerParams::sample(&spec, 0.3, &mut rng).unwrap();
        p.blocks[0][0].w_v = p.blocks[0][0].w_v.scaled(0.2);
        let x = sample_matrix(&EntryLaw::UniformBall { radius: 1.0 }, 3, 2, &mut rng).unwrap();
        let phi = head_output(&x, &p.blocks[0][0], spec.activation);
        assert!((0..3).all(|i| norm2(phi.row(i)) <= 1.0));
        let expected = dot(&p.readout, phi.row(0));
        assert_eq!(forward_multi_layer(&p, &x, &spec).unwrap(), expected);
    }

    #[test]
    fn multi_layer_rows_stay_in_unit_ball() {
        let spec = ArchSpec::multi_layer(5, 3, 3).with_activation(Activation::Identity);
        let mut rng = RngStream::new(9, 1).rng();
        for _ in 0..50 {
            let p = TransformerParams::sample(&spec, 3.0, &mut rng).unwrap();
            let x = sample_matrix(&EntryLaw::Gaussian { sd: 4.0 }, 5, 3, &mut rng).unwrap();
            for state in multi_layer_states(&p, &x, &spec).unwrap() {
                for i in 0..state.rows() {
                    assert!(norm2(state.row(i)) <= 1.0 + 1e-12);
                }
            }
            let y = forward_multi_layer(&p, &x, &spec).unwrap();
            assert!(y.abs() <= norm2(&p.readout) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn projection_fixed_point_and_scaling() {
        let spec = ArchSpec::single_head(2, 2, 2);
        let budget = ParamBudget {
            b_v: 1.5,
            ..ParamBudget::all_ones()
        };
        let mut p = TransformerParams::zeros(&spec);
        p.blocks[0][0].w_v = Mat::diag(&[0.5, 0.25]);
        p.readout = vec![0.6, 0.0];
        assert_eq!(project_params(&p, &budget, &spec).unwrap(), p);

        p.blocks[0][0].w_v = Mat::diag(&[3.0, 1.0]);
        let q = project_params(&p, &budget, &spec).unwrap();
        assert!(q.blocks[0][0].w_v.sub(&Mat::diag(&[1.5, 0.5])).norm_fro() < 1e-15);
    }

    #[test]
    fn rank_mode_projection() {
        let spec = ArchSpec::single_head(3, 4, 3);
        let budget = ParamBudget {
            mode: BudgetMode::Rank,
            r_v: Some(1),
            b_v: 0.8,
            ..ParamBudget::all_ones()
        };
        let mut rng = RngStream::new(12, 0).rng();
        let p = TransformerParams::sample(&spec, 2.0, &mut rng).unwrap();
        let q = project_params(&p, &budget, &spec).unwrap();
        let sv = q.blocks[0][0].w_v.singular_values();
        assert!(sv[0] <= 0.8 * (1.0 + 1e-12));
        assert!(sv[1..].iter().all(|&s| s < 1e-10 * sv[0]));
        assert!(check_budget(&q, &budget, &spec).pass);

        let too_big = ParamBudget { r_v: Some(4), ..budget };
        assert!(project_params(&p, &too_big, &spec).is_err());
    }

    #[test]
    fn audit_examples() {
        let spec = ArchSpec::multi_head(3, 2, 2, 2);
        let budget = ParamBudget {
            b_w: 0.5,
            ..ParamBudget::all_ones()
        };
        let zero = TransformerParams::zeros(&spec);
        assert!(check_budget(&zero, &budget, &spec).pass);

        let mut p = zero.clone();
        p.readout = vec![0.0, 1.0];
        let audit = check_budget(&p, &budget, &spec);
        assert!(!audit.pass);
        let readout = audit.checks.iter().find(|c| c.name == "readout.l2").unwrap();
        assert!(!readout.pass);
        assert_eq!(readout.measured, 1.0);

        let mut rng = RngStream::new(4, 4).rng();
        for mode in [BudgetMode::Spectral, BudgetMode::L11, BudgetMode::Rank] {
            let b = ParamBudget { mode, ..budget.clone() };
            let p = TransformerParams::sample(&spec, 3.0, &mut rng).unwrap();
            let q = project_params(&p, &b, &spec).unwrap();
            assert!(check_budget(&q, &b, &spec).pass, "{mode:?}");
        }
    }

    #[test]
    fn flatten_round_trip() {
        let spec = ArchSpec::multi_head(3, 2, 3, 2);
        let mut rng = RngStream::new(1, 2).rng();
        let p = TransformerParams::sample(&spec, 1.0, &mut rng).unwrap();
        let flat = p.flatten();
        assert_eq!(flat.len(), p.num_params());
        let mut q = TransformerParams::zeros(&spec);
        q.assign_flat(&flat);
        assert_eq!(p, q);
    }

    #[test]
    fn activations_vanish_at_zero() {
        for a in [Activation::Relu, Activation::Tanh, Activation::Identity] {
            assert_eq!(a.apply(0.0), 0.0);
            assert_eq!(a.lipschitz(), 1.0);
        }
    }
}
