//! Self-expertise objective and its gradient with respect to the embeddings.
//!
//! `L_SE = (1 − λ)·L_USE + λ·L_SSE`, where
//!
//! * `L_USE` is the mean binary cross-entropy between per-pair probabilities
//!   `P_ij = σ(cos(x_i, x_j) / τ_unsup)` and the smoothed hierarchy target,
//! * `L_SSE = ½ Σ_{k=0..L} L_s^k / 2^k`, with `L_s^k` a supervised contrastive
//!   loss on the first `max(1, ⌊D / 2^k⌋)` dimensions using ground-truth
//!   positives at `k = 0` and level-`k` pseudo-label positives above.
//!
//! Pseudo-labels and targets are constants for the gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SelexError};
use crate::hssk::Hierarchy;
use crate::labels::LabelInfo;
use crate::matrix::{dot, normalize_matrix_rows, EmbeddingMatrix, Matrix};
use crate::targets::{self, Normalization, SmoothingConfig, TargetMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSource {
    /// Per-level pseudo-label disagreement.
    #[default]
    Hierarchy,
    /// Pair distance against per-level cluster radii.
    Radii,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda: f64,
    pub tau_unsup: f64,
    pub tau_sup: f64,
    /// Probability clamp for the logarithms.
    pub eps: f64,
    pub smoothing: SmoothingConfig,
    pub target: TargetSource,
    /// Symmetrize the radius target.
    pub symmetrize: bool,
    /// Train the unsupervised term against `Y` instead of `Ŷ`.
    pub use_raw_target: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 0.35,
            tau_unsup: 0.35,
            tau_sup: 0.1,
            eps: 1e-7,
            smoothing: SmoothingConfig::default(),
            target: TargetSource::Hierarchy,
            symmetrize: false,
            use_raw_target: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(SelexError::InvalidArgument(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if !(self.tau_unsup > 0.0 && self.tau_sup > 0.0) {
            return Err(SelexError::InvalidArgument("temperatures must be positive".into()));
        }
        if !(self.eps > 0.0 && self.eps <= 1e-3) {
            return Err(SelexError::InvalidArgument(format!("eps {} outside (0, 1e-3]", self.eps)));
        }
        self.smoothing.validate()
    }
}

/// Width of the leading embedding segment used at hierarchy level `k`.
pub fn slice_width(d: usize, level: usize) -> usize {
    d.checked_shr(level as u32).unwrap_or(0).max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_use: f64,
    /// `L_s^k` for `k = 0..=L`.
    pub l_s_per_level: Vec<f64>,
    pub l_sse: f64,
    pub l_se: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gradient: Option<Matrix>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Cosine similarities of the rows of `x` (zero rows are orthogonal to
/// everything), plus the normalized rows and their original norms.
struct Cosines {
    unit: Matrix,
    norms: Vec<f64>,
    sim: Matrix,
}

fn cosines(x: &Matrix) -> Cosines {
    let (unit, _) = normalize_matrix_rows(x);
    let n = x.rows();
    let norms = (0..n).map(|i| dot(x.row(i), x.row(i)).sqrt()).collect::<Vec<_>>();
    let mut sim = Matrix::zeros(n, n);
    for i in 0..n {
        sim[(i, i)] = if norms[i] > 0.0 { 1.0 } else { 0.0 };
        for j in 0..i {
            let s = dot(unit.row(i), unit.row(j));
            sim[(i, j)] = s;
            sim[(j, i)] = s;
        }
    }
    Cosines { unit, norms, sim }
}

/// Turns `dL/dsim` into `dL/dx` through `sim = unit·unitᵀ` and the row
/// normalization, accumulating `scale ×` the result into the leading
/// columns of `out`. The diagonal of `g` is ignored.
fn backprop_cosines(c: &Cosines, g: &Matrix, scale: f64, out: &mut Matrix) {
    let n = c.unit.rows();
    let w = c.unit.cols();
    let mut du = vec![0.0; w];
    for i in 0..n {
        if c.norms[i] == 0.0 {
            continue;
        }
        du.iter_mut().for_each(|v| *v = 0.0);
        for j in (0..n).filter(|&j| j != i) {
            let coef = g[(i, j)] + g[(j, i)];
            if coef != 0.0 {
                for (d, u) in du.iter_mut().zip(c.unit.row(j)) {
                    *d += coef * u;
                }
            }
        }
        let ui = c.unit.row(i);
        let radial = dot(&du, ui);
        let row = &mut out.row_mut(i)[..w];
        for ((o, d), u) in row.iter_mut().zip(&du).zip(ui) {
            *o += scale * (d - radial * u) / c.norms[i];
        }
    }
}

/// `P_ij = σ(cos(x_i, x_j) / τ_unsup)`.
pub fn similarity_logits(e: &EmbeddingMatrix, cfg: &LossConfig) -> Matrix {
    let c = cosines(e.as_matrix());
    let zero_rows = c.norms.iter().filter(|&&v| v == 0.0).count();
    if zero_rows > 0 {
        log::warn!("similarity_logits: {zero_rows} zero row(s) treated as orthogonal to all rows");
    }
    probabilities(&c.sim, cfg.tau_unsup)
}

fn probabilities(sim: &Matrix, tau: f64) -> Matrix {
    let data = sim.as_slice().iter().map(|s| sigmoid(s / tau)).collect();
    Matrix::from_vec(sim.rows(), sim.cols(), data).expect("same shape")
}

fn check_square_pair(p: &Matrix, y: &TargetMatrix) -> Result<()> {
    if p.rows() != p.cols() || y.values.rows() != p.rows() || y.values.cols() != p.cols() {
        return Err(SelexError::DimensionMismatch(format!(
            "probabilities are {}x{}, target is {}x{}",
            p.rows(),
            p.cols(),
            y.values.rows(),
            y.values.cols()
        )));
    }
    Ok(())
}

/// Mean binary cross-entropy over all `N²` ordered pairs, diagonal included.
pub fn l_use(p: &Matrix, y_hat: &TargetMatrix, cfg: &LossConfig) -> Result<f64> {
    check_square_pair(p, y_hat)?;
    let total: f64 =
        p.as_slice().iter().zip(y_hat.values.as_slice()).map(|(&p, &y)| bce(p.clamp(cfg.eps, 1.0 - cfg.eps), y)).sum();
    Ok(total / p.as_slice().len() as f64)
}

fn bce(p: f64, y: f64) -> f64 {
    let mut loss = 0.0;
    if y != 0.0 {
        loss -= y * p.ln();
    }
    if y != 1.0 {
        loss -= (1.0 - y) * (1.0 - p).ln();
    }
    loss
}

/// BCE from the logit `x = s/τ`, stable for large `|x|`, with the clamp
/// applied in probability space. Returns (loss, dloss/dx).
fn bce_from_logit(x: f64, y: f64, eps: f64) -> (f64, f64) {
    let p = sigmoid(x);
    if p < eps || p > 1.0 - eps {
        return (bce(p.clamp(eps, 1.0 - eps), y), 0.0);
    }
    // -ln p = softplus(-x), -ln(1-p) = softplus(x)
    (y * softplus(-x) + (1.0 - y) * softplus(x), p - y)
}

fn use_with_grad(c: &Cosines, y: &TargetMatrix, cfg: &LossConfig, grad: Option<(&mut Matrix, f64)>) -> f64 {
    let n = c.sim.rows();
    let inv = 1.0 / (n * n) as f64;
    let mut total = 0.0;
    let mut g = grad.as_ref().map(|_| Matrix::zeros(n, n));
    for i in 0..n {
        for j in 0..n {
            let (l, dx) = bce_from_logit(c.sim[(i, j)] / cfg.tau_unsup, y.get(i, j), cfg.eps);
            total += l;
            if let Some(g) = g.as_mut() {
                if i != j {
                    g[(i, j)] = inv * dx / cfg.tau_unsup;
                }
            }
        }
    }
    if let (Some((out, scale)), Some(g)) = (grad, g) {
        backprop_cosines(c, &g, scale, out);
    }
    total * inv
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupConValue {
    pub loss: f64,
    /// Anchors with at least one positive; 0 means the loss is vacuous.
    pub anchors: usize,
}

/// Supervised contrastive loss (mean of log-probabilities over positives)
/// on the row-normalized first `width` columns.
pub fn supcon_level(e: &EmbeddingMatrix, mask: &TargetMatrix, width: usize, cfg: &LossConfig) -> Result<SupConValue> {
    let sliced = crate::matrix::slice_dims(e, width)?;
    if mask.n() != e.n() {
        return Err(SelexError::DimensionMismatch(format!(
            "mask covers {} samples, embeddings have {}",
            mask.n(),
            e.n()
        )));
    }
    Ok(supcon_with_grad(&cosines(sliced.as_matrix()), mask, cfg.tau_sup, None))
}

fn supcon_with_grad(c: &Cosines, mask: &TargetMatrix, tau: f64, grad: Option<(&mut Matrix, f64)>) -> SupConValue {
    let n = c.sim.rows();
    let mut per_anchor = Vec::new();
    let mut g = grad.as_ref().map(|_| Matrix::zeros(n, n));
    let mut softmax = vec![0.0; n];
    for i in 0..n {
        let positives: Vec<usize> = (0..n).filter(|&j| j != i && mask.get(i, j) != 0.0).collect();
        if positives.is_empty() {
            continue;
        }
        let logit = |a: usize| c.sim[(i, a)] / tau;
        let max = (0..n).filter(|&a| a != i).map(logit).fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = (0..n).filter(|&a| a != i).map(|a| (logit(a) - max).exp()).sum();
        let lse = max + sum.ln();
        let mean_pos = positives.iter().map(|&p| logit(p)).sum::<f64>() / positives.len() as f64;
        per_anchor.push(lse - mean_pos);
        if let Some(g) = g.as_mut() {
            for (a, q) in softmax.iter_mut().enumerate() {
                *q = if a == i { 0.0 } else { (logit(a) - lse).exp() };
            }
            for &p in &positives {
                softmax[p] -= 1.0 / positives.len() as f64;
            }
            for (dst, q) in g.row_mut(i).iter_mut().zip(&softmax) {
                *dst = q / tau;
            }
        }
    }
    let anchors = per_anchor.len();
    if anchors == 0 {
        return SupConValue { loss: 0.0, anchors };
    }
    if let (Some((out, scale)), Some(g)) = (grad, g) {
        backprop_cosines(c, &g, scale / anchors as f64, out);
    }
    SupConValue { loss: per_anchor.iter().sum::<f64>() / anchors as f64, anchors }
}

/// Targets held fixed while the embeddings move.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertiseTargets {
    /// Target for the unsupervised term (`Ŷ`, or `Y` when configured).
    pub unsup: TargetMatrix,
    /// Positive masks for levels `0..=L`.
    pub masks: Vec<TargetMatrix>,
}

impl ExpertiseTargets {
    pub fn build(e: &EmbeddingMatrix, h: &Hierarchy, l: &LabelInfo, cfg: &LossConfig) -> Result<Self> {
        cfg.validate()?;
        if h.sample_count() != e.n() || l.len() != e.n() {
            return Err(SelexError::DimensionMismatch(format!(
                "embeddings have {} rows, hierarchy {}, labels {}",
                e.n(),
                h.sample_count(),
                l.len()
            )));
        }
        let raw = match cfg.target {
            TargetSource::Hierarchy => targets::unsup_target_from_hierarchy(h, cfg.smoothing.normalization),
            TargetSource::Radii => {
                let mut y = targets::unsup_target_from_radii(e, h, cfg.symmetrize)?;
                if cfg.smoothing.normalization != Normalization::None {
                    log::warn!("normalization is only applied to the hierarchy target");
                }
                y.values.as_mut_slice().iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
                y
            }
        };
        let unsup = if cfg.use_raw_target { raw } else { targets::smooth_target(&raw, &cfg.smoothing)? };
        let masks = (0..=h.num_levels()).map(|k| targets::sup_positive_mask(h, k, l)).collect::<Result<_>>()?;
        Ok(Self { unsup, masks })
    }
}

/// Evaluates every term, optionally with the gradient.
pub fn evaluate(
    e: &EmbeddingMatrix,
    t: &ExpertiseTargets,
    cfg: &LossConfig,
    with_gradient: bool,
) -> Result<LossReport> {
    if t.unsup.n() != e.n() {
        return Err(SelexError::DimensionMismatch(format!(
            "targets cover {} samples, embeddings have {}",
            t.unsup.n(),
            e.n()
        )));
    }
    let mut grad = with_gradient.then(|| Matrix::zeros(e.n(), e.d()));
    let lambda = cfg.lambda;

    let full = cosines(e.as_matrix());
    let l_use = use_with_grad(&full, &t.unsup, cfg, grad.as_mut().map(|g| (g, 1.0 - lambda)));

    let mut l_s_per_level = Vec::with_capacity(t.masks.len());
    for (k, mask) in t.masks.iter().enumerate() {
        let weight = 0.5 * 0.5f64.powi(k as i32);
        let width = slice_width(e.d(), k);
        let c = if width == e.d() { None } else { Some(cosines(crate::matrix::slice_dims(e, width)?.as_matrix())) };
        let c = c.as_ref().unwrap_or(&full);
        let v = supcon_with_grad(c, mask, cfg.tau_sup, grad.as_mut().map(|g| (g, lambda * weight)));
        l_s_per_level.push(v.loss);
    }
    let l_sse = combine_levels(&l_s_per_level);
    let l_se = (1.0 - lambda) * l_use + lambda * l_sse;
    Ok(LossReport { l_use, l_s_per_level, l_sse, l_se, gradient: grad })
}

/// `½ Σ_k L_s^k / 2^k`.
pub fn combine_levels(per_level: &[f64]) -> f64 {
    0.5 * per_level.iter().enumerate().map(|(k, v)| v * 0.5f64.powi(k as i32)).sum::<f64>()
}

pub fn l_sse(e: &EmbeddingMatrix, h: &Hierarchy, l: &LabelInfo, cfg: &LossConfig) -> Result<(f64, Vec<f64>)> {
    let t = ExpertiseTargets::build(e, h, l, cfg)?;
    let mut per_level = Vec::with_capacity(t.masks.len());
    for (k, mask) in t.masks.iter().enumerate() {
        per_level.push(supcon_level(e, mask, slice_width(e.d(), k), cfg)?.loss);
    }
    Ok((combine_levels(&per_level), per_level))
}

pub fn l_se(e: &EmbeddingMatrix, h: &Hierarchy, l: &LabelInfo, cfg: &LossConfig) -> Result<LossReport> {
    evaluate(e, &ExpertiseTargets::build(e, h, l, cfg)?, cfg, false)
}

pub fn grad_l_se(e: &EmbeddingMatrix, h: &Hierarchy, l: &LabelInfo, cfg: &LossConfig) -> Result<Matrix> {
    let report = evaluate(e, &ExpertiseTargets::build(e, h, l, cfg)?, cfg, true)?;
    Ok(report.gradient.expect("gradient requested"))
}
