//! Pairwise target matrices derived from a pseudo-label hierarchy.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SelexError};
use crate::hssk::Hierarchy;
use crate::labels::LabelInfo;
use crate::matrix::{sq_dist, EmbeddingMatrix, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    UnsupRaw,
    UnsupSmoothed,
    Identity,
    /// Positive mask at the given hierarchy level; 0 is ground truth.
    SupMask(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetMatrix {
    pub values: Matrix,
    pub kind: TargetKind,
}

impl TargetMatrix {
    pub fn identity(n: usize) -> Self {
        Self { values: Matrix::identity(n), kind: TargetKind::Identity }
    }

    pub fn n(&self) -> usize {
        self.values.rows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Entries are used as-is; they are already in `[0, 1]`.
    #[default]
    None,
    /// Off-diagonal entries divided by their largest attainable value `1 - 2^-L`.
    Max,
    /// Each row scaled to sum to 1.
    Row,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    pub alpha: f64,
    pub normalization: Normalization,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self { alpha: 0.5, normalization: Normalization::None }
    }
}

impl SmoothingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(SelexError::InvalidArgument(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        Ok(())
    }
}

fn level_weight(k: usize) -> f64 {
    0.5f64.powi(k as i32)
}

/// `y_ij = Σ_k [c_i^k ≠ c_j^k] / 2^k` over levels `k = 1..=L`, with `y_ii = 1`.
///
/// Pairs sharing their finest pseudo-label score 0 (hardest negatives);
/// pairs that split early in the hierarchy approach 1.
pub fn unsup_target_from_hierarchy(h: &Hierarchy, normalization: Normalization) -> TargetMatrix {
    let n = h.sample_count();
    let mut y = Matrix::zeros(n, n);
    for (lvl, level) in h.levels.iter().enumerate() {
        let w = level_weight(lvl + 1);
        let a = &level.assignment;
        for i in 0..n {
            for j in 0..n {
                if a[i] != a[j] {
                    y[(i, j)] += w;
                }
            }
        }
    }
    for i in 0..n {
        y[(i, i)] = 1.0;
    }
    apply_normalization(&mut y, normalization, h.num_levels());
    TargetMatrix { values: y, kind: TargetKind::UnsupRaw }
}

fn apply_normalization(y: &mut Matrix, normalization: Normalization, levels: usize) {
    let n = y.rows();
    match normalization {
        Normalization::None => {}
        Normalization::Max => {
            let top = 1.0 - level_weight(levels);
            for i in 0..n {
                for j in (0..n).filter(|&j| j != i) {
                    y[(i, j)] /= top;
                }
            }
        }
        Normalization::Row => {
            for i in 0..n {
                let s: f64 = y.row(i).iter().sum();
                y.row_mut(i).iter_mut().for_each(|v| *v /= s);
            }
        }
    }
}

/// Geometric variant: `y_ij = Σ_k [d_ij > r_i^k] / 2^k`, where `r_i^k` is the
/// radius of sample `i`'s level-`k` cluster. Not symmetric unless
/// `symmetrize` averages it with its transpose.
pub fn unsup_target_from_radii(e: &EmbeddingMatrix, h: &Hierarchy, symmetrize: bool) -> Result<TargetMatrix> {
    let n = e.n();
    if h.sample_count() != n {
        return Err(SelexError::DimensionMismatch(format!(
            "hierarchy covers {} samples, embeddings have {n}",
            h.sample_count()
        )));
    }
    for (k, level) in h.levels.iter().enumerate() {
        if level.radii.len() != level.label_count {
            return Err(SelexError::InvalidArgument(format!(
                "level {} has {} radii for {} clusters",
                k + 1,
                level.radii.len(),
                level.label_count
            )));
        }
    }
    let mut y = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            let d = sq_dist(e.row(i), e.row(j)).sqrt();
            y[(i, j)] = h
                .levels
                .iter()
                .enumerate()
                .filter(|(_, level)| d > level.radii[level.assignment[i]])
                .map(|(k, _)| level_weight(k + 1))
                .sum();
        }
        y[(i, i)] = 1.0;
    }
    if symmetrize {
        let t = y.transpose();
        for (v, w) in y.as_mut_slice().iter_mut().zip(t.as_slice()) {
            *v = 0.5 * (*v + w);
        }
    }
    Ok(TargetMatrix { values: y, kind: TargetKind::UnsupRaw })
}

/// `Ŷ = α·Y + (1 − α)·I`.
pub fn smooth_target(y: &TargetMatrix, cfg: &SmoothingConfig) -> Result<TargetMatrix> {
    cfg.validate()?;
    if y.kind != TargetKind::UnsupRaw {
        return Err(SelexError::InvalidArgument(format!(
            "smoothing expects an unsupervised raw target, got {:?}",
            y.kind
        )));
    }
    let n = y.n();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let id = if i == j { 1.0 } else { 0.0 };
            out[(i, j)] = cfg.alpha * y.values[(i, j)] + (1.0 - cfg.alpha) * id;
        }
    }
    Ok(TargetMatrix { values: out, kind: TargetKind::UnsupSmoothed })
}

/// Positive pairs for the supervised term at `level`.
///
/// Level 0 uses ground truth among labeled rows; level `k ≥ 1` uses shared
/// level-`k` pseudo-labels. The diagonal is always positive.
pub fn sup_positive_mask(h: &Hierarchy, level: usize, l: &LabelInfo) -> Result<TargetMatrix> {
    let n = l.len();
    if level > h.num_levels() {
        return Err(SelexError::LevelOutOfRange { level, min: 0, max: h.num_levels() });
    }
    if h.sample_count() != n {
        return Err(SelexError::DimensionMismatch(format!(
            "hierarchy covers {} samples, labels have {n}",
            h.sample_count()
        )));
    }
    let same: Box<dyn Fn(usize, usize) -> bool> = if level == 0 {
        Box::new(|i, j| l.is_labeled(i) && l.is_labeled(j) && l.labels()[i] == l.labels()[j])
    } else {
        let a = &h.levels[level - 1].assignment;
        Box::new(move |i, j| a[i] == a[j])
    };
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i == j || same(i, j) {
                m[(i, j)] = 1.0;
            }
        }
    }
    Ok(TargetMatrix { values: m, kind: TargetKind::SupMask(level) })
}
