//! Synthetic hierarchical data, GCD splits and the alternating loop:
//! rebuild the hierarchy, then descend on the embeddings with targets fixed.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::bssk::BsskConfig;
use crate::error::{Result, SelexError};
use crate::eval::{accuracy_on_unlabeled, AccuracyReport};
use crate::hssk::{build_hierarchy_with, Hierarchy, HsskConfig};
use crate::labels::LabelInfo;
use crate::loss::{evaluate, ExpertiseTargets, LossConfig};
use crate::matrix::{EmbeddingMatrix, Matrix};
use crate::rng::RandomSource;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// Tree depth; there are `2^depth` leaf categories.
    pub depth: usize,
    pub samples_per_leaf: usize,
    pub dims: usize,
    /// Offset scale of the deepest split.
    pub separation: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn category_count(&self) -> usize {
        1 << self.depth
    }

    fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.depth > 20 {
            return Err(SelexError::InvalidArgument(format!("depth {} outside 1..=20", self.depth)));
        }
        if self.dims < self.depth {
            return Err(SelexError::InvalidArgument(format!("dims {} smaller than depth {}", self.dims, self.depth)));
        }
        if self.samples_per_leaf == 0 {
            return Err(SelexError::InvalidArgument("samples_per_leaf must be positive".into()));
        }
        if !(self.separation > 0.0 && self.separation.is_finite()) {
            return Err(SelexError::InvalidArgument(format!("separation {} must be positive", self.separation)));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(SelexError::InvalidArgument(format!("noise_sigma {} must be >= 0", self.noise_sigma)));
        }
        Ok(())
    }
}

/// Leaf centers, one row per category. The split at tree level `ℓ`
/// (1 = root) moves along axis `ℓ − 1` by `±separation·2^(depth − ℓ)`;
/// the root decision is the most significant bit of the category id.
pub fn leaf_centers(spec: &SyntheticSpec) -> Result<Matrix> {
    spec.validate()?;
    let k = spec.category_count();
    let mut centers = Matrix::zeros(k, spec.dims);
    for c in 0..k {
        for level in 1..=spec.depth {
            let bit = (c >> (spec.depth - level)) & 1;
            let offset = spec.separation * (1u64 << (spec.depth - level)) as f64;
            centers[(c, level - 1)] = if bit == 1 { offset } else { -offset };
        }
    }
    Ok(centers)
}

/// Samples grouped by leaf, every category marked known and no row labeled;
/// use [`make_split`] to obtain a GCD split.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(EmbeddingMatrix, LabelInfo)> {
    let centers = leaf_centers(spec)?;
    let mut rng = RandomSource::new(spec.seed);
    let k = spec.category_count();
    let n = k * spec.samples_per_leaf;
    let mut data = Vec::with_capacity(n * spec.dims);
    let mut labels = Vec::with_capacity(n);
    for c in 0..k {
        for _ in 0..spec.samples_per_leaf {
            for &x in centers.row(c) {
                data.push(x + spec.noise_sigma * rng.standard_normal());
            }
            labels.push(c);
        }
    }
    Ok((EmbeddingMatrix::new(n, spec.dims, data)?, LabelInfo::fully_known(labels, k)?))
}

/// Picks `floor(K·known_fraction)` (at least one) known categories at
/// random and labels `floor(n_c·labeled_fraction)` (at least one) random rows
/// of each.
pub fn make_split(l: &LabelInfo, known_fraction: f64, labeled_fraction: f64, seed: u64) -> Result<LabelInfo> {
    for (name, f) in [("known_fraction", known_fraction), ("labeled_fraction", labeled_fraction)] {
        if !(f > 0.0 && f <= 1.0) {
            return Err(SelexError::InvalidArgument(format!("{name} {f} outside (0, 1]")));
        }
    }
    let k = l.k_total();
    let mut rng = RandomSource::new(seed);
    let take = |count: usize, frac: f64| (((count as f64) * frac + 1e-9).floor() as usize).clamp(1, count.max(1));

    let mut cats: Vec<usize> = (0..k).collect();
    rng.shuffle(&mut cats);
    let known: BTreeSet<usize> = cats[..take(k, known_fraction)].iter().copied().collect();

    let mut mask = vec![false; l.len()];
    for &c in &known {
        let mut rows: Vec<usize> = (0..l.len()).filter(|&i| l.labels()[i] == c).collect();
        if rows.is_empty() {
            return Err(SelexError::EmptyCategory(c));
        }
        rng.shuffle(&mut rows);
        for &r in &rows[..take(rows.len(), labeled_fraction)] {
            mask[r] = true;
        }
    }
    LabelInfo::new(l.labels().to_vec(), mask, known, k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub learning_rate: f64,
    /// Halve the step size and retry when a step raises the loss.
    pub backoff: bool,
    pub max_backoff: usize,
    pub loss: LossConfig,
    pub bssk: BsskConfig,
    pub hssk: HsskConfig,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(k: usize) -> Self {
        Self {
            epochs: 5,
            steps_per_epoch: 20,
            learning_rate: 1e-3,
            backoff: true,
            max_backoff: 30,
            loss: LossConfig::default(),
            bssk: BsskConfig::new(k),
            hssk: HsskConfig::default(),
            seed: 0,
        }
    }

    pub fn validate(&self, l: &LabelInfo) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(SelexError::InvalidArgument(format!("learning_rate {} must be positive", self.learning_rate)));
        }
        if self.bssk.k != l.k_total() {
            return Err(SelexError::InvalidArgument(format!(
                "clustering k {} differs from the {} categories in the labels",
                self.bssk.k,
                l.k_total()
            )));
        }
        self.loss.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 0 is the untrained baseline.
    pub epoch: usize,
    pub l_use: f64,
    pub l_sse: f64,
    pub l_se: f64,
    pub accuracy: AccuracyReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    /// Loss after the step, under the epoch's targets.
    pub l_se: f64,
    pub learning_rate: f64,
    /// Halvings needed before the step was accepted.
    pub backoffs: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub embeddings: EmbeddingMatrix,
    pub hierarchy: Hierarchy,
    pub epochs: Vec<EpochRecord>,
    pub steps: Vec<StepRecord>,
}

/// Runs the loop. The accuracy of each epoch is that of the level-1
/// assignment rebuilt on the updated embeddings; that hierarchy supplies the
/// next epoch's targets.
pub fn run_selex(e: &EmbeddingMatrix, l: &LabelInfo, tc: &TrainConfig) -> Result<TrainOutcome> {
    tc.validate(l)?;
    if e.n() != l.len() {
        return Err(SelexError::DimensionMismatch(format!("{} embeddings for {} labels", e.n(), l.len())));
    }
    let mut bssk_cfg = tc.bssk.clone();
    bssk_cfg.seed = tc.seed;
    let rebuild = |emb: &EmbeddingMatrix| build_hierarchy_with(emb, l, &bssk_cfg, &tc.hssk);

    let mut emb = e.clone();
    let mut hierarchy = rebuild(&emb)?;
    let mut targets = ExpertiseTargets::build(&emb, &hierarchy, l, &tc.loss)?;
    let baseline = evaluate(&emb, &targets, &tc.loss, false)?;
    let mut epochs = vec![EpochRecord {
        epoch: 0,
        l_use: baseline.l_use,
        l_sse: baseline.l_sse,
        l_se: baseline.l_se,
        accuracy: accuracy_on_unlabeled(&hierarchy.levels[0].assignment, l)?,
    }];
    let mut steps = Vec::new();
    let mut lr = tc.learning_rate;

    for epoch in 1..=tc.epochs {
        let mut current = evaluate(&emb, &targets, &tc.loss, true)?;
        if !current.l_se.is_finite() {
            return Err(SelexError::Diverged { epoch, step: 0 });
        }
        for step in 1..=tc.steps_per_epoch {
            let grad = current.gradient.take().expect("gradient requested");
            let mut backoffs = 0;
            let (next_emb, next) = loop {
                let candidate = emb.step(&grad, lr).map_err(|_| SelexError::Diverged { epoch, step })?;
                let report = evaluate(&candidate, &targets, &tc.loss, true)?;
                if !report.l_se.is_finite() {
                    return Err(SelexError::Diverged { epoch, step });
                }
                let worse = report.l_se > current.l_se;
                if !(worse && tc.backoff) {
                    break (candidate, report);
                }
                if backoffs == tc.max_backoff {
                    log::debug!("epoch {epoch} step {step}: no decrease after {backoffs} halvings, keeping point");
                    break (emb.clone(), evaluate(&emb, &targets, &tc.loss, true)?);
                }
                lr *= 0.5;
                backoffs += 1;
            };
            emb = next_emb;
            current = next;
            steps.push(StepRecord { epoch, step, l_se: current.l_se, learning_rate: lr, backoffs });
        }
        let last = current;
        hierarchy = rebuild(&emb)?;
        epochs.push(EpochRecord {
            epoch,
            l_use: last.l_use,
            l_sse: last.l_sse,
            l_se: last.l_se,
            accuracy: accuracy_on_unlabeled(&hierarchy.levels[0].assignment, l)?,
        });
        log::info!("epoch {epoch}: l_se {:.6} acc_all {:.4} lr {lr:e}", last.l_se, epochs[epoch].accuracy.acc_all);
        targets = ExpertiseTargets::build(&emb, &hierarchy, l, &tc.loss)?;
    }
    Ok(TrainOutcome { embeddings: emb, hierarchy, epochs, steps })
}
