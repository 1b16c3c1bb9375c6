//! Balanced semi-supervised k-means.
//!
//! Three stages: known-category centers seeded from labeled means with novel
//! centers drawn by neighborhood exclusion, a refinement stage that moves only
//! novel centers, and a final semi-supervised k-means over all centers. When
//! balancing is on, every assignment step is followed by a capacity-`C`
//! stable matching between samples and clusters.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SelexError};
use crate::labels::LabelInfo;
use crate::matrix::{sq_dist, EmbeddingMatrix, Matrix};
use crate::rng::RandomSource;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BsskConfig {
    /// Total cluster count, known plus novel.
    pub k: usize,
    /// Target cluster size; `floor(N / k)` when absent.
    pub cluster_size: Option<usize>,
    pub n_iter_refine: usize,
    pub n_iter_final: usize,
    pub balanced: bool,
    pub seed: u64,
}

impl BsskConfig {
    pub fn new(k: usize) -> Self {
        Self { k, cluster_size: None, n_iter_refine: 10, n_iter_final: 50, balanced: true, seed: 0 }
    }

    pub fn with_cluster_size(mut self, c: usize) -> Self {
        self.cluster_size = Some(c);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn unbalanced(mut self) -> Self {
        self.balanced = false;
        self
    }

    pub fn effective_cluster_size(&self, n: usize) -> usize {
        self.cluster_size.unwrap_or_else(|| (n / self.k.max(1)).max(1))
    }

    fn validate(&self, n: usize, labels: &LabelInfo) -> Result<()> {
        if self.k == 0 {
            return Err(SelexError::InvalidArgument("k must be positive".into()));
        }
        if self.k < labels.known_count() {
            return Err(SelexError::InvalidArgument(format!(
                "k = {} is smaller than the {} known categories",
                self.k,
                labels.known_count()
            )));
        }
        if labels.len() != n {
            return Err(SelexError::DimensionMismatch(format!("{} label rows for {n} embedding rows", labels.len())));
        }
        if let Some(c) = self.cluster_size {
            if c == 0 {
                return Err(SelexError::InvalidArgument("cluster_size must be positive".into()));
            }
            let lo = n / self.k;
            let hi = n.div_ceil(self.k);
            if self.balanced && c != lo && c != hi {
                log::warn!("cluster_size {c} is neither floor nor ceil of N/K = {n}/{}", self.k);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    /// `K × D` cluster centers.
    pub centers: Matrix,
    /// Cluster id per sample; empty before the first assignment.
    pub assignment: Vec<usize>,
    /// Clusters `0..known_cluster_count` belong to known categories.
    pub known_cluster_count: usize,
    pub sizes: Vec<usize>,
    /// Largest Euclidean distance of a member to its center.
    pub radii: Vec<f64>,
}

impl ClusterModel {
    pub fn from_centers(centers: Matrix, known_cluster_count: usize) -> Self {
        let k = centers.rows();
        Self { centers, assignment: Vec::new(), known_cluster_count, sizes: vec![0; k], radii: vec![0.0; k] }
    }

    pub fn k(&self) -> usize {
        self.centers.rows()
    }

    /// Replaces the assignment and recomputes sizes and radii.
    pub fn with_assignment(mut self, e: &EmbeddingMatrix, assignment: Vec<usize>) -> Self {
        self.assignment = assignment;
        self.refresh_stats(e);
        self
    }

    fn refresh_stats(&mut self, e: &EmbeddingMatrix) {
        let k = self.k();
        self.sizes = vec![0; k];
        let mut r2 = vec![0.0f64; k];
        for (i, &c) in self.assignment.iter().enumerate() {
            self.sizes[c] += 1;
            r2[c] = r2[c].max(sq_dist(e.row(i), self.centers.row(c)));
        }
        self.radii = r2.into_iter().map(f64::sqrt).collect();
    }

    /// Sum of squared distances of samples to their assigned centers.
    pub fn sse(&self, e: &EmbeddingMatrix) -> f64 {
        self.assignment.iter().enumerate().map(|(i, &c)| sq_dist(e.row(i), self.centers.row(c))).sum()
    }

    /// Member rows of each cluster, in ascending row order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k()];
        for (i, &c) in self.assignment.iter().enumerate() {
            out[c].push(i);
        }
        out
    }
}

/// Restrictions on which clusters a sample may join.
///
/// A pinned row always belongs to its pinned cluster and is never released by
/// balancing. Grouped rows may only join clusters of the same group.
#[derive(Debug, Clone, Default)]
pub struct Constraints {
    pinned: Vec<Option<usize>>,
    groups: Option<(Vec<usize>, Vec<usize>)>,
}

impl Constraints {
    pub fn none() -> Self {
        Self::default()
    }

    /// Pins every labeled row to the cluster of its known category.
    pub fn pin_labeled(labels: &LabelInfo) -> Self {
        let pinned = (0..labels.len())
            .map(|i| if labels.is_labeled(i) { labels.known_cluster_of(labels.labels()[i]) } else { None })
            .collect();
        Self { pinned, groups: None }
    }

    /// Sample `i` may only join clusters `c` with `cluster_group[c] == row_group[i]`.
    pub fn grouped(row_group: Vec<usize>, cluster_group: Vec<usize>) -> Self {
        Self { pinned: Vec::new(), groups: Some((row_group, cluster_group)) }
    }

    pub fn pinned(&self, row: usize) -> Option<usize> {
        self.pinned.get(row).copied().flatten()
    }

    pub fn allowed(&self, row: usize, cluster: usize) -> bool {
        if let Some(p) = self.pinned(row) {
            return p == cluster;
        }
        match &self.groups {
            Some((rows, clusters)) => rows[row] == clusters[cluster],
            None => true,
        }
    }
}

/// Total order on (distance, index) used for every tie-break.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Ranked {
    dist: f64,
    idx: usize,
}

impl Eq for Ranked {}

impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist.total_cmp(&other.dist).then(self.idx.cmp(&other.idx))
    }
}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn distances_to_centers(e: &EmbeddingMatrix, centers: &Matrix) -> Matrix {
    let mut d = Matrix::zeros(e.n(), centers.rows());
    for i in 0..e.n() {
        for c in 0..centers.rows() {
            d[(i, c)] = sq_dist(e.row(i), centers.row(c));
        }
    }
    d
}

/// Seeds the cluster centers.
///
/// Known clusters start at the mean of their labeled rows. Novel centers are
/// drawn uniformly from unlabeled rows; in balanced mode each known center and
/// each drawn row first removes its `C` nearest remaining rows from the pool.
pub fn init_centers(e: &EmbeddingMatrix, l: &LabelInfo, cfg: &BsskConfig) -> Result<ClusterModel> {
    cfg.validate(e.n(), l)?;
    let n = e.n();
    let known: Vec<usize> = l.known_categories().iter().copied().collect();
    let c_size = cfg.effective_cluster_size(n);
    let mut centers = Matrix::zeros(cfg.k, e.d());

    for (slot, &cat) in known.iter().enumerate() {
        let rows: Vec<usize> = (0..n).filter(|&i| l.is_labeled(i) && l.labels()[i] == cat).collect();
        if rows.is_empty() {
            return Err(SelexError::EmptyKnownCategory(cat));
        }
        let center = centers.row_mut(slot);
        for &i in &rows {
            for (c, v) in center.iter_mut().zip(e.row(i)) {
                *c += v;
            }
        }
        center.iter_mut().for_each(|c| *c /= rows.len() as f64);
    }

    let novel_needed = cfg.k - known.len();
    let unlabeled = l.unlabeled_rows();
    if unlabeled.len() < novel_needed {
        return Err(SelexError::NotEnoughCandidates { needed: novel_needed, available: unlabeled.len() });
    }

    let mut excluded = vec![false; n];
    let exclude_nearest = |point: &[f64], excluded: &mut Vec<bool>| {
        let mut pool: Vec<Ranked> =
            (0..n).filter(|&i| !excluded[i]).map(|i| Ranked { dist: sq_dist(point, e.row(i)), idx: i }).collect();
        pool.sort_unstable();
        for r in pool.into_iter().take(c_size) {
            excluded[r.idx] = true;
        }
    };

    if cfg.balanced {
        for slot in 0..known.len() {
            exclude_nearest(centers.row(slot), &mut excluded);
        }
    }

    let mut rng = RandomSource::new(cfg.seed);
    let mut chosen = vec![false; n];
    for slot in known.len()..cfg.k {
        let mut pool: Vec<usize> = unlabeled.iter().copied().filter(|&i| !chosen[i] && !excluded[i]).collect();
        if pool.is_empty() {
            log::warn!("init_centers: exclusion exhausted the pool; drawing from all unlabeled rows");
            pool = unlabeled.iter().copied().filter(|&i| !chosen[i]).collect();
        }
        let pick = pool[rng.below(pool.len())];
        chosen[pick] = true;
        if cfg.balanced {
            exclude_nearest(e.row(pick), &mut excluded);
        }
        excluded[pick] = true;
        centers.row_mut(slot).copy_from_slice(e.row(pick));
    }

    Ok(ClusterModel::from_centers(centers, known.len()))
}

/// Assigns each sample to its nearest center, lowest cluster index on ties.
pub fn assign_nearest(e: &EmbeddingMatrix, m: &ClusterModel) -> ClusterModel {
    assign_constrained(e, m, &Constraints::none())
}

pub(crate) fn assign_constrained(e: &EmbeddingMatrix, m: &ClusterModel, cons: &Constraints) -> ClusterModel {
    let k = m.k();
    let assignment = (0..e.n())
        .map(|i| {
            if let Some(p) = cons.pinned(i) {
                return p;
            }
            let nearest = |allowed_only: bool| {
                (0..k)
                    .filter(|&c| !allowed_only || cons.allowed(i, c))
                    .map(|c| Ranked { dist: sq_dist(e.row(i), m.centers.row(c)), idx: c })
                    .min()
            };
            nearest(true).or_else(|| nearest(false)).map_or(0, |r| r.idx)
        })
        .collect();
    m.clone().with_assignment(e, assignment)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BalanceOutcome {
    pub model: ClusterModel,
    /// Rows no cluster had room for; they keep their incoming assignment.
    /// Only possible when `N > K·C` or under group constraints.
    pub unplaced: Vec<usize>,
}

/// Enforces cluster size `c_size` by a sample-proposing stable matching.
///
/// Every sample first proposes to its current cluster. A cluster holds its
/// `c_size` closest proposers and releases the rest, which then propose to
/// their next-nearest cluster, displacing a farther member if the cluster is
/// full. With `N = K·C` every cluster ends with exactly `C` members and no
/// sample–cluster pair prefers each other over their match.
pub fn balance_clusters(e: &EmbeddingMatrix, m: &ClusterModel, c_size: usize) -> BalanceOutcome {
    balance_constrained(e, m, c_size, &Constraints::none())
}

pub(crate) fn balance_constrained(
    e: &EmbeddingMatrix,
    m: &ClusterModel,
    c_size: usize,
    cons: &Constraints,
) -> BalanceOutcome {
    let n = e.n();
    let k = m.k();
    let dist = distances_to_centers(e, &m.centers);

    let mut capacity = vec![c_size; k];
    let mut assignment = m.assignment.clone();
    let mut free = VecDeque::new();
    for i in 0..n {
        match cons.pinned(i) {
            Some(c) => {
                capacity[c] = capacity[c].saturating_sub(1);
                assignment[i] = c;
            }
            None => free.push_back(i),
        }
    }

    // Preference list: incoming cluster first, then the other allowed
    // clusters by (distance, index).
    let prefs = |i: usize| -> Vec<usize> {
        let first = m.assignment[i];
        let mut rest: Vec<Ranked> = (0..k)
            .filter(|&c| c != first && cons.allowed(i, c))
            .map(|c| Ranked { dist: dist[(i, c)], idx: c })
            .collect();
        rest.sort_unstable();
        std::iter::once(first).chain(rest.into_iter().map(|r| r.idx)).collect()
    };
    let mut pref_lists: Vec<Option<Vec<usize>>> = vec![None; n];
    let mut next = vec![0usize; n];
    let mut held: Vec<BinaryHeap<Ranked>> = vec![BinaryHeap::new(); k];
    let mut unplaced = Vec::new();

    while let Some(i) = free.pop_front() {
        let list = pref_lists[i].get_or_insert_with(|| prefs(i));
        let Some(&c) = list.get(next[i]) else {
            unplaced.push(i);
            continue;
        };
        next[i] += 1;
        let me = Ranked { dist: dist[(i, c)], idx: i };
        if held[c].len() < capacity[c] {
            held[c].push(me);
        } else if held[c].peek().is_some_and(|worst| *worst > me) {
            let worst = held[c].pop().map(|r| r.idx);
            held[c].push(me);
            free.extend(worst);
        } else {
            free.push_back(i);
        }
    }

    for (c, heap) in held.iter().enumerate() {
        for r in heap.iter() {
            assignment[r.idx] = c;
        }
    }
    if !unplaced.is_empty() {
        unplaced.sort_unstable();
        log::warn!("balance_clusters: {} sample(s) found no cluster with room", unplaced.len());
    }
    BalanceOutcome { model: m.clone().with_assignment(e, assignment), unplaced }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StabilityCheck {
    pub stable: bool,
    /// First blocking pair `(sample, cluster)` in row-major order.
    pub witness: Option<(usize, usize)>,
}

/// All sample–cluster pairs that would both rather be matched to each other.
///
/// `(i, c)` blocks when `i` is strictly closer to `c` than to its own center
/// and `c` either has fewer than `c_size` members or holds a member strictly
/// farther from its center than `i`.
pub fn blocking_pairs(e: &EmbeddingMatrix, m: &ClusterModel, c_size: usize) -> Vec<(usize, usize)> {
    let dist = distances_to_centers(e, &m.centers);
    let k = m.k();
    let mut farthest = vec![f64::NEG_INFINITY; k];
    let mut sizes = vec![0usize; k];
    for (i, &c) in m.assignment.iter().enumerate() {
        farthest[c] = farthest[c].max(dist[(i, c)]);
        sizes[c] += 1;
    }
    let mut out = Vec::new();
    for (i, &own) in m.assignment.iter().enumerate() {
        for c in 0..k {
            let d = dist[(i, c)];
            if c != own && d < dist[(i, own)] && (sizes[c] < c_size || farthest[c] > d) {
                out.push((i, c));
            }
        }
    }
    out
}

pub fn is_stable_matching(e: &EmbeddingMatrix, m: &ClusterModel, c_size: usize) -> StabilityCheck {
    let witness = blocking_pairs(e, m, c_size).into_iter().next();
    StabilityCheck { stable: witness.is_none(), witness }
}

fn update_centers(e: &EmbeddingMatrix, m: &mut ClusterModel, clusters: std::ops::Range<usize>) {
    let d = e.d();
    let mut sums = vec![0.0; m.k() * d];
    let mut counts = vec![0usize; m.k()];
    for (i, &c) in m.assignment.iter().enumerate() {
        counts[c] += 1;
        for (s, v) in sums[c * d..(c + 1) * d].iter_mut().zip(e.row(i)) {
            *s += v;
        }
    }
    for c in clusters {
        if counts[c] == 0 {
            continue;
        }
        let row = m.centers.row_mut(c);
        for (dst, s) in row.iter_mut().zip(&sums[c * d..(c + 1) * d]) {
            *dst = s / counts[c] as f64;
        }
    }
    m.refresh_stats(e);
}

fn assign_and_balance(
    e: &EmbeddingMatrix,
    m: &ClusterModel,
    cons: &Constraints,
    balance: Option<usize>,
) -> ClusterModel {
    let assigned = assign_constrained(e, m, cons);
    match balance {
        Some(c) => balance_constrained(e, &assigned, c, cons).model,
        None => assigned,
    }
}

/// Moves only the novel centers; known centers stay at their labeled means.
pub fn refine_novel_centers(e: &EmbeddingMatrix, l: &LabelInfo, m: &ClusterModel, cfg: &BsskConfig) -> ClusterModel {
    let cons = Constraints::pin_labeled(l);
    let balance = cfg.balanced.then(|| cfg.effective_cluster_size(e.n()));
    let mut model = assign_and_balance(e, m, &cons, balance);
    for round in 0..cfg.n_iter_refine {
        if round > 0 {
            model = assign_and_balance(e, &model, &cons, balance);
        }
        let novel = model.known_cluster_count..model.k();
        update_centers(e, &mut model, novel);
    }
    model
}

/// One final-stage round: constrained assignment, optional balancing, then
/// every center moves to its cluster mean.
pub fn semi_supervised_round(
    e: &EmbeddingMatrix,
    m: &ClusterModel,
    cons: &Constraints,
    balance: Option<usize>,
) -> ClusterModel {
    let mut next = assign_and_balance(e, m, cons, balance);
    let all = 0..next.k();
    update_centers(e, &mut next, all);
    next
}

/// Runs up to `n_iter` final-stage rounds, stopping once the assignment is
/// unchanged. The returned assignment is consistent with the returned
/// centers' last assignment step.
pub(crate) fn final_stage(
    e: &EmbeddingMatrix,
    m: ClusterModel,
    cons: &Constraints,
    balance: Option<usize>,
    n_iter: usize,
) -> ClusterModel {
    let mut model = m;
    for _ in 0..n_iter {
        let next = semi_supervised_round(e, &model, cons, balance);
        let done = next.assignment == model.assignment;
        model = next;
        if done {
            break;
        }
    }
    if model.assignment.len() != e.n() {
        model = assign_and_balance(e, &model, cons, balance);
    }
    model
}

/// Full balanced semi-supervised k-means.
pub fn bssk(e: &EmbeddingMatrix, l: &LabelInfo, cfg: &BsskConfig) -> Result<ClusterModel> {
    let init = init_centers(e, l, cfg)?;
    let refined = refine_novel_centers(e, l, &init, cfg);
    let cons = Constraints::pin_labeled(l);
    let balance = cfg.balanced.then(|| cfg.effective_cluster_size(e.n()));
    Ok(final_stage(e, refined, &cons, balance, cfg.n_iter_final))
}
