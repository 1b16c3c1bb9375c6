//! Hierarchical semi-supervised k-means.
//!
//! Level 1 is a BSSK clustering at ground-truth granularity. Each further
//! level groups the previous level's known prototypes into half as many
//! groups, does the same for novel prototypes, and reclusters every sample
//! inside the group its previous label fell into. The last level separates
//! known from novel.

use serde::{Deserialize, Serialize};

use crate::bssk::{self, BsskConfig, ClusterModel, Constraints};
use crate::error::{Result, SelexError};
use crate::labels::LabelInfo;
use crate::matrix::{EmbeddingMatrix, Matrix};
use crate::rng::RandomSource;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyLevel {
    pub label_count: usize,
    /// Ids `0..known_label_count` descend from known categories.
    pub known_label_count: usize,
    pub cluster_size: usize,
    /// Pseudo-label per sample.
    pub assignment: Vec<usize>,
    pub centers: Matrix,
    pub radii: Vec<f64>,
    /// Id at this level of every id of the level below; empty on level 1.
    pub hyperlabels: Vec<usize>,
}

impl HierarchyLevel {
    fn from_model(model: ClusterModel, cluster_size: usize, hyperlabels: Vec<usize>) -> Self {
        Self {
            label_count: model.k(),
            known_label_count: model.known_cluster_count,
            cluster_size,
            assignment: model.assignment,
            centers: model.centers,
            radii: model.radii,
            hyperlabels,
        }
    }

    pub fn novel_label_count(&self) -> usize {
        self.label_count - self.known_label_count
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hierarchy {
    /// Finest level first.
    pub levels: Vec<HierarchyLevel>,
    pub base_k: usize,
}

impl Hierarchy {
    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    /// Level `k`, counting from 1.
    pub fn level(&self, k: usize) -> Result<&HierarchyLevel> {
        k.checked_sub(1).and_then(|i| self.levels.get(i)).ok_or(SelexError::LevelOutOfRange {
            level: k,
            min: 1,
            max: self.levels.len(),
        })
    }

    pub fn sample_count(&self) -> usize {
        self.levels.first().map_or(0, |l| l.assignment.len())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HsskConfig {
    /// Lloyd iterations when grouping prototypes.
    pub prototype_iters: usize,
}

impl Default for HsskConfig {
    fn default() -> Self {
        Self { prototype_iters: 20 }
    }
}

fn halve(count: usize) -> usize {
    if count > 1 {
        count / 2
    } else {
        count
    }
}

/// Splits `protos` into `groups` groups of near-equal size: farthest-point
/// seeding, then balanced Lloyd iterations. Returns the group of each row.
fn group_prototypes(protos: &Matrix, groups: usize, iters: usize, rng: &mut RandomSource) -> Vec<usize> {
    let n = protos.rows();
    if n == 0 {
        return Vec::new();
    }
    if groups >= n {
        return (0..n).collect();
    }
    if groups <= 1 {
        return vec![0; n];
    }
    let e = EmbeddingMatrix::try_from(protos.clone()).expect("cluster centers are finite");

    let mut seeds = vec![rng.below(n)];
    let mut min_d: Vec<f64> = (0..n).map(|i| crate::matrix::sq_dist(e.row(i), e.row(seeds[0]))).collect();
    while seeds.len() < groups {
        let mut best = None::<(f64, usize)>;
        for i in (0..n).filter(|i| !seeds.contains(i)) {
            if best.is_none_or(|(d, _)| min_d[i] > d) {
                best = Some((min_d[i], i));
            }
        }
        let (_, pick) = best.expect("fewer seeds than rows");
        seeds.push(pick);
        for (i, d) in min_d.iter_mut().enumerate() {
            *d = d.min(crate::matrix::sq_dist(e.row(i), e.row(pick)));
        }
    }
    let mut init = Matrix::zeros(groups, e.d());
    for (g, &s) in seeds.iter().enumerate() {
        init.row_mut(g).copy_from_slice(e.row(s));
    }
    let model = bssk::final_stage(
        &e,
        ClusterModel::from_centers(init, 0),
        &Constraints::none(),
        Some(n / groups),
        iters.max(1),
    );
    model.assignment
}

pub fn build_hierarchy(e: &EmbeddingMatrix, l: &LabelInfo, cfg: &BsskConfig) -> Result<Hierarchy> {
    build_hierarchy_with(e, l, cfg, &HsskConfig::default())
}

pub fn build_hierarchy_with(
    e: &EmbeddingMatrix,
    l: &LabelInfo,
    cfg: &BsskConfig,
    hcfg: &HsskConfig,
) -> Result<Hierarchy> {
    if cfg.k < 2 {
        return Err(SelexError::InvalidArgument(format!("hierarchy needs k >= 2, got {}", cfg.k)));
    }
    if cfg.k == l.known_count() {
        log::warn!("build_hierarchy: no novel categories; hierarchy covers known prototypes only");
    }
    let base_c = cfg.effective_cluster_size(e.n());
    let level1_cfg = BsskConfig { cluster_size: Some(base_c), ..cfg.clone() };
    let first = bssk::bssk(e, l, &level1_cfg)?;
    let mut levels = vec![HierarchyLevel::from_model(first, base_c, Vec::new())];

    let mut rng = RandomSource::new(cfg.seed ^ 0x6873_736b);
    loop {
        let prev = levels.last().expect("at least one level");
        let (known, novel) = (prev.known_label_count, prev.novel_label_count());
        if known <= 1 && novel <= 1 {
            break;
        }
        let (gk, gn) = (halve(known), halve(novel));

        let side = |range: std::ops::Range<usize>| {
            let mut m = Matrix::zeros(range.len(), prev.centers.cols());
            for (dst, src) in range.enumerate() {
                m.row_mut(dst).copy_from_slice(prev.centers.row(src));
            }
            m
        };
        let mut hyperlabels = group_prototypes(&side(0..known), gk, hcfg.prototype_iters, &mut rng);
        hyperlabels.extend(
            group_prototypes(&side(known..known + novel), gn, hcfg.prototype_iters, &mut rng)
                .into_iter()
                .map(|g| g + gk),
        );

        let groups = gk + gn;
        let row_group: Vec<usize> = prev.assignment.iter().map(|&c| hyperlabels[c]).collect();
        let centers = group_means(e, &row_group, &hyperlabels, &prev.centers, groups);
        let cluster_size = if cfg.balanced { prev.cluster_size * 2 } else { prev.cluster_size };

        // Each sample has a single admissible cluster here, so balancing
        // cannot move anyone and is skipped.
        let model = bssk::final_stage(
            e,
            ClusterModel::from_centers(centers, gk),
            &Constraints::grouped(row_group, (0..groups).collect()),
            None,
            cfg.n_iter_final.max(1),
        );
        levels.push(HierarchyLevel::from_model(model, cluster_size, hyperlabels));
    }

    Ok(Hierarchy { levels, base_k: cfg.k })
}

/// Mean of the samples in each group; a group with no samples falls back to
/// the mean of its prototypes.
fn group_means(
    e: &EmbeddingMatrix,
    row_group: &[usize],
    hyperlabels: &[usize],
    protos: &Matrix,
    groups: usize,
) -> Matrix {
    let d = e.d();
    let mut sums = Matrix::zeros(groups, d);
    let mut counts = vec![0usize; groups];
    for (i, &g) in row_group.iter().enumerate() {
        counts[g] += 1;
        for (s, v) in sums.row_mut(g).iter_mut().zip(e.row(i)) {
            *s += v;
        }
    }
    for (p, &g) in hyperlabels.iter().enumerate() {
        if counts[g] == 0 {
            let proto_count = hyperlabels.iter().filter(|&&h| h == g).count() as f64;
            for (s, v) in sums.row_mut(g).iter_mut().zip(protos.row(p)) {
                *s += v / proto_count;
            }
        }
    }
    for g in 0..groups {
        if counts[g] > 0 {
            sums.row_mut(g).iter_mut().for_each(|s| *s /= counts[g] as f64);
        }
    }
    sums
}

/// Pseudo-label count per level, finest first.
pub fn level_counts(h: &Hierarchy) -> Vec<usize> {
    h.levels.iter().map(|l| l.label_count).collect()
}

/// Maps level-`level` ids to level-`level + 1` ids (levels count from 1).
pub fn project_labels(h: &Hierarchy, level: usize) -> Result<Vec<usize>> {
    if level == 0 || level >= h.levels.len() {
        return Err(SelexError::LevelOutOfRange { level, min: 1, max: h.levels.len().saturating_sub(1) });
    }
    Ok(h.levels[level].hyperlabels.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Well separated 2-D blobs, one per category, `per` samples each.
    fn blobs(k: usize, per: usize, known: usize, seed: u64) -> (EmbeddingMatrix, LabelInfo) {
        let mut rng = RandomSource::new(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for c in 0..k {
            let (cx, cy) = ((c % 16) as f64 * 20.0, (c / 16) as f64 * 20.0);
            for _ in 0..per {
                rows.push(vec![cx + rng.standard_normal(), cy + rng.standard_normal()]);
                labels.push(c);
            }
        }
        let mask: Vec<bool> = (0..k * per).map(|i| labels[i] < known && i % per < per / 2).collect();
        let l = LabelInfo::new(labels, mask, (0..known).collect(), k).unwrap();
        (EmbeddingMatrix::from_rows(&rows).unwrap(), l)
    }

    #[test]
    fn halving_rule() {
        let mut seq = vec![(100usize, 100usize)];
        while seq.last().unwrap().0 > 1 || seq.last().unwrap().1 > 1 {
            let (a, b) = *seq.last().unwrap();
            seq.push((halve(a), halve(b)));
        }
        let counts: Vec<usize> = seq.iter().map(|(a, b)| a + b).collect();
        assert_eq!(counts, vec![200, 100, 50, 24, 12, 6, 2]);
    }

    #[test]
    fn k8_counts_and_projection() {
        let (e, l) = blobs(8, 6, 4, 1);
        let h = build_hierarchy(&e, &l, &BsskConfig::new(8).with_seed(2)).unwrap();
        assert_eq!(level_counts(&h), vec![8, 4, 2]);
        assert_eq!(h.levels.iter().map(|v| v.cluster_size).collect::<Vec<_>>(), vec![6, 12, 24]);
        let p2 = project_labels(&h, 2).unwrap();
        assert_eq!(p2, vec![0, 0, 1, 1]);
        let p1 = project_labels(&h, 1).unwrap();
        assert!(p1[..4].iter().all(|&g| g < 2));
        assert!(p1[4..].iter().all(|&g| g >= 2));
        assert!(project_labels(&h, 3).is_err());
        assert!(project_labels(&h, 0).is_err());
    }

    #[test]
    fn k2_single_level() {
        let (e, l) = blobs(2, 5, 1, 3);
        let h = build_hierarchy(&e, &l, &BsskConfig::new(2)).unwrap();
        assert_eq!(level_counts(&h), vec![2]);
        assert!(project_labels(&h, 1).is_err());
    }

    #[test]
    fn rejects_k_below_two() {
        let (e, l) = blobs(1, 4, 1, 3);
        assert!(build_hierarchy(&e, &l, &BsskConfig::new(1)).is_err());
    }

    #[test]
    fn no_novel_categories() {
        let (e, l) = blobs(4, 4, 4, 5);
        let h = build_hierarchy(&e, &l, &BsskConfig::new(4)).unwrap();
        assert_eq!(level_counts(&h), vec![4, 2, 1]);
    }

    #[test]
    fn tree_consistency_and_side_separation() {
        for (k, known) in [(8, 4), (12, 5), (6, 1), (10, 7)] {
            let (e, l) = blobs(k, 4, known, k as u64);
            let h = build_hierarchy(&e, &l, &BsskConfig::new(k).with_seed(9)).unwrap();
            for lvl in 1..h.num_levels() {
                let map = project_labels(&h, lvl).unwrap();
                let lo = h.level(lvl).unwrap();
                let hi = h.level(lvl + 1).unwrap();
                assert_eq!(map.len(), lo.label_count);
                for (i, &c) in lo.assignment.iter().enumerate() {
                    assert_eq!(hi.assignment[i], map[c]);
                }
                for (c, &g) in map.iter().enumerate() {
                    assert_eq!(c < lo.known_label_count, g < hi.known_label_count);
                }
                assert_eq!(hi.label_count, halve(lo.known_label_count) + halve(lo.novel_label_count()));
            }
            let top = h.levels.last().unwrap();
            assert_eq!(top.label_count, 2, "k={k} known={known}");
        }
    }

    #[test]
    fn composed_projection_reproduces_top_level() {
        let (e, l) = blobs(16, 3, 8, 4);
        let h = build_hierarchy(&e, &l, &BsskConfig::new(16).with_seed(1)).unwrap();
        let top = h.levels.last().unwrap();
        for i in 0..e.n() {
            let mut id = h.levels[0].assignment[i];
            for lvl in 1..h.num_levels() {
                id = project_labels(&h, lvl).unwrap()[id];
            }
            assert_eq!(id, top.assignment[i]);
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let (e, l) = blobs(8, 5, 4, 7);
        let cfg = BsskConfig::new(8).with_seed(13);
        assert_eq!(build_hierarchy(&e, &l, &cfg).unwrap(), build_hierarchy(&e, &l, &cfg).unwrap());
    }
}
