//! Optimal assignment, All/Known/Novel clustering accuracy and the
//! closed-form bound diagnostics.

use std::collections::BTreeMap;
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SelexError};
use crate::labels::LabelInfo;
use crate::matrix::Matrix;

/// Scalar types the assignment solver runs on.
trait Cost: Copy + PartialOrd + Add<Output = Self> + Sub<Output = Self> {
    const ZERO: Self;
    const INF: Self;
}

impl Cost for f64 {
    const ZERO: Self = 0.0;
    const INF: Self = f64::INFINITY;
}

impl Cost for i64 {
    const ZERO: Self = 0;
    const INF: Self = i64::MAX / 4;
}

/// Shortest augmenting paths with row/column potentials, O(n³).
/// `a` is square `n×n`, row-major. Returns the column chosen for each row.
fn solve<T: Cost>(n: usize, a: &[T]) -> Vec<usize> {
    // 1-based bookkeeping; index 0 is the virtual root.
    let mut u = vec![T::ZERO; n + 1];
    let mut v = vec![T::ZERO; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![T::INF; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = T::INF;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = a[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] = u[p[j]] + delta;
                    v[j] = v[j] - delta;
                } else {
                    minv[j] = minv[j] - delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of_row = vec![0; n];
    for j in 1..=n {
        col_of_row[p[j] - 1] = j - 1;
    }
    col_of_row
}

/// Pads `rows×cols` to a square with a constant above every entry.
fn pad<T: Cost>(rows: usize, cols: usize, cost: &[T], filler: T) -> (usize, Vec<T>) {
    let n = rows.max(cols);
    let mut out = vec![filler; n * n];
    for r in 0..rows {
        out[r * n..r * n + cols].copy_from_slice(&cost[r * cols..(r + 1) * cols]);
    }
    (n, out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentResult<T = f64> {
    /// Column matched to each row; `None` for rows left over by padding.
    pub mapping: Vec<Option<usize>>,
    pub total_cost: T,
}

fn finish<T: Cost>(rows: usize, cols: usize, cost: &[T], col_of_row: &[usize]) -> AssignmentResult<T> {
    let mut total = T::ZERO;
    let mapping = (0..rows)
        .map(|r| {
            let c = col_of_row[r];
            (c < cols).then(|| {
                total = total + cost[r * cols + c];
                c
            })
        })
        .collect();
    AssignmentResult { mapping, total_cost: total }
}

/// Minimum-cost matching. Rectangular inputs are padded, so
/// `min(rows, cols)` rows receive a column.
pub fn hungarian(cost: &Matrix) -> Result<AssignmentResult> {
    for (idx, v) in cost.as_slice().iter().enumerate() {
        if !v.is_finite() {
            return Err(SelexError::NonFinite { row: idx / cost.cols().max(1), col: idx % cost.cols().max(1) });
        }
    }
    let (rows, cols) = (cost.rows(), cost.cols());
    if rows == 0 || cols == 0 {
        return Ok(AssignmentResult { mapping: vec![None; rows], total_cost: 0.0 });
    }
    let filler = cost.max_abs() + 1.0 + cost.as_slice().iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b)).abs();
    let (n, square) = pad(rows, cols, cost.as_slice(), filler);
    Ok(finish(rows, cols, cost.as_slice(), &solve(n, &square)))
}

/// Integer variant, exact for tie-heavy count matrices.
pub fn hungarian_int(rows: usize, cols: usize, cost: &[i64]) -> Result<AssignmentResult<i64>> {
    if cost.len() != rows * cols {
        return Err(SelexError::DimensionMismatch(format!("{} entries for a {rows}x{cols} matrix", cost.len())));
    }
    if rows == 0 || cols == 0 {
        return Ok(AssignmentResult { mapping: vec![None; rows], total_cost: 0 });
    }
    let hi = cost.iter().copied().max().unwrap_or(0);
    let lo = cost.iter().copied().min().unwrap_or(0);
    if hi.checked_sub(lo).is_none_or(|span| span > i64::MAX / (8 * (rows.max(cols) as i64 + 1))) {
        return Err(SelexError::InvalidArgument("integer costs span too wide for exact assignment".into()));
    }
    let (n, square) = pad(rows, cols, cost, hi + 1);
    Ok(finish(rows, cols, cost, &solve(n, &square)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub acc_all: f64,
    /// `None` when the subset is empty.
    pub acc_known: Option<f64>,
    pub acc_novel: Option<f64>,
    pub correct_all: usize,
    pub total_all: usize,
    pub correct_known: usize,
    pub total_known: usize,
    pub correct_novel: usize,
    pub total_novel: usize,
}

/// One matching of predicted clusters to categories over all rows given,
/// reused to score the known and novel subsets.
pub fn cluster_accuracy(pred: &[usize], truth: &[usize], known_of: impl Fn(usize) -> bool) -> Result<AccuracyReport> {
    if pred.len() != truth.len() {
        return Err(SelexError::DimensionMismatch(format!(
            "{} predictions for {} ground-truth labels",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(SelexError::InvalidArgument("no rows to score".into()));
    }
    // dense ids for both sides
    let index = |ids: &[usize]| -> BTreeMap<usize, usize> {
        let mut m = BTreeMap::new();
        for &id in ids {
            let next = m.len();
            m.entry(id).or_insert(next);
        }
        m
    };
    let clusters = index(pred);
    let cats = index(truth);
    let (r, c) = (clusters.len(), cats.len());
    let mut counts = vec![0i64; r * c];
    for (p, t) in pred.iter().zip(truth) {
        counts[clusters[p] * c + cats[t]] -= 1;
    }
    let matching = hungarian_int(r, c, &counts)?;

    let mut report = AccuracyReport {
        acc_all: 0.0,
        acc_known: None,
        acc_novel: None,
        correct_all: 0,
        total_all: pred.len(),
        correct_known: 0,
        total_known: 0,
        correct_novel: 0,
        total_novel: 0,
    };
    for (p, t) in pred.iter().zip(truth) {
        let hit = matching.mapping[clusters[p]] == Some(cats[t]);
        let known = known_of(*t);
        report.correct_all += hit as usize;
        if known {
            report.total_known += 1;
            report.correct_known += hit as usize;
        } else {
            report.total_novel += 1;
            report.correct_novel += hit as usize;
        }
    }
    let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
    report.acc_all = report.correct_all as f64 / report.total_all as f64;
    report.acc_known = ratio(report.correct_known, report.total_known);
    report.acc_novel = ratio(report.correct_novel, report.total_novel);
    Ok(report)
}

/// Scores a full-length assignment on the unlabeled rows of `l`.
pub fn accuracy_on_unlabeled(assignment: &[usize], l: &LabelInfo) -> Result<AccuracyReport> {
    if assignment.len() != l.len() {
        return Err(SelexError::DimensionMismatch(format!(
            "assignment has {} rows, labels {}",
            assignment.len(),
            l.len()
        )));
    }
    let rows = l.unlabeled_rows();
    let pred: Vec<usize> = rows.iter().map(|&i| assignment[i]).collect();
    let truth: Vec<usize> = rows.iter().map(|&i| l.labels()[i]).collect();
    cluster_accuracy(&pred, &truth, |c| l.is_known(c))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundsInput {
    pub n: u64,
    pub k: u64,
}

impl BoundsInput {
    pub fn new(n: u64, k: u64) -> Result<Self> {
        if k < 2 || n < k {
            return Err(SelexError::InvalidArgument(format!("bounds need n >= k >= 2, got n={n}, k={k}")));
        }
        Ok(Self { n, k })
    }
}

fn s_raw(n: u64, k: u64) -> f64 {
    k as f64 * (n as f64 / k as f64).ln()
}

/// `S_K = K·ln(N/K)`.
pub fn s_bound(b: BoundsInput) -> f64 {
    s_raw(b.n, b.k)
}

/// `S_K − (2·S_{K/2} − K·ln 2)`; zero up to rounding.
pub fn k2_residual(b: BoundsInput) -> Result<f64> {
    if !b.k.is_multiple_of(2) {
        return Err(SelexError::InvalidArgument(format!("k2_residual needs an even k, got {}", b.k)));
    }
    let half = s_raw(b.n, b.k / 2);
    Ok(s_bound(b) - (2.0 * half - b.k as f64 * std::f64::consts::LN_2))
}

/// `(K(K+1)/2·ln(N/K), K·ln(N/K))`.
pub fn u_bounds(b: BoundsInput) -> (f64, f64) {
    let restricted = s_bound(b);
    ((b.k as f64 + 1.0) / 2.0 * restricted, restricted)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hungarian_examples() {
        let r = hungarian(&Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap()).unwrap();
        assert_eq!(r.total_cost, 2.0);
        assert_eq!(r.mapping, vec![Some(0), Some(1)]);

        let m = Matrix::from_rows(&[vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0]]).unwrap();
        assert_eq!(hungarian(&m).unwrap().total_cost, 5.0);

        let perm = [2, 0, 3, 1];
        let mut data = vec![1.0; 16];
        for (r, &c) in perm.iter().enumerate() {
            data[r * 4 + c] = 0.0;
        }
        let r = hungarian(&Matrix::from_vec(4, 4, data).unwrap()).unwrap();
        assert_eq!(r.total_cost, 0.0);
        assert_eq!(r.mapping, perm.iter().map(|&c| Some(c)).collect::<Vec<_>>());
    }

    #[test]
    fn hungarian_rectangular() {
        let wide = Matrix::from_rows(&[vec![5.0, 1.0, 9.0]]).unwrap();
        let r = hungarian(&wide).unwrap();
        assert_eq!((r.mapping, r.total_cost), (vec![Some(1)], 1.0));

        let tall = Matrix::from_rows(&[vec![3.0], vec![-2.0], vec![7.0]]).unwrap();
        let r = hungarian(&tall).unwrap();
        assert_eq!(r.mapping, vec![None, Some(0), None]);
        assert_eq!(r.total_cost, -2.0);
    }

    #[test]
    fn hungarian_rejects_nan() {
        let m = Matrix::from_rows(&[vec![0.0, f64::NAN]]).unwrap();
        assert!(matches!(hungarian(&m), Err(SelexError::NonFinite { row: 0, col: 1 })));
    }

    #[test]
    fn accuracy_examples() {
        let truth = [0, 0, 1, 1, 2, 2];
        let r = cluster_accuracy(&truth, &truth, |c| c < 2).unwrap();
        assert_eq!((r.acc_all, r.acc_known, r.acc_novel), (1.0, Some(1.0), Some(1.0)));

        let permuted: Vec<usize> = truth.iter().map(|&c| [7, 3, 5][c]).collect();
        assert_eq!(cluster_accuracy(&permuted, &truth, |c| c < 2).unwrap().acc_all, 1.0);

        let r = cluster_accuracy(&[0, 0, 0, 1, 2, 2], &truth, |c| c < 2).unwrap();
        assert!((r.acc_all - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(r.acc_known, Some(0.75));
        assert_eq!(r.acc_novel, Some(1.0));
    }

    #[test]
    fn empty_subset_is_absent() {
        let r = cluster_accuracy(&[1, 1, 0], &[0, 0, 1], |_| true).unwrap();
        assert_eq!(r.acc_novel, None);
        assert_eq!(r.acc_known, Some(1.0));
        assert!(cluster_accuracy(&[], &[], |_| true).is_err());
        assert!(cluster_accuracy(&[0], &[0, 1], |_| true).is_err());
    }

    #[test]
    fn more_clusters_than_categories() {
        // 3 clusters over 2 categories: the extra cluster scores nothing
        let r = cluster_accuracy(&[0, 0, 1, 2], &[0, 0, 1, 1], |c| c == 0).unwrap();
        assert_eq!(r.correct_all, 3);
        assert_eq!(r.acc_novel, Some(0.5));
    }

    #[test]
    fn bound_examples() {
        let b = BoundsInput::new(16, 4).unwrap();
        assert!((s_bound(b) - 5.545177444479562).abs() < 1e-12);
        assert!((s_bound(BoundsInput::new(16, 2).unwrap()) - 4.1588830833596715).abs() < 1e-12);
        assert_eq!(s_bound(BoundsInput::new(7, 7).unwrap()), 0.0);
        let (full, restricted) = u_bounds(b);
        assert!((full - 13.862943611198906).abs() < 1e-12);
        assert_eq!(restricted, s_bound(b));
        assert_eq!(u_bounds(BoundsInput::new(9, 9).unwrap()), (0.0, 0.0));
        let (full, restricted) = u_bounds(BoundsInput::new(100, 9).unwrap());
        assert_eq!(full / restricted, 5.0);
        for (n, k) in [(16, 4), (100, 2), (6000, 200)] {
            assert!(k2_residual(BoundsInput::new(n, k).unwrap()).unwrap().abs() < 1e-9);
        }
        assert!(k2_residual(BoundsInput::new(16, 3).unwrap()).is_err());
        assert!(BoundsInput::new(3, 4).is_err());
        assert!(BoundsInput::new(3, 1).is_err());
    }
}
