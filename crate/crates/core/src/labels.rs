use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SelexError};

/// Ground-truth labels together with which rows are labeled and which
/// categories are known.
///
/// Every labeled row belongs to a known category. Known categories are the
/// ones that own clusters `0..known_count()` in sorted id order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelInfo {
    labels: Vec<usize>,
    labeled_mask: Vec<bool>,
    known_categories: BTreeSet<usize>,
    k_total: usize,
}

impl LabelInfo {
    pub fn new(
        labels: Vec<usize>,
        labeled_mask: Vec<bool>,
        known_categories: BTreeSet<usize>,
        k_total: usize,
    ) -> Result<Self> {
        if labels.len() != labeled_mask.len() {
            return Err(SelexError::DimensionMismatch(format!(
                "{} labels but {} mask entries",
                labels.len(),
                labeled_mask.len()
            )));
        }
        if known_categories.is_empty() {
            return Err(SelexError::InvalidArgument("at least one known category is required".into()));
        }
        if let Some(&bad) = known_categories.iter().find(|&&c| c >= k_total) {
            return Err(SelexError::InvalidArgument(format!("known category {bad} outside 0..{k_total}")));
        }
        for (i, (&y, &lab)) in labels.iter().zip(&labeled_mask).enumerate() {
            if y >= k_total {
                return Err(SelexError::InvalidArgument(format!("row {i} has label {y} outside 0..{k_total}")));
            }
            if lab && !known_categories.contains(&y) {
                return Err(SelexError::InvalidArgument(format!(
                    "row {i} is labeled but its category {y} is not known"
                )));
            }
        }
        Ok(Self { labels, labeled_mask, known_categories, k_total })
    }

    /// All rows unlabeled, every category treated as known. The usual input to
    /// a train/test split.
    pub fn fully_known(labels: Vec<usize>, k_total: usize) -> Result<Self> {
        let n = labels.len();
        Self::new(labels, vec![false; n], (0..k_total).collect(), k_total)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn labeled_mask(&self) -> &[bool] {
        &self.labeled_mask
    }

    pub fn is_labeled(&self, row: usize) -> bool {
        self.labeled_mask[row]
    }

    pub fn known_categories(&self) -> &BTreeSet<usize> {
        &self.known_categories
    }

    pub fn is_known(&self, category: usize) -> bool {
        self.known_categories.contains(&category)
    }

    pub fn known_count(&self) -> usize {
        self.known_categories.len()
    }

    pub fn k_total(&self) -> usize {
        self.k_total
    }

    pub fn labeled_count(&self) -> usize {
        self.labeled_mask.iter().filter(|&&b| b).count()
    }

    pub fn unlabeled_rows(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.labeled_mask[i]).collect()
    }

    /// Cluster index owned by a known category, or `None` for novel ones.
    pub fn known_cluster_of(&self, category: usize) -> Option<usize> {
        if self.known_categories.contains(&category) {
            Some(self.known_categories.range(..category).count())
        } else {
            None
        }
    }

    /// Checks that every category id in `0..k_total` has at least one row.
    pub fn check_covers_all_categories(&self) -> Result<()> {
        let mut seen = vec![false; self.k_total];
        for &y in &self.labels {
            seen[y] = true;
        }
        match seen.iter().position(|s| !s) {
            Some(c) => Err(SelexError::EmptyCategory(c)),
            None => Ok(()),
        }
    }
}
