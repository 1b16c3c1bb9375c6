//! Hierarchical balanced semi-supervised clustering and self-expertise
//! losses for generalized category discovery on embedding matrices.
//!
//! The pipeline is:
//!
//! 1. [`bssk`] clusters an embedding matrix with known-category seeds and
//!    equal-size balancing by stable matching.
//! 2. [`hssk`] repeatedly halves known and novel prototypes to build a
//!    pseudo-label hierarchy ending at a seen/unseen split.
//! 3. [`targets`] turns the hierarchy into soft negative targets and
//!    per-level positive masks.
//! 4. [`loss`] evaluates the self-expertise objective and its gradient with
//!    respect to the embeddings.
//! 5. [`train`] alternates the above on synthetic data; [`eval`] scores the
//!    result with Hungarian-matched accuracy.

pub mod bssk;
pub mod error;
pub mod eval;
pub mod hssk;
pub mod labels;
pub mod loss;
pub mod matrix;
pub mod rng;
pub mod targets;
pub mod train;

pub use error::{Result, SelexError};
pub use labels::LabelInfo;
pub use matrix::{normalize_rows, pairwise_sq_dist, slice_dims, EmbeddingMatrix, Matrix};
pub use rng::RandomSource;
