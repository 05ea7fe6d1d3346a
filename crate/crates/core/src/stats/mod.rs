//! Evaluation metrics and rater-consistency statistics.

mod concordance;
mod metrics;

pub use concordance::{
    batch_consistency, benjamini_hochberg, kendalls_w, pairwise_spearman_p, permutation_test_w,
    BatchConsistency, PairwiseSpearman, PermutationTest, RatingTable, DEFAULT_PERMUTATIONS,
};
pub use metrics::{average_ranks, lcc, mse, srcc, MetricsReport};

use crate::data::ScoreDistribution;

/// `Σ i·ŷ_i` over the 1-based score scale.
pub fn expected_score(distribution: &ScoreDistribution) -> f64 {
    distribution.expected_score()
}
