//! Retrieval metrics over influence rankings, thresholding analyses and the
//! component-sensitivity harness.

mod retrieval;
mod sensitivity;
mod table;
mod threshold;

pub use retrieval::{
    is_hit, macro_average, micro_average, precision_at_topx, precision_of_ids, top_k, PatternPrecision, PatternSummary,
    ProbePrecision, RetrievalConfig, RetrievalReport,
};
pub use sensitivity::{
    perturb, random_pairing_stats, sensitivity_matrix, PairScorer, PairingMode, Perturbation, SensitivityMatrix,
    SensitivityRow,
};
pub use table::{aligned, cell};
pub use threshold::{
    largest_gap_cut, max_influence_stats, mean_std, oriented_scores, positive_gap_cut, ranking_curve, RankingCurve,
    ThresholdStats,
};
