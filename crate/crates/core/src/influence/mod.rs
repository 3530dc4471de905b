//! TracIn influence: component-restricted cosine similarity of per-example
//! gradients averaged over checkpoints, contrastive probing gradients,
//! gradient caching and subset ranking.

mod cache;
mod engine;
mod mask;
mod probe;
mod rank;
mod selector;
mod similarity;

pub use cache::{BuildStats, GradientCache, IndexEntry};
pub use engine::score_matrix;
pub use mask::{diff_mask, exact_mask};
pub use probe::{build_probe_gradient, BaseVariant, Direction, GradientSource, ProbeGradientSpec, ProbeVariant};
pub use rank::{
    parse_ranking_csv, rank_subset, select_checkpoints, sort_entries, CsvRow, InfluenceRanking, RankedExample,
};
pub use selector::ComponentSelector;
pub use similarity::{cosine_similarity, raw_dot_influence, tracin, NORM_FLOOR};
