//! Evaluation machinery: edit distances and diffs, stability and marginal
//! checks of the sampling mechanisms, and the factual-vs-regenerated
//! similarity experiment.

mod edit;
mod experiment;
mod stability;

pub use edit::{alignment_diff, levenshtein, normalized_edit_distance, positional_diff, DiffFlag};
pub use experiment::{
    mean_ci95, run_similarity_experiment, sample_replacement_token, write_aggregates_csv,
    write_rows_csv, AggregateRow, ExperimentResult, ExperimentRow, Half, Mode, SimilarityConfig,
};
pub use stability::{
    marginal_oracle, measure_stability_violations, random_distribution, violates_ratio_condition,
    MarginalReport, StabilityReport,
};
