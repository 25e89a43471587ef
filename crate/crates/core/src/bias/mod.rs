//! Counterfactual bias measurements on generated structured records.
//!
//! A model is prompted to emit records of `name: value` lines following an
//! [`AttributeSchema`]. For each parsed record, a sensitive attribute is set
//! to another value and the rest of the output is regenerated with the
//! factual noise. The total effect keeps only the attributes before the
//! intervened one; the direct effect also keeps every attribute before the
//! outcome.

mod education;
mod effects;
mod planted;
mod records;
mod schema;
mod summary;

pub use education::education_to_numeric;
pub use effects::{write_effects_csv, EffectContext, EffectKind, EffectRecord};
pub use planted::{
    desk_schema, education_weights, income_weights, occupation_weights, planted_corpus, planted_model, AGES,
    DESK_SCHEMA, EDUCATIONS, OCCUPATIONS, PLANTED_ALPHA, PLANTED_ORDER, RACES, RECORDS_PER_DOC, SEXES,
};
pub use records::{
    generate_records, parse_records, GenerationConfig, ParsedRecord, RecordCandidate, RecordSet, RecordStatus,
    ValueSpan,
};
pub use schema::{Attribute, AttributeKind, AttributeSchema, DirectPair, Scale};
pub use summary::{mean_and_se, median, summarize_effects, write_summary_csv, EffectGroup, EffectSummary};
