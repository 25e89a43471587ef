//! Synthetic census corpus with known conditional tables.
//!
//! Records follow the desk schema (age, sex, race, occupation, income,
//! education). Occupation depends on sex, income on occupation (and, in the
//! `direct_edge` variant, on sex as well), education on race. Every table
//! has integer weights summing to 10 and the corpus is the full cross product
//! of all table slots, shuffled, so the empirical conditionals of the corpus
//! equal the planted tables exactly.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::schema::AttributeSchema;
use crate::backend::{CorpusSplit, NGramModel};
use crate::error::Result;
use crate::vocab::Tokenizer;

pub const DESK_SCHEMA: &str = include_str!("../../data/desk_schema.toml");

pub const AGES: [&str; 2] = ["30", "50"];
pub const SEXES: [&str; 2] = ["male", "female"];
pub const RACES: [&str; 3] = ["Asian American", "African American", "White"];
pub const OCCUPATIONS: [&str; 4] = ["engineer", "nurse", "teacher", "clerk"];
pub const EDUCATIONS: [&str; 4] = ["High school diploma", "Bachelor's degree", "Master's degree", "PhD"];

/// Order and smoothing of the word model trained on the planted corpus. The
/// order is large enough for the income context to reach back to sex.
pub const PLANTED_ORDER: usize = 12;
pub const PLANTED_ALPHA: f64 = 0.01;
pub const RECORDS_PER_DOC: usize = 5;

pub fn desk_schema() -> AttributeSchema {
    AttributeSchema::from_toml(DESK_SCHEMA).expect("bundled schema is valid")
}

/// Weights of [`OCCUPATIONS`] given sex.
pub fn occupation_weights(sex: &str) -> [u32; 4] {
    match sex {
        "male" => [4, 1, 2, 3],
        _ => [1, 4, 3, 2],
    }
}

/// (income, weight) pairs given occupation and sex.
pub fn income_weights(occupation: &str, sex: &str, direct_edge: bool) -> [(u32, u32); 3] {
    let levels = match occupation {
        "engineer" => [90_000, 110_000, 130_000],
        "nurse" => [50_000, 70_000, 90_000],
        "teacher" => [40_000, 50_000, 70_000],
        _ => [0, 30_000, 40_000],
    };
    let w = match (occupation, direct_edge, sex) {
        ("clerk", false, _) => [1, 5, 4],
        ("clerk", true, "male") => [1, 3, 6],
        ("clerk", true, _) => [1, 7, 2],
        (_, false, _) => [4, 4, 2],
        (_, true, "male") => [2, 4, 4],
        (_, true, _) => [6, 3, 1],
    };
    [(levels[0], w[0]), (levels[1], w[1]), (levels[2], w[2])]
}

/// Weights of [`EDUCATIONS`] given race.
pub fn education_weights(race: &str) -> [u32; 4] {
    match race {
        "Asian American" => [1, 3, 3, 3],
        "African American" => [3, 4, 2, 1],
        _ => [2, 4, 3, 1],
    }
}

fn slots<T: Copy>(weighted: impl IntoIterator<Item = (T, u32)>) -> Vec<T> {
    weighted
        .into_iter()
        .flat_map(|(v, w)| std::iter::repeat_n(v, w as usize))
        .collect()
}

/// The corpus text: paragraphs of `census:` followed by
/// [`RECORDS_PER_DOC`] records, separated by blank lines.
pub fn planted_corpus(direct_edge: bool, seed: u64) -> String {
    let schema = desk_schema();
    let mut records = Vec::new();
    for age in AGES {
        for sex in SEXES {
            for race in RACES {
                for occ in slots(OCCUPATIONS.into_iter().zip(occupation_weights(sex))) {
                    for income in slots(income_weights(occ, sex, direct_edge)) {
                        for edu in slots(EDUCATIONS.into_iter().zip(education_weights(race))) {
                            let income = income.to_string();
                            records.push(schema.render(&[age, sex, race, occ, &income, edu]));
                        }
                    }
                }
            }
        }
    }
    records.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    records
        .chunks(RECORDS_PER_DOC)
        .map(|doc| format!("{}{}", schema.prompt, doc.concat()))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Word n-gram model of [`planted_corpus`].
pub fn planted_model(direct_edge: bool, seed: u64) -> Result<NGramModel> {
    NGramModel::train_text(
        &planted_corpus(direct_edge, seed),
        Tokenizer::Words,
        CorpusSplit::Paragraphs,
        PLANTED_ORDER,
        PLANTED_ALPHA,
    )
}
