//! Generated records: token-level parsing of `name: value` lines and
//! batch generation through the engine.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::schema::AttributeSchema;
use crate::backend::DistributionProvider;
use crate::engine::{generate, GenerationSession};
use crate::error::{Error, Result};
use crate::sampler::SamplerConfig;
use crate::vocab::{TokenId, Tokenizer};

/// Output token range of one attribute line: the key token and the value
/// tokens `start..end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ValueSpan {
    pub key: usize,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Parsed,
    /// A value flagged `exclude_zero` is exactly zero.
    ExcludedZero,
    Malformed,
}

/// A candidate record found in a session's output. `values` and `spans`
/// are in schema order and complete unless the record is malformed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecordCandidate {
    pub status: RecordStatus,
    pub values: Vec<String>,
    pub spans: Vec<ValueSpan>,
}

struct Line {
    key: usize,
    tokens: Vec<TokenId>,
    end: usize,
    terminated: bool,
}

/// Splits `output` into lines and groups them into records. A record starts
/// at each line keyed by the first attribute; lines before the first such
/// line and empty lines are ignored.
pub fn parse_records(
    output: &[TokenId],
    schema: &AttributeSchema,
    provider: &dyn DistributionProvider,
    tokenizer: Tokenizer,
) -> Vec<RecordCandidate> {
    let vocab = provider.vocabulary();
    let eos = vocab.eos();
    let newline = vocab.id("\n");
    let mut lines = Vec::new();
    let mut start = 0;
    for (i, &t) in output.iter().enumerate() {
        if Some(t) == newline || t == eos {
            lines.push(Line {
                key: start,
                tokens: output[start..i].to_vec(),
                end: i,
                terminated: true,
            });
            start = i + 1;
            if t == eos {
                break;
            }
        }
    }
    if start < output.len() && output.last() != Some(&eos) {
        lines.push(Line {
            key: start,
            tokens: output[start..].to_vec(),
            end: output.len(),
            terminated: false,
        });
    }

    let first_key = schema.attributes[0].key();
    let mut groups: Vec<Vec<Line>> = Vec::new();
    for line in lines {
        let Some(&key) = line.tokens.first() else {
            continue;
        };
        if vocab.token(key) == Some(first_key.as_str()) {
            groups.push(vec![line]);
        } else if let Some(g) = groups.last_mut() {
            g.push(line);
        }
    }
    groups
        .into_iter()
        .map(|g| parse_group(&g, schema, provider, tokenizer))
        .collect()
}

fn parse_group(
    lines: &[Line],
    schema: &AttributeSchema,
    provider: &dyn DistributionProvider,
    tokenizer: Tokenizer,
) -> RecordCandidate {
    let vocab = provider.vocabulary();
    let mut values = Vec::new();
    let mut spans = Vec::new();
    let mut ok = lines.len() == schema.attributes.len();
    for (line, attr) in lines.iter().zip(&schema.attributes) {
        let key_ok = vocab.token(line.tokens[0]) == Some(attr.key().as_str());
        let value = tokenizer.render(&line.tokens[1..], vocab);
        if !key_ok || !line.terminated || !attr.accepts(&value) {
            ok = false;
            break;
        }
        values.push(value);
        spans.push(ValueSpan {
            key: line.key,
            start: line.key + 1,
            end: line.end,
        });
    }
    let status = if !ok {
        RecordStatus::Malformed
    } else if schema
        .attributes
        .iter()
        .zip(&values)
        .any(|(a, v)| a.exclude_zero && a.is_zero(v))
    {
        RecordStatus::ExcludedZero
    } else {
        RecordStatus::Parsed
    };
    RecordCandidate { status, values, spans }
}

/// A parsed record and where it came from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParsedRecord {
    pub id: String,
    pub session: usize,
    /// Position among the session's record candidates.
    pub index: usize,
    pub values: Vec<String>,
    pub spans: Vec<ValueSpan>,
}

#[derive(Debug, Clone)]
pub struct GenerationConfig {
    pub sampler: SamplerConfig,
    pub max_steps: u32,
    /// Number of generation requests; each may yield several records.
    pub sessions: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct RecordSet {
    pub sessions: Vec<GenerationSession>,
    pub records: Vec<ParsedRecord>,
    /// Record candidates found, whatever their status.
    pub generated: usize,
    pub excluded_zero: usize,
    pub malformed: usize,
}

pub(crate) fn session_seed(seed: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng.random()
}

/// Runs `cfg.sessions` generations of the schema prompt and parses their
/// outputs. Malformed and zero-valued records are counted and dropped; the
/// sessions are all kept.
pub fn generate_records(
    provider: &dyn DistributionProvider,
    tokenizer: Tokenizer,
    schema: &AttributeSchema,
    cfg: &GenerationConfig,
) -> Result<RecordSet> {
    schema.validate()?;
    let prompt = tokenizer.encode(&schema.prompt, provider.vocabulary())?;
    let sessions = (0..cfg.sessions)
        .into_par_iter()
        .map(|i| generate(provider, &prompt, cfg.sampler, session_seed(cfg.seed, i), cfg.max_steps))
        .collect::<Result<Vec<_>>>()?;
    let mut set = RecordSet {
        sessions: Vec::new(),
        records: Vec::new(),
        generated: 0,
        excluded_zero: 0,
        malformed: 0,
    };
    for (s, session) in sessions.iter().enumerate() {
        for (index, c) in parse_records(session.output.as_slice(), schema, provider, tokenizer)
            .into_iter()
            .enumerate()
        {
            set.generated += 1;
            match c.status {
                RecordStatus::Parsed => set.records.push(ParsedRecord {
                    id: format!("{s:05}-{index:03}"),
                    session: s,
                    index,
                    values: c.values,
                    spans: c.spans,
                }),
                RecordStatus::ExcludedZero => set.excluded_zero += 1,
                RecordStatus::Malformed => set.malformed += 1,
            }
        }
    }
    set.sessions = sessions;
    if set.records.is_empty() {
        return Err(Error::domain(format!(
            "no parseable records among {} candidates ({} malformed, {} zero-valued)",
            set.generated, set.malformed, set.excluded_zero
        )));
    }
    Ok(set)
}
