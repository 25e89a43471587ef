//! Similarity of counterfactual and interventional regenerations to the
//! factual output after single-token replacements.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::edit::normalized_edit_distance;
use crate::backend::DistributionProvider;
use crate::distribution::{apply_temperature, restrict_top_p, TokenDistribution};
use crate::engine::{generate, regenerate, GenerationSession, Intervention, NoiseIndexing, RegenerationMode};
use crate::error::{Error, Result};
use crate::noise::{gumbel_vector, NoiseProvenance};
use crate::sampler::{gumbel_max_sample, SamplerConfig, SamplerKind};
use crate::vocab::TokenId;

/// Draws a replacement for `factual` from `d` with the factual token removed,
/// renormalized and cut to its top 0.9 mass.
pub fn sample_replacement_token(d: &TokenDistribution, factual: TokenId, seed: u64) -> Result<TokenId> {
    sample_replacement_with(d, factual, 0.9, seed)
}

fn sample_replacement_with(d: &TokenDistribution, factual: TokenId, p: f64, seed: u64) -> Result<TokenId> {
    if d.support().all(|t| t == factual) {
        return Err(Error::domain(format!(
            "no token other than {factual} has positive probability"
        )));
    }
    let rest = restrict_top_p(&d.without(&[factual])?, p)?;
    gumbel_max_sample(&rest, &gumbel_vector(NoiseProvenance::new(seed), 1, rest.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Half {
    First,
    Second,
}

impl Half {
    pub fn as_str(self) -> &'static str {
        match self {
            Half::First => "first",
            Half::Second => "second",
        }
    }
}

impl fmt::Display for Half {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Counterfactual,
    Interventional,
}

impl Mode {
    pub const ALL: [Mode; 2] = [Mode::Counterfactual, Mode::Interventional];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Counterfactual => "counterfactual",
            Mode::Interventional => "interventional",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct SimilarityConfig {
    pub samplers: Vec<SamplerConfig>,
    pub max_steps: u32,
    pub base_seed: u64,
    /// Top-p mass used when drawing replacement tokens.
    pub replacement_p: f64,
}

impl SimilarityConfig {
    pub fn new(samplers: Vec<SamplerConfig>, max_steps: u32, base_seed: u64) -> Self {
        Self {
            samplers,
            max_steps,
            base_seed,
            replacement_p: 0.9,
        }
    }
}

/// One regeneration compared with its factual output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub session_id: String,
    pub half: Half,
    pub mode: Mode,
    pub kind: SamplerKind,
    pub tau: f64,
    pub k: Option<usize>,
    pub p: Option<f64>,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub kind: SamplerKind,
    pub tau: f64,
    pub k: Option<usize>,
    pub p: Option<f64>,
    pub mode: Mode,
    /// `first`, `second`, or `all`.
    pub half: String,
    pub n: usize,
    pub mean: f64,
    /// Half-width of the normal-approximation 95% interval.
    pub ci95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentResult {
    pub rows: Vec<ExperimentRow>,
    pub aggregates: Vec<AggregateRow>,
    /// Factual sessions generated, skipped ones included.
    pub sessions: usize,
    /// Sessions with fewer than two output tokens.
    pub skipped: usize,
}

impl ExperimentResult {
    pub fn aggregate(&self, sampler: &SamplerConfig, mode: Mode, half: &str) -> Option<&AggregateRow> {
        self.aggregates.iter().find(|a| {
            a.kind == sampler.kind && a.tau == sampler.tau && a.k == sampler.k && a.p == sampler.p && a.mode == mode && a.half == half
        })
    }
}

/// Mean and 95% normal-approximation half-width (1.96 standard errors,
/// sample standard deviation). The half-width is 0 for fewer than 2 values.
pub fn mean_ci95(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, 1.96 * (var / n as f64).sqrt())
}

fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(stream);
    rng.random()
}

fn sampler_label(s: &SamplerConfig) -> String {
    let mut label = format!("{}-t{}", s.kind, s.tau);
    if let Some(k) = s.k {
        label.push_str(&format!("-k{k}"));
    }
    if let Some(p) = s.p {
        label.push_str(&format!("-p{p}"));
    }
    label
}

/// Output length without a trailing end-of-sequence token.
fn content_len(session: &GenerationSession, eos: TokenId) -> usize {
    let out = session.output.as_slice();
    out.len() - usize::from(out.last() == Some(&eos))
}

struct Cell {
    rows: Vec<ExperimentRow>,
    skipped: bool,
}

fn run_cell(
    provider: &dyn DistributionProvider,
    prompt: &[TokenId],
    prompt_index: usize,
    sampler: &SamplerConfig,
    cfg: &SimilarityConfig,
) -> Result<Cell> {
    let vocab = provider.vocabulary();
    // the factual seed depends on the prompt only: every sampler sees the same noise
    let factual_seed = derive_seed(cfg.base_seed, prompt_index as u64);
    let session = generate(provider, prompt, *sampler, factual_seed, cfg.max_steps)?;
    let m = content_len(&session, vocab.eos());
    if m < 2 {
        return Ok(Cell {
            rows: Vec::new(),
            skipped: true,
        });
    }
    let session_id = format!("{prompt_index:04}-{}", sampler_label(sampler));
    let mut rng = ChaCha8Rng::seed_from_u64(factual_seed);
    rng.set_stream(1);
    let mut rows = Vec::with_capacity(4);
    for (h, half) in [Half::First, Half::Second].into_iter().enumerate() {
        // 1-based output positions
        let position = match half {
            Half::First => rng.random_range(1..=m / 2),
            Half::Second => rng.random_range(m / 2 + 1..=m),
        };
        let idx = position - 1;
        let factual_token = session.output.as_slice()[idx];
        let mut context = session.prompt.as_slice().to_vec();
        context.extend_from_slice(&session.output.as_slice()[..idx]);
        let d = apply_temperature(&provider.next_logits(&context)?, sampler.tau)?;
        let replacement_seed = derive_seed(factual_seed, 2 + h as u64);
        let replacement = match sample_replacement_with(&d, factual_token, cfg.replacement_p, replacement_seed) {
            Ok(t) => t,
            // degenerate model: any other token will do
            Err(Error::Domain(_)) => {
                let others: Vec<TokenId> = (0..vocab.len()).filter(|&t| t != factual_token).collect();
                if others.is_empty() {
                    return Err(Error::domain("vocabulary has a single token"));
                }
                others[rng.random_range(0..others.len())]
            }
            Err(e) => return Err(e),
        };
        let iv = Intervention::replace_token(&session, position as u32, replacement)?;
        let factual_tail = &session.output.as_slice()[position..];
        for mode in Mode::ALL {
            let regen_mode = match mode {
                Mode::Counterfactual => RegenerationMode::Counterfactual,
                Mode::Interventional => RegenerationMode::Interventional {
                    fresh_seed: derive_seed(factual_seed, 4 + h as u64),
                },
            };
            let regen = regenerate(provider, &session, &iv, regen_mode, NoiseIndexing::FactualStep)?;
            rows.push(ExperimentRow {
                session_id: session_id.clone(),
                half,
                mode,
                kind: sampler.kind,
                tau: sampler.tau,
                k: sampler.k,
                p: sampler.p,
                distance: normalized_edit_distance(factual_tail, &regen.continuation),
            });
        }
    }
    Ok(Cell { rows, skipped: false })
}

/// Generates one factual session per prompt and sampler, intervenes once in
/// each half of the output, and compares counterfactual and interventional
/// regenerations with the factual tokens after the replaced one.
///
/// Results are deterministic given the provider, prompts and config.
pub fn run_similarity_experiment(
    provider: &dyn DistributionProvider,
    prompts: &[Vec<TokenId>],
    cfg: &SimilarityConfig,
) -> Result<ExperimentResult> {
    if prompts.len() < 2 {
        return Err(Error::domain("the experiment needs at least two prompts"));
    }
    if cfg.samplers.is_empty() {
        return Err(Error::domain("the experiment needs at least one sampler"));
    }
    for s in &cfg.samplers {
        s.validate()?;
    }
    if !(cfg.replacement_p > 0.0 && cfg.replacement_p <= 1.0) {
        return Err(Error::domain(format!(
            "replacement_p must lie in (0, 1], got {}",
            cfg.replacement_p
        )));
    }
    let cells: Vec<(usize, usize)> = (0..cfg.samplers.len())
        .flat_map(|s| (0..prompts.len()).map(move |p| (s, p)))
        .collect();
    let results = cells
        .par_iter()
        .map(|&(s, p)| run_cell(provider, &prompts[p], p, &cfg.samplers[s], cfg))
        .collect::<Result<Vec<Cell>>>()?;
    let skipped = results.iter().filter(|c| c.skipped).count();
    let rows: Vec<ExperimentRow> = results.into_iter().flat_map(|c| c.rows).collect();
    let aggregates = aggregate(&cfg.samplers, &rows);
    Ok(ExperimentResult {
        rows,
        aggregates,
        sessions: cells.len(),
        skipped,
    })
}

fn aggregate(samplers: &[SamplerConfig], rows: &[ExperimentRow]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<(usize, Mode, u8), Vec<f64>> = BTreeMap::new();
    for row in rows {
        let s = samplers
            .iter()
            .position(|s| s.kind == row.kind && s.tau == row.tau && s.k == row.k && s.p == row.p)
            .expect("row from a configured sampler");
        let h = match row.half {
            Half::First => 0,
            Half::Second => 1,
        };
        groups.entry((s, row.mode, h)).or_default().push(row.distance);
        groups.entry((s, row.mode, 2)).or_default().push(row.distance);
    }
    groups
        .into_iter()
        .map(|((s, mode, h), values)| {
            let (mean, ci95) = mean_ci95(&values);
            let sampler = &samplers[s];
            AggregateRow {
                kind: sampler.kind,
                tau: sampler.tau,
                k: sampler.k,
                p: sampler.p,
                mode,
                half: ["first", "second", "all"][h as usize].to_string(),
                n: values.len(),
                mean,
                ci95,
            }
        })
        .collect()
}

/// Writes rows as CSV with header
/// `session_id,half,mode,kind,tau,k,p,distance`; unset k and p are empty.
pub fn write_rows_csv(rows: &[ExperimentRow], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for row in rows {
        out.serialize(row)?;
    }
    if rows.is_empty() {
        out.write_record(["session_id", "half", "mode", "kind", "tau", "k", "p", "distance"])?;
    }
    out.flush()?;
    Ok(())
}

/// Writes aggregates as CSV with header `kind,tau,k,p,mode,half,n,mean,ci95`.
pub fn write_aggregates_csv(rows: &[AggregateRow], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for row in rows {
        out.serialize(row)?;
    }
    if rows.is_empty() {
        out.write_record(["kind", "tau", "k", "p", "mode", "half", "n", "mean", "ci95"])?;
    }
    out.flush()?;
    Ok(())
}
