//! Factual generation and counterfactual / interventional regeneration.
//!
//! A factual run draws step `j`'s token as `f_T(d_j, u_j)` where `d_j` comes
//! from the provider and `u_j` is regenerated from the session seed. Given an
//! intervention that replaces the sequence up to factual step `i` by some
//! prefix, the counterfactual continuation recomputes `d'_j` from the
//! modified sequence for every `j > i` and applies the mechanism with the
//! *same* `u_j`. The interventional continuation does the same with noise
//! from a fresh seed. Generation stops at the end-of-sequence token or after
//! `max_steps` steps.

use std::fs;
use std::io::BufReader;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backend::DistributionProvider;
use crate::error::{Error, Result};
use crate::noise::NoiseProvenance;
use crate::sampler::SamplerConfig;
use crate::vocab::{TokenId, TokenSequence};

pub const SESSION_FORMAT_VERSION: u32 = 1;

/// A recorded factual generation with everything needed to replay it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationSession {
    pub version: u32,
    pub model_id: String,
    pub sampler: SamplerConfig,
    pub noise: NoiseProvenance,
    pub max_steps: u32,
    pub prompt: TokenSequence,
    pub output: TokenSequence,
    /// `max_steps` ran out before the end-of-sequence token was drawn.
    pub truncated: bool,
    /// Digest of the sampling distribution of every step, in step order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fingerprints: Vec<String>,
}

impl GenerationSession {
    pub fn seed(&self) -> u64 {
        self.noise.seed
    }

    /// Prompt followed by the output.
    pub fn full_sequence(&self) -> Vec<TokenId> {
        let mut s = self.prompt.as_slice().to_vec();
        s.extend_from_slice(self.output.as_slice());
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let session: Self = serde_json::from_str(s)?;
        session.check_version()?;
        Ok(session)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let session: Self = serde_json::from_reader(BufReader::new(fs::File::open(path)?))?;
        session.check_version()?;
        Ok(session)
    }

    fn check_version(&self) -> Result<()> {
        if self.version != SESSION_FORMAT_VERSION {
            return Err(Error::format(format!(
                "unsupported session version {}",
                self.version
            )));
        }
        Ok(())
    }
}

/// `do[S_i = s̃]`: the sequence up to and including factual step `step`
/// (step 0 is the prompt alone) is replaced by `prefix`, which includes the
/// prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Intervention {
    pub step: u32,
    pub prefix: TokenSequence,
}

impl Intervention {
    pub fn new(step: u32, prefix: Vec<TokenId>) -> Self {
        Self {
            step,
            prefix: prefix.into(),
        }
    }

    /// The intervention that changes nothing: the factual sequence up to
    /// `step`.
    pub fn null(session: &GenerationSession, step: u32) -> Result<Self> {
        let step_us = step as usize;
        if step_us > session.output.len() {
            return Err(Error::domain(format!(
                "step {step} beyond factual output of length {}",
                session.output.len()
            )));
        }
        let mut prefix = session.prompt.as_slice().to_vec();
        prefix.extend_from_slice(&session.output.as_slice()[..step_us]);
        Ok(Self::new(step, prefix))
    }

    /// Replaces the output token at 1-based `position` by `token`.
    pub fn replace_token(session: &GenerationSession, position: u32, token: TokenId) -> Result<Self> {
        if position == 0 {
            return Err(Error::domain("output positions start at 1"));
        }
        Self::replace_span(session, position as usize - 1, position as usize, &[token])
    }

    /// Replaces output tokens `start..end` (0-based, end exclusive) by
    /// `replacement` and drops everything after them. The intervention is
    /// anchored at factual step `end`; an empty span inserts before `start`.
    pub fn replace_span(
        session: &GenerationSession,
        start: usize,
        end: usize,
        replacement: &[TokenId],
    ) -> Result<Self> {
        if start > end || end > session.output.len() {
            return Err(Error::domain(format!(
                "span {start}..{end} outside factual output of length {}",
                session.output.len()
            )));
        }
        let mut prefix = session.prompt.as_slice().to_vec();
        prefix.extend_from_slice(&session.output.as_slice()[..start]);
        prefix.extend_from_slice(replacement);
        Ok(Self::new(end as u32, prefix))
    }

    /// Replaces the prompt; the whole output is regenerated.
    pub fn replace_prompt(prompt: Vec<TokenId>) -> Self {
        Self::new(0, prompt)
    }

    pub fn validate(&self, session: &GenerationSession, provider: &dyn DistributionProvider) -> Result<()> {
        if self.step as usize > session.output.len() {
            return Err(Error::domain(format!(
                "intervention step {} beyond factual output of length {}",
                self.step,
                session.output.len()
            )));
        }
        self.prefix.validate(provider.vocabulary(), None)
    }
}

/// How continuation steps are numbered after an intervention that changes
/// the number of tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseIndexing {
    /// Step `j` continues from the intervention's factual step: the first
    /// regenerated token uses `u_{i+1}` whatever the length of the prefix.
    #[default]
    FactualStep,
    /// Steps are recounted from the modified prefix: the first regenerated
    /// token uses `u_{|prefix| - |prompt| + 1}`.
    PrefixLength,
}

/// Where the noise of the regenerated steps comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum RegenerationMode {
    /// Reuse the factual noise.
    Counterfactual,
    /// Draw new noise from `fresh_seed`.
    Interventional { fresh_seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regeneration {
    /// The intervened prefix `s̃`, prompt included.
    pub prefix: Vec<TokenId>,
    /// Tokens generated after the prefix.
    pub continuation: Vec<TokenId>,
    /// Noise step consumed by each continuation token.
    pub noise_steps: Vec<u32>,
    pub noise_seed: u64,
    pub truncated: bool,
}

impl Regeneration {
    pub fn sequence(&self) -> Vec<TokenId> {
        let mut s = self.prefix.clone();
        s.extend_from_slice(&self.continuation);
        s
    }

    /// The regenerated sequence without its first `prompt_len` tokens.
    pub fn output_after(&self, prompt_len: usize) -> Vec<TokenId> {
        let seq = self.sequence();
        seq.get(prompt_len..).map(<[_]>::to_vec).unwrap_or_default()
    }
}

struct Continuation {
    tokens: Vec<TokenId>,
    steps: Vec<u32>,
    truncated: bool,
}

/// Runs the augmented autoregressive process from `prefix`, consuming noise
/// steps `first_step..=last_step` of `noise`.
fn continue_from(
    provider: &dyn DistributionProvider,
    sampler: &SamplerConfig,
    prefix: &[TokenId],
    noise: NoiseProvenance,
    first_step: u32,
    last_step: u32,
    mut fingerprints: Option<&mut Vec<String>>,
) -> Result<Continuation> {
    let vocab = provider.vocabulary();
    let eos = vocab.eos();
    let mut seq = prefix.to_vec();
    let mut out = Continuation {
        tokens: Vec::new(),
        steps: Vec::new(),
        truncated: false,
    };
    if seq.last() == Some(&eos) {
        return Ok(out);
    }
    for step in first_step..=last_step {
        let logits = provider.next_logits(&seq)?;
        if logits.len() != vocab.len() {
            return Err(Error::Protocol(format!(
                "provider returned {} logits for a vocabulary of {}",
                logits.len(),
                vocab.len()
            )));
        }
        let d = sampler.sampling_distribution(&logits)?;
        if let Some(fp) = fingerprints.as_deref_mut() {
            fp.push(d.fingerprint());
        }
        let u = sampler.noise(noise, step, vocab.len());
        let t = sampler.apply(&d, &u)?;
        seq.push(t);
        out.tokens.push(t);
        out.steps.push(step);
        if t == eos {
            return Ok(out);
        }
    }
    out.truncated = true;
    Ok(out)
}

/// Factual generation of up to `max_steps` tokens after `prompt`.
pub fn generate(
    provider: &dyn DistributionProvider,
    prompt: &[TokenId],
    sampler: SamplerConfig,
    seed: u64,
    max_steps: u32,
) -> Result<GenerationSession> {
    sampler.validate()?;
    if max_steps == 0 {
        return Err(Error::domain("max_steps must be at least 1"));
    }
    let prompt = TokenSequence::new(prompt.to_vec());
    prompt.validate(provider.vocabulary(), None)?;
    if prompt.last() == Some(provider.vocabulary().eos()) {
        return Err(Error::domain("prompt must not contain the end-of-sequence token"));
    }
    let noise = NoiseProvenance::new(seed);
    let mut fingerprints = Vec::new();
    let cont = continue_from(
        provider,
        &sampler,
        prompt.as_slice(),
        noise,
        1,
        max_steps,
        Some(&mut fingerprints),
    )?;
    Ok(GenerationSession {
        version: SESSION_FORMAT_VERSION,
        model_id: provider.model_id(),
        sampler,
        noise: noise.with_steps(cont.tokens.len() as u32),
        max_steps,
        prompt,
        output: cont.tokens.into(),
        truncated: cont.truncated,
        fingerprints,
    })
}

fn check_model(provider: &dyn DistributionProvider, session: &GenerationSession) -> Result<()> {
    let id = provider.model_id();
    if id != session.model_id {
        return Err(Error::domain(format!(
            "session was generated by model {} but the provider is {id}",
            session.model_id
        )));
    }
    Ok(())
}

/// Regenerates the continuation after `iv` with the given noise mode and
/// step numbering.
pub fn regenerate(
    provider: &dyn DistributionProvider,
    session: &GenerationSession,
    iv: &Intervention,
    mode: RegenerationMode,
    indexing: NoiseIndexing,
) -> Result<Regeneration> {
    check_model(provider, session)?;
    iv.validate(session, provider)?;
    let base = match indexing {
        NoiseIndexing::FactualStep => iv.step,
        NoiseIndexing::PrefixLength => iv.prefix.len().saturating_sub(session.prompt.len()) as u32,
    };
    let noise_seed = match mode {
        RegenerationMode::Counterfactual => session.seed(),
        RegenerationMode::Interventional { fresh_seed } => fresh_seed,
    };
    let cont = continue_from(
        provider,
        &session.sampler,
        iv.prefix.as_slice(),
        NoiseProvenance::new(noise_seed),
        base + 1,
        session.max_steps,
        None,
    )?;
    Ok(Regeneration {
        prefix: iv.prefix.as_slice().to_vec(),
        continuation: cont.tokens,
        noise_steps: cont.steps,
        noise_seed,
        truncated: cont.truncated,
    })
}

/// Counterfactual continuation: the factual noise is reused step for step.
pub fn regenerate_counterfactual(
    provider: &dyn DistributionProvider,
    session: &GenerationSession,
    iv: &Intervention,
) -> Result<Regeneration> {
    regenerate(
        provider,
        session,
        iv,
        RegenerationMode::Counterfactual,
        NoiseIndexing::FactualStep,
    )
}

/// Interventional continuation: fresh noise from `fresh_seed`. Passing the
/// session's own seed makes this identical to the counterfactual mode.
pub fn regenerate_interventional(
    provider: &dyn DistributionProvider,
    session: &GenerationSession,
    iv: &Intervention,
    fresh_seed: u64,
) -> Result<Regeneration> {
    regenerate(
        provider,
        session,
        iv,
        RegenerationMode::Interventional { fresh_seed },
        NoiseIndexing::FactualStep,
    )
}

/// First point where a replay departed from the recorded session.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Divergence {
    /// The sampling distribution at `step` differs from the recorded one;
    /// the model changed since the session was generated.
    Distribution { step: u32, recorded: String, replayed: String },
    /// A different token was drawn at `step` (0 when only the lengths differ).
    Token {
        step: u32,
        recorded: Option<TokenId>,
        replayed: Option<TokenId>,
    },
    Truncation { recorded: bool, replayed: bool },
}

/// Replays the session under the null intervention at step 0 and reports the
/// first divergence, if any.
pub fn replay(provider: &dyn DistributionProvider, session: &GenerationSession) -> Result<Option<Divergence>> {
    check_model(provider, session)?;
    let mut fingerprints = Vec::new();
    let cont = continue_from(
        provider,
        &session.sampler,
        session.prompt.as_slice(),
        session.noise,
        1,
        session.max_steps,
        Some(&mut fingerprints),
    )?;
    for (i, (rec, rep)) in session.fingerprints.iter().zip(&fingerprints).enumerate() {
        if rec != rep {
            return Ok(Some(Divergence::Distribution {
                step: i as u32 + 1,
                recorded: rec.clone(),
                replayed: rep.clone(),
            }));
        }
    }
    let recorded = session.output.as_slice();
    let n = recorded.len().max(cont.tokens.len());
    for i in 0..n {
        let (a, b) = (recorded.get(i).copied(), cont.tokens.get(i).copied());
        if a != b {
            return Ok(Some(Divergence::Token {
                step: i as u32 + 1,
                recorded: a,
                replayed: b,
            }));
        }
    }
    if session.truncated != cont.truncated {
        return Ok(Some(Divergence::Truncation {
            recorded: session.truncated,
            replayed: cont.truncated,
        }));
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{point_mass_logits, ContextKey, LookupTableModel};
    use crate::vocab::Vocabulary;

    fn vocab() -> Vocabulary {
        Vocabulary::new(
            vec!["a".into(), "b".into(), "c".into(), "<eos>".into()],
            3,
        )
        .unwrap()
    }

    /// a -> b -> c -> eos, deterministically.
    fn chain() -> LookupTableModel {
        LookupTableModel::new("chain", vocab(), ContextKey::Suffix(1))
            .with_row(vec![0], point_mass_logits(4, 1))
            .unwrap()
            .with_row(vec![1], point_mass_logits(4, 2))
            .unwrap()
            .with_row(vec![2], point_mass_logits(4, 3))
            .unwrap()
    }

    fn uniform() -> LookupTableModel {
        LookupTableModel::new("uniform", vocab(), ContextKey::Suffix(0))
            .with_default(vec![0.0, 0.0, 0.0, -1.0])
            .unwrap()
    }

    #[test]
    fn forced_path_for_any_seed() {
        for seed in 0..20 {
            let s = generate(&chain(), &[0], SamplerConfig::gumbel_max(1.0), seed, 10).unwrap();
            assert_eq!(s.output.as_slice(), &[1, 2, 3]);
            assert!(!s.truncated);
            assert_eq!(s.noise.step_count, 3);
            assert_eq!(s.fingerprints.len(), 3);
        }
    }

    #[test]
    fn truncation_is_flagged() {
        let m = LookupTableModel::new("loop", vocab(), ContextKey::Suffix(0))
            .with_default(point_mass_logits(4, 0))
            .unwrap();
        let s = generate(&m, &[], SamplerConfig::gumbel_max(1.0), 1, 5).unwrap();
        assert_eq!(s.output.len(), 5);
        assert!(s.truncated);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&uniform(), &[0], SamplerConfig::gumbel_max(0.7), 42, 30).unwrap();
        let b = generate(&uniform(), &[0], SamplerConfig::gumbel_max(0.7), 42, 30).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn null_intervention_reproduces_output() {
        let s = generate(&uniform(), &[0], SamplerConfig::gumbel_max(1.0), 7, 40).unwrap();
        for step in 0..=s.output.len() as u32 {
            let iv = Intervention::null(&s, step).unwrap();
            let r = regenerate_counterfactual(&uniform(), &s, &iv).unwrap();
            assert_eq!(r.sequence(), s.full_sequence());
            assert_eq!(r.truncated, s.truncated);
        }
        assert_eq!(replay(&uniform(), &s).unwrap(), None);
    }

    #[test]
    fn point_mass_substitution_follows_forced_path() {
        let s = generate(&chain(), &[0], SamplerConfig::gumbel_max(1.0), 3, 10).unwrap();
        let iv = Intervention::replace_token(&s, 1, 2).unwrap();
        let cf = regenerate_counterfactual(&chain(), &s, &iv).unwrap();
        assert_eq!(cf.sequence(), vec![0, 2, 3]);
        let int = regenerate_interventional(&chain(), &s, &iv, 99).unwrap();
        assert_eq!(int.sequence(), cf.sequence());
    }

    #[test]
    fn continuation_noise_steps_follow_indexing() {
        let s = generate(&uniform(), &[0], SamplerConfig::gumbel_max(1.0), 5, 40).unwrap();
        assert!(s.output.len() >= 3, "seed gives a short output");
        // delete the token at position 2: the prefix is one token shorter
        let iv = Intervention::replace_span(&s, 1, 2, &[]).unwrap();
        assert_eq!(iv.step, 2);
        let factual = regenerate(&uniform(), &s, &iv, RegenerationMode::Counterfactual, NoiseIndexing::FactualStep).unwrap();
        assert_eq!(factual.noise_steps.first(), Some(&3));
        let recount = regenerate(&uniform(), &s, &iv, RegenerationMode::Counterfactual, NoiseIndexing::PrefixLength).unwrap();
        assert_eq!(recount.noise_steps.first(), Some(&2));
    }

    #[test]
    fn rejects_bad_interventions() {
        let s = generate(&chain(), &[0], SamplerConfig::gumbel_max(1.0), 3, 10).unwrap();
        assert!(Intervention::null(&s, 4).is_err());
        assert!(Intervention::replace_token(&s, 0, 1).is_err());
        let iv = Intervention::new(9, vec![0]);
        assert!(regenerate_counterfactual(&chain(), &s, &iv).is_err());
        let iv = Intervention::new(1, vec![0, 3, 1]);
        assert!(regenerate_counterfactual(&chain(), &s, &iv).is_err());
        // wrong model
        assert!(regenerate_counterfactual(&uniform(), &s, &Intervention::null(&s, 0).unwrap()).is_err());
    }

    #[test]
    fn rejects_bad_generation_inputs() {
        assert!(generate(&chain(), &[0], SamplerConfig::gumbel_max(1.0), 1, 0).is_err());
        assert!(generate(&chain(), &[3], SamplerConfig::gumbel_max(1.0), 1, 5).is_err());
        assert!(generate(&chain(), &[0], SamplerConfig::gumbel_max(-1.0), 1, 5).is_err());
    }

    #[test]
    fn intervened_prefix_ending_in_eos_stops() {
        let s = generate(&uniform(), &[0], SamplerConfig::gumbel_max(1.0), 5, 40).unwrap();
        let iv = Intervention::replace_token(&s, 1, 3).unwrap();
        let cf = regenerate_counterfactual(&uniform(), &s, &iv).unwrap();
        assert!(cf.continuation.is_empty());
        assert!(!cf.truncated);
    }

    #[test]
    fn replay_detects_drift() {
        let s = generate(&uniform(), &[0], SamplerConfig::gumbel_max(1.0), 5, 40).unwrap();
        let drifted = LookupTableModel::new("uniform", vocab(), ContextKey::Suffix(0))
            .with_default(vec![0.0, 0.1, 0.0, -1.0])
            .unwrap();
        match replay(&drifted, &s).unwrap() {
            Some(Divergence::Distribution { step: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        let mut tampered = s.clone();
        tampered.fingerprints.clear();
        let mut out = tampered.output.clone().into_inner();
        out[0] = (out[0] + 1) % 3;
        tampered.output = out.into();
        assert!(matches!(
            replay(&uniform(), &tampered).unwrap(),
            Some(Divergence::Token { step: 1, .. })
        ));
    }

    #[test]
    fn session_json_round_trip() {
        let s = generate(&uniform(), &[0, 1], SamplerConfig::top_k(0.9, 2), 11, 12).unwrap();
        let json = s.to_json().unwrap();
        assert_eq!(GenerationSession::from_json(&json).unwrap(), s);
        let keys: Vec<usize> = ["\"version\"", "\"model_id\"", "\"sampler\"", "\"noise\"", "\"max_steps\"", "\"prompt\"", "\"output\"", "\"truncated\"", "\"fingerprints\""]
            .iter()
            .map(|k| json.find(k).unwrap())
            .collect();
        assert!(keys.windows(2).all(|w| w[0] < w[1]), "field order changed");
        let bad = json.replace("\"version\": 1", "\"version\": 2");
        assert!(GenerationSession::from_json(&bad).is_err());
    }
}
