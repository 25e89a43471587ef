//! Sampling mechanisms `f_T(d, u)`: pure functions from a next-token
//! distribution and a noise value to a token.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::distribution::{apply_temperature, restrict_top_k, restrict_top_p, TokenDistribution};
use crate::error::{Error, Result};
use crate::noise::{self, NoiseProvenance};
use crate::vocab::TokenId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    GumbelMax,
    GumbelMaxTopK,
    GumbelMaxTopP,
    InverseTransform,
}

impl SamplerKind {
    pub const ALL: [SamplerKind; 4] = [
        SamplerKind::GumbelMax,
        SamplerKind::GumbelMaxTopK,
        SamplerKind::GumbelMaxTopP,
        SamplerKind::InverseTransform,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SamplerKind::GumbelMax => "gumbel_max",
            SamplerKind::GumbelMaxTopK => "gumbel_max_top_k",
            SamplerKind::GumbelMaxTopP => "gumbel_max_top_p",
            SamplerKind::InverseTransform => "inverse_transform",
        }
    }

    pub fn uses_gumbel_noise(self) -> bool {
        self != SamplerKind::InverseTransform
    }
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SamplerKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::domain(format!("unknown sampler kind {s:?}")))
    }
}

/// Parameterization of the sampling mechanism. `k` is set exactly for
/// top-k Gumbel-Max and `p` exactly for top-p Gumbel-Max.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    pub tau: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
}

/// Noise consumed by one generation step.
#[derive(Debug, Clone, PartialEq)]
pub enum StepNoise {
    Gumbel(Vec<f64>),
    Uniform(f64),
}

impl StepNoise {
    pub fn fingerprint(&self) -> String {
        match self {
            StepNoise::Gumbel(v) => noise::fingerprint(v),
            StepNoise::Uniform(u) => noise::fingerprint(&[*u]),
        }
    }
}

impl SamplerConfig {
    pub fn gumbel_max(tau: f64) -> Self {
        Self {
            kind: SamplerKind::GumbelMax,
            tau,
            k: None,
            p: None,
        }
    }

    pub fn top_k(tau: f64, k: usize) -> Self {
        Self {
            kind: SamplerKind::GumbelMaxTopK,
            tau,
            k: Some(k),
            p: None,
        }
    }

    pub fn top_p(tau: f64, p: f64) -> Self {
        Self {
            kind: SamplerKind::GumbelMaxTopP,
            tau,
            k: None,
            p: Some(p),
        }
    }

    pub fn inverse_transform(tau: f64) -> Self {
        Self {
            kind: SamplerKind::InverseTransform,
            tau,
            k: None,
            p: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::domain(format!("tau must be positive, got {}", self.tau)));
        }
        let wants_k = self.kind == SamplerKind::GumbelMaxTopK;
        let wants_p = self.kind == SamplerKind::GumbelMaxTopP;
        if wants_k != self.k.is_some() {
            return Err(Error::domain(format!(
                "k must be given exactly for top-k sampling ({})",
                self.kind
            )));
        }
        if wants_p != self.p.is_some() {
            return Err(Error::domain(format!(
                "p must be given exactly for top-p sampling ({})",
                self.kind
            )));
        }
        if let Some(k) = self.k {
            if k == 0 {
                return Err(Error::domain("k must be at least 1"));
            }
        }
        if let Some(p) = self.p {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::domain(format!("p must lie in (0, 1], got {p}")));
            }
        }
        Ok(())
    }

    /// Applies the top-k / top-p restriction of this config, if any.
    pub fn restrict(&self, d: &TokenDistribution) -> Result<TokenDistribution> {
        match self.kind {
            SamplerKind::GumbelMaxTopK => restrict_top_k(d, self.k.unwrap_or(d.len()).min(d.len())),
            SamplerKind::GumbelMaxTopP => restrict_top_p(d, self.p.unwrap_or(1.0)),
            _ => Ok(d.clone()),
        }
    }

    /// The distribution the mechanism samples from: softmax at temperature
    /// `tau`, then the restriction. Temperature always comes first.
    pub fn sampling_distribution(&self, logits: &[f64]) -> Result<TokenDistribution> {
        self.restrict(&apply_temperature(logits, self.tau)?)
    }

    /// Regenerates the noise of `step` for a vocabulary of `vocab_size`.
    pub fn noise(&self, prov: NoiseProvenance, step: u32, vocab_size: usize) -> StepNoise {
        if self.kind.uses_gumbel_noise() {
            StepNoise::Gumbel(noise::gumbel_vector(prov, step, vocab_size))
        } else {
            StepNoise::Uniform(noise::uniform_scalar(prov, step))
        }
    }

    /// Applies the mechanism to an already restricted distribution.
    pub fn apply(&self, d: &TokenDistribution, noise: &StepNoise) -> Result<TokenId> {
        match (self.kind.uses_gumbel_noise(), noise) {
            (true, StepNoise::Gumbel(u)) => gumbel_max_sample(d, u),
            (false, StepNoise::Uniform(u)) => Ok(its_sample(d, *u)),
            _ => Err(Error::domain(format!(
                "noise type does not match sampler {}",
                self.kind
            ))),
        }
    }
}

/// Gumbel-Max mechanism: `argmax_t log d_t + u_t` over the support of `d`.
/// Tokens of probability zero are excluded outright; exact ties go to the
/// lower index.
pub fn gumbel_max_sample(d: &TokenDistribution, u: &[f64]) -> Result<TokenId> {
    if u.len() != d.len() {
        return Err(Error::domain(format!(
            "noise length {} does not match distribution length {}",
            u.len(),
            d.len()
        )));
    }
    let mut best: Option<(TokenId, f64)> = None;
    for (t, (&p, &g)) in d.probs().iter().zip(u).enumerate() {
        if p <= 0.0 {
            continue;
        }
        let score = p.ln() + g;
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((t, score));
        }
    }
    best.map(|(t, _)| t)
        .ok_or_else(|| Error::domain("distribution has empty support"))
}

/// Gumbel-Max restricted to the top-k or top-p set of `d`, with the same
/// noise vector.
pub fn restricted_gumbel_max_sample(
    d: &TokenDistribution,
    u: &[f64],
    cfg: &SamplerConfig,
) -> Result<TokenId> {
    if !matches!(cfg.kind, SamplerKind::GumbelMaxTopK | SamplerKind::GumbelMaxTopP) {
        return Err(Error::domain(format!("{} is not a restricted sampler", cfg.kind)));
    }
    cfg.validate()?;
    gumbel_max_sample(&cfg.restrict(d)?, u)
}

/// Inverse-transform mechanism: the first token, in vocabulary order, whose
/// cumulative probability reaches `u`.
pub fn its_sample(d: &TokenDistribution, u: f64) -> TokenId {
    let mut cumulative = 0.0;
    let mut last_supported = 0;
    for (t, &p) in d.probs().iter().enumerate() {
        if p > 0.0 {
            last_supported = t;
        }
        cumulative += p;
        if p > 0.0 && cumulative >= u {
            return t;
        }
    }
    // rounding left the total just below u
    last_supported
}
