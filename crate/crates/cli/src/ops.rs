//! Intervention requests and their stored results, shared by the CLI and the
//! service.

use anyhow::{bail, Result};
use cf_engine::engine::{regenerate, RegenerationMode};
use cf_engine::eval::{alignment_diff, positional_diff, DiffFlag};
use cf_engine::{GenerationSession, Intervention, NoiseIndexing, Regeneration, TokenId};
use serde::{Deserialize, Serialize};

use crate::models::LoadedModel;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    #[default]
    Counterfactual,
    Interventional,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DiffMethod {
    /// Position by position; tokens past the shorter output are changed.
    #[default]
    Positional,
    /// Minimum-edit alignment.
    Alignment,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterventionRequest {
    /// 1-based output position to replace; 0 replaces the prompt.
    pub position: u32,
    pub replacement: Vec<TokenId>,
    #[serde(default)]
    pub mode: ModeName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fresh_seed: Option<u64>,
    #[serde(default)]
    pub noise_indexing: NoiseIndexing,
    #[serde(default)]
    pub diff: DiffMethod,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputToken {
    pub id: TokenId,
    pub text: String,
    pub flag: DiffFlag,
}

/// A regenerated output with its diff against the factual output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionRecord {
    /// Position in the session's intervention log.
    pub index: usize,
    pub request: InterventionRequest,
    pub intervention: Intervention,
    pub regeneration: Regeneration,
    /// Output positions (0-based, end exclusive) holding the replacement.
    pub intervened: [usize; 2],
    /// Output after the (possibly replaced) prompt.
    pub tokens: Vec<OutputToken>,
    pub text: String,
}

impl InterventionRecord {
    pub fn output_ids(&self) -> Vec<TokenId> {
        self.tokens.iter().map(|t| t.id).collect()
    }
}

pub fn token_text(model: &LoadedModel, id: TokenId) -> String {
    model.vocabulary().token(id).unwrap_or("\u{fffd}").to_owned()
}

pub fn intervene(model: &LoadedModel, session: &GenerationSession, req: &InterventionRequest) -> Result<InterventionRecord> {
    let (iv, prompt_len, intervened) = if req.position == 0 {
        let n = req.replacement.len();
        (Intervention::replace_prompt(req.replacement.clone()), n, [0, 0])
    } else {
        let start = req.position as usize - 1;
        let iv = Intervention::replace_span(session, start, start + 1, &req.replacement)?;
        (iv, session.prompt.len(), [start, start + req.replacement.len()])
    };
    let mode = match (req.mode, req.fresh_seed) {
        (ModeName::Counterfactual, None) => RegenerationMode::Counterfactual,
        (ModeName::Counterfactual, Some(_)) => bail!("fresh_seed only applies to interventional mode"),
        (ModeName::Interventional, Some(fresh_seed)) => RegenerationMode::Interventional { fresh_seed },
        (ModeName::Interventional, None) => bail!("interventional mode needs a fresh seed"),
    };
    let regeneration = regenerate(model.provider.as_ref(), session, &iv, mode, req.noise_indexing)?;
    let output = regeneration.output_after(prompt_len);
    let factual = session.output.as_slice();
    let flags = match req.diff {
        DiffMethod::Positional => positional_diff(factual, &output),
        DiffMethod::Alignment => alignment_diff(factual, &output),
    };
    let tokens = output
        .iter()
        .zip(flags)
        .map(|(&id, flag)| OutputToken {
            id,
            text: token_text(model, id),
            flag,
        })
        .collect();
    Ok(InterventionRecord {
        index: 0,
        request: req.clone(),
        text: model.render(&regeneration.sequence()),
        intervention: iv,
        regeneration,
        intervened,
        tokens,
    })
}
