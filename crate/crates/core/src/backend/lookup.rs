use std::collections::HashMap;

use super::{check_tokens, DistributionProvider};
use crate::error::{Error, Result};
use crate::vocab::{TokenId, Vocabulary};

/// Logit used for tokens that must receive probability exactly zero. Finite,
/// but far enough below any real logit that the softmax underflows to zero
/// for every temperature up to 1000.
pub const LOGIT_FLOOR: f64 = -1e6;

/// Logits whose softmax is a point mass on `token`.
pub fn point_mass_logits(len: usize, token: TokenId) -> Vec<f64> {
    let mut l = vec![LOGIT_FLOOR; len];
    l[token] = 0.0;
    l
}

/// What part of the context selects a row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContextKey {
    /// The last `n` tokens (the whole context when shorter).
    Suffix(usize),
    /// Only the length of the context.
    Length,
}

/// A provider backed by an explicit table of logit rows. Useful for tests
/// and for degenerate models with known behavior.
#[derive(Debug, Clone)]
pub struct LookupTableModel {
    name: String,
    vocab: Vocabulary,
    key: ContextKey,
    rows: HashMap<Vec<TokenId>, Vec<f64>>,
    length_rows: HashMap<usize, Vec<f64>>,
    default: Option<Vec<f64>>,
}

impl LookupTableModel {
    pub fn new(name: impl Into<String>, vocab: Vocabulary, key: ContextKey) -> Self {
        Self {
            name: name.into(),
            vocab,
            key,
            rows: HashMap::new(),
            length_rows: HashMap::new(),
            default: None,
        }
    }

    fn check_row(&self, logits: &[f64]) -> Result<()> {
        if logits.len() != self.vocab.len() {
            return Err(Error::domain(format!(
                "row has {} entries, vocabulary has {}",
                logits.len(),
                self.vocab.len()
            )));
        }
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::domain("lookup rows must be finite"));
        }
        Ok(())
    }

    pub fn with_row(mut self, context: Vec<TokenId>, logits: Vec<f64>) -> Result<Self> {
        self.check_row(&logits)?;
        check_tokens(&self.vocab, &context)?;
        self.rows.insert(context, logits);
        Ok(self)
    }

    pub fn with_length_row(mut self, len: usize, logits: Vec<f64>) -> Result<Self> {
        self.check_row(&logits)?;
        self.length_rows.insert(len, logits);
        Ok(self)
    }

    /// Row from probabilities; zero probabilities map to [`LOGIT_FLOOR`].
    pub fn with_prob_row(self, context: Vec<TokenId>, probs: &[f64]) -> Result<Self> {
        let logits = probs
            .iter()
            .map(|&p| if p > 0.0 { p.ln() } else { LOGIT_FLOOR })
            .collect();
        self.with_row(context, logits)
    }

    pub fn with_default(mut self, logits: Vec<f64>) -> Result<Self> {
        self.check_row(&logits)?;
        self.default = Some(logits);
        Ok(self)
    }
}

impl DistributionProvider for LookupTableModel {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn context_limit(&self) -> Option<usize> {
        match self.key {
            ContextKey::Suffix(n) => Some(n),
            ContextKey::Length => None,
        }
    }

    fn model_id(&self) -> String {
        self.name.clone()
    }

    fn next_logits(&self, context: &[TokenId]) -> Result<Vec<f64>> {
        check_tokens(&self.vocab, context)?;
        let row = match self.key {
            ContextKey::Suffix(n) => {
                let start = context.len().saturating_sub(n);
                self.rows.get(&context[start..])
            }
            ContextKey::Length => self.length_rows.get(&context.len()),
        };
        row.or(self.default.as_ref())
            .cloned()
            .ok_or_else(|| Error::domain(format!("no lookup row for context {context:?}")))
    }
}
