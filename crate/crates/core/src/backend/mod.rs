//! Next-token distribution providers: the `f_D` of the causal model.

mod lookup;
mod ngram;
mod remote;

use crate::error::Result;
use crate::vocab::{TokenId, Vocabulary};

pub use lookup::{point_mass_logits, ContextKey, LookupTableModel, LOGIT_FLOOR};
pub use ngram::{CorpusSplit, NGramModel, NGRAM_FORMAT_VERSION};
pub use remote::{RemoteConfig, RemoteModel};

/// Maps a token sequence (prompt followed by the tokens generated so far) to
/// logits over the vocabulary.
///
/// Implementations must be stateless: the same context always yields the
/// same logits, regardless of what was asked before. Counterfactual replay
/// depends on it.
pub trait DistributionProvider: Send + Sync {
    fn vocabulary(&self) -> &Vocabulary;

    /// Longest context the provider looks at; longer contexts are cut from
    /// the left. `None` means unbounded.
    fn context_limit(&self) -> Option<usize>;

    fn model_id(&self) -> String;

    fn next_logits(&self, context: &[TokenId]) -> Result<Vec<f64>>;
}

impl<P: DistributionProvider + ?Sized> DistributionProvider for &P {
    fn vocabulary(&self) -> &Vocabulary {
        (**self).vocabulary()
    }
    fn context_limit(&self) -> Option<usize> {
        (**self).context_limit()
    }
    fn model_id(&self) -> String {
        (**self).model_id()
    }
    fn next_logits(&self, context: &[TokenId]) -> Result<Vec<f64>> {
        (**self).next_logits(context)
    }
}

impl<P: DistributionProvider + ?Sized> DistributionProvider for std::sync::Arc<P> {
    fn vocabulary(&self) -> &Vocabulary {
        (**self).vocabulary()
    }
    fn context_limit(&self) -> Option<usize> {
        (**self).context_limit()
    }
    fn model_id(&self) -> String {
        (**self).model_id()
    }
    fn next_logits(&self, context: &[TokenId]) -> Result<Vec<f64>> {
        (**self).next_logits(context)
    }
}

pub(crate) fn truncate(context: &[TokenId], limit: Option<usize>) -> &[TokenId] {
    match limit {
        Some(n) if context.len() > n => &context[context.len() - n..],
        _ => context,
    }
}

pub(crate) fn check_tokens(vocab: &Vocabulary, context: &[TokenId]) -> Result<()> {
    context.iter().try_for_each(|&t| vocab.check(t))
}
