//! Resolving `--model` arguments to providers.
//!
//! An argument is one of the built-in names (`tiny`, `planted`, `planted-edge`),
//! the path of an n-gram model file, or an `http://` / `https://` endpoint
//! (which needs a vocabulary file).

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use cf_engine::backend::RemoteConfig;
use cf_engine::bias::planted_model;
use cf_engine::corpus::{tiny_model, TINY_ALPHA, TINY_ORDER};
use cf_engine::{DistributionProvider, NGramModel, RemoteModel, Tokenizer, Vocabulary};

/// Shuffle seed of the built-in planted models.
pub const PLANTED_SEED: u64 = 11;

/// What remote models need besides the URL.
#[derive(Debug, Clone, Default)]
pub struct RemoteOptions {
    pub vocab: Option<PathBuf>,
    pub tokenizer: Tokenizer,
    pub context_limit: Option<usize>,
}

#[derive(Clone)]
pub struct LoadedModel {
    pub name: String,
    pub provider: Arc<dyn DistributionProvider>,
    pub tokenizer: Tokenizer,
    /// The n-gram model behind the provider, when there is one.
    pub ngram: Option<Arc<NGramModel>>,
}

impl LoadedModel {
    fn ngram(name: impl Into<String>, m: NGramModel) -> Self {
        let m = Arc::new(m);
        Self {
            name: name.into(),
            tokenizer: m.tokenizer(),
            provider: m.clone(),
            ngram: Some(m),
        }
    }

    pub fn model_id(&self) -> String {
        self.provider.model_id()
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        self.provider.vocabulary()
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        Ok(self.tokenizer.encode(text, self.vocabulary())?)
    }

    pub fn render(&self, tokens: &[usize]) -> String {
        self.tokenizer.render(tokens, self.vocabulary())
    }
}

pub fn load_model(arg: &str, remote: &RemoteOptions) -> Result<LoadedModel> {
    match arg {
        "tiny" => Ok(LoadedModel::ngram("tiny", tiny_model(TINY_ORDER, TINY_ALPHA)?)),
        "planted" => Ok(LoadedModel::ngram("planted", planted_model(false, PLANTED_SEED)?)),
        "planted-edge" => Ok(LoadedModel::ngram("planted-edge", planted_model(true, PLANTED_SEED)?)),
        url if url.starts_with("http://") || url.starts_with("https://") => {
            let Some(vocab_path) = &remote.vocab else {
                bail!("remote model {url} needs --vocab");
            };
            let vocab = Vocabulary::read_from(BufReader::new(
                File::open(vocab_path).with_context(|| format!("opening {}", vocab_path.display()))?,
            ))?;
            let mut cfg = RemoteConfig::new(url);
            cfg.context_limit = remote.context_limit;
            Ok(LoadedModel {
                name: url.to_owned(),
                provider: Arc::new(RemoteModel::new(cfg, vocab)),
                tokenizer: remote.tokenizer,
                ngram: None,
            })
        }
        path => {
            let path = Path::new(path);
            let file = File::open(path).with_context(|| format!("opening model {}", path.display()))?;
            let m = NGramModel::read_from(BufReader::new(file))
                .with_context(|| format!("reading model {}", path.display()))?;
            let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("model").to_owned();
            Ok(LoadedModel::ngram(name, m))
        }
    }
}
