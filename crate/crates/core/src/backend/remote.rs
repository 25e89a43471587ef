//! Adapter for a model served over HTTP.
//!
//! Wire protocol: `POST {endpoint}/logits` with JSON body
//! `{"context": [token indices]}`, answered by `{"logits": [reals]}` with one
//! entry per vocabulary token. Responses are cached per context for the
//! lifetime of the adapter, so replaying an unchanged prefix never queries
//! the remote model twice.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{check_tokens, truncate, DistributionProvider};
use crate::error::{Error, Result};
use crate::vocab::{TokenId, Vocabulary};

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub model_id: String,
    pub context_limit: Option<usize>,
    pub timeout: Duration,
    /// Additional attempts after the first failed one.
    pub retries: u32,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        let endpoint = endpoint.into();
        Self {
            model_id: format!("remote:{endpoint}"),
            endpoint,
            context_limit: None,
            timeout: Duration::from_secs(30),
            retries: 2,
        }
    }
}

#[derive(Serialize)]
struct LogitsRequest<'a> {
    context: &'a [TokenId],
}

#[derive(Deserialize)]
struct LogitsResponse {
    logits: Vec<f64>,
}

pub struct RemoteModel {
    config: RemoteConfig,
    vocab: Vocabulary,
    agent: ureq::Agent,
    cache: Mutex<HashMap<Vec<TokenId>, Vec<f64>>>,
    calls: AtomicU64,
}

impl std::fmt::Debug for RemoteModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteModel")
            .field("config", &self.config)
            .field("calls", &self.calls)
            .finish_non_exhaustive()
    }
}

enum Attempt {
    Retryable(String),
    Fatal(Error),
}

impl RemoteModel {
    pub fn new(config: RemoteConfig, vocab: Vocabulary) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            config,
            vocab,
            agent,
            cache: Mutex::new(HashMap::new()),
            calls: AtomicU64::new(0),
        }
    }

    /// Number of HTTP requests issued so far, retries included.
    pub fn remote_calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    fn url(&self) -> String {
        format!("{}/logits", self.config.endpoint.trim_end_matches('/'))
    }

    fn attempt(&self, context: &[TokenId]) -> std::result::Result<Vec<f64>, Attempt> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let mut resp = self
            .agent
            .post(&self.url())
            .send_json(LogitsRequest { context })
            .map_err(|e| Attempt::Retryable(e.to_string()))?;
        let status = resp.status().as_u16();
        if status >= 500 {
            return Err(Attempt::Retryable(format!("server answered {status}")));
        }
        if status != 200 {
            return Err(Attempt::Fatal(Error::Protocol(format!(
                "server answered {status}"
            ))));
        }
        let body: LogitsResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| Attempt::Fatal(Error::Protocol(format!("malformed response: {e}"))))?;
        if body.logits.len() != self.vocab.len() {
            return Err(Attempt::Fatal(Error::Protocol(format!(
                "expected {} logits, got {}",
                self.vocab.len(),
                body.logits.len()
            ))));
        }
        if body.logits.iter().any(|l| !l.is_finite()) {
            return Err(Attempt::Fatal(Error::Protocol("non-finite logit".into())));
        }
        Ok(body.logits)
    }

    /// Queries the remote model, bypassing nothing: cache first, then up to
    /// `1 + retries` HTTP attempts.
    pub fn remote_next_logits(&self, context: &[TokenId]) -> Result<Vec<f64>> {
        check_tokens(&self.vocab, context)?;
        let context = truncate(context, self.config.context_limit);
        if let Some(hit) = self.cache.lock().expect("cache poisoned").get(context) {
            return Ok(hit.clone());
        }
        let mut last = String::new();
        for attempt in 1..=self.config.retries + 1 {
            match self.attempt(context) {
                Ok(logits) => {
                    self.cache
                        .lock()
                        .expect("cache poisoned")
                        .insert(context.to_vec(), logits.clone());
                    return Ok(logits);
                }
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retryable(msg)) => {
                    last = msg;
                    if attempt <= self.config.retries {
                        std::thread::sleep(Duration::from_millis(50 * u64::from(attempt)));
                    }
                }
            }
        }
        Err(Error::Transport {
            message: last,
            attempts: self.config.retries + 1,
        })
    }
}

impl DistributionProvider for RemoteModel {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn context_limit(&self) -> Option<usize> {
        self.config.context_limit
    }

    fn model_id(&self) -> String {
        self.config.model_id.clone()
    }

    fn next_logits(&self, context: &[TokenId]) -> Result<Vec<f64>> {
        self.remote_next_logits(context)
    }
}
