//! Counterfactual token generation.
//!
//! The sampler of an autoregressive language model is treated as the causal
//! mechanism of a structural causal model: each generation step draws its
//! token as `f_T(d_i, u_i)` from the model's next-token distribution `d_i` and
//! an exogenous noise value `u_i`. Because the noise is reconstructible from a
//! session seed, a recorded generation can be replayed under an intervention
//! on its prompt or on any generated token, holding the sampler's state fixed.
//! This yields the *counterfactual* continuation, as opposed to the
//! *interventional* one obtained with fresh noise.
//!
//! Layout:
//!
//! - [`vocab`] and [`distribution`]: vocabularies, tokenizers, token
//!   distributions, temperature and top-k / top-p restriction.
//! - [`noise`]: keyed, reconstructible Gumbel and uniform noise.
//! - [`sampler`]: the Gumbel-Max, restricted Gumbel-Max and inverse-transform
//!   mechanisms.
//! - [`backend`]: next-token distribution providers (n-gram, lookup table,
//!   remote HTTP model).
//! - [`engine`]: factual generation, counterfactual and interventional
//!   regeneration, session files.
//! - [`eval`]: edit distances, stability and marginal checks, the
//!   similarity experiment.
//! - [`bias`]: total and direct effects of attribute interventions on
//!   generated structured records.

pub mod backend;
pub mod bias;
pub mod corpus;
pub mod distribution;
pub mod engine;
mod error;
pub mod eval;
pub mod noise;
pub mod sampler;
pub mod vocab;

pub use backend::{DistributionProvider, LookupTableModel, NGramModel, RemoteModel};
pub use distribution::TokenDistribution;
pub use engine::{GenerationSession, Intervention, NoiseIndexing, Regeneration};
pub use error::{Error, Result};
pub use noise::NoiseProvenance;
pub use sampler::{SamplerConfig, SamplerKind};
pub use vocab::{TokenId, TokenSequence, Tokenizer, Vocabulary};
