//! Command line parsing and the subcommands.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use cf_engine::backend::CorpusSplit;
use cf_engine::bias::{
    desk_schema, generate_records, planted_corpus, summarize_effects, write_effects_csv, write_summary_csv,
    AttributeSchema, EffectContext, GenerationConfig,
};
use cf_engine::corpus::{generate_tiny_corpus, prompts_from, tiny_corpus, TINY_LINES, TINY_SEED};
use cf_engine::engine::{generate, replay};
use cf_engine::eval::{run_similarity_experiment, write_aggregates_csv, write_rows_csv, DiffFlag, SimilarityConfig};
use cf_engine::{DistributionProvider, GenerationSession, NGramModel, NoiseIndexing, SamplerConfig, Tokenizer};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::models::{load_model, LoadedModel, RemoteOptions, PLANTED_SEED};
use crate::ops::{intervene, DiffMethod, InterventionRequest, ModeName};
use crate::server::{router, AppState};
use crate::store::SessionStore;

#[derive(Debug, Parser)]
#[command(name = "cf-engine", version, about = "Counterfactual token generation with reconstructible sampler noise")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an n-gram model on a text corpus.
    Train(TrainArgs),
    /// Generate a session from a prompt.
    Generate(GenerateArgs),
    /// Regenerate a session under an intervention on one output token.
    Intervene(InterveneArgs),
    /// Check that a session replays exactly (exit 1 on the first divergence).
    Replay(ReplayArgs),
    /// Counterfactual vs interventional similarity over a grid of samplers.
    Experiment(ExperimentArgs),
    /// Total and direct effects of attribute interventions on generated records.
    Bias(BiasArgs),
    /// Print a bundled corpus.
    Corpus(CorpusArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// `tiny`, `planted`, `planted-edge`, an n-gram model file, or an
    /// http(s) endpoint.
    #[arg(long, default_value = "tiny")]
    pub model: String,
    /// Vocabulary file of a remote model.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Tokenizer of a remote model.
    #[arg(long, default_value = "chars")]
    pub remote_tokenizer: Tokenizer,
}

impl ModelArgs {
    fn remote(&self) -> RemoteOptions {
        RemoteOptions {
            vocab: self.vocab.clone(),
            tokenizer: self.remote_tokenizer,
            context_limit: None,
        }
    }

    fn load(&self) -> Result<LoadedModel> {
        load_model(&self.model, &self.remote())
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SamplerName {
    /// Gumbel-Max, optionally restricted with --top-k or --top-p.
    Gumbel,
    /// Inverse transform sampling.
    Its,
}

#[derive(Debug, Args)]
pub struct SamplerArgs {
    #[arg(long, value_enum, default_value = "gumbel")]
    pub sampler: SamplerName,
    #[arg(long, default_value_t = 1.0)]
    pub tau: f64,
    #[arg(long, conflicts_with = "top_p")]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub top_p: Option<f64>,
}

impl SamplerArgs {
    pub fn config(&self) -> Result<SamplerConfig> {
        let cfg = match (self.sampler, self.top_k, self.top_p) {
            (SamplerName::Gumbel, None, None) => SamplerConfig::gumbel_max(self.tau),
            (SamplerName::Gumbel, Some(k), None) => SamplerConfig::top_k(self.tau, k),
            (SamplerName::Gumbel, None, Some(p)) => SamplerConfig::top_p(self.tau, p),
            (SamplerName::Its, None, None) => SamplerConfig::inverse_transform(self.tau),
            (SamplerName::Its, ..) => bail!("--top-k and --top-p apply to the gumbel sampler only"),
            _ => bail!("--top-k and --top-p are exclusive"),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Corpus text file.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value = "chars")]
    pub tokenizer: Tokenizer,
    /// Training sequences: one per line or one per blank-line separated
    /// paragraph.
    #[arg(long, default_value = "lines")]
    pub split: CorpusSplit,
    #[arg(long, default_value_t = 4)]
    pub order: usize,
    /// Add-alpha smoothing constant.
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub prompt: String,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub max_steps: u32,
    /// Session file to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum IndexingName {
    FactualStep,
    PrefixLength,
}

impl From<IndexingName> for NoiseIndexing {
    fn from(n: IndexingName) -> Self {
        match n {
            IndexingName::FactualStep => NoiseIndexing::FactualStep,
            IndexingName::PrefixLength => NoiseIndexing::PrefixLength,
        }
    }
}

#[derive(Debug, Args)]
pub struct InterveneArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub session: PathBuf,
    /// 1-based output position to replace; 0 replaces the prompt.
    #[arg(long)]
    pub position: u32,
    /// Replacement text, tokenized with the model's tokenizer (may be empty).
    #[arg(long, allow_hyphen_values = true)]
    pub replacement: String,
    #[arg(long, value_enum, default_value = "counterfactual")]
    pub mode: ModeName,
    /// Noise seed of the interventional mode.
    #[arg(long)]
    pub fresh_seed: Option<u64>,
    #[arg(long, value_enum, default_value = "factual-step")]
    pub noise_indexing: IndexingName,
    #[arg(long, value_enum, default_value = "positional")]
    pub diff: DiffMethod,
    /// Intervention record (JSON) to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub session: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GridSampler {
    Gumbel,
    Its,
    TopK,
    TopP,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Text whose lines the prompts are cut from. Defaults to the bundled
    /// corpus, which only fits the `tiny` model.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    pub prompts: usize,
    /// Words per prompt.
    #[arg(long, default_value_t = 2)]
    pub prompt_words: usize,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "gumbel")]
    pub samplers: Vec<GridSampler>,
    #[arg(long, value_delimiter = ',', default_value = "0.4,0.6,0.8,1.0,1.2")]
    pub taus: Vec<f64>,
    #[arg(long, default_value_t = 5)]
    pub top_k: usize,
    #[arg(long, default_value_t = 0.9)]
    pub top_p: f64,
    #[arg(long, default_value_t = 100)]
    pub max_steps: u32,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Per-session distances (CSV).
    #[arg(long)]
    pub out: PathBuf,
    /// Aggregates (CSV); printed to stdout when absent.
    #[arg(long)]
    pub aggregates: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BiasArgs {
    /// `tiny`, `planted`, `planted-edge`, an n-gram model file, or an
    /// http(s) endpoint.
    #[arg(long, default_value = "planted-edge")]
    pub model: String,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long, default_value = "words")]
    pub remote_tokenizer: Tokenizer,
    /// Attribute schema (TOML); the bundled schema when absent.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    /// Generation requests; each may yield several records.
    #[arg(long, default_value_t = 300)]
    pub sessions: usize,
    #[arg(long, default_value_t = 300)]
    pub max_steps: u32,
    #[arg(long, default_value_t = 12)]
    pub seed: u64,
    /// Per-record effects (CSV).
    #[arg(long)]
    pub out: PathBuf,
    /// Summary (CSV); printed to stdout when absent.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CorpusKind {
    /// The grammar corpus behind the `tiny` model.
    Tiny,
    /// Census-style records with planted dependencies.
    Planted,
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    #[arg(value_enum)]
    pub kind: CorpusKind,
    /// Lines of the tiny corpus.
    #[arg(long, default_value_t = TINY_LINES)]
    pub lines: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Plant a direct sex -> income edge.
    #[arg(long)]
    pub direct_edge: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Models to serve (repeatable); the first is the default.
    #[arg(long = "model", default_value = "tiny")]
    pub models: Vec<String>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long, default_value = "chars")]
    pub remote_tokenizer: Tokenizer,
    #[arg(long, env = "CF_ENGINE_STORE", default_value = "cf-store")]
    pub store: PathBuf,
    #[arg(long, env = "CF_ENGINE_BIND", default_value = "127.0.0.1:8080")]
    pub bind: String,
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

pub fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Train(a) => train(a),
        Command::Generate(a) => generate_cmd(a),
        Command::Intervene(a) => intervene_cmd(a),
        Command::Replay(a) => replay_cmd(a),
        Command::Experiment(a) => experiment(a),
        Command::Bias(a) => bias(a),
        Command::Corpus(a) => corpus(a),
        Command::Serve(a) => serve(a),
    }
}

fn train(a: TrainArgs) -> Result<ExitCode> {
    let text = std::fs::read_to_string(&a.corpus).with_context(|| format!("reading {}", a.corpus.display()))?;
    let m = NGramModel::train_text(&text, a.tokenizer, a.split, a.order, a.alpha)?;
    let mut w = output(Some(&a.out))?;
    m.write_to(&mut w)?;
    w.flush()?;
    eprintln!(
        "{}: {} tokens, {} contexts",
        m.model_id(),
        m.vocabulary().len(),
        m.context_count()
    );
    Ok(ExitCode::SUCCESS)
}

fn generate_cmd(a: GenerateArgs) -> Result<ExitCode> {
    let model = a.model.load()?;
    let prompt = model.encode(&a.prompt)?;
    let s = generate(model.provider.as_ref(), &prompt, a.sampler.config()?, a.seed, a.max_steps)?;
    s.save(&a.out)?;
    println!("{}", model.render(&s.full_sequence()));
    Ok(ExitCode::SUCCESS)
}

fn load_session(path: &Path) -> Result<GenerationSession> {
    GenerationSession::load(path).with_context(|| format!("reading session {}", path.display()))
}

fn intervene_cmd(a: InterveneArgs) -> Result<ExitCode> {
    let model = a.model.load()?;
    let session = load_session(&a.session)?;
    let req = InterventionRequest {
        position: a.position,
        replacement: model.encode(&a.replacement)?,
        mode: a.mode,
        fresh_seed: a.fresh_seed,
        noise_indexing: a.noise_indexing.into(),
        diff: a.diff,
    };
    let record = intervene(&model, &session, &req)?;
    if let Some(path) = &a.out {
        std::fs::write(path, serde_json::to_string_pretty(&record)? + "\n")?;
    }
    let changed = record.tokens.iter().filter(|t| t.flag == DiffFlag::Changed).count();
    println!("{}", record.text);
    eprintln!("{changed} of {} output tokens differ from the factual output", record.tokens.len());
    Ok(ExitCode::SUCCESS)
}

fn replay_cmd(a: ReplayArgs) -> Result<ExitCode> {
    let model = a.model.load()?;
    let session = load_session(&a.session)?;
    match replay(model.provider.as_ref(), &session)? {
        None => {
            println!("replay identical: {} output tokens", session.output.len());
            Ok(ExitCode::SUCCESS)
        }
        Some(d) => {
            eprintln!("replay diverged: {}", serde_json::to_string(&d)?);
            Ok(ExitCode::FAILURE)
        }
    }
}

fn experiment(a: ExperimentArgs) -> Result<ExitCode> {
    let model = a.model.load()?;
    let Some(ngram) = &model.ngram else {
        bail!("the experiment cuts prompts with an n-gram model's tokenizer; {} is not one", model.name);
    };
    let prompts = match &a.corpus {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            prompts_from(&text, ngram, a.prompts, a.prompt_words)?
        }
        None if model.name == "tiny" => prompts_from(tiny_corpus(), ngram, a.prompts, a.prompt_words)?,
        None => bail!("--corpus is required unless --model is tiny"),
    };
    let mut samplers = Vec::new();
    for kind in &a.samplers {
        for &tau in &a.taus {
            samplers.push(match kind {
                GridSampler::Gumbel => SamplerConfig::gumbel_max(tau),
                GridSampler::Its => SamplerConfig::inverse_transform(tau),
                GridSampler::TopK => SamplerConfig::top_k(tau, a.top_k),
                GridSampler::TopP => SamplerConfig::top_p(tau, a.top_p),
            });
        }
    }
    let cfg = SimilarityConfig::new(samplers, a.max_steps, a.seed);
    let result = run_similarity_experiment(model.provider.as_ref(), &prompts, &cfg)?;
    let mut rows = output(Some(&a.out))?;
    write_rows_csv(&result.rows, &mut rows)?;
    rows.flush()?;
    let mut aggs = output(a.aggregates.as_deref())?;
    write_aggregates_csv(&result.aggregates, &mut aggs)?;
    aggs.flush()?;
    eprintln!("{} sessions, {} skipped as too short", result.sessions, result.skipped);
    Ok(ExitCode::SUCCESS)
}

fn bias(a: BiasArgs) -> Result<ExitCode> {
    let remote = RemoteOptions {
        vocab: a.vocab.clone(),
        tokenizer: a.remote_tokenizer,
        context_limit: None,
    };
    let model = load_model(&a.model, &remote)?;
    let schema = match &a.schema {
        Some(p) => AttributeSchema::load(p).with_context(|| format!("reading schema {}", p.display()))?,
        None => desk_schema(),
    };
    let cfg = GenerationConfig {
        sampler: a.sampler.config()?,
        max_steps: a.max_steps,
        sessions: a.sessions,
        seed: a.seed,
    };
    let set = generate_records(model.provider.as_ref(), model.tokenizer, &schema, &cfg)?;
    let ctx = EffectContext {
        provider: model.provider.as_ref(),
        tokenizer: model.tokenizer,
        schema: &schema,
    };
    let effects = ctx.run(&set)?;
    let summary = summarize_effects(&effects, &schema)?;
    let mut w = output(Some(&a.out))?;
    write_effects_csv(&effects, &mut w)?;
    w.flush()?;
    let mut w = output(a.summary.as_deref())?;
    write_summary_csv(&summary, &mut w)?;
    w.flush()?;
    eprintln!(
        "{} records from {} sessions ({} zero-valued, {} malformed dropped)",
        set.records.len(),
        set.sessions.len(),
        set.excluded_zero,
        set.malformed
    );
    Ok(ExitCode::SUCCESS)
}

fn corpus(a: CorpusArgs) -> Result<ExitCode> {
    let text = match a.kind {
        CorpusKind::Tiny => generate_tiny_corpus(a.lines, a.seed.unwrap_or(TINY_SEED)),
        CorpusKind::Planted => planted_corpus(a.direct_edge, a.seed.unwrap_or(PLANTED_SEED)),
    };
    let mut w = output(a.out.as_deref())?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn serve(a: ServeArgs) -> Result<ExitCode> {
    let remote = RemoteOptions {
        vocab: a.vocab.clone(),
        tokenizer: a.remote_tokenizer,
        context_limit: None,
    };
    let models = a.models.iter().map(|m| load_model(m, &remote)).collect::<Result<Vec<_>>>()?;
    let state = AppState {
        store: Arc::new(SessionStore::open(&a.store)?),
        models: Arc::new(models),
    };
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&a.bind)
            .await
            .with_context(|| format!("binding {}", a.bind))?;
        eprintln!("listening on http://{} (store {})", listener.local_addr()?, a.store.display());
        axum::serve(listener, router(state)).await?;
        anyhow::Ok(())
    })?;
    Ok(ExitCode::SUCCESS)
}
