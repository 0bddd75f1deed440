mod chat;
mod eval;
mod ingest;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use retrocrs_core::config::{BackendKind, ConfigOverrides, PipelineConfig};
use retrocrs_core::corpus::{compute_corpus_stats, Corpus, Speaker};
use retrocrs_core::demo::{config_for, World, WorldSpec};
use retrocrs_core::embedding::PrecomputedBackend;
use retrocrs_core::latent::{factorize, read_ratings};
use retrocrs_core::lexical::LexicalIndex;
use retrocrs_core::pipeline::{build_backend, Pipeline};
use retrocrs_core::retrieval::{ContextUtterance, DialogContext};
use retrocrs_core::session::SessionStore;
use retrocrs_core::text::{Preprocessor, StopWords};
use retrocrs_service::AppState;

/// Retrieval-based conversational movie recommender.
///
/// Settings come from built-in defaults, then the TOML file given with
/// --config, then RETROCRS_* environment variables (paths only), then flags.
#[derive(Debug, Parser)]
#[command(name = "retrocrs", version)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, env = "RETROCRS_CONFIG")]
    config: Option<PathBuf>,

    #[command(flatten)]
    overrides: OverrideArgs,

    /// Log more (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct OverrideArgs {
    /// Seed for splitting, factorization, sampling and shuffling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Candidates kept per context window.
    #[arg(long, global = true)]
    n: Option<usize>,
    /// Shortest candidate response, in words.
    #[arg(long, global = true)]
    min_words: Option<usize>,
    /// Longest candidate response, in words.
    #[arg(long, global = true)]
    max_words: Option<usize>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    boost_recommend: Option<i32>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    boost_chitchat: Option<i32>,
    #[arg(long, global = true)]
    latent_factors: Option<usize>,
    #[arg(long, global = true)]
    min_mean_rating: Option<f64>,
    #[arg(long, global = true)]
    min_rating_count: Option<u32>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    min_year: Option<i32>,
    /// Fraction of dialogs assigned to the train split when the corpus does not pin splits.
    #[arg(long, global = true)]
    train_ratio: Option<f64>,
    /// Embedding backend used for pruning: hashing, precomputed or http.
    #[arg(long, global = true, value_parser = parse_backend)]
    embedding_backend: Option<BackendKind>,
    /// Endpoint of the http embedding backend.
    #[arg(long, global = true)]
    embedding_url: Option<String>,
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    #[arg(long, global = true)]
    ratings: Option<PathBuf>,
    #[arg(long, global = true)]
    catalog: Option<PathBuf>,
    #[arg(long, global = true)]
    mapping: Option<PathBuf>,
    #[arg(long, global = true)]
    rules: Option<PathBuf>,
    #[arg(long, global = true)]
    embeddings: Option<PathBuf>,
    #[arg(long, global = true)]
    index: Option<PathBuf>,
    #[arg(long, global = true)]
    factors: Option<PathBuf>,
}

fn parse_backend(s: &str) -> Result<BackendKind, String> {
    serde_json::from_value(serde_json::Value::String(s.to_owned()))
        .map_err(|_| format!("unknown backend {s:?}, expected hashing, precomputed or http"))
}

impl OverrideArgs {
    fn to_overrides(&self) -> ConfigOverrides {
        ConfigOverrides {
            n: self.n,
            min_words: self.min_words,
            max_words: self.max_words,
            boost_recommend: self.boost_recommend,
            boost_chitchat: self.boost_chitchat,
            latent_factors: self.latent_factors,
            min_mean_rating: self.min_mean_rating,
            min_rating_count: self.min_rating_count,
            min_year: self.min_year,
            seed: self.seed,
            train_ratio: self.train_ratio,
            embedding_backend: self.embedding_backend,
            corpus: self.corpus.clone(),
            ratings: self.ratings.clone(),
            catalog: self.catalog.clone(),
            mapping: self.mapping.clone(),
            rules: self.rules.clone(),
            embeddings: self.embeddings.clone(),
            index: self.index.clone(),
            factors: self.factors.clone(),
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Convert raw data releases into retrocrs inputs.
    #[command(subcommand)]
    Ingest(ingest::IngestCommand),
    /// Build or inspect the lexical index.
    #[command(subcommand)]
    Index(IndexCommand),
    /// Factorize the rating matrix and save item vectors.
    Factorize {
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        /// Append each session to a JSONL journal in this directory.
        #[arg(long)]
        journal_dir: Option<PathBuf>,
    },
    /// Chat with the recommender on the terminal. Reads one utterance per line.
    Chat {
        /// Print the ranked candidates after each response.
        #[arg(long)]
        show_ranking: bool,
    },
    /// Offline study tooling.
    #[command(subcommand)]
    Eval(eval::EvalCommand),
    /// Length statistics of recommender utterances.
    Stats {
        /// Which split to measure: train, test or all.
        #[arg(long, default_value = "train", value_parser = ["train", "test", "all"])]
        split: String,
        #[arg(long)]
        json: bool,
    },
    /// Run one turn and print the ranked candidates.
    Respond {
        /// Seeker utterances, oldest first.
        #[arg(long = "text", required = true)]
        texts: Vec<String>,
        /// Print the full turn debug record as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Precompute embeddings for the pruning stage.
    #[command(subcommand)]
    Embeddings(EmbeddingsCommand),
    /// Write a small synthetic dataset and a matching config file.
    DemoData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = WorldSpec::default().dialogs)]
        dialogs: usize,
        #[arg(long, default_value_t = WorldSpec::default().movies)]
        movies: usize,
        #[arg(long, default_value_t = WorldSpec::default().users)]
        users: usize,
    },
    /// Print the effective configuration as TOML.
    Config,
}

#[derive(Debug, Subcommand)]
enum IndexCommand {
    /// Index the train-split seeker utterances.
    Build {
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the size of a saved index.
    Info {
        /// Index file; defaults to the configured index path.
        path: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum EmbeddingsCommand {
    /// Embed every train recommender utterance with the configured backend.
    Export {
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(level)),
        )
        .with_writer(std::io::stderr)
        .init();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut config = PipelineConfig::load(cli.config.as_deref())?;
    config.apply_env(|k| std::env::var(k).ok());
    config.apply(&cli.overrides.to_overrides());
    if let Some(url) = &cli.overrides.embedding_url {
        config.embedding.url = Some(url.clone());
    }
    config.validate()?;
    Ok(config)
}

pub(crate) fn required<'a>(path: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    match path {
        Some(p) => Ok(p),
        None => bail!("no {flag} given; pass --{flag} or set it in the config file"),
    }
}

pub(crate) fn load_corpus(config: &PipelineConfig) -> Result<Corpus> {
    let pre = match &config.paths.stopwords {
        Some(p) => Preprocessor::new(StopWords::load(p)?),
        None => Preprocessor::default(),
    };
    let path = required(&config.paths.corpus, "corpus")?;
    Corpus::load(path, config.split(), &pre).with_context(|| format!("loading corpus {}", path.display()))
}

pub(crate) fn assemble(config: PipelineConfig) -> Result<Pipeline> {
    Pipeline::assemble(config).context("assembling pipeline")
}

pub(crate) fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn run(cli: Cli) -> Result<()> {
    let config = load_config(&cli)?;
    match cli.command {
        Command::Ingest(cmd) => ingest::run(cmd, &config),
        Command::Index(IndexCommand::Build { out }) => {
            let corpus = load_corpus(&config)?;
            let index = LexicalIndex::build(corpus.train())?;
            index.save(&out)?;
            println!("indexed {} seeker utterances, {} terms -> {}", index.rows(), index.vocabulary_size(), out.display());
            Ok(())
        }
        Command::Index(IndexCommand::Info { path }) => {
            let path = match path {
                Some(p) => p,
                None => required(&config.paths.index, "index")?.to_owned(),
            };
            let index = LexicalIndex::load(&path)?;
            println!("rows: {}\nterms: {}", index.rows(), index.vocabulary_size());
            Ok(())
        }
        Command::Factorize { out } => {
            let ratings = read_ratings(required(&config.paths.ratings, "ratings")?)?;
            let space = factorize(&ratings, config.latent_factors, config.seed)?;
            space.save(&out)?;
            let sv: Vec<String> = space.singular_values().iter().map(|s| format!("{s:.3}")).collect();
            println!("{} ratings, {} factors -> {}", ratings.len(), space.factors(), out.display());
            println!("singular values: {}", sv.join(" "));
            Ok(())
        }
        Command::Serve { addr, journal_dir } => serve(config, &addr, journal_dir),
        Command::Chat { show_ranking } => {
            let journal = config.paths.journal_dir.clone();
            let pipeline = Arc::new(assemble(config)?);
            chat::repl(SessionStore::new(pipeline, journal), show_ranking)
        }
        Command::Eval(cmd) => eval::run(cmd, config),
        Command::Stats { split, json } => stats(&config, &split, json),
        Command::Respond { texts, json } => respond(config, &texts, json),
        Command::Embeddings(EmbeddingsCommand::Export { out }) => {
            if config.embedding.backend == BackendKind::Precomputed {
                bail!("choose a computing backend (hashing or http) to export embeddings");
            }
            let corpus = load_corpus(&config)?;
            let backend = build_backend(&config)?;
            let mut texts: Vec<&str> = corpus
                .train()
                .flat_map(|d| &d.utterances)
                .filter(|u| u.speaker == Speaker::Recommender)
                .map(|u| u.raw_text.as_str())
                .collect();
            texts.sort_unstable();
            texts.dedup();
            let mut w = create(&out)?;
            let n = PrecomputedBackend::export(backend.as_ref(), texts, &mut w)?;
            w.flush()?;
            println!("{n} embeddings from {} -> {}", backend.name(), out.display());
            Ok(())
        }
        Command::DemoData { out, dialogs, movies, users } => {
            let spec = WorldSpec { dialogs, movies, users, seed: config.seed, ..WorldSpec::default() };
            std::fs::create_dir_all(&out)?;
            let out = out.canonicalize()?;
            let paths = World::generate(&spec).write(&out)?;
            let toml_path = out.join("retrocrs.toml");
            std::fs::write(&toml_path, config_for(&paths).to_toml())?;
            println!("wrote synthetic data to {}\nconfig: {}", out.display(), toml_path.display());
            Ok(())
        }
        Command::Config => {
            print!("{}", config.to_toml());
            Ok(())
        }
    }
}

fn stats(config: &PipelineConfig, split: &str, json: bool) -> Result<()> {
    let corpus = load_corpus(config)?;
    let dialogs: Vec<_> = match split {
        "train" => corpus.train().collect(),
        "test" => corpus.test().collect(),
        _ => corpus.dialogs().iter().collect(),
    };
    let s = compute_corpus_stats(dialogs.iter().copied(), config.min_words, config.max_words)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&s)?);
    } else {
        println!("split: {split}");
        println!("dialogs: {}", dialogs.len());
        println!("recommender utterances: {}", s.recommender_utterances);
        println!(
            "mean response length: {:.2} words (sd {:.2})",
            s.mean_recommender_response_length, s.sd_recommender_response_length
        );
        println!("within [{}, {}] words: {:.3}", s.lower, s.upper, s.fraction_within_length_bounds);
    }
    Ok(())
}

fn respond(config: PipelineConfig, texts: &[String], json: bool) -> Result<()> {
    let pipeline = assemble(config)?;
    let ctx = DialogContext::new(texts.iter().map(|t| ContextUtterance::seeker(t.clone())).collect())?;
    let out = pipeline.respond(&ctx, &pipeline.default_params(), &[]);
    if json {
        println!("{}", serde_json::to_string_pretty(&out)?);
        return Ok(());
    }
    println!("{}", out.response.text);
    if let Some(reason) = &out.fallback_reason {
        println!("fallback: {reason}");
    }
    if let Some(ranking) = &out.debug.ranking {
        println!("intent: {:?}", ranking.intent.kind);
        for (i, r) in ranking.ranked.iter().enumerate() {
            let c = &r.candidate;
            println!(
                "{:>2} {:>8.3} {:>+3} {:>8.3}  {}#{}  {}",
                i + 1,
                r.fluency_score,
                r.intent_boost,
                r.final_score,
                c.source.dialog_id,
                c.source.turn_index,
                c.raw_text
            );
        }
    }
    Ok(())
}

fn serve(config: PipelineConfig, addr: &str, journal_dir: Option<PathBuf>) -> Result<()> {
    let journal = journal_dir.or_else(|| config.paths.journal_dir.clone());
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        let state = AppState::loading(config.turn_timeout());
        let loader = state.clone();
        tokio::task::spawn_blocking(move || match Pipeline::assemble(config) {
            Ok(p) => {
                loader.install(SessionStore::new(Arc::new(p), journal));
                tracing::info!("pipeline ready");
            }
            Err(e) => {
                eprintln!("error: assembling pipeline: {e}");
                std::process::exit(1);
            }
        });
        retrocrs_service::serve(listener, state).await?;
        Ok(())
    })
}
