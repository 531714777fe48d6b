//! Command-line entry points.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sniff_core::analysis::{
    corpus_points, export_frequencies, export_scatter, human_centroids, project, term_frequencies, DescriptionCorpus,
    ModelGrouping, Stoplist, TsneConfig, HUMAN,
};
use sniff_core::catalogue::{build_embedding_store, Catalogue, EmbeddingStore};
use sniff_core::game::{generate_schedule, load_sessions};
use sniff_core::metrics::build_report;
use sniff_core::sim::{alignment_report, run_sim_task1, SimConfig};

use crate::api::AppState;
use crate::backends::{describer_from_flag, encoder_for_store, encoder_from_flag, MOCK};
use crate::config::ServiceConfig;

#[derive(Debug, Parser)]
#[command(name = "sniff", version, about = "Scent-description guessing game, simulation and analysis tools")]
pub struct Cli {
    /// Config file, JSON or key=value lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Encode the catalogue descriptions into an embedding store.
    EmbedCatalogue(EmbedArgs),
    /// Run the HTTP game service.
    Serve(ServeArgs),
    /// Let a language model describe every scent and guess from the descriptions.
    Simulate(SimulateArgs),
    /// Compute the statistics report from session logs.
    Metrics(MetricsArgs),
    /// Project description embeddings with t-SNE and count description terms.
    Analyze(AnalyzeArgs),
    /// Generate counterbalanced participant schedules.
    Schedule(ScheduleArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::EmbedCatalogue(_) => "embed-catalogue",
            Command::Serve(_) => "serve",
            Command::Simulate(_) => "simulate",
            Command::Metrics(_) => "metrics",
            Command::Analyze(_) => "analyze",
            Command::Schedule(_) => "schedule",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Provider {
    Mock,
    Remote,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    /// Catalogue JSON; the bundled catalogue if omitted.
    #[arg(long)]
    pub catalogue: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub provider: Provider,
    /// Remote embedding model id.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub dims: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub catalogue: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,
    #[arg(long)]
    pub log_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub catalogue: Option<PathBuf>,
    /// Existing store; built from the catalogue with the encoder if omitted.
    #[arg(long)]
    pub store: Option<PathBuf>,
    /// `fixture`, `fixture:<model_id>` or a remote model id.
    #[arg(long)]
    pub describer: String,
    /// Fixture corpus; the bundled synthetic corpus if omitted.
    #[arg(long)]
    pub fixtures: Option<PathBuf>,
    /// `mock` or a remote embedding model id.
    #[arg(long, default_value = MOCK)]
    pub encoder: String,
    #[arg(long)]
    pub dims: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub guesses: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Description corpus whose human centroids the model vectors are compared with.
    #[arg(long, requires = "alignment_out")]
    pub corpus: Option<PathBuf>,
    #[arg(long, requires = "corpus")]
    pub alignment_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub logs: PathBuf,
    #[arg(long)]
    pub catalogue: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Grouping {
    PerDescription,
    PerModelScent,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub catalogue: Option<PathBuf>,
    /// Only the t-SNE projection (both analyses run when neither flag is given).
    #[arg(long)]
    pub tsne: bool,
    /// Only the term frequencies.
    #[arg(long)]
    pub terms: bool,
    #[arg(long, value_enum, default_value_t = Grouping::PerDescription)]
    pub grouping: Grouping,
    #[arg(long)]
    pub perplexity: Option<f64>,
    #[arg(long, default_value_t = 1000)]
    pub iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScheduleArgs {
    #[arg(long)]
    pub participants: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub catalogue: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn load_catalogue(path: Option<&Path>) -> Result<Catalogue> {
    match path {
        Some(p) => Catalogue::load(p).with_context(|| format!("loading catalogue {}", p.display())),
        None => Ok(Catalogue::bundled()),
    }
}

fn load_store(path: &Path) -> Result<EmbeddingStore> {
    EmbeddingStore::load(path).with_context(|| format!("loading store {}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Keeps file-name-safe characters of a model id.
fn file_stem(source: &str) -> String {
    source
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

pub fn run(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(p) => ServiceConfig::load(p)?,
        None => ServiceConfig::default(),
    };
    match cli.command {
        Command::EmbedCatalogue(a) => embed_catalogue(a, &config),
        Command::Serve(a) => serve(a, config),
        Command::Simulate(a) => simulate(a, &config),
        Command::Metrics(a) => metrics(a),
        Command::Analyze(a) => analyze(a, &config),
        Command::Schedule(a) => schedule(a),
    }
}

fn embed_catalogue(a: EmbedArgs, config: &ServiceConfig) -> Result<()> {
    let catalogue = load_catalogue(a.catalogue.as_deref())?;
    let encoder = match a.provider {
        Provider::Mock => encoder_from_flag(MOCK, a.dims, &config.provider)?,
        Provider::Remote => {
            let model = a.model.as_deref().context("--provider remote needs --model")?;
            encoder_from_flag(model, a.dims, &config.provider)?
        }
    };
    let store = build_embedding_store(&catalogue, encoder.as_ref())?;
    store.save(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    Ok(())
}

fn serve(a: ServeArgs, config: ServiceConfig) -> Result<()> {
    let _ = tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .try_init();
    let catalogue = load_catalogue(a.catalogue.as_deref())?;
    let store = load_store(&a.store)?;
    let encoder = encoder_for_store(&store, &config.provider)?;
    let state = AppState::open(Arc::new(catalogue), Arc::new(store), encoder, config, &a.log_dir)?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(crate::api::serve(Arc::new(state), &a.addr))
}

fn simulate(a: SimulateArgs, config: &ServiceConfig) -> Result<()> {
    let catalogue = load_catalogue(a.catalogue.as_deref())?;
    let (store, encoder) = match &a.store {
        Some(p) => {
            let store = load_store(p)?;
            let encoder = if a.encoder == MOCK {
                encoder_for_store(&store, &config.provider)?
            } else {
                encoder_from_flag(&a.encoder, Some(a.dims.unwrap_or(store.dims())), &config.provider)?
            };
            (store, encoder)
        }
        None => {
            let encoder = encoder_from_flag(&a.encoder, a.dims, &config.provider)?;
            (build_embedding_store(&catalogue, encoder.as_ref())?, encoder)
        }
    };
    let describer = describer_from_flag(&a.describer, a.fixtures.as_deref(), &config.provider)?;
    let sim_config = SimConfig {
        guesses_allowed: a.guesses,
        ..SimConfig::default()
    };
    let report = run_sim_task1(&catalogue, &store, describer.as_ref(), encoder.as_ref(), &sim_config)?;
    write_json(&a.out, &report)?;
    if let (Some(corpus), Some(out)) = (&a.corpus, &a.alignment_out) {
        let corpus = DescriptionCorpus::load(corpus)?;
        let centroids = human_centroids(&corpus.human_groups(), encoder.as_ref())?;
        write_json(out, &alignment_report(&report, &centroids, &catalogue)?)?;
    }
    Ok(())
}

fn metrics(a: MetricsArgs) -> Result<()> {
    let catalogue = load_catalogue(a.catalogue.as_deref())?;
    let sessions = load_sessions(&a.logs).with_context(|| format!("reading logs in {}", a.logs.display()))?;
    if sessions.is_empty() {
        bail!("no session logs found in {}", a.logs.display());
    }
    write_json(&a.out, &build_report(&sessions, &catalogue))
}

#[derive(Serialize)]
struct TsneSummary {
    points: usize,
    perplexity: f64,
    iterations: usize,
    seed: u64,
    final_kl: f64,
    warnings: Vec<String>,
}

fn analyze(a: AnalyzeArgs, config: &ServiceConfig) -> Result<()> {
    let catalogue = load_catalogue(a.catalogue.as_deref())?;
    let corpus = DescriptionCorpus::load(&a.corpus).with_context(|| format!("loading corpus {}", a.corpus.display()))?;
    let (do_tsne, do_terms) = if a.tsne || a.terms { (a.tsne, a.terms) } else { (true, true) };
    fs::create_dir_all(&a.out)?;
    if do_tsne {
        let store = load_store(&a.store)?;
        let encoder = encoder_for_store(&store, &config.provider)?;
        let grouping = match a.grouping {
            Grouping::PerDescription => ModelGrouping::PerDescription,
            Grouping::PerModelScent => ModelGrouping::PerModelScent,
        };
        let points = corpus_points(&corpus, &catalogue, encoder.as_ref(), grouping)?;
        let tsne = TsneConfig {
            perplexity: a.perplexity,
            iterations: a.iters,
            seed: a.seed,
            ..TsneConfig::default()
        };
        let (projected, result) = project(&points, &catalogue, &tsne)?;
        export_scatter(&projected, a.out.join("tsne.svg"), a.out.join("tsne.csv"))?;
        write_json(
            &a.out.join("tsne.json"),
            &TsneSummary {
                points: projected.len(),
                perplexity: result.perplexity,
                iterations: a.iters,
                seed: a.seed,
                final_kl: result.final_kl(),
                warnings: result.warnings.clone(),
            },
        )?;
    }
    if do_terms {
        let stoplist = Stoplist::english_with_study_terms();
        let mut sources = vec![HUMAN.to_string()];
        sources.extend(corpus.model_sources());
        for source in sources {
            let texts: Vec<&str> = corpus
                .entries
                .iter()
                .filter(|e| e.source == source)
                .map(|e| e.text.as_str())
                .collect();
            let table = term_frequencies(&texts, &stoplist);
            let stem = format!("terms_{}", file_stem(&source));
            export_frequencies(&table, a.out.join(format!("{stem}.svg")), a.out.join(format!("{stem}.csv")))?;
        }
    }
    Ok(())
}

fn schedule(a: ScheduleArgs) -> Result<()> {
    let catalogue = load_catalogue(a.catalogue.as_deref())?;
    let schedules = generate_schedule(a.participants, &catalogue, a.seed)?;
    write_json(&a.out, &schedules)
}

/// One-line JSON error for stderr.
pub fn error_line(command: Option<&str>, err: &anyhow::Error) -> String {
    let message = format!("{err:#}").replace('\n', " ");
    serde_json::json!({ "error": message, "command": command }).to_string()
}
