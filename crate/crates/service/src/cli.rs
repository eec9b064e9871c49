//! Command-line interface of the `pinview` binary.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use pinview_core::corpus::{ingest_directory, Corpus, FeatureSpec};
use pinview_core::relevance::{train_predictor, RelevancePredictor, RelevanceTrainingSet, TrainingOptions};
use pinview_core::session::{Modality, SearchContext};
use pinview_core::sim::{
    generate_synthetic_corpus, generate_synthetic_pool, grid_search, load_recorded_pool, read_pool_tsv,
    run_experiment, ExperimentConfig, ExperimentResult, GridSearch, SimPool, SyntheticCorpusConfig,
    SyntheticPoolConfig,
};
use serde::Serialize;

use crate::config::ServiceConfig;
use crate::error::ServiceError;
use crate::state::AppState;
use crate::store::StoreLayout;

#[derive(Debug, Parser)]
#[command(name = "pinview", version, about = "Image retrieval with gaze and click relevance feedback")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Data directory; overrides the config file and PINVIEW_DATA_DIR.
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract features from a directory of images and store the corpus.
    Ingest(IngestArgs),
    /// Fit the gaze relevance predictor.
    TrainRelevance(TrainArgs),
    /// Run an offline experiment with simulated feedback.
    Simulate(SimulateArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
    /// Write a synthetic corpus with planted category signatures.
    SynthCorpus(SynthArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Directory of images, optionally with labels.json and features.tsv.
    pub dir: PathBuf,
    /// Corpus name; defaults to the directory name.
    #[arg(long)]
    pub name: Option<String>,
    /// Imported feature `name:dim` read from features.tsv. Repeatable.
    #[arg(long = "import", value_parser = parse_import)]
    pub imports: Vec<(String, usize)>,
}

fn parse_import(s: &str) -> Result<(String, usize), String> {
    let (name, dim) = s.split_once(':').ok_or("expected name:dim")?;
    let dim: usize = dim.parse().map_err(|_| format!("bad dimension `{dim}`"))?;
    if name.is_empty() || dim == 0 {
        return Err("name must be non-empty and dim >= 1".into());
    }
    Ok((name.to_string(), dim))
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false, id = "source")]
pub struct TrainSource {
    /// Labelled feature rows as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Directory of recorded gaze logs with collage metadata.
    #[arg(long)]
    pub recorded: Option<PathBuf>,
    /// Synthetic pool with this class separation.
    #[arg(long)]
    pub synthetic: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub source: TrainSource,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Weight added to the score of a clicked image.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Store the model for this corpus instead of as the default.
    #[arg(long)]
    pub corpus: Option<String>,
    /// Output file; defaults to the data directory's predictor slot.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Corpus directory, or the name of a corpus in the data directory.
    #[arg(long)]
    pub corpus: String,
    #[arg(long, value_parser = parse_modality)]
    pub modality: Modality,
    #[arg(long, default_value_t = 40)]
    pub sessions: usize,
    #[arg(long, default_value_t = 10)]
    pub rounds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Recorded pool: a directory of gaze logs or a TSV file.
    #[arg(long)]
    pub pool: Option<PathBuf>,
    /// Class separation of the synthetic pool used without --pool.
    #[arg(long, default_value_t = 3.0)]
    pub separation: f64,
    /// Predictor JSON; trained on an independent pool when absent.
    #[arg(long)]
    pub predictor: Option<PathBuf>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Comma-separated categories; all when absent.
    #[arg(long, value_delimiter = ',')]
    pub categories: Vec<String>,
    /// Enable the tensor stage.
    #[arg(long)]
    pub tensor: bool,
    /// Grid-search mu (and alpha for gaze-click) first, then run at the best point.
    #[arg(long)]
    pub grid: bool,
}

fn parse_modality(s: &str) -> Result<Modality, String> {
    s.parse().map_err(|_| {
        let names: Vec<&str> = Modality::ALL.iter().map(|m| m.as_str()).collect();
        format!("unknown modality `{s}`; expected one of {}", names.join(", "))
    })
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub host: Option<String>,
    #[arg(long)]
    pub port: Option<u16>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value = "synthetic")]
    pub name: String,
    #[arg(long, default_value_t = 1000)]
    pub images: usize,
    #[arg(long, default_value_t = 10)]
    pub categories: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory; defaults to the data directory's corpus slot.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
pub struct SimulationOutput {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSearch>,
    pub result: ExperimentResult,
}

pub fn service_config(cli: &Cli) -> Result<ServiceConfig, ServiceError> {
    let mut config = ServiceConfig::load(cli.config.as_deref())?;
    if let Some(dir) = &cli.data_dir {
        config.data_dir = dir.clone();
    }
    Ok(config)
}

pub fn run(cli: Cli) -> Result<(), ServiceError> {
    let config = service_config(&cli)?;
    let layout = StoreLayout::new(&config.data_dir);
    match cli.command {
        Command::Ingest(args) => ingest(&layout, &args).map(|_| ()),
        Command::TrainRelevance(args) => train(&layout, &args).map(|_| ()),
        Command::Simulate(args) => simulate(&layout, &args).map(|_| ()),
        Command::SynthCorpus(args) => synth_corpus(&layout, &args).map(|_| ()),
        Command::Serve(args) => {
            let mut config = config;
            if let Some(h) = args.host {
                config.host = h;
            }
            if let Some(p) = args.port {
                config.port = p;
            }
            serve(config)
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), ServiceError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| ServiceError::Io(parent.to_path_buf(), e))?;
    }
    std::fs::write(path, bytes).map_err(|e| ServiceError::Io(path.to_path_buf(), e))
}

/// Returns the directory the corpus was saved to.
pub fn ingest(layout: &StoreLayout, args: &IngestArgs) -> Result<PathBuf, ServiceError> {
    let dir = args.dir.canonicalize().map_err(|e| ServiceError::Io(args.dir.clone(), e))?;
    let mut specs = FeatureSpec::all_computed();
    specs.extend(args.imports.iter().map(|(n, d)| FeatureSpec::imported(n, *d)));
    let report = ingest_directory(&dir, &specs)?;
    for w in &report.skipped {
        log::warn!("skipped {}: {}", w.path, w.reason);
    }
    let mut corpus = report.corpus;
    if let Some(name) = &args.name {
        corpus = Corpus::new(name.clone(), corpus.specs().to_vec(), corpus.images().to_vec())?;
    }
    corpus.validate_complete()?;
    let out = layout.corpus_dir(corpus.name());
    corpus.save(&out)?;
    println!("ingested {} images into {} ({} skipped)", corpus.len(), out.display(), report.skipped.len());
    Ok(out)
}

pub fn train(layout: &StoreLayout, args: &TrainArgs) -> Result<PathBuf, ServiceError> {
    let set = if let Some(csv) = &args.source.csv {
        let file = std::fs::File::open(csv).map_err(|e| ServiceError::Io(csv.clone(), e))?;
        RelevanceTrainingSet::read_csv(file)?
    } else if let Some(dir) = &args.source.recorded {
        load_recorded_pool(dir)?.training_set()
    } else {
        let separation = args.source.synthetic.expect("clap requires one source");
        generate_synthetic_pool(&SyntheticPoolConfig::with_separation(separation), args.seed)?.training_set()
    };
    let mut options = TrainingOptions { seed: args.seed, ..Default::default() };
    if let Some(a) = args.alpha {
        options.alpha = a;
    }
    let model = train_predictor(&set, &options)?;
    let out = args.out.clone().unwrap_or_else(|| {
        layout.predictor_path(args.corpus.as_deref().unwrap_or(crate::store::DEFAULT_PREDICTOR))
    });
    write_file(&out, model.to_json()?.as_bytes())?;
    println!("trained on {} rows; wrote {}", set.rows.len(), out.display());
    Ok(out)
}

fn load_corpus(layout: &StoreLayout, spec: &str) -> Result<Corpus, ServiceError> {
    let path = Path::new(spec);
    let dir = if path.is_dir() { path.to_path_buf() } else { layout.corpus_dir(spec) };
    if !dir.is_dir() {
        return Err(ServiceError::NotFound(format!("no corpus at `{spec}`")));
    }
    Ok(Corpus::load(&dir)?)
}

fn load_pool(path: &Path) -> Result<SimPool, ServiceError> {
    if path.is_dir() {
        Ok(load_recorded_pool(path)?)
    } else {
        let file = std::fs::File::open(path).map_err(|e| ServiceError::Io(path.to_path_buf(), e))?;
        Ok(read_pool_tsv(std::io::BufReader::new(file))?)
    }
}

/// Seed of the independent pool the predictor is trained on.
const PREDICTOR_POOL_SALT: u64 = 0x7072_6564;

pub fn simulate(layout: &StoreLayout, args: &SimulateArgs) -> Result<SimulationOutput, ServiceError> {
    let corpus = load_corpus(layout, &args.corpus)?;
    let pool = match &args.pool {
        Some(p) => load_pool(p)?,
        None => generate_synthetic_pool(&SyntheticPoolConfig::with_separation(args.separation), args.seed)?,
    };
    let predictor = match &args.predictor {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| ServiceError::Io(p.clone(), e))?;
            RelevancePredictor::from_json(&text)?
        }
        None if args.pool.is_some() => train_predictor(&pool.training_set(), &TrainingOptions::default())?,
        None => {
            let cfg = SyntheticPoolConfig::with_separation(args.separation);
            let independent = generate_synthetic_pool(&cfg, args.seed ^ PREDICTOR_POOL_SALT)?;
            train_predictor(&independent.training_set(), &TrainingOptions::default())?
        }
    };
    let context = SearchContext::new(corpus, predictor)?;
    let mut config = ExperimentConfig {
        sessions: args.sessions,
        rounds: args.rounds,
        seed: args.seed,
        alpha: args.alpha,
        categories: (!args.categories.is_empty()).then(|| args.categories.clone()),
        ..ExperimentConfig::new(args.modality)
    };
    if let Some(mu) = args.mu {
        config.mu = mu;
    }
    if let Some(c) = args.c {
        config.c = c;
    }
    config.tensor.enabled = args.tensor;
    let pool = args.modality.uses_gaze().then_some(&pool);
    let grid = if args.grid {
        let g = grid_search(&context, pool, &config)?;
        config.mu = g.best_mu;
        config.alpha = g.best_alpha;
        Some(g)
    } else {
        None
    };
    let result = run_experiment(&context, pool, &config)?;
    let output = SimulationOutput { grid, result };
    let json = serde_json::to_vec_pretty(&output).map_err(|e| ServiceError::Internal(e.to_string()))?;
    write_file(&args.out, &json)?;
    println!(
        "{} over {} categories: macro MAP {:.4}; wrote {}",
        args.modality,
        output.result.per_category.len(),
        output.result.macro_map,
        args.out.display()
    );
    Ok(output)
}

pub fn synth_corpus(layout: &StoreLayout, args: &SynthArgs) -> Result<PathBuf, ServiceError> {
    let config = SyntheticCorpusConfig {
        name: args.name.clone(),
        images: args.images,
        categories: args.categories,
        ..Default::default()
    };
    let corpus = generate_synthetic_corpus(&config, args.seed)?;
    let out = args.out.clone().unwrap_or_else(|| layout.corpus_dir(&args.name));
    corpus.save(&out)?;
    println!("wrote {} images in {} categories to {}", corpus.len(), corpus.categories().len(), out.display());
    Ok(out)
}

pub fn serve(config: ServiceConfig) -> Result<(), ServiceError> {
    let state = Arc::new(AppState::open(&config)?);
    let runtime = tokio::runtime::Runtime::new().map_err(|e| ServiceError::Internal(e.to_string()))?;
    runtime.block_on(async move {
        let addr = format!("{}:{}", config.host, config.port);
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| ServiceError::Config(format!("cannot bind {addr}: {e}")))?;
        log::info!("listening on http://{addr}");
        axum::serve(listener, crate::router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| ServiceError::Internal(e.to_string()))
    })
}
