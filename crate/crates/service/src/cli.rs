//! The `whittle` command line.

use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use whittle_core::active::LikelihoodKind;
use whittle_core::eval::episode::derive_seed;
use whittle_core::eval::experiment::query_seed;
use whittle_core::eval::{
    build_index, run_episode, run_experiment, DatasetSource, EvalContext, ExperimentConfig, Policy,
};
use whittle_core::pivots::{load_trees, save_trees};
use whittle_core::ranker::train_models;
use whittle_core::{load_manifest, save_manifest, synthesize_dataset, ModelSet, SearchIndex, SynthConfig, TrainConfig};

use crate::engine::{Engine, EngineConfig};
use crate::http::{router, AppState};

pub type CliResult<T = ()> = Result<T, Box<dyn std::error::Error + Send + Sync>>;

#[derive(Debug, Parser)]
#[command(name = "whittle", version, about = "Interactive image search with relative attribute feedback")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset manifest.
    Synth(SynthArgs),
    /// Train attribute rankers and calibrations.
    Train(TrainArgs),
    /// Build the per-attribute pivot trees.
    Index(IndexArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
    /// Run one simulated search and print its trajectory.
    Simulate(SimulateArgs),
    /// Run an experiment and write results.csv and curves.json.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 10)]
    pub d: usize,
    #[arg(long, default_value_t = 6)]
    pub m: usize,
    #[arg(long, default_value_t = 500)]
    pub pairs: usize,
    /// Label flip probability.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = TrainConfig::default().c)]
    pub c: f64,
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    pub epochs: usize,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, required_unless_present = "synthetic")]
    pub dataset: Option<PathBuf>,
    /// Trained on start-up when absent.
    #[arg(long, requires = "dataset")]
    pub model: Option<PathBuf>,
    #[arg(long, requires = "model")]
    pub index: Option<PathBuf>,
    /// Serve a synthetic dataset of this many images instead.
    #[arg(long, conflicts_with = "dataset")]
    pub synthetic: Option<usize>,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Idle seconds before a session is dropped.
    #[arg(long, default_value_t = 3600)]
    pub ttl_secs: u64,
    #[arg(long, default_value = "most_relevant")]
    pub likelihood: String,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value = "ACTIVE_PIVOTS")]
    pub policy: String,
    /// Random when absent.
    #[arg(long)]
    pub target: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub query: usize,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli, out: &mut impl Write) -> CliResult {
    match cli.command {
        Command::Synth(a) => synth(a, out),
        Command::Train(a) => train(a, out),
        Command::Index(a) => index(a, out),
        Command::Serve(a) => serve(a),
        Command::Simulate(a) => simulate(a, out),
        Command::Evaluate(a) => evaluate(a, out),
    }
}

fn synth(a: SynthArgs, out: &mut impl Write) -> CliResult {
    let cfg = SynthConfig {
        pairs_per_attribute: a.pairs,
        noise_sd: a.noise,
        ..SynthConfig::shoes(a.n, a.d, a.m, a.seed)
    };
    let manifest = synthesize_dataset(&cfg)?;
    save_manifest(&manifest, &a.out)?;
    writeln!(
        out,
        "wrote {} images, {} comparisons to {}",
        manifest.n,
        manifest.comparisons.len(),
        a.out.display()
    )?;
    Ok(())
}

fn train(a: TrainArgs, out: &mut impl Write) -> CliResult {
    let manifest = load_manifest(&a.dataset)?;
    let cfg = TrainConfig {
        c: a.c,
        epochs: a.epochs,
        ..TrainConfig::default()
    };
    let models = train_models(&manifest, &cfg)?;
    models.save(&a.out)?;
    for (name, m) in models.attribute_names.iter().zip(&models.models) {
        writeln!(out, "{name:<16} violation rate {:.4}", m.train_violation_rate)?;
    }
    Ok(())
}

fn index(a: IndexArgs, out: &mut impl Write) -> CliResult {
    let manifest = load_manifest(&a.dataset)?;
    let models = ModelSet::load(&a.model)?;
    let index = SearchIndex::build(&manifest, &models)?;
    save_trees(&index.trees, &index.attribute_names, &a.out)?;
    for (name, t) in index.attribute_names.iter().zip(&index.trees) {
        writeln!(out, "{name:<16} {} nodes, depth {}", t.len(), t.depth())?;
    }
    Ok(())
}

fn load_index(a: &ServeArgs) -> CliResult<SearchIndex> {
    if let Some(n) = a.synthetic {
        let source = DatasetSource::Synthetic(SynthConfig::shoes(n, 10, 6, 0));
        return Ok(build_index(&source, &TrainConfig::default())?);
    }
    let dataset = a.dataset.as_ref().ok_or("--dataset or --synthetic is required")?;
    let manifest = load_manifest(dataset)?;
    let models = match &a.model {
        Some(p) => ModelSet::load(p)?,
        None => train_models(&manifest, &TrainConfig::default())?,
    };
    Ok(match &a.index {
        Some(p) => SearchIndex::with_trees(&manifest, &models, load_trees(p, &manifest.attribute_names)?)?,
        None => SearchIndex::build(&manifest, &models)?,
    })
}

fn parse_likelihood(s: &str) -> CliResult<LikelihoodKind> {
    Ok(serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase()))
        .map_err(|_| format!("unknown likelihood model {s:?}"))?)
}

fn serve(a: ServeArgs) -> CliResult {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .init();
    let index = load_index(&a)?;
    tracing::info!(dataset = %index.name, n = index.n(), m = index.m(), "index ready");
    let config = EngineConfig {
        ttl: Duration::from_secs(a.ttl_secs),
        likelihood: parse_likelihood(&a.likelihood)?,
        ..EngineConfig::default()
    };
    let engine = Arc::new(Engine::new(config).with_dataset(index));
    let addr: SocketAddr = format!("{}:{}", a.host, a.port).parse()?;
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async move {
        let sweeper = engine.clone();
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(Duration::from_secs(60));
            loop {
                tick.tick().await;
                let dropped = sweeper.evict_expired();
                if dropped > 0 {
                    tracing::info!(dropped, "evicted idle sessions");
                }
            }
        });
        let listener = tokio::net::TcpListener::bind(addr).await?;
        tracing::info!(%addr, "listening");
        axum::serve(listener, router(AppState::new(engine)))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

fn simulate(a: SimulateArgs, out: &mut impl Write) -> CliResult {
    let config = ExperimentConfig::load(&a.config)?;
    let policy: Policy = a.policy.parse()?;
    let index = build_index(&config.dataset, &config.train)?;
    let seed = query_seed(config.seed, a.query);
    let target = a
        .target
        .unwrap_or_else(|| (derive_seed(seed, 0x7a) % index.n() as u64) as usize);
    let ctx = EvalContext::new(&index, config.episode.clone())?;
    let ep = run_episode(&ctx, policy, target, seed)?;
    writeln!(out, "policy {policy}, target {target}")?;
    writeln!(out, "iter  percentile  ndcg    entropy   question")?;
    for (k, r) in ep.records.iter().enumerate() {
        let q = match k.checked_sub(1).and_then(|i| ep.questions.get(i)) {
            Some(q) => format!("{} vs image {}", index.attribute_names[q.attribute], q.pivot_image),
            None => String::new(),
        };
        let h = r.entropy.map_or("-".to_string(), |h| format!("{h:.2}"));
        writeln!(out, "{:>4}  {:>10.4}  {:.4}  {:>8}  {q}", r.iteration, r.percentile_rank, r.ndcg, h)?;
    }
    if ep.exhausted {
        writeln!(out, "ran out of questions")?;
    }
    Ok(())
}

fn evaluate(a: EvaluateArgs, out: &mut impl Write) -> CliResult {
    let config = ExperimentConfig::load(&a.config)?;
    let report = run_experiment(&config)?;
    report.write(&a.out)?;
    let last = report.iterations;
    for run in &report.runs {
        if let Some(row) = report.row(run.policy, last) {
            writeln!(
                out,
                "{:<20} mean percentile {:.4} at iteration {last} ({} episodes, {} failed)",
                run.policy.name(),
                row.mean_percentile_rank,
                row.episodes,
                row.failed
            )?;
        }
    }
    writeln!(out, "wrote {}", a.out.display())?;
    Ok(())
}
