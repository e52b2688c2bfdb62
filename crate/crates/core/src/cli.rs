//! Command-line front end: `run`, `genenv`, `analyze`, `serve`.
//!
//! Every setting resolves as flag, then environment variable, then the TOML file
//! given by `--config`, then the built-in default.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::agent::{AgentConfig, Termination};
use crate::analyzer::{
    cost_report, reasoning_summary, render_cost_table, render_usage_table, usage_rates, PatternLibrary,
};
use crate::configurator::{genenv, parse_records, ConfiguratorOptions, SplitPolicy};
use crate::model::{HttpModelClient, ModelClient, ModelTurn, ProfileRegistry, ScriptedModel};
use crate::rewards::{EvaluatorRegistry, ScoringMode};
use crate::rollout::{load_run, run_suite, Mode, RunContext, RunOptions};
use crate::sandbox::{ContainerRuntime, DockerRuntime, NamespaceRuntime, SandboxConfig, SandboxFleet};
use crate::service::{Service, ServiceBackends, ServiceConfig};
use crate::task::load_suite;
use crate::toy::{toy_suite, ToySolver};

#[derive(Debug, Parser)]
#[command(name = "sandbox-rollout", version, about = "Run, generate, analyze and serve sandboxed model episodes")]
pub struct Cli {
    /// TOML file with defaults for any flag (keys use underscores).
    #[arg(long, global = true, env = "SANDBOX_ROLLOUT_CONFIG")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a task suite and write a run directory.
    Run(RunArgs),
    /// Turn a context dataset into a sandbox task suite.
    Genenv(GenenvArgs),
    /// Capability usage, reasoning and cost reports for runs or turn logs.
    Analyze(AnalyzeArgs),
    /// Serve episode rollouts over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Args)]
pub struct BackendArgs {
    /// Profile name from the built-in table or --profiles.
    #[arg(long, env = "SANDBOX_ROLLOUT_PROFILE")]
    pub profile: Option<String>,
    /// Extra `[profiles.<name>]` tables layered over the built-ins.
    #[arg(long, env = "SANDBOX_ROLLOUT_PROFILES")]
    pub profiles: Option<PathBuf>,
    /// Overrides the profile's endpoint URL.
    #[arg(long, env = "SANDBOX_ROLLOUT_ENDPOINT")]
    pub endpoint: Option<String>,
    /// http, toy (built-in arithmetic solver) or replay.
    #[arg(long, env = "SANDBOX_ROLLOUT_BACKEND")]
    pub backend: Option<String>,
    /// JSONL of model turns for the replay backend.
    #[arg(long)]
    pub replay: Option<PathBuf>,
    /// namespace or docker.
    #[arg(long, env = "SANDBOX_ROLLOUT_RUNTIME")]
    pub runtime: Option<String>,
    #[arg(long, env = "SANDBOX_ROLLOUT_IMAGE")]
    pub image: Option<String>,
    #[arg(long)]
    pub docker_bin: Option<String>,
    /// Where the namespace runtime keeps per-sandbox state.
    #[arg(long)]
    pub state_root: Option<PathBuf>,
    /// Give sandboxes network access.
    #[arg(long)]
    pub network: Option<bool>,
    #[arg(long)]
    pub memory_limit_mb: Option<u64>,
    #[arg(long)]
    pub max_turns: Option<u32>,
    #[arg(long)]
    pub soft_timeout_secs: Option<u64>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Task suite (JSONL).
    #[arg(long, conflicts_with = "toy")]
    pub suite: Option<PathBuf>,
    /// Use the built-in five-task arithmetic suite.
    #[arg(long)]
    pub toy: bool,
    /// Run directory; must not hold a finished run.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// sandbox or plain-llm.
    #[arg(long, env = "SANDBOX_ROLLOUT_MODE")]
    pub mode: Option<Mode>,
    #[arg(long, env = "SANDBOX_ROLLOUT_CONCURRENCY")]
    pub concurrency: Option<usize>,
    /// rl or eval.
    #[arg(long, env = "SANDBOX_ROLLOUT_SCORING")]
    pub scoring: Option<String>,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Args)]
pub struct GenenvArgs {
    /// JSONL of context records.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, short)]
    pub out: PathBuf,
    #[arg(long)]
    pub distractors: Option<usize>,
    #[arg(long)]
    pub chunk_bytes: Option<usize>,
    #[arg(long)]
    pub long_doc_bytes: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Run directories or turn-log files.
    #[arg(required = true)]
    pub paths: Vec<PathBuf>,
    /// Run directory to compare QPM and tokens against.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    /// Pattern library TOML replacing the built-in one.
    #[arg(long)]
    pub patterns: Option<PathBuf>,
    /// Print one JSON object instead of tables.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "SANDBOX_ROLLOUT_BIND")]
    pub bind: Option<String>,
    #[arg(long, env = "SANDBOX_ROLLOUT_AUTH_TOKEN", hide_env_values = true)]
    pub auth_token: Option<String>,
    /// Directory of the episode store.
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub queue_capacity: Option<usize>,
    /// Mode for requests that do not name one.
    #[arg(long)]
    pub mode: Option<Mode>,
    #[command(flatten)]
    pub backend: BackendArgs,
}

/// The `--config` file. Every key is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub profile: Option<String>,
    pub profiles: Option<PathBuf>,
    pub endpoint: Option<String>,
    pub backend: Option<String>,
    pub replay: Option<PathBuf>,
    pub runtime: Option<String>,
    pub image: Option<String>,
    pub docker_bin: Option<String>,
    pub state_root: Option<PathBuf>,
    pub network: Option<bool>,
    pub memory_limit_mb: Option<u64>,
    pub max_turns: Option<u32>,
    pub soft_timeout_secs: Option<u64>,
    pub mode: Option<Mode>,
    pub concurrency: Option<usize>,
    pub scoring: Option<String>,
    pub bind: Option<String>,
    pub auth_token: Option<String>,
    pub store: Option<PathBuf>,
    pub workers: Option<usize>,
    pub queue_capacity: Option<usize>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Settings for model and sandbox backends after precedence is applied.
#[derive(Debug, Clone)]
pub struct Backend {
    pub profile: String,
    pub profiles: Option<PathBuf>,
    pub endpoint: Option<String>,
    pub backend: String,
    pub replay: Option<PathBuf>,
    pub runtime: String,
    pub image: String,
    pub docker_bin: String,
    pub state_root: Option<PathBuf>,
    pub network: bool,
    pub memory_limit_mb: Option<u64>,
    pub max_turns: Option<u32>,
    pub soft_timeout_secs: Option<u64>,
}

impl Backend {
    pub fn resolve(args: &BackendArgs, file: &FileConfig) -> Self {
        let b = args.clone();
        let image = b.image.or(file.image.clone());
        Self {
            profile: b.profile.or(file.profile.clone()).unwrap_or_else(|| "toy".into()),
            profiles: b.profiles.or(file.profiles.clone()),
            endpoint: b.endpoint.or(file.endpoint.clone()),
            backend: b.backend.or(file.backend.clone()).unwrap_or_else(|| "http".into()),
            replay: b.replay.or(file.replay.clone()),
            runtime: b.runtime.or(file.runtime.clone()).unwrap_or_else(|| "namespace".into()),
            image: image.unwrap_or_else(|| SandboxConfig::default().image),
            docker_bin: b.docker_bin.or(file.docker_bin.clone()).unwrap_or_else(|| "docker".into()),
            state_root: b.state_root.or(file.state_root.clone()),
            network: b.network.or(file.network).unwrap_or(true),
            memory_limit_mb: b.memory_limit_mb.or(file.memory_limit_mb),
            max_turns: b.max_turns.or(file.max_turns),
            soft_timeout_secs: b.soft_timeout_secs.or(file.soft_timeout_secs),
        }
    }

    pub fn registry(&self) -> Result<ProfileRegistry> {
        let mut registry = ProfileRegistry::builtin();
        if let Some(path) = &self.profiles {
            registry = registry.merged(ProfileRegistry::from_toml_file(path)?);
        }
        if !registry.profiles.contains_key(&self.profile) && self.backend != "http" {
            // Offline backends ignore sampling settings; any name will do.
            registry.profiles.insert(self.profile.clone(), crate::model::ModelProfile::new(self.profile.clone()));
        }
        if let Some(url) = &self.endpoint {
            for p in registry.profiles.values_mut() {
                p.endpoint_url = url.clone();
            }
        }
        registry.get(&self.profile).with_context(|| {
            let names: Vec<&str> = registry.names().collect();
            format!("known profiles: {}", names.join(", "))
        })?;
        Ok(registry)
    }

    pub fn model(&self, connections: usize) -> Result<Arc<dyn ModelClient>> {
        Ok(match self.backend.as_str() {
            "toy" => Arc::new(ToySolver),
            "replay" => {
                let path = self.replay.as_ref().context("the replay backend needs --replay <turns.jsonl>")?;
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                let turns = text
                    .lines()
                    .enumerate()
                    .filter(|(_, l)| !l.trim().is_empty())
                    .map(|(i, l)| {
                        serde_json::from_str::<ModelTurn>(l)
                            .with_context(|| format!("{}:{}: not a model turn", path.display(), i + 1))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Arc::new(ScriptedModel::new(turns))
            }
            "http" => Arc::new(HttpModelClient::new(Duration::from_secs(600), connections.max(1))?),
            other => bail!("unknown backend `{other}` (expected http, toy or replay)"),
        })
    }

    pub fn sandbox_config(&self) -> SandboxConfig {
        let mut config = SandboxConfig { image: self.image.clone(), network_enabled: self.network, ..Default::default() };
        if let Some(mb) = self.memory_limit_mb {
            config.memory_limit_bytes = mb << 20;
        }
        config
    }

    pub fn fleet(&self, capacity: usize) -> Result<SandboxFleet> {
        let runtime: Arc<dyn ContainerRuntime> = match self.runtime.as_str() {
            "namespace" => {
                NamespaceRuntime::probe().context("namespace sandboxes are unavailable here; try --runtime docker")?;
                let root = self.state_root.clone().unwrap_or_else(NamespaceRuntime::default_state_root);
                Arc::new(NamespaceRuntime::new(root)?)
            }
            "docker" => Arc::new(DockerRuntime::new(self.docker_bin.clone())),
            other => bail!("unknown runtime `{other}` (expected namespace or docker)"),
        };
        Ok(SandboxFleet::new(runtime, self.sandbox_config())?.with_capacity(capacity.max(1)))
    }

    pub fn agent(&self) -> AgentConfig {
        let mut agent = AgentConfig::default();
        if let Some(n) = self.max_turns {
            agent.budget.max_turns = n;
        }
        if let Some(s) = self.soft_timeout_secs {
            agent.tools.soft_timeout = Duration::from_secs(s);
        }
        agent
    }
}

fn parse_scoring(s: &str) -> Result<ScoringMode> {
    match s {
        "rl" => Ok(ScoringMode::Rl),
        "eval" => Ok(ScoringMode::Eval),
        other => bail!("unknown scoring `{other}` (expected rl or eval)"),
    }
}

fn unix_secs() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

pub async fn run(args: RunArgs, file: &FileConfig) -> Result<ExitCode> {
    let backend = Backend::resolve(&args.backend, file);
    let tasks = match (&args.suite, args.toy) {
        (_, true) => toy_suite(),
        (Some(path), false) => load_suite(path).with_context(|| format!("loading suite {}", path.display()))?,
        (None, false) => bail!("pass --suite <tasks.jsonl> or --toy"),
    };
    if tasks.is_empty() {
        bail!("the suite has no tasks");
    }
    let mode = args.mode.or(file.mode).unwrap_or(Mode::Sandbox);
    let concurrency = args.concurrency.or(file.concurrency).unwrap_or(64).max(1);
    let scoring = match args.scoring.or(file.scoring.clone()) {
        Some(s) => parse_scoring(&s)?,
        None => ScoringMode::Eval,
    };
    let registry = backend.registry()?;
    let profile = registry.get(&backend.profile)?;
    let fleet = match mode {
        Mode::Sandbox => Some(backend.fleet(concurrency)?),
        Mode::PlainLlm => None,
    };
    let ctx = RunContext { fleet, model: backend.model(concurrency)?, profile, evaluators: EvaluatorRegistry::new() };
    let options = RunOptions { mode, concurrency, scoring, agent: backend.agent() };
    let out = args.out.unwrap_or_else(|| PathBuf::from(format!("runs/run-{}", unix_secs())));
    let (summary, outcomes) = run_suite(&tasks, &ctx, &options, &out).await?;
    println!(
        "{} tasks, {} correct, accuracy {:.3}, mean reward {:.3}, {} ms -> {}",
        summary.tasks,
        summary.correct,
        summary.accuracy,
        summary.mean_reward,
        summary.wall_clock_ms,
        out.display()
    );
    let mut failed = 0;
    for o in &outcomes {
        if matches!(o.row.termination, Termination::ModelError | Termination::SandboxError) {
            failed += 1;
            let cause = serde_json::to_value(o.row.termination)?;
            eprintln!("{}: {}: {}", o.row.task_id, cause.as_str().unwrap_or("?"), o.row.error.as_deref().unwrap_or("no detail"));
        }
    }
    if failed > 0 {
        eprintln!("{failed} task(s) failed on the model or sandbox side");
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

pub fn run_genenv(args: GenenvArgs) -> Result<ExitCode> {
    let text = std::fs::read_to_string(&args.dataset).with_context(|| format!("reading dataset {}", args.dataset.display()))?;
    let records = parse_records(&text).with_context(|| format!("parsing dataset {}", args.dataset.display()))?;
    let mut options = ConfiguratorOptions::default();
    let defaults = SplitPolicy::default();
    options.split = SplitPolicy {
        chunk_bytes: args.chunk_bytes.unwrap_or(defaults.chunk_bytes),
        long_document_bytes: args.long_doc_bytes.unwrap_or(defaults.long_document_bytes),
    };
    if let Some(n) = args.distractors {
        options.distractors = n;
    }
    let (suite, manifest) = genenv(&records, args.seed, &options, &args.out)?;
    println!("{} tasks -> {} (sha256 {})", manifest.tasks.len(), suite.display(), manifest.suite_sha256);
    Ok(ExitCode::SUCCESS)
}

pub fn analyze(args: AnalyzeArgs) -> Result<ExitCode> {
    let library = match &args.patterns {
        Some(p) => PatternLibrary::from_toml_file(p)?,
        None => PatternLibrary::builtin().clone(),
    };
    let mut logs = Vec::new();
    let mut costs = Vec::new();
    let mut wall_clock = None;
    for path in &args.paths {
        let run = load_run(path).with_context(|| format!("loading {}", path.display()))?;
        if args.paths.len() == 1 {
            wall_clock = run.wall_clock;
        }
        logs.extend(run.logs);
        costs.extend(run.costs);
    }
    let baseline = match &args.baseline {
        Some(path) => {
            let run = load_run(path).with_context(|| format!("loading baseline {}", path.display()))?;
            Some(cost_report(&run.costs, run.wall_clock, None)?)
        }
        None => None,
    };
    let usage = usage_rates(&logs, &library)?;
    let cost = cost_report(&costs, wall_clock, baseline.as_ref())?;
    let responses: Vec<String> = logs
        .iter()
        .flat_map(|l| &l.turns)
        .filter_map(|t| t.reasoning.clone().or_else(|| t.assistant_text.clone()))
        .collect();
    let reasoning = reasoning_summary(&responses, &library);
    if args.json {
        let report = serde_json::json!({ "usage": usage, "cost": cost, "reasoning": reasoning });
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        println!("{}", render_usage_table(&usage));
        println!("{}", render_cost_table(&cost));
        println!(
            "reasoning over {} responses: verification {:.3}, structure {:.3}",
            reasoning.responses, reasoning.verification, reasoning.structure
        );
    }
    Ok(ExitCode::SUCCESS)
}

pub async fn serve(args: ServeArgs, file: &FileConfig) -> Result<ExitCode> {
    let backend = Backend::resolve(&args.backend, file);
    let registry = backend.registry()?;
    let bind = args.bind.or(file.bind.clone()).unwrap_or_else(|| "127.0.0.1:8080".into());
    let workers = args.workers.or(file.workers).unwrap_or(crate::service::DEFAULT_WORKERS).max(1);
    let mode = args.mode.or(file.mode).unwrap_or(Mode::Sandbox);
    let mut config = ServiceConfig::new(
        args.store.or(file.store.clone()).unwrap_or_else(|| PathBuf::from("service-store")),
        backend.profile.clone(),
    );
    config.auth_token = args.auth_token.or(file.auth_token.clone());
    config.workers = workers;
    config.queue_capacity = args.queue_capacity.or(file.queue_capacity).unwrap_or(crate::service::DEFAULT_QUEUE_CAPACITY);
    config.run = RunOptions { mode, concurrency: workers, scoring: ScoringMode::Rl, agent: backend.agent() };
    let fleet = match mode {
        Mode::Sandbox => Some(backend.fleet(workers)?),
        Mode::PlainLlm => None,
    };
    let reaper = fleet.as_ref().map(|f| f.spawn_reaper(Duration::from_secs(60)));
    if config.auth_token.is_none() {
        tracing::warn!("serving without an auth token");
    }
    let backends =
        ServiceBackends { fleet, model: backend.model(workers)?, profiles: registry, evaluators: EvaluatorRegistry::new() };
    let mut service = Service::start(config, backends)?;
    let listener = tokio::net::TcpListener::bind(&bind).await.with_context(|| format!("binding {bind}"))?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    tokio::select! {
        r = service.serve(listener) => r?,
        _ = tokio::signal::ctrl_c() => eprintln!("shutting down"),
    }
    service.shutdown();
    if let Some(r) = reaper {
        r.abort();
    }
    Ok(ExitCode::SUCCESS)
}

/// Entry point of the binary.
pub fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = (|| -> Result<ExitCode> {
        let file = FileConfig::load(cli.config.as_deref())?;
        let rt = tokio::runtime::Runtime::new()?;
        match cli.command {
            Command::Run(args) => rt.block_on(run(args, &file)),
            Command::Genenv(args) => run_genenv(args),
            Command::Analyze(args) => analyze(args),
            Command::Serve(args) => rt.block_on(serve(args, &file)),
        }
    })();
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
