use std::fs;
use std::io::{self, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use delegation_cues::ingest::{read_comparisons, summarize, write_comparisons, ComparisonRecord, ParseMode};
use delegation_cues::pipeline::{self, PipelineConfig};
use delegation_cues::probes::{
    self, generate_synthetic_corpus, render_csv, render_table, Family, ProbeConfig, ProbeReport, SyntheticSpec,
};
use delegation_cues::service::{ExecutorConfig, ServiceConfig, ServiceHandle};
use delegation_cues::delegation::HttpExecutorConfig;
use delegation_cues::signals::{SignalArtifact, SignalConfig};
use delegation_cues::tasktyping::{
    embed::DEFAULT_EMBEDDING_DIM, EmbeddingProvider, EndpointConfig, TaskTypeModel, TaskTypingConfig,
};

#[derive(Parser)]
#[command(name = "delegation-cues", version, about = "Task-typed capability profiles, risk cues and a delegation service")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a comparison file and print a summary.
    Ingest(IngestArgs),
    /// Write a seeded synthetic comparison corpus.
    Synth(SynthArgs),
    /// Fit the task model (embed, reduce, k-means, small-cluster repair).
    Cluster(ClusterArgs),
    /// Build the capability/risk signal artifact.
    Signals(SignalsArgs),
    /// Run a predictive probe.
    Probe(ProbeArgs),
    /// Cluster, signals and both probes in one go, written to a directory.
    Pipeline(PipelineArgs),
    /// Serve the delegation API.
    Serve(ServeArgs),
    /// Render probe reports as a table or CSV.
    Report(ReportArgs),
}

#[derive(Args)]
struct InputArgs {
    /// Comparison records, one JSON object per line.
    #[arg(long, short)]
    input: PathBuf,
    /// Skip malformed lines instead of aborting.
    #[arg(long)]
    lenient: bool,
}

impl InputArgs {
    fn load(&self) -> Result<Vec<ComparisonRecord>> {
        let mode = if self.lenient { ParseMode::Lenient } else { ParseMode::Strict };
        let parsed = read_comparisons(&self.input, mode).with_context(|| format!("reading {}", self.input.display()))?;
        for s in &parsed.skipped {
            tracing::warn!(line = s.line, reason = %s.reason, "skipped malformed line");
        }
        Ok(parsed.records)
    }
}

#[derive(Args)]
struct IngestArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Write the validated records back out in canonical form.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    ClusterDriven,
    ClusterFree,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, short)]
    output: PathBuf,
    #[arg(long, value_enum, default_value = "cluster-driven")]
    preset: Preset,
    #[arg(long, default_value_t = 5000)]
    records: usize,
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long)]
    models: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Clone)]
struct EmbedArgs {
    /// Prompt embedding width.
    #[arg(long, default_value_t = DEFAULT_EMBEDDING_DIM)]
    embed_dim: usize,
    /// Seed of the hashing embedder.
    #[arg(long, default_value_t = 0)]
    embed_seed: u64,
    /// Use an external embedding service instead of the hashing embedder.
    #[arg(long)]
    embedder_url: Option<String>,
    /// Environment variable holding the embedding service token.
    #[arg(long)]
    embedder_auth_env: Option<String>,
    #[arg(long, default_value_t = 10_000)]
    embedder_timeout_ms: u64,
}

impl EmbedArgs {
    fn provider(&self) -> EmbeddingProvider {
        match &self.embedder_url {
            Some(url) => EmbeddingProvider::external(
                self.embed_dim,
                EndpointConfig {
                    base_url: url.clone(),
                    auth_env: self.embedder_auth_env.clone(),
                    timeout_ms: self.embedder_timeout_ms,
                },
            ),
            None => EmbeddingProvider::hash(self.embed_dim, self.embed_seed),
        }
    }
}

#[derive(Args, Clone)]
struct TypingArgs {
    /// Number of task clusters K.
    #[arg(long, default_value_t = TaskTypingConfig::default().cluster_count)]
    clusters: usize,
    #[arg(long, default_value_t = TaskTypingConfig::default().reduced_dim)]
    reduced_dim: usize,
    /// Clusters smaller than this are merged; default max(10, 0.5% of N).
    #[arg(long)]
    min_cluster_size: Option<usize>,
    #[arg(long, default_value_t = TaskTypingConfig::default().max_iters)]
    kmeans_max_iters: usize,
    /// Cluster on each record's `prompt_embedding` instead of embedding the text.
    #[arg(long)]
    use_ingested_embeddings: bool,
}

impl TypingArgs {
    fn config(&self, seed: u64) -> TaskTypingConfig {
        TaskTypingConfig {
            cluster_count: self.clusters,
            reduced_dim: self.reduced_dim,
            min_cluster_size: self.min_cluster_size,
            seed,
            max_iters: self.kmeans_max_iters,
        }
    }
}

#[derive(Args)]
struct ClusterArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, short, default_value = "task_model.json")]
    output: PathBuf,
    #[command(flatten)]
    embed: EmbedArgs,
    #[command(flatten)]
    typing: TypingArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Clone)]
struct SignalArgs {
    /// Count INVALID votes in win-rate denominators.
    #[arg(long)]
    include_invalid_in_win_support: bool,
    /// Artifact timestamp (Unix seconds); defaults to SOURCE_DATE_EPOCH or 0.
    #[arg(long)]
    created_at: Option<u64>,
}

impl SignalArgs {
    fn created_at(&self) -> Result<u64> {
        match (self.created_at, std::env::var("SOURCE_DATE_EPOCH")) {
            (Some(t), _) => Ok(t),
            (None, Ok(v)) => v.trim().parse().context("SOURCE_DATE_EPOCH is not an integer"),
            (None, Err(_)) => Ok(0),
        }
    }
}

#[derive(Args)]
struct SignalsArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    task_model: PathBuf,
    #[arg(long, short, default_value = "signals.json")]
    output: PathBuf,
    #[command(flatten)]
    signal: SignalArgs,
    /// Type records by their `prompt_embedding` (must match how the model was fit).
    #[arg(long)]
    use_ingested_embeddings: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Task {
    A,
    B,
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    None,
    Ridge,
    Lasso,
}

impl From<FamilyArg> for Family {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::None => Family::None,
            FamilyArg::Ridge => Family::Ridge,
            FamilyArg::Lasso => Family::Lasso,
        }
    }
}

#[derive(Args, Clone)]
struct ProbeOptions {
    #[arg(long, default_value_t = probes::DEFAULT_FOLDS)]
    folds: usize,
    /// Regularization strengths tried inside each training fold.
    #[arg(long, value_delimiter = ',', default_values_t = probes::DEFAULT_LAMBDA_GRID.to_vec())]
    lambda: Vec<f64>,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [FamilyArg::None, FamilyArg::Ridge, FamilyArg::Lasso])]
    families: Vec<FamilyArg>,
    /// Task A: drop INVALID rows (3-class problem).
    #[arg(long)]
    exclude_invalid: bool,
    /// Iteration cap of the logistic solver.
    #[arg(long, default_value_t = ProbeConfig::default().max_iters)]
    logreg_max_iters: usize,
    #[arg(long, default_value_t = ProbeConfig::default().tol)]
    tol: f64,
    #[arg(long)]
    skip_ablation: bool,
}

impl ProbeOptions {
    fn config(&self, seed: u64) -> ProbeConfig {
        ProbeConfig {
            folds: self.folds,
            seed,
            lambda_grid: self.lambda.clone(),
            families: self.families.iter().map(|&f| f.into()).collect(),
            exclude_invalid: self.exclude_invalid,
            max_iters: self.logreg_max_iters,
            tol: self.tol,
            skip_ablation: self.skip_ablation,
        }
    }
}

#[derive(Args)]
struct ProbeArgs {
    #[arg(value_enum)]
    task: Task,
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    task_model: PathBuf,
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Also write per-fold metrics as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[command(flatten)]
    probe: ProbeOptions,
    #[arg(long)]
    use_ingested_embeddings: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct PipelineArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, default_value = "artifacts")]
    out_dir: PathBuf,
    #[command(flatten)]
    embed: EmbedArgs,
    #[command(flatten)]
    typing: TypingArgs,
    #[command(flatten)]
    signal: SignalArgs,
    #[command(flatten)]
    probe: ProbeOptions,
    /// Seeds clustering and fold assignment.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    listen: SocketAddr,
    #[arg(long, default_value = "task_model.json")]
    task_model: PathBuf,
    #[arg(long, default_value = "signals.json")]
    signals: PathBuf,
    /// Policy JSON (tau, min_support, safeguards, sensitive_clusters, noise_epsilon, retain_prompts).
    #[arg(long)]
    policy: Option<PathBuf>,
    /// Override the policy's risk threshold.
    #[arg(long)]
    tau: Option<f64>,
    /// Accountability log file; in-memory when omitted.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    retain_prompts: Option<bool>,
    #[arg(long, default_value_t = ServiceConfig::default().request_timeout_ms)]
    request_timeout_ms: u64,
    #[arg(long, default_value_t = ServiceConfig::default().max_sessions)]
    max_sessions: usize,
    #[arg(long, default_value_t = ServiceConfig::default().session_ttl_secs)]
    session_ttl_secs: u64,
    /// Seed for the noised frequency release.
    #[arg(long, default_value_t = 0)]
    noise_seed: u64,
    /// Completion endpoint; the echo executor is used when omitted.
    #[arg(long)]
    executor_url: Option<String>,
    #[arg(long)]
    executor_auth_env: Option<String>,
    #[arg(long, default_value_t = 30_000)]
    executor_timeout_ms: u64,
}

#[derive(Args)]
struct ReportArgs {
    /// Probe report JSON files.
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    #[arg(long)]
    csv: bool,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_task_model(path: &Path) -> Result<TaskTypeModel> {
    TaskTypeModel::load(path).with_context(|| format!("loading task model {}", path.display()))
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(io::stderr)
        .init();
    let cli = Cli::parse();
    let mut out = io::stdout().lock();
    match cli.command {
        Command::Ingest(a) => {
            let records = a.input.load()?;
            if let Some(path) = &a.output {
                let f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
                write_comparisons(io::BufWriter::new(f), &records)?;
            }
            writeln!(out, "{}", serde_json::to_string_pretty(&summarize(&records))?)?;
        }
        Command::Synth(a) => {
            let mut spec = match a.preset {
                Preset::ClusterDriven => SyntheticSpec::cluster_driven(a.records),
                Preset::ClusterFree => SyntheticSpec::cluster_free(a.records),
            };
            if let Some(c) = a.clusters {
                spec.clusters = c;
            }
            if let Some(m) = a.models {
                spec.models = m;
            }
            let corpus = generate_synthetic_corpus(&spec, a.seed)?;
            let mut buf = Vec::new();
            write_comparisons(&mut buf, &corpus.records)?;
            fs::write(&a.output, buf).with_context(|| format!("writing {}", a.output.display()))?;
            writeln!(out, "wrote {} records to {}", corpus.records.len(), a.output.display())?;
        }
        Command::Cluster(a) => {
            let records = a.input.load()?;
            let fit = pipeline::fit_clusters(
                &records,
                &a.embed.provider(),
                &a.typing.config(a.seed),
                a.typing.use_ingested_embeddings,
            )?;
            write_text(&a.output, &fit.model.to_json())?;
            let m = &fit.model;
            writeln!(
                out,
                "{}: K={} surviving={} captured_variance={:.4}",
                m.version(),
                m.cluster_count(),
                m.surviving_clusters().len(),
                fit.captured_variance
            )?;
            for c in m.surviving_clusters() {
                let size = fit.assignments.iter().filter(|&&x| x == c).count();
                writeln!(out, "  {c:>3} {size:>7}  {}", m.labels[c])?;
            }
        }
        Command::Signals(a) => {
            let records = a.input.load()?;
            let tm = load_task_model(&a.task_model)?;
            let clusters = pipeline::assign_records(&records, &tm, a.use_ingested_embeddings)?;
            let config = SignalConfig {
                include_invalid_in_win_support: a.signal.include_invalid_in_win_support,
            };
            let s = SignalArtifact::build(&records, &clusters, tm.version(), a.signal.created_at()?, config)?;
            write_text(&a.output, &s.to_json())?;
            writeln!(out, "{} models, {} clusters with ties recorded", s.global.len(), s.tie.len())?;
            for (c, t) in &s.tie {
                writeln!(out, "  cluster {c:>3}: tie rate {:.3} ({} of {})", t.rate(), t.hits, t.support)?;
            }
        }
        Command::Probe(a) => {
            let records = a.input.load()?;
            let tm = load_task_model(&a.task_model)?;
            let clusters = pipeline::assign_records(&records, &tm, a.use_ingested_embeddings)?;
            let config = a.probe.config(a.seed);
            let k = tm.cluster_count();
            let report = match a.task {
                Task::A => probes::run_probe_a_with_clusters(&records, &clusters, k, &config)?,
                Task::B => probes::run_probe_b_with_clusters(&records, &clusters, k, &config)?,
            };
            if let Some(p) = &a.output {
                write_text(p, &report.to_json()?)?;
            }
            if let Some(p) = &a.csv {
                write_text(p, &render_csv(std::slice::from_ref(&report)))?;
            }
            write!(out, "{}", render_table(std::slice::from_ref(&report)))?;
        }
        Command::Pipeline(a) => {
            let records = a.input.load()?;
            let config = PipelineConfig {
                embedder: a.embed.provider(),
                typing: a.typing.config(a.seed),
                use_ingested_embeddings: a.typing.use_ingested_embeddings,
                signals: SignalConfig {
                    include_invalid_in_win_support: a.signal.include_invalid_in_win_support,
                },
                probe: a.probe.config(a.seed),
                created_at: a.signal.created_at()?,
            };
            let outputs = pipeline::run_pipeline(&records, &config)?;
            for p in pipeline::write_outputs(&a.out_dir, &outputs)? {
                writeln!(out, "wrote {}", p.display())?;
            }
            write!(out, "{}", render_table(&[outputs.probe_a, outputs.probe_b]))?;
        }
        Command::Serve(a) => {
            if a.executor_auth_env.is_some() && a.executor_url.is_none() {
                bail!("--executor-auth-env needs --executor-url");
            }
            let config = ServiceConfig {
                listen: a.listen,
                task_model_path: a.task_model,
                signals_path: a.signals,
                policy_path: a.policy,
                tau: a.tau,
                log_path: a.log,
                retain_prompts: a.retain_prompts,
                request_timeout_ms: a.request_timeout_ms,
                max_sessions: a.max_sessions,
                session_ttl_secs: a.session_ttl_secs,
                noise_seed: a.noise_seed,
                executor: match a.executor_url {
                    Some(endpoint) => ExecutorConfig::Http(HttpExecutorConfig {
                        endpoint,
                        auth_env: a.executor_auth_env,
                        timeout_ms: a.executor_timeout_ms,
                    }),
                    None => ExecutorConfig::Mock,
                },
            };
            let handle = ServiceHandle::start(&config).context("starting service")?;
            eprintln!("listening on {}", handle.base_url());
            let abandoned = handle.run_until_ctrl_c()?;
            eprintln!("stopped; {abandoned} open sessions handed off");
        }
        Command::Report(a) => {
            let reports = a
                .reports
                .iter()
                .map(|p| {
                    let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                    ProbeReport::from_json(&text).with_context(|| format!("parsing {}", p.display()))
                })
                .collect::<Result<Vec<_>>>()?;
            if a.csv {
                write!(out, "{}", render_csv(&reports))?;
            } else {
                write!(out, "{}", render_table(&reports))?;
            }
        }
    }
    Ok(())
}
