use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;

use verdict_core::consensus::SelectionStrategy;
use verdict_core::harness::batch::{summarize, BatchOptions, RunSummary, SUMMARY_JSON, SUMMARY_TXT};
use verdict_core::harness::{
    ingest_manifest, run_ablation, run_batch, serve_mock, synth, AblationPlan, Manifest, MockServer, RunStore, Scenario,
};
use verdict_core::pipeline::{RunConfig, VerdictInput, VerdictVisual};

const CONFIG_SNAPSHOT: &str = "config.toml";

#[derive(Parser)]
#[command(
    name = "verdict",
    version,
    about = "Consensus-selected draft experts plus a single verdict call"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    CrossAll,
    BestReference,
    Divergent,
}

impl From<StrategyArg> for SelectionStrategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::CrossAll => SelectionStrategy::CrossAll,
            StrategyArg::BestReference => SelectionStrategy::BestReference,
            StrategyArg::Divergent => SelectionStrategy::Divergent,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum InputArg {
    Paths,
    Answers,
}

#[derive(Clone, Copy, ValueEnum)]
enum VisualArg {
    Aux,
    Image,
    None,
}

#[derive(clap::Args)]
struct Overrides {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    max_concurrency: Option<usize>,
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
    #[arg(long)]
    m: Option<usize>,
    /// Reference pool index for best-reference selection.
    #[arg(long)]
    reference: Option<usize>,
    #[arg(long, value_enum)]
    verdict_input: Option<InputArg>,
    #[arg(long, value_enum)]
    verdict_visual: Option<VisualArg>,
    /// Serve this scenario in-process and point every model at it.
    #[arg(long, value_name = "SCENARIO")]
    mock: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the protocol over a manifest.
    Run {
        manifest: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        out: PathBuf,
        /// Continue a previous run in the same directory.
        #[arg(long)]
        resume: bool,
        /// Also ask the verdict model alone, for the conditioned recovery table.
        #[arg(long)]
        verdict_alone: bool,
        /// Stop after this many samples (the run stays resumable).
        #[arg(long, hide = true)]
        stop_after: Option<usize>,
    },
    /// Recompute the summary of a stored run.
    Score {
        run: PathBuf,
        /// Defaults to the config snapshot stored with the run.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Print the report tables of a stored run.
    Report {
        run: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Serve a scenario until interrupted.
    Mock {
        scenario: PathBuf,
        #[arg(long, default_value_t = 8089)]
        port: u16,
    },
    /// Sweep m = 1..5 and the selection strategies.
    Ablate {
        manifest: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a scripted bundle (manifest, scenario, config, images).
    Synth {
        #[arg(value_enum)]
        kind: SynthKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        samples: usize,
        #[arg(long, default_value = synth::DEFAULT_MOCK_URL)]
        base_url: String,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    Demo,
    Ablation,
}

/// Fatal errors exit 2; per-sample failures exit 1.
enum Outcome {
    Clean,
    SampleFailures,
}

fn load_config(o: &Overrides) -> Result<RunConfig> {
    let mut config = RunConfig::load(&o.config)?;
    if let Some(n) = o.max_concurrency {
        config.max_concurrency = n;
    }
    if let Some(s) = o.strategy {
        config.strategy = s.into();
    }
    if let Some(m) = o.m {
        config.m = m;
    }
    if let Some(r) = o.reference {
        config.reference = Some(r);
    }
    if let Some(i) = o.verdict_input {
        config.verdict_input = match i {
            InputArg::Paths => VerdictInput::ReasoningPaths,
            InputArg::Answers => VerdictInput::AnswersOnly,
        };
    }
    if let Some(v) = o.verdict_visual {
        config.verdict_visual = match v {
            VisualArg::Aux => VerdictVisual::ImagePlusAux,
            VisualArg::Image => VerdictVisual::ImageOnly,
            VisualArg::None => VerdictVisual::None,
        };
    }
    config.validate()?;
    Ok(config)
}

fn point_at(config: &mut RunConfig, base_url: &str) {
    for spec in config.pool.iter_mut().chain(std::iter::once(&mut config.verdict)) {
        spec.base_url = base_url.to_owned();
    }
}

async fn start_mock(path: Option<&Path>, config: &mut RunConfig) -> Result<Option<MockServer>> {
    let Some(path) = path else { return Ok(None) };
    let scenario = Scenario::load(path)?;
    let server = serve_mock(scenario, 0).await?;
    point_at(config, &server.base_url());
    Ok(Some(server))
}

fn load_manifest(path: &Path, config: &RunConfig) -> Result<Manifest> {
    Ok(ingest_manifest(path, config.benchmark)?)
}

fn exit_for(summary: &RunSummary) -> Outcome {
    if summary.n_failed() > 0 {
        Outcome::SampleFailures
    } else {
        Outcome::Clean
    }
}

async fn cmd_run(
    manifest: &Path,
    overrides: &Overrides,
    out: &Path,
    resume: bool,
    verdict_alone: bool,
    stop_after: Option<usize>,
) -> Result<Outcome> {
    let mut config = load_config(overrides)?;
    let manifest = load_manifest(manifest, &config)?;
    let store = Arc::new(RunStore::open(out, resume)?);
    store.write_text(CONFIG_SNAPSHOT, &config.to_toml_string())?;
    let mock = start_mock(overrides.mock.as_deref(), &mut config).await?;

    let options = BatchOptions {
        stop_after,
        verdict_alone,
        cache: None,
    };
    let run = run_batch(&manifest, Arc::new(config), store, options).await?;
    if let Some(mock) = mock {
        mock.shutdown().await;
    }
    match run.summary {
        Some(summary) => {
            emit(&summary.to_text())?;
            Ok(exit_for(&summary))
        }
        None => {
            emit(&format!(
                "stopped after {} samples; rerun with --resume to continue\n",
                run.processed
            ))?;
            Ok(Outcome::Clean)
        }
    }
}

fn cmd_score(run: &Path, config: Option<&Path>) -> Result<Outcome> {
    let config_path = config
        .map(Path::to_path_buf)
        .unwrap_or_else(|| run.join(CONFIG_SNAPSHOT));
    let config = RunConfig::load(&config_path)?;
    if !run.join(verdict_core::harness::store::OUTCOMES_FILE).is_file() {
        bail!("{} holds no outcomes", run.display());
    }
    let store = RunStore::open(run, true)?;
    let outcomes = store.outcomes();
    let benchmark = match outcomes.first() {
        Some(o) => o.benchmark,
        None => bail!("{} holds no outcomes", run.display()),
    };
    let bare = store.bare_verdicts();
    let summary = summarize(&outcomes, &config, benchmark, Some(&bare))?;
    store.write_json(SUMMARY_JSON, &summary)?;
    store.write_text(SUMMARY_TXT, &summary.to_text())?;
    emit(&summary.to_text())?;
    Ok(exit_for(&summary))
}

fn cmd_report(run: &Path, json: bool) -> Result<Outcome> {
    let path = run.join(SUMMARY_JSON);
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let summary: RunSummary = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if json {
        emit(&(serde_json::to_string_pretty(&summary)? + "\n"))?;
    } else {
        emit(&summary.to_text())?;
    }
    Ok(Outcome::Clean)
}

async fn cmd_mock(scenario: &Path, port: u16) -> Result<Outcome> {
    let scenario = Scenario::load(scenario)?;
    let server = serve_mock(scenario, port).await?;
    println!("mock server listening on {}", server.base_url());
    tokio::signal::ctrl_c().await?;
    println!("served {} requests", server.request_count());
    server.shutdown().await;
    Ok(Outcome::Clean)
}

async fn cmd_ablate(manifest: &Path, overrides: &Overrides, out: &Path) -> Result<Outcome> {
    let mut config = load_config(overrides)?;
    let manifest = load_manifest(manifest, &config)?;
    let mock = start_mock(overrides.mock.as_deref(), &mut config).await?;
    let plan = AblationPlan::standard(&config);
    let report = run_ablation(&manifest, &config, &plan, out).await?;
    if let Some(mock) = mock {
        mock.shutdown().await;
    }
    emit(&report.to_text())?;
    if report.rows.iter().any(|r| r.n_failed > 0) {
        Ok(Outcome::SampleFailures)
    } else {
        Ok(Outcome::Clean)
    }
}

fn cmd_synth(kind: SynthKind, out: &Path, samples: usize, base_url: &str) -> Result<Outcome> {
    let bundle = match kind {
        SynthKind::Demo => synth::demo(base_url),
        SynthKind::Ablation => synth::ablation(base_url, samples),
    };
    bundle
        .write_to(out)
        .with_context(|| format!("writing bundle to {}", out.display()))?;
    emit(&format!(
        "wrote {} samples to {}\n",
        bundle.manifest.len(),
        out.display()
    ))?;
    Ok(Outcome::Clean)
}

async fn dispatch(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Run {
            manifest,
            overrides,
            out,
            resume,
            verdict_alone,
            stop_after,
        } => cmd_run(&manifest, &overrides, &out, resume, verdict_alone, stop_after).await,
        Command::Score { run, config } => cmd_score(&run, config.as_deref()),
        Command::Report { run, json } => cmd_report(&run, json),
        Command::Mock { scenario, port } => cmd_mock(&scenario, port).await,
        Command::Ablate {
            manifest,
            overrides,
            out,
        } => cmd_ablate(&manifest, &overrides, &out).await,
        Command::Synth {
            kind,
            out,
            samples,
            base_url,
        } => cmd_synth(kind, &out, samples, &base_url),
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli).await {
        Ok(Outcome::Clean) => ExitCode::SUCCESS,
        Ok(Outcome::SampleFailures) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(2)
        }
    }
}

/// The error chain, skipping causes whose text a wrapper already embeds.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    let mut last = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if last.contains(&text) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&text);
        last = text;
    }
    out
}

/// Write to stdout, treating a closed pipe (`verdict report | head`) as success.
fn emit(text: &str) -> Result<()> {
    use std::io::Write;
    let mut stdout = std::io::stdout().lock();
    match stdout.write_all(text.as_bytes()).and_then(|_| stdout.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}
