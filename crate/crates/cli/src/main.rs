use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};

use carts_core::agent::http::{DEFAULT_ENDPOINT, DEFAULT_MODEL};
use carts_core::convergence::{self, IncrementModel, Verification};
use carts_core::domain::{
    DEFAULT_CHAINS, DEFAULT_ITERATIONS, DEFAULT_KEYWORDS_PER_ITEM, DEFAULT_MAX_CHARS, DEFAULT_MAX_WORDS,
    DEFAULT_PARSE_RETRIES,
};
use carts_core::io::{self, IoError};
use carts_core::{
    AgentContext, ArbiterMode, BackendKind, ChatBackend, HttpBackend, IterationBudget, JudgeScorer, Limited,
    PipelineConfig, RelevanceScorer, RunMode, ScorerKind, ScriptedBackend, SimParams, TemplateSet, TheoryInputs,
};

#[derive(Parser, Debug)]
#[command(name = "carts", version, about = "Carousel module-title generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate titles for every job in a dataset.
    Run(Box<RunArgs>),
    /// Monte Carlo check of the refinement-budget bounds.
    Simulate(SimulateArgs),
    /// Lint a dataset without running anything.
    Validate(ValidateArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ModeArg {
    Carts,
    Vanilla,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum BackendArg {
    Llm,
    Mock,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ArbiterArg {
    Llm,
    Rule,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ScorerArg {
    KeywordOverlap,
    LlmJudge,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum VerifyArg {
    Theorem,
    Corollary,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ModelArg {
    Worst,
    Generous,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Line-delimited JSON dataset, one job per line.
    #[arg(long)]
    dataset: PathBuf,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "carts")]
    mode: ModeArg,
    #[arg(long, value_enum, default_value = "llm")]
    backend: BackendArg,
    /// Response script for the mock backend.
    #[arg(long)]
    script: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MAX_CHARS)]
    max_chars: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_WORDS)]
    max_words: usize,
    /// Keywords kept per item.
    #[arg(long, default_value_t = DEFAULT_KEYWORDS_PER_ITEM)]
    keywords: usize,
    #[arg(long, default_value_t = DEFAULT_CHAINS)]
    chains: usize,
    /// Fixed refinement rounds per chain.
    #[arg(long, conflicts_with_all = ["alpha", "beta", "gamma", "epsilon"])]
    iterations: Option<u32>,
    /// Derive the round count from the convergence bound instead.
    #[arg(long, requires_all = ["beta", "gamma", "epsilon"])]
    alpha: Option<f64>,
    #[arg(long, requires = "alpha")]
    beta: Option<f64>,
    #[arg(long, requires = "alpha")]
    gamma: Option<f64>,
    #[arg(long, requires = "alpha")]
    epsilon: Option<f64>,
    /// Defaults to the number of items in the job.
    #[arg(long, requires = "alpha")]
    opt_estimate: Option<u32>,
    #[arg(long, requires = "alpha")]
    c0_estimate: Option<u32>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Maximum backend requests in flight across all jobs and chains.
    #[arg(long, default_value_t = 4)]
    concurrency: usize,
    /// Directory overriding the built-in prompt templates.
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long, default_value = DEFAULT_ENDPOINT)]
    endpoint: String,
    #[arg(long, default_value = DEFAULT_MODEL)]
    model: String,
    #[arg(long, default_value_t = 0.7)]
    temperature: f64,
    #[arg(long, value_enum, default_value = "llm")]
    arbiter: ArbiterArg,
    #[arg(long, value_enum, default_value = "keyword-overlap")]
    scorer: ScorerArg,
    /// Extra attempts when an agent response cannot be parsed.
    #[arg(long, default_value_t = DEFAULT_PARSE_RETRIES)]
    parse_retries: u32,
    /// Fail the run on any malformed line or failed job.
    #[arg(long)]
    strict: bool,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    beta: f64,
    #[arg(long)]
    gamma: f64,
    #[arg(long)]
    opt: u32,
    #[arg(long, default_value_t = 0)]
    c0: u32,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 0.05)]
    epsilon: f64,
    #[arg(long, default_value_t = 10_000)]
    trials: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "theorem")]
    verify: VerifyArg,
    #[arg(long, value_enum, default_value = "worst")]
    model: ModelArg,
    /// Write per-trial coverage traces here, one JSON array per line.
    #[arg(long)]
    traces: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    #[arg(long)]
    dataset: PathBuf,
}

enum Failure {
    Usage { subcommand: &'static str, message: String },
    Run(String),
}

fn usage(subcommand: &'static str, message: impl ToString) -> Failure {
    Failure::Usage {
        subcommand,
        message: message.to_string(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => run(*args),
        Command::Simulate(args) => simulate(args),
        Command::Validate(args) => validate(args),
    };
    match outcome {
        Ok(code) => code,
        Err(Failure::Usage { subcommand, message }) => {
            eprintln!("error: {message}\n");
            let mut cmd = Cli::command();
            cmd.build();
            if let Some(sub) = cmd.find_subcommand_mut(subcommand) {
                eprintln!("{}", sub.render_help());
            }
            ExitCode::from(2)
        }
        Err(Failure::Run(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
    }
}

fn dataset_error(subcommand: &'static str, err: IoError) -> Failure {
    match err {
        IoError::FileNotFound(_) => usage(subcommand, err),
        other => Failure::Run(other.to_string()),
    }
}

fn pipeline_config(args: &RunArgs) -> PipelineConfig {
    let budget = match args.alpha {
        Some(alpha) => IterationBudget::Theory(TheoryInputs {
            alpha,
            beta: args.beta.unwrap_or_default(),
            gamma: args.gamma.unwrap_or_default(),
            epsilon: args.epsilon.unwrap_or_default(),
            opt_estimate: args.opt_estimate,
            c0_estimate: args.c0_estimate,
        }),
        None => IterationBudget::Fixed(args.iterations.unwrap_or(DEFAULT_ITERATIONS)),
    };
    PipelineConfig {
        max_chars: args.max_chars,
        max_words: args.max_words,
        keywords_per_item: args.keywords,
        chains: args.chains,
        budget,
        backend: match args.backend {
            BackendArg::Llm => BackendKind::Llm,
            BackendArg::Mock => BackendKind::Mock,
        },
        scorer: match args.scorer {
            ScorerArg::KeywordOverlap => ScorerKind::KeywordOverlap,
            ScorerArg::LlmJudge => ScorerKind::LlmJudge,
        },
        arbiter: match args.arbiter {
            ArbiterArg::Llm => ArbiterMode::Llm,
            ArbiterArg::Rule => ArbiterMode::Rule,
        },
        temperature: args.temperature,
        parse_retries: args.parse_retries,
        seed: args.seed,
    }
}

fn backend(args: &RunArgs) -> Result<Arc<dyn ChatBackend>, Failure> {
    let inner: Arc<dyn ChatBackend> = match args.backend {
        BackendArg::Mock => {
            let path = args
                .script
                .as_ref()
                .ok_or_else(|| usage("run", "--backend mock requires --script"))?;
            if !path.exists() {
                return Err(usage("run", format!("file not found: {}", path.display())));
            }
            Arc::new(ScriptedBackend::from_path(path).map_err(|e| usage("run", e))?)
        }
        BackendArg::Llm => {
            Arc::new(HttpBackend::from_env(&args.endpoint, &args.model, args.temperature).map_err(|e| usage("run", e))?)
        }
    };
    Ok(Arc::new(Limited::new(inner, args.concurrency)))
}

fn emit(results: &[carts_core::PipelineResult], out: Option<&Path>) -> Result<(), Failure> {
    match out {
        Some(path) => io::write_results(results, path).map_err(|e| Failure::Run(e.to_string())),
        None => {
            let stdout = std::io::stdout();
            io::write_results_to(results, stdout.lock()).map_err(|e| Failure::Run(e.to_string()))
        }
    }
}

fn run(args: RunArgs) -> Result<ExitCode, Failure> {
    let config = pipeline_config(&args);
    config.validate().map_err(|e| usage("run", e))?;
    if args.concurrency == 0 {
        return Err(usage("run", "--concurrency must be at least 1"));
    }
    let dataset = io::read_dataset(&args.dataset).map_err(|e| dataset_error("run", e))?;
    for err in &dataset.errors {
        log::error!("{}: {err}", args.dataset.display());
    }
    if args.strict && !dataset.errors.is_empty() {
        return Err(Failure::Run(format!(
            "{} malformed line(s) in dataset",
            dataset.errors.len()
        )));
    }
    let jobs = dataset.into_jobs();

    let templates = match &args.templates {
        Some(dir) => TemplateSet::load_dir(dir).map_err(|e| usage("run", e))?,
        None => TemplateSet::default(),
    };
    let backend = backend(&args)?;
    let scorer = match config.scorer {
        ScorerKind::KeywordOverlap => RelevanceScorer::KeywordOverlap,
        ScorerKind::LlmJudge => RelevanceScorer::LlmJudge(JudgeScorer {
            backend: Arc::clone(&backend),
            template: templates.judge.clone(),
            parse_retries: config.parse_retries,
            seed: config.seed,
        }),
    };
    let ctx = AgentContext::new(backend.as_ref(), &templates, config.parse_retries, config.seed);
    let mode = match args.mode {
        ModeArg::Carts => RunMode::Carts,
        ModeArg::Vanilla => RunMode::Vanilla,
    };
    // Scripted queues are shared between jobs, so replay order must not
    // depend on thread scheduling.
    let workers = match args.backend {
        BackendArg::Mock => 1,
        BackendArg::Llm => args.concurrency,
    };

    let mut results = Vec::new();
    let mut failed = 0usize;
    for outcome in carts_core::run_batch(&jobs, mode, &config, &ctx, &scorer, workers) {
        match outcome {
            Ok(r) => results.push(r),
            Err(e) => {
                failed += 1;
                log::error!("{e}");
            }
        }
    }
    emit(&results, args.out.as_deref())?;
    if failed > 0 && args.strict {
        return Err(Failure::Run(format!("{failed} of {} job(s) failed", jobs.len())));
    }
    Ok(ExitCode::SUCCESS)
}

fn simulate(args: SimulateArgs) -> Result<ExitCode, Failure> {
    let mut params = SimParams::new(args.beta, args.gamma, args.opt, args.c0, args.alpha, args.epsilon)
        .with_trials(args.trials)
        .with_seed(args.seed);
    params.model = match args.model {
        ModelArg::Worst => IncrementModel::WorstCase,
        ModelArg::Generous => IncrementModel::Generous,
    };
    params.keep_traces = args.traces.is_some();
    let verify = match args.verify {
        VerifyArg::Theorem => Verification::Theorem,
        VerifyArg::Corollary => Verification::Corollary,
    };
    let mut report = match verify {
        Verification::Theorem => convergence::verify_theorem(&params),
        Verification::Corollary => convergence::verify_corollary(&params),
    }
    .map_err(|e| usage("simulate", e))?;

    if let Some(path) = &args.traces {
        let traces = std::mem::take(&mut report.traces);
        let mut text = String::new();
        for t in &traces {
            text.push_str(&serde_json::to_string(t).expect("traces serialize"));
            text.push('\n');
        }
        std::fs::write(path, text).map_err(|e| Failure::Run(format!("{}: {e}", path.display())))?;
    }
    let line = serde_json::to_string(&report).expect("reports serialize");
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "{line}").map_err(|e| Failure::Run(e.to_string()))?;
    if report.bound_violated {
        log::warn!("the stated guarantee does not hold for these parameters");
    }
    Ok(ExitCode::SUCCESS)
}

fn validate(args: ValidateArgs) -> Result<ExitCode, Failure> {
    let dataset = io::read_dataset(&args.dataset).map_err(|e| dataset_error("validate", e))?;
    for err in &dataset.errors {
        println!("{}: {err}", args.dataset.display());
    }
    println!("{} valid job(s), {} error(s)", dataset.jobs.len(), dataset.errors.len());
    Ok(if dataset.errors.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}
