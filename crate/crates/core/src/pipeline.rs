//! End-to-end orchestration: keyword distillation, `k` independent
//! generate-and-refine chains, moderation and arbitration, plus the
//! single-call baseline.

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{self, AgentContext, AgentError, FeedbackReport};
use crate::convergence::{self, TheoryError};
use crate::coverage::{self, CoverageError, Feasibility, RelevanceScorer};
use crate::domain::{
    CandidateTitle, ConfigError, DomainError, IterationBudget, KeywordSet, ModuleJob, PipelineConfig, RelevanceVector,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    InvalidJob(#[from] DomainError),
    #[error(transparent)]
    InvalidConfig(#[from] ConfigError),
    #[error(transparent)]
    InvalidTheoryParams(#[from] TheoryError),
    #[error("job `{module_id}` failed: {reason}")]
    JobFailed { module_id: String, reason: String },
}

fn job_failed(job: &ModuleJob, reason: impl std::fmt::Display) -> PipelineError {
    PipelineError::JobFailed {
        module_id: job.module_id.clone(),
        reason: reason.to_string(),
    }
}

/// SplitMix64 finaliser over `(seed, stream)`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Refinement rounds per chain for a job of `items` items.
pub fn iteration_budget(config: &PipelineConfig, items: usize) -> Result<u32, TheoryError> {
    match &config.budget {
        IterationBudget::Fixed(t) => Ok(*t),
        IterationBudget::Theory(t) => {
            let opt = t.opt_estimate.unwrap_or(items as u32);
            let c0 = t.c0_estimate.unwrap_or(0);
            convergence::lambda_bound(t.alpha, t.beta, t.gamma, opt, c0, t.epsilon)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoredTitle {
    pub title: CandidateTitle,
    pub relevance: RelevanceVector,
    pub feasibility: Feasibility,
}

impl ScoredTitle {
    pub fn coverage(&self) -> u32 {
        self.relevance.coverage()
    }

    /// Coverage counted toward the objective: zero for infeasible titles.
    pub fn objective(&self) -> u32 {
        if self.feasibility.feasible {
            self.coverage()
        } else {
            0
        }
    }
}

/// One refinement round: the critique of the current best and the title
/// regenerated from it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefinementStep {
    pub round: u32,
    pub feedback: FeedbackReport,
    pub proposed: ScoredTitle,
    /// Whether the proposal replaced the best-so-far title.
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefinementTrace {
    pub chain_id: u32,
    pub initial: ScoredTitle,
    pub steps: Vec<RefinementStep>,
    pub best: ScoredTitle,
    /// Objective value of the best-so-far title after each round, starting
    /// with the initial title. Infeasible titles count as zero.
    pub best_coverage: Vec<u32>,
    /// Error that cut the chain short, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degraded: Option<String>,
}

impl RefinementTrace {
    /// Every title generated in the chain, accepted or not.
    pub fn generated(&self) -> impl Iterator<Item = &ScoredTitle> {
        std::iter::once(&self.initial).chain(self.steps.iter().map(|s| &s.proposed))
    }
}

fn score(
    title: CandidateTitle,
    job: &ModuleJob,
    keywords: &[KeywordSet],
    scorer: &RelevanceScorer,
    config: &PipelineConfig,
) -> Result<ScoredTitle, CoverageError> {
    let relevance = coverage::coverage(&title, job, keywords, scorer)?;
    let feasibility = coverage::feasible(&title, config);
    Ok(ScoredTitle {
        title,
        relevance,
        feasibility,
    })
}

/// Runs up to `rounds` evaluate/regenerate rounds from an already scored
/// initial title.
///
/// A proposal replaces the best-so-far title only when it is feasible and
/// either strictly increases coverage or replaces an infeasible best.
/// Refinement always starts from the best-so-far title and stops early once
/// a feasible title covers every item. An agent error ends the chain and is
/// recorded in `degraded`.
pub fn refine_scored(
    initial: ScoredTitle,
    rounds: u32,
    job: &ModuleJob,
    keywords: &[KeywordSet],
    config: &PipelineConfig,
    scorer: &RelevanceScorer,
    ctx: &AgentContext<'_>,
) -> RefinementTrace {
    let mut trace = RefinementTrace {
        chain_id: initial.title.chain_id,
        best_coverage: vec![initial.objective()],
        best: initial.clone(),
        initial,
        steps: Vec::new(),
        degraded: None,
    };
    for round in 1..=rounds {
        let best = &trace.best;
        if best.feasibility.feasible && best.relevance.is_full() {
            break;
        }
        let step = (|| -> Result<RefinementStep, AgentError> {
            let feedback = agent::evaluate_scored(
                &best.title,
                best.relevance.clone(),
                &best.feasibility,
                job,
                keywords,
                ctx,
            )?;
            let mut next = agent::regenerate(&best.title, &feedback, job, keywords, ctx)?;
            next.iteration = round;
            let proposed = score(next, job, keywords, scorer, config)?;
            let accepted =
                proposed.feasibility.feasible && (!best.feasibility.feasible || proposed.coverage() > best.coverage());
            Ok(RefinementStep {
                round,
                feedback,
                proposed,
                accepted,
            })
        })();
        match step {
            Ok(step) => {
                if step.accepted {
                    trace.best = step.proposed.clone();
                }
                trace.best_coverage.push(trace.best.objective());
                trace.steps.push(step);
            }
            Err(e) => {
                log::warn!("chain {} degraded in round {round}: {e}", trace.chain_id);
                trace.degraded = Some(e.to_string());
                break;
            }
        }
    }
    debug_assert!(trace.best_coverage.len() == trace.steps.len() + 1);
    trace
}

/// Scores `initial` and refines it; see [`refine_scored`].
pub fn refine_chain(
    initial: CandidateTitle,
    rounds: u32,
    job: &ModuleJob,
    keywords: &[KeywordSet],
    config: &PipelineConfig,
    scorer: &RelevanceScorer,
    ctx: &AgentContext<'_>,
) -> Result<RefinementTrace, AgentError> {
    let initial = score(initial, job, keywords, scorer, config)?;
    Ok(refine_scored(initial, rounds, job, keywords, config, scorer, ctx))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    Carts,
    Vanilla,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub module_id: String,
    pub mode: RunMode,
    #[serde(rename = "final")]
    pub final_title: CandidateTitle,
    pub final_coverage: RelevanceVector,
    /// False when no generated title satisfied the constraints.
    pub final_feasible: bool,
    /// Best feasible coverage among every title generated in this run.
    pub pool_opt: Option<u32>,
    pub pool_size: usize,
    /// Chain-best titles in chain order.
    pub candidates: Vec<CandidateTitle>,
    pub keywords: Vec<KeywordSet>,
    pub moderator_summary: Vec<String>,
    pub traces: Vec<RefinementTrace>,
    /// Refinement rounds per chain.
    pub rounds: u32,
    pub chains_requested: usize,
    pub chains_completed: usize,
    pub config: PipelineConfig,
    pub seed: u64,
}

fn distill_all(
    job: &ModuleJob,
    config: &PipelineConfig,
    ctx: &AgentContext<'_>,
) -> Result<Vec<KeywordSet>, PipelineError> {
    job.items
        .iter()
        .map(|item| agent::distill(item, config.keywords_per_item, ctx))
        .collect::<Result<_, _>>()
        .map_err(|e| job_failed(job, format!("keyword distillation: {e}")))
}

fn pool_opt(pool: &[&ScoredTitle], config: &PipelineConfig) -> Option<u32> {
    let scored: Vec<(CandidateTitle, RelevanceVector)> =
        pool.iter().map(|s| (s.title.clone(), s.relevance.clone())).collect();
    coverage::brute_force_opt_scored(&scored, config).ok().map(|(_, c)| c)
}

fn run_chain(
    chain_id: u32,
    rounds: u32,
    job: &ModuleJob,
    keywords: &[KeywordSet],
    config: &PipelineConfig,
    scorer: &RelevanceScorer,
    ctx: &AgentContext<'_>,
) -> Result<RefinementTrace, AgentError> {
    let ctx = ctx.with_seed(derive_seed(config.seed, u64::from(chain_id)));
    let initial = agent::generate_initial(job, keywords, chain_id, &ctx)?;
    refine_chain(initial, rounds, job, keywords, config, scorer, &ctx)
}

/// Runs the full multi-agent pipeline on one job.
pub fn run_carts(
    job: &ModuleJob,
    config: &PipelineConfig,
    ctx: &AgentContext<'_>,
    scorer: &RelevanceScorer,
) -> Result<PipelineResult, PipelineError> {
    job.validate()?;
    config.validate()?;
    let rounds = iteration_budget(config, job.len())?;
    let ctx = ctx.with_seed(config.seed);
    let keywords = distill_all(job, config, &ctx)?;

    let outcomes: Vec<Result<RefinementTrace, AgentError>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..config.chains as u32)
            .map(|chain_id| {
                let keywords = &keywords;
                s.spawn(move || run_chain(chain_id, rounds, job, keywords, config, scorer, &ctx))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("chain thread panicked"))
            .collect()
    });

    let mut traces = Vec::new();
    let mut failures = Vec::new();
    for (chain_id, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(t) => traces.push(t),
            Err(e) => {
                log::warn!("job {} chain {chain_id} failed: {e}", job.module_id);
                failures.push(format!("chain {chain_id}: {e}"));
            }
        }
    }
    if traces.is_empty() {
        return Err(job_failed(job, failures.join("; ")));
    }

    let bests: Vec<(CandidateTitle, RelevanceVector)> = traces
        .iter()
        .map(|t| (t.best.title.clone(), t.best.relevance.clone()))
        .collect();
    let summary = agent::moderate(&bests, config);
    let candidates: Vec<CandidateTitle> = bests.iter().map(|(t, _)| t.clone()).collect();
    let winner = agent::arbitrate(&candidates, &summary, job, &keywords, config.arbiter, &ctx)
        .map_err(|e| job_failed(job, format!("arbitration: {e}")))?;
    let chosen = traces
        .iter()
        .map(|t| &t.best)
        .find(|b| b.title.text() == winner.text())
        .expect("arbitration returns one of the candidates");

    let pool: Vec<&ScoredTitle> = traces.iter().flat_map(RefinementTrace::generated).collect();
    Ok(PipelineResult {
        module_id: job.module_id.clone(),
        mode: RunMode::Carts,
        final_feasible: chosen.feasibility.feasible,
        final_coverage: chosen.relevance.clone(),
        final_title: chosen.title.clone(),
        pool_opt: pool_opt(&pool, config),
        pool_size: pool.len(),
        candidates,
        keywords,
        moderator_summary: summary.lines(),
        chains_completed: traces.len(),
        traces,
        rounds,
        chains_requested: config.chains,
        config: config.clone(),
        seed: config.seed,
    })
}

/// Single generation call from the plain item list. Keywords are still
/// distilled when the scorer needs them, but never shown to the generator.
pub fn run_vanilla(
    job: &ModuleJob,
    config: &PipelineConfig,
    ctx: &AgentContext<'_>,
    scorer: &RelevanceScorer,
) -> Result<PipelineResult, PipelineError> {
    job.validate()?;
    config.validate()?;
    let ctx = ctx.with_seed(config.seed);
    let title = agent::generate_baseline(job, &ctx).map_err(|e| job_failed(job, e))?;
    let keywords = match scorer {
        RelevanceScorer::KeywordOverlap => distill_all(job, config, &ctx)?,
        RelevanceScorer::LlmJudge(_) => Vec::new(),
    };
    let scored = score(title, job, &keywords, scorer, config).map_err(|e| job_failed(job, e))?;
    Ok(PipelineResult {
        module_id: job.module_id.clone(),
        mode: RunMode::Vanilla,
        final_feasible: scored.feasibility.feasible,
        pool_opt: pool_opt(&[&scored], config),
        pool_size: 1,
        final_coverage: scored.relevance.clone(),
        candidates: vec![scored.title.clone()],
        final_title: scored.title,
        keywords,
        moderator_summary: Vec::new(),
        traces: Vec::new(),
        rounds: 0,
        chains_requested: 0,
        chains_completed: 0,
        config: config.clone(),
        seed: config.seed,
    })
}

/// Processes jobs on up to `workers` threads; results come back in input order.
pub fn run_batch(
    jobs: &[ModuleJob],
    mode: RunMode,
    config: &PipelineConfig,
    ctx: &AgentContext<'_>,
    scorer: &RelevanceScorer,
    workers: usize,
) -> Vec<Result<PipelineResult, PipelineError>> {
    let next = AtomicUsize::new(0);
    let mut slots: Vec<Option<Result<PipelineResult, PipelineError>>> = Vec::new();
    slots.resize_with(jobs.len(), || None);
    let done = std::sync::Mutex::new(slots);
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, jobs.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(job) = jobs.get(i) else { break };
                let out = match mode {
                    RunMode::Carts => run_carts(job, config, ctx, scorer),
                    RunMode::Vanilla => run_vanilla(job, config, ctx, scorer),
                };
                done.lock().unwrap()[i] = Some(out);
            });
        }
    });
    done.into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every job is processed"))
        .collect()
}
