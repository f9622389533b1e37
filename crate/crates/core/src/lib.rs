//! Module-title generation for recommendation carousels.
//!
//! Keywords are distilled per item, `k` chains each generate a title and
//! refine it against per-item coverage feedback, and an arbitrator picks
//! the final title. The [`convergence`] module holds the refinement-budget
//! bounds and a simulator that checks them.

pub mod agent;
pub mod convergence;
pub mod coverage;
pub mod domain;
pub mod io;
pub mod pipeline;

pub use agent::backend::{AgentRequest, AgentRole, BackendError, ChatBackend, Limited, ScriptedBackend};
pub use agent::http::HttpBackend;
pub use agent::template::{PromptTemplate, TemplateSet};
pub use agent::{AgentContext, AgentError, FeedbackReport, ModeratorSummary};
pub use convergence::{SimParams, SimReport, TheoryError};
pub use coverage::{Constraint, CoverageError, Feasibility, JudgeScorer, RelevanceScorer};
pub use domain::{
    validate_job, ArbiterMode, BackendKind, CandidateTitle, DomainError, Item, IterationBudget, KeywordSet, ModuleJob,
    PipelineConfig, Provenance, RelevanceVector, ScorerKind, TheoryInputs,
};
pub use pipeline::{run_batch, run_carts, run_vanilla, PipelineError, PipelineResult, RefinementTrace, RunMode};
