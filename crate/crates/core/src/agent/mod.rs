//! Agent roles: keyword distillation, title generation, feedback,
//! regeneration, moderation and arbitration.

pub mod backend;
pub mod http;
pub mod parse;
pub mod template;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coverage::{self, CoverageError, Feasibility, RelevanceScorer};
use crate::domain::{
    ArbiterMode, CandidateTitle, DomainError, Item, KeywordSet, ModuleJob, PipelineConfig, Provenance, RelevanceVector,
};
use backend::{AgentRequest, AgentRole, BackendError, ChatBackend};
use template::{PromptTemplate, TemplateError, TemplateSet};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("{role} response unparseable after {attempts} attempts (last: {last:?})")]
    ParseFailure {
        role: AgentRole,
        attempts: u32,
        last: String,
    },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Coverage(#[from] CoverageError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("no candidates to {0}")]
    NoCandidates(&'static str),
}

/// Backend, prompts and retry policy shared by the agents of one run.
#[derive(Clone, Copy)]
pub struct AgentContext<'a> {
    pub backend: &'a dyn ChatBackend,
    pub templates: &'a TemplateSet,
    pub parse_retries: u32,
    pub seed: u64,
}

impl<'a> AgentContext<'a> {
    pub fn new(backend: &'a dyn ChatBackend, templates: &'a TemplateSet, parse_retries: u32, seed: u64) -> Self {
        AgentContext {
            backend,
            templates,
            parse_retries,
            seed,
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        AgentContext { seed, ..self }
    }

    /// Calls the backend until `parse` accepts the response, at most
    /// `parse_retries + 1` times.
    fn call<T>(
        &self,
        role: AgentRole,
        scope: &str,
        prompt: String,
        parse: impl Fn(&str) -> Option<T>,
    ) -> Result<T, AgentError> {
        let attempts = self.parse_retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            let request = AgentRequest {
                role,
                scope: scope.to_string(),
                prompt: prompt.clone(),
                seed: self.seed,
                attempt,
            };
            last = self.backend.complete(&request)?;
            if let Some(v) = parse(&last) {
                return Ok(v);
            }
            log::debug!("{role}/{scope}: unparseable response {last:?}");
        }
        Err(AgentError::ParseFailure { role, attempts, last })
    }
}

/// One line per item: `id | catalog | title | keywords: k1, k2, ...`.
pub fn items_block(job: &ModuleJob, keywords: Option<&[KeywordSet]>) -> String {
    job.items
        .iter()
        .map(|item| {
            let mut line = format!("{} | {} | {}", item.id, item.catalog.trim(), item.title_text.trim());
            if let Some(ks) = keywords.and_then(|all| all.iter().find(|k| k.item_id == item.id)) {
                line.push_str(" | keywords: ");
                line.push_str(&ks.keywords().join(", "));
            }
            line
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Distils at most `limit` keywords for one item.
pub fn distill(item: &Item, limit: usize, ctx: &AgentContext<'_>) -> Result<KeywordSet, AgentError> {
    let prompt = ctx.templates.keywords.render(&[("prod_info", &item.prod_info())])?;
    let keywords = ctx.call(AgentRole::Keywords, &item.id, prompt, |r| {
        parse::parse_keywords(r, limit)
    })?;
    Ok(KeywordSet::new(item.id.clone(), keywords, limit)?)
}

fn generate_with(
    template: &PromptTemplate,
    block: &str,
    scope: &str,
    chain_id: u32,
    provenance: Provenance,
    ctx: &AgentContext<'_>,
) -> Result<CandidateTitle, AgentError> {
    let prompt = template.render(&[("prod_info_and_keys", block)])?;
    let text = ctx.call(AgentRole::Gag, scope, prompt, parse::parse_title)?;
    Ok(CandidateTitle::new(text, 0, chain_id, provenance)?)
}

/// Initial title for one chain from the keyword-augmented item list.
pub fn generate_initial(
    job: &ModuleJob,
    keywords: &[KeywordSet],
    chain_id: u32,
    ctx: &AgentContext<'_>,
) -> Result<CandidateTitle, AgentError> {
    let block = items_block(job, Some(keywords));
    generate_with(
        &ctx.templates.gag,
        &block,
        &chain_id.to_string(),
        chain_id,
        Provenance::Initial,
        ctx,
    )
}

/// Single-call baseline title from the plain item list.
pub fn generate_baseline(job: &ModuleJob, ctx: &AgentContext<'_>) -> Result<CandidateTitle, AgentError> {
    let block = items_block(job, None);
    generate_with(&ctx.templates.gag, &block, "vanilla", 0, Provenance::Baseline, ctx)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlagSource {
    /// Items named in the critique.
    Critique,
    /// Critique named none; every uncovered item is flagged.
    Fallback,
    /// Nothing uncovered.
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackReport {
    pub relevance: RelevanceVector,
    /// Uncovered items the generator should address, in job order.
    pub flagged_uncovered: Vec<String>,
    pub flag_source: FlagSource,
    pub critique: String,
    pub length_ok: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub violations: Vec<String>,
}

fn mentions_id(text: &str, id: &str) -> bool {
    let boundary = |c: Option<char>| c.is_none_or(|c| !(c.is_alphanumeric() || c == '-' || c == '_'));
    text.match_indices(id)
        .any(|(i, _)| boundary(text[..i].chars().next_back()) && boundary(text[i + id.len()..].chars().next()))
}

/// Uncovered items named in `critique` by id or by their full title text.
pub fn extract_flagged(critique: &str, job: &ModuleJob, relevance: &RelevanceVector) -> Vec<String> {
    job.items
        .iter()
        .filter(|item| relevance.bit(&item.id) == Some(false))
        .filter(|item| {
            mentions_id(critique, &item.id)
                || (!item.title_text.trim().is_empty() && critique.contains(item.title_text.trim()))
        })
        .map(|item| item.id.clone())
        .collect()
}

/// Critiques `title` given relevance bits that are already known.
pub fn evaluate_scored(
    title: &CandidateTitle,
    relevance: RelevanceVector,
    feasibility: &Feasibility,
    job: &ModuleJob,
    keywords: &[KeywordSet],
    ctx: &AgentContext<'_>,
) -> Result<FeedbackReport, AgentError> {
    let block = items_block(job, Some(keywords));
    let prompt = ctx
        .templates
        .feedback
        .render(&[("title", title.text()), ("prod_info_and_keys", &block)])?;
    let scope = title.chain_id.to_string();
    let critique = ctx.call(AgentRole::Feedback, &scope, prompt, |r| Some(r.trim().to_string()))?;

    let named = extract_flagged(&critique, job, &relevance);
    let (flagged_uncovered, flag_source) = if relevance.is_full() {
        (Vec::new(), FlagSource::None)
    } else if named.is_empty() {
        (
            relevance.uncovered().map(str::to_string).collect(),
            FlagSource::Fallback,
        )
    } else {
        (named, FlagSource::Critique)
    };
    Ok(FeedbackReport {
        relevance,
        flagged_uncovered,
        flag_source,
        critique,
        length_ok: feasibility.feasible,
        violations: feasibility.violations.clone(),
    })
}

/// Scores `title` and asks the feedback agent for a critique.
pub fn evaluate(
    title: &CandidateTitle,
    job: &ModuleJob,
    keywords: &[KeywordSet],
    scorer: &RelevanceScorer,
    config: &PipelineConfig,
    ctx: &AgentContext<'_>,
) -> Result<FeedbackReport, AgentError> {
    let relevance = coverage::coverage(title, job, keywords, scorer)?;
    let feasibility = coverage::feasible(title, config);
    evaluate_scored(title, relevance, &feasibility, job, keywords, ctx)
}

/// Refines `prev` using the critique in `report`.
pub fn regenerate(
    prev: &CandidateTitle,
    report: &FeedbackReport,
    job: &ModuleJob,
    keywords: &[KeywordSet],
    ctx: &AgentContext<'_>,
) -> Result<CandidateTitle, AgentError> {
    let block = items_block(job, Some(keywords));
    let prompt = ctx.templates.regeneration.render(&[
        ("prod_info_and_keys", &block),
        ("title", prev.text()),
        ("feedback", &report.critique),
    ])?;
    let scope = prev.chain_id.to_string();
    let text = ctx.call(AgentRole::Regeneration, &scope, prompt, parse::parse_title)?;
    let mut next = CandidateTitle::new(text, prev.iteration + 1, prev.chain_id, Provenance::Refined)?;
    next.trace = prev.trace.clone();
    next.push_trace(format!("feedback on {:?}: {}", prev.text(), report.critique));
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeratorEntry {
    pub text: String,
    pub coverage: u32,
    pub items: usize,
    pub char_len: usize,
    pub feasible: bool,
    pub violations: Vec<String>,
    pub chain_id: u32,
    pub iteration: u32,
    pub provenance: Provenance,
}

impl ModeratorEntry {
    pub fn verdict(&self) -> String {
        if self.feasible {
            "feasible".to_string()
        } else {
            format!("infeasible: {}", self.violations.join(", "))
        }
    }

    pub fn line(&self) -> String {
        let provenance = match self.provenance {
            Provenance::Initial => "initial",
            Provenance::Refined => "refined",
            Provenance::Baseline => "baseline",
        };
        format!(
            "{:?} | coverage {}/{} | {} chars | {} | chain {} iteration {} ({})",
            self.text,
            self.coverage,
            self.items,
            self.char_len,
            self.verdict(),
            self.chain_id,
            self.iteration,
            provenance
        )
    }
}

/// Structured summary of the candidates handed to the arbitrator.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ModeratorSummary {
    pub entries: Vec<ModeratorEntry>,
}

impl ModeratorSummary {
    pub fn lines(&self) -> Vec<String> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| format!("{}. {}", i + 1, e.line()))
            .collect()
    }

    pub fn render(&self) -> String {
        self.lines().join("\n")
    }

    pub fn entry(&self, text: &str) -> Option<&ModeratorEntry> {
        self.entries.iter().find(|e| e.text == text)
    }
}

/// Summarises each candidate's coverage, length and feasibility, in input
/// order. Deterministic; makes no agent call.
pub fn moderate(candidates: &[(CandidateTitle, RelevanceVector)], config: &PipelineConfig) -> ModeratorSummary {
    let entries = candidates
        .iter()
        .map(|(title, rel)| {
            let f = coverage::feasible(title, config);
            ModeratorEntry {
                text: title.text().to_string(),
                coverage: rel.coverage(),
                items: rel.len(),
                char_len: title.char_len(),
                feasible: f.feasible,
                violations: f.violations,
                chain_id: title.chain_id,
                iteration: title.iteration,
                provenance: title.provenance,
            }
        })
        .collect();
    ModeratorSummary { entries }
}

/// Rule ordering: feasible first, then higher coverage, then shorter, then
/// lexicographically smaller. `Greater` means `a` is preferred.
fn rule_preference(a: &ModeratorEntry, b: &ModeratorEntry) -> Ordering {
    a.feasible
        .cmp(&b.feasible)
        .then(a.coverage.cmp(&b.coverage))
        .then(b.char_len.cmp(&a.char_len))
        .then(b.text.cmp(&a.text))
}

fn dedup_by_text(candidates: &[CandidateTitle]) -> Vec<&CandidateTitle> {
    let mut seen = std::collections::HashSet::new();
    candidates.iter().filter(|c| seen.insert(c.text())).collect()
}

fn entry_for<'s>(summary: &'s ModeratorSummary, title: &CandidateTitle) -> Result<&'s ModeratorEntry, AgentError> {
    summary.entry(title.text()).ok_or(AgentError::NoCandidates(
        "arbitrate: candidate missing from the moderator summary",
    ))
}

/// Selects the final title among the candidates.
///
/// Rule mode picks the feasible candidate with maximal coverage (ties:
/// shorter, then lexicographic). LLM mode runs a left-fold pairwise
/// tournament over the feasible candidates with the two-title arbitrator
/// prompt; an answer that does not echo one of the two titles is retried
/// and then settled by the rule.
pub fn arbitrate(
    candidates: &[CandidateTitle],
    summary: &ModeratorSummary,
    job: &ModuleJob,
    keywords: &[KeywordSet],
    mode: ArbiterMode,
    ctx: &AgentContext<'_>,
) -> Result<CandidateTitle, AgentError> {
    let unique = dedup_by_text(candidates);
    let mut scored = Vec::with_capacity(unique.len());
    for c in unique {
        scored.push((c, entry_for(summary, c)?));
    }
    if scored.is_empty() {
        return Err(AgentError::NoCandidates("arbitrate"));
    }
    match mode {
        ArbiterMode::Rule => {
            let best = scored
                .iter()
                .max_by(|a, b| rule_preference(a.1, b.1))
                .map(|(c, _)| (*c).clone());
            best.ok_or(AgentError::NoCandidates("arbitrate"))
        }
        ArbiterMode::Llm => {
            if scored.iter().any(|(_, e)| e.feasible) {
                scored.retain(|(_, e)| e.feasible);
            }
            let block = items_block(job, Some(keywords));
            let rendered_summary = summary.render();
            let mut champion = scored[0];
            for (round, challenger) in scored.iter().skip(1).enumerate() {
                let prompt = ctx.templates.arbitrator.render(&[
                    ("title", champion.0.text()),
                    ("title_2", challenger.0.text()),
                    ("prod_info_and_keys", &block),
                    ("summary", &rendered_summary),
                ])?;
                let options = [champion.0.text(), challenger.0.text()];
                let scope = round.to_string();
                match ctx.call(AgentRole::Arbitrator, &scope, prompt, |r| {
                    parse::parse_choice(r, &options)
                }) {
                    Ok(0) => {}
                    Ok(_) => champion = *challenger,
                    Err(AgentError::ParseFailure { last, .. }) => {
                        log::warn!("arbitrator answer {last:?} matches neither title; using the rule");
                        if rule_preference(challenger.1, champion.1) == Ordering::Greater {
                            champion = *challenger;
                        }
                    }
                    Err(e) => return Err(e),
                }
            }
            Ok(champion.0.clone())
        }
    }
}
