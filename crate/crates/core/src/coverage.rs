//! Coverage objective: per-item relevance, title feasibility and an
//! exhaustive optimum over finite candidate pools.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::backend::{AgentRequest, AgentRole, BackendError, ChatBackend};
use crate::agent::template::{PromptTemplate, TemplateError};
use crate::domain::{CandidateTitle, Item, KeywordSet, ModuleJob, PipelineConfig, RelevanceVector};

#[derive(Debug, Error)]
pub enum CoverageError {
    #[error("keyword set for `{got}` passed for item `{expected}`")]
    KeywordMismatch { expected: String, got: String },
    #[error("no keyword set for item `{0}`")]
    MissingKeywords(String),
    #[error("judge returned neither 1 nor 0 for item `{item_id}` after {attempts} attempts (last: {last:?})")]
    JudgeParseFailure {
        item_id: String,
        attempts: u32,
        last: String,
    },
    #[error("judge backend failed: {0}")]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("candidate pool is empty")]
    EmptyPool,
    #[error("no candidate satisfies the length and style constraints")]
    NoFeasibleCandidate,
}

/// Relevance indicator used to score a title against an item.
#[derive(Clone)]
pub enum RelevanceScorer {
    /// Relevant iff one of the item's keywords occurs as a whole token run in
    /// the lowercased title.
    KeywordOverlap,
    /// Asks a judging model for a strict `1` / `0` verdict.
    LlmJudge(JudgeScorer),
}

impl fmt::Debug for RelevanceScorer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RelevanceScorer::KeywordOverlap => f.write_str("KeywordOverlap"),
            RelevanceScorer::LlmJudge(j) => f
                .debug_struct("LlmJudge")
                .field("parse_retries", &j.parse_retries)
                .finish_non_exhaustive(),
        }
    }
}

#[derive(Clone)]
pub struct JudgeScorer {
    pub backend: Arc<dyn ChatBackend>,
    pub template: PromptTemplate,
    pub parse_retries: u32,
    pub seed: u64,
}

impl JudgeScorer {
    fn judge(&self, title: &CandidateTitle, item: &Item) -> Result<bool, CoverageError> {
        let prompt = self
            .template
            .render(&[("title", title.text()), ("prod_info", &item.prod_info())])?;
        let mut last = String::new();
        let attempts = self.parse_retries + 1;
        for attempt in 0..attempts {
            let request = AgentRequest {
                role: AgentRole::Judge,
                scope: item.id.clone(),
                prompt: prompt.clone(),
                seed: self.seed,
                attempt,
            };
            last = self.backend.complete(&request)?;
            match last.trim() {
                "1" => return Ok(true),
                "0" => return Ok(false),
                _ => log::debug!("judge answer {:?} for `{}` is not 0/1", last, item.id),
            }
        }
        Err(CoverageError::JudgeParseFailure {
            item_id: item.id.clone(),
            attempts,
            last,
        })
    }
}

/// Lowercased runs of alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn keyword_matches(title_tokens: &[String], keyword: &str) -> bool {
    let kw = tokenize(keyword);
    !kw.is_empty() && title_tokens.windows(kw.len()).any(|w| w == kw.as_slice())
}

/// Relevance bit of `title` for `item`.
pub fn relevance(
    title: &CandidateTitle,
    item: &Item,
    keywords: &KeywordSet,
    scorer: &RelevanceScorer,
) -> Result<bool, CoverageError> {
    if keywords.item_id != item.id {
        return Err(CoverageError::KeywordMismatch {
            expected: item.id.clone(),
            got: keywords.item_id.clone(),
        });
    }
    match scorer {
        RelevanceScorer::KeywordOverlap => {
            let tokens = tokenize(title.text());
            Ok(keywords.keywords().iter().any(|k| keyword_matches(&tokens, k)))
        }
        RelevanceScorer::LlmJudge(judge) => judge.judge(title, item),
    }
}

/// Relevance bits of `title` over every item of the job.
pub fn coverage(
    title: &CandidateTitle,
    job: &ModuleJob,
    keywords: &[KeywordSet],
    scorer: &RelevanceScorer,
) -> Result<RelevanceVector, CoverageError> {
    let mut bits = Vec::with_capacity(job.items.len());
    for item in &job.items {
        let ks = keywords
            .iter()
            .find(|k| k.item_id == item.id)
            .ok_or_else(|| CoverageError::MissingKeywords(item.id.clone()))?;
        bits.push((item.id.clone(), relevance(title, item, ks, scorer)?));
    }
    Ok(RelevanceVector::from_bits(bits))
}

/// A named predicate over the title string, beyond the length limit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    WordCount { max: usize },
    SingleLine,
}

impl Constraint {
    pub fn name(&self) -> &'static str {
        match self {
            Constraint::WordCount { .. } => "word_count",
            Constraint::SingleLine => "single_line",
        }
    }

    pub fn check(&self, title: &CandidateTitle) -> bool {
        match self {
            Constraint::WordCount { max } => title.word_count() <= *max,
            Constraint::SingleLine => !title.text().contains(['\n', '\r']),
        }
    }
}

impl PipelineConfig {
    pub fn constraints(&self) -> Vec<Constraint> {
        vec![Constraint::WordCount { max: self.max_words }, Constraint::SingleLine]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Feasibility {
    pub feasible: bool,
    pub violations: Vec<String>,
}

pub fn check_constraints(title: &CandidateTitle, max_chars: usize, constraints: &[Constraint]) -> Feasibility {
    let mut violations = Vec::new();
    if title.char_len() > max_chars {
        violations.push("length".to_string());
    }
    for c in constraints {
        if !c.check(title) {
            violations.push(c.name().to_string());
        }
    }
    Feasibility {
        feasible: violations.is_empty(),
        violations,
    }
}

pub fn feasible(title: &CandidateTitle, config: &PipelineConfig) -> Feasibility {
    check_constraints(title, config.max_chars, &config.constraints())
}

/// Best feasible member of a pool whose coverage is already known.
///
/// Ties go to the shorter title, then to the lexicographically smaller text.
pub fn brute_force_opt_scored<'a>(
    pool: &'a [(CandidateTitle, RelevanceVector)],
    config: &PipelineConfig,
) -> Result<(&'a CandidateTitle, u32), CoverageError> {
    if pool.is_empty() {
        return Err(CoverageError::EmptyPool);
    }
    let mut best: Option<(&CandidateTitle, u32)> = None;
    for (title, rel) in pool {
        if !feasible(title, config).feasible {
            continue;
        }
        let cov = rel.coverage();
        let replace = match best {
            None => true,
            Some((b, bcov)) => {
                cov > bcov
                    || (cov == bcov && title.char_len() < b.char_len())
                    || (cov == bcov && title.char_len() == b.char_len() && title.text() < b.text())
            }
        };
        if replace {
            best = Some((title, cov));
        }
    }
    best.ok_or(CoverageError::NoFeasibleCandidate)
}

/// Exhaustive optimum over `pool`: scores every candidate and returns the
/// feasible one with maximal coverage.
pub fn brute_force_opt(
    pool: &[CandidateTitle],
    job: &ModuleJob,
    keywords: &[KeywordSet],
    scorer: &RelevanceScorer,
    config: &PipelineConfig,
) -> Result<(CandidateTitle, u32), CoverageError> {
    let scored = pool
        .iter()
        .map(|t| Ok((t.clone(), coverage(t, job, keywords, scorer)?)))
        .collect::<Result<Vec<_>, CoverageError>>()?;
    let (title, cov) = brute_force_opt_scored(&scored, config)?;
    Ok((title.clone(), cov))
}
