//! Value types shared across the engine: items, jobs, keyword sets,
//! candidate titles, relevance vectors and the pipeline configuration.

use std::collections::HashSet;
use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default maximum title length in characters.
pub const DEFAULT_MAX_CHARS: usize = 60;
/// Default maximum number of whitespace-separated words in a title.
pub const DEFAULT_MAX_WORDS: usize = 10;
/// Default number of keywords distilled per item.
pub const DEFAULT_KEYWORDS_PER_ITEM: usize = 5;
pub const DEFAULT_CHAINS: usize = 3;
pub const DEFAULT_ITERATIONS: u32 = 3;
pub const DEFAULT_PARSE_RETRIES: u32 = 2;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DomainError {
    #[error("job has no items")]
    EmptyJob,
    #[error("duplicate item id `{0}`")]
    DuplicateItemId(String),
    #[error("item at position {0} has an empty id")]
    EmptyItemId(usize),
    #[error("item `{0}` has an empty title")]
    EmptyTitleText(String),
    #[error("invalid title: {0}")]
    InvalidTitle(String),
    #[error("invalid keyword set for item `{item_id}`: {reason}")]
    InvalidKeywords { item_id: String, reason: String },
    #[error("invalid relevance vector: {0}")]
    InvalidRelevance(String),
}

/// A recommended item: catalog information, title text and optional
/// supplementary text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Item {
    pub id: String,
    pub catalog: String,
    #[serde(rename = "title")]
    pub title_text: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub supplement: String,
}

impl Item {
    pub fn new(id: impl Into<String>, catalog: impl Into<String>, title_text: impl Into<String>) -> Self {
        Item {
            id: id.into(),
            catalog: catalog.into(),
            title_text: title_text.into(),
            supplement: String::new(),
        }
    }

    pub fn with_supplement(mut self, supplement: impl Into<String>) -> Self {
        self.supplement = supplement.into();
        self
    }

    /// Catalog, title and (non-empty) supplement joined for prompting.
    pub fn prod_info(&self) -> String {
        let mut parts = vec![self.catalog.trim(), self.title_text.trim()];
        if !self.supplement.trim().is_empty() {
            parts.push(self.supplement.trim());
        }
        parts.retain(|p| !p.is_empty());
        parts.join(" | ")
    }
}

/// The items of one carousel, in display order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleJob {
    pub module_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor_id: Option<String>,
    pub items: Vec<Item>,
}

impl ModuleJob {
    pub fn new(module_id: impl Into<String>, items: Vec<Item>) -> Self {
        ModuleJob {
            module_id: module_id.into(),
            anchor_id: None,
            items,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn item(&self, id: &str) -> Option<&Item> {
        self.items.iter().find(|i| i.id == id)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if self.items.is_empty() {
            return Err(DomainError::EmptyJob);
        }
        let mut seen = HashSet::with_capacity(self.items.len());
        for (pos, item) in self.items.iter().enumerate() {
            if item.id.trim().is_empty() {
                return Err(DomainError::EmptyItemId(pos));
            }
            if !seen.insert(item.id.as_str()) {
                return Err(DomainError::DuplicateItemId(item.id.clone()));
            }
            if item.title_text.trim().is_empty() {
                return Err(DomainError::EmptyTitleText(item.id.clone()));
            }
        }
        Ok(())
    }
}

/// Returns the job unchanged when every invariant holds.
pub fn validate_job(job: ModuleJob) -> Result<ModuleJob, DomainError> {
    job.validate()?;
    Ok(job)
}

/// Distilled keywords for one item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordSet {
    pub item_id: String,
    keywords: Vec<String>,
}

impl KeywordSet {
    /// Builds a keyword set holding at most `limit` keywords.
    pub fn new(item_id: impl Into<String>, keywords: Vec<String>, limit: usize) -> Result<Self, DomainError> {
        let item_id = item_id.into();
        let invalid = |reason: &str| DomainError::InvalidKeywords {
            item_id: item_id.clone(),
            reason: reason.to_string(),
        };
        if keywords.is_empty() {
            return Err(invalid("no keywords"));
        }
        if keywords.len() > limit {
            return Err(invalid("more keywords than the configured limit"));
        }
        if keywords.iter().any(|k| k.trim().is_empty()) {
            return Err(invalid("empty keyword"));
        }
        if keywords.iter().any(|k| k.contains(',')) {
            return Err(invalid("keyword contains a comma"));
        }
        Ok(KeywordSet { item_id, keywords })
    }

    pub fn keywords(&self) -> &[String] {
        &self.keywords
    }
}

/// Number of Unicode scalar values in `s`.
pub fn char_len(s: &str) -> usize {
    s.chars().count()
}

pub fn word_count(s: &str) -> usize {
    s.split_whitespace().count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Initial,
    Refined,
    Baseline,
}

/// A generated title together with its derived length measures and history.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawCandidateTitle")]
pub struct CandidateTitle {
    text: String,
    char_len: usize,
    word_count: usize,
    pub iteration: u32,
    pub chain_id: u32,
    pub provenance: Provenance,
    pub trace: Vec<String>,
}

#[derive(Deserialize)]
struct RawCandidateTitle {
    text: String,
    char_len: usize,
    word_count: usize,
    iteration: u32,
    chain_id: u32,
    provenance: Provenance,
    #[serde(default)]
    trace: Vec<String>,
}

impl TryFrom<RawCandidateTitle> for CandidateTitle {
    type Error = DomainError;

    fn try_from(raw: RawCandidateTitle) -> Result<Self, Self::Error> {
        let mut title = CandidateTitle::new(raw.text, raw.iteration, raw.chain_id, raw.provenance)?;
        if title.char_len != raw.char_len || title.word_count != raw.word_count {
            return Err(DomainError::InvalidTitle(format!(
                "stored lengths ({}, {}) do not match text ({}, {})",
                raw.char_len, raw.word_count, title.char_len, title.word_count
            )));
        }
        title.trace = raw.trace;
        Ok(title)
    }
}

impl CandidateTitle {
    pub fn new(
        text: impl Into<String>,
        iteration: u32,
        chain_id: u32,
        provenance: Provenance,
    ) -> Result<Self, DomainError> {
        let text = text.into();
        if text.contains(['\n', '\r']) {
            return Err(DomainError::InvalidTitle("title contains a line break".into()));
        }
        Ok(CandidateTitle {
            char_len: char_len(&text),
            word_count: word_count(&text),
            text,
            iteration,
            chain_id,
            provenance,
            trace: Vec::new(),
        })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn char_len(&self) -> usize {
        self.char_len
    }

    pub fn word_count(&self) -> usize {
        self.word_count
    }

    pub fn push_trace(&mut self, entry: impl Into<String>) {
        self.trace.push(entry.into());
    }
}

impl fmt::Display for CandidateTitle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

/// Per-item relevance bits of one title, in job order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawRelevanceVector")]
pub struct RelevanceVector {
    bits: IndexMap<String, u8>,
    coverage: u32,
}

#[derive(Deserialize)]
struct RawRelevanceVector {
    bits: IndexMap<String, u8>,
    coverage: u32,
}

impl TryFrom<RawRelevanceVector> for RelevanceVector {
    type Error = DomainError;

    fn try_from(raw: RawRelevanceVector) -> Result<Self, Self::Error> {
        if raw.bits.values().any(|b| *b > 1) {
            return Err(DomainError::InvalidRelevance("bits must be 0 or 1".into()));
        }
        let v = RelevanceVector::from_bits(raw.bits.into_iter().map(|(k, b)| (k, b == 1)));
        if v.coverage != raw.coverage {
            return Err(DomainError::InvalidRelevance(format!(
                "coverage {} does not equal the bit sum {}",
                raw.coverage, v.coverage
            )));
        }
        Ok(v)
    }
}

impl RelevanceVector {
    pub fn from_bits<I, S>(bits: I) -> Self
    where
        I: IntoIterator<Item = (S, bool)>,
        S: Into<String>,
    {
        let bits: IndexMap<String, u8> = bits.into_iter().map(|(id, b)| (id.into(), u8::from(b))).collect();
        let coverage = bits.values().map(|b| u32::from(*b)).sum();
        RelevanceVector { bits, coverage }
    }

    pub fn coverage(&self) -> u32 {
        self.coverage
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bit(&self, item_id: &str) -> Option<bool> {
        self.bits.get(item_id).map(|b| *b == 1)
    }

    pub fn bits(&self) -> impl Iterator<Item = (&str, bool)> {
        self.bits.iter().map(|(k, b)| (k.as_str(), *b == 1))
    }

    pub fn uncovered(&self) -> impl Iterator<Item = &str> {
        self.bits().filter(|(_, b)| !b).map(|(k, _)| k)
    }

    pub fn is_full(&self) -> bool {
        self.coverage as usize == self.bits.len()
    }

    /// True when the keys are exactly the job's item ids, in order.
    pub fn matches_job(&self, job: &ModuleJob) -> bool {
        self.bits.len() == job.items.len() && self.bits.keys().zip(&job.items).all(|(k, item)| *k == item.id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Llm,
    Mock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArbiterMode {
    Llm,
    Rule,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    KeywordOverlap,
    LlmJudge,
}

/// Inputs for deriving the refinement budget from the convergence bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryInputs {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub epsilon: f64,
    /// Defaults to the job size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub opt_estimate: Option<u32>,
    /// Defaults to zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c0_estimate: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IterationBudget {
    Fixed(u32),
    Theory(TheoryInputs),
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid configuration: {0}")]
pub struct ConfigError(pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Maximum title length in characters.
    pub max_chars: usize,
    pub max_words: usize,
    pub keywords_per_item: usize,
    /// Number of independent generate-and-refine chains.
    pub chains: usize,
    /// Refinement rounds per chain.
    pub budget: IterationBudget,
    pub backend: BackendKind,
    pub scorer: ScorerKind,
    pub arbiter: ArbiterMode,
    pub temperature: f64,
    pub parse_retries: u32,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            max_chars: DEFAULT_MAX_CHARS,
            max_words: DEFAULT_MAX_WORDS,
            keywords_per_item: DEFAULT_KEYWORDS_PER_ITEM,
            chains: DEFAULT_CHAINS,
            budget: IterationBudget::Fixed(DEFAULT_ITERATIONS),
            backend: BackendKind::Mock,
            scorer: ScorerKind::KeywordOverlap,
            arbiter: ArbiterMode::Llm,
            temperature: 0.7,
            parse_retries: DEFAULT_PARSE_RETRIES,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: &str| Err(ConfigError(m.to_string()));
        if self.max_chars == 0 {
            return fail("max_chars must be positive");
        }
        if self.max_words == 0 {
            return fail("max_words must be positive");
        }
        if self.keywords_per_item == 0 {
            return fail("keywords_per_item must be at least 1");
        }
        if self.chains == 0 {
            return fail("chains must be at least 1");
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return fail("temperature must be a non-negative number");
        }
        if let IterationBudget::Theory(t) = &self.budget {
            crate::convergence::check_theory_params(t.alpha, t.beta, t.gamma, t.epsilon)
                .map_err(|e| ConfigError(e.to_string()))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three_items() -> ModuleJob {
        ModuleJob::new(
            "m1",
            vec![
                Item::new("a", "Electronics > Laptops", "MacBook Air 13"),
                Item::new("b", "Electronics > Laptops", "MacBook Pro 14"),
                Item::new("c", "Electronics > Laptops", "MacBook Pro 16"),
            ],
        )
    }

    #[test]
    fn valid_job_is_returned_unchanged() {
        let job = three_items();
        assert_eq!(validate_job(job.clone()).unwrap(), job);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut job = three_items();
        job.items[1].id = "a".into();
        assert_eq!(validate_job(job), Err(DomainError::DuplicateItemId("a".into())));
    }

    #[test]
    fn empty_job_rejected() {
        let job = ModuleJob::new("m", vec![]);
        assert_eq!(validate_job(job), Err(DomainError::EmptyJob));
    }

    #[test]
    fn empty_title_rejected() {
        let mut job = three_items();
        job.items[2].title_text = "  ".into();
        assert_eq!(validate_job(job), Err(DomainError::EmptyTitleText("c".into())));
    }

    #[test]
    fn char_len_counts_scalars() {
        assert_eq!(char_len("naïve"), 5);
        assert_eq!("naïve".len(), 6);
        let ascii = "Sleek and high-performance MacBook Pro and Air";
        assert_eq!(char_len(ascii), ascii.len());
    }

    #[test]
    fn candidate_rejects_line_breaks() {
        assert!(CandidateTitle::new("a\nb", 0, 0, Provenance::Initial).is_err());
        let t = CandidateTitle::new("Cozy Home Picks", 0, 0, Provenance::Initial).unwrap();
        assert_eq!((t.char_len(), t.word_count()), (15, 3));
    }

    #[test]
    fn candidate_deserialization_checks_lengths() {
        let good = r#"{"text":"ab cd","char_len":5,"word_count":2,"iteration":0,"chain_id":0,"provenance":"initial","trace":[]}"#;
        assert!(serde_json::from_str::<CandidateTitle>(good).is_ok());
        let bad = good.replace("\"char_len\":5", "\"char_len\":4");
        assert!(serde_json::from_str::<CandidateTitle>(&bad).is_err());
    }

    #[test]
    fn relevance_vector_coverage_is_bit_sum() {
        let v = RelevanceVector::from_bits([("a", true), ("b", true), ("c", false), ("d", true)]);
        assert_eq!(v.coverage(), 3);
        assert_eq!(v.uncovered().collect::<Vec<_>>(), vec!["c"]);
        let bad = r#"{"bits":{"a":1,"b":0},"coverage":2}"#;
        assert!(serde_json::from_str::<RelevanceVector>(bad).is_err());
    }

    #[test]
    fn keyword_set_limits() {
        assert!(KeywordSet::new("a", vec!["x".into(), "y".into()], 1).is_err());
        assert!(KeywordSet::new("a", vec!["x,y".into()], 5).is_err());
        assert!(KeywordSet::new("a", vec![], 5).is_err());
        assert_eq!(KeywordSet::new("a", vec!["x".into()], 5).unwrap().keywords(), ["x"]);
    }

    #[test]
    fn config_validation() {
        assert!(PipelineConfig::default().validate().is_ok());
        let cfg = PipelineConfig {
            chains: 0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = PipelineConfig {
            budget: IterationBudget::Theory(TheoryInputs {
                alpha: 1.0,
                beta: 0.0,
                gamma: 0.5,
                epsilon: 0.1,
                opt_estimate: None,
                c0_estimate: None,
            }),
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
