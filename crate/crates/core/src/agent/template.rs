//! Prompt templates with `{name}` placeholders.

use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("template `{template}` has unbound placeholder {{{name}}}")]
    Unbound { template: String, name: String },
    #[error("cannot read template {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: String,
    pub body: String,
}

fn is_placeholder_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

/// Finds `{ident}` at the start of `s`, returning the identifier.
fn placeholder_at(s: &str) -> Option<&str> {
    let rest = s.strip_prefix('{')?;
    let end = rest.find('}')?;
    let name = &rest[..end];
    (!name.is_empty() && name.chars().all(is_placeholder_char)).then_some(name)
}

impl PromptTemplate {
    pub fn new(name: impl Into<String>, body: impl Into<String>) -> Self {
        PromptTemplate {
            name: name.into(),
            body: body.into(),
        }
    }

    /// Placeholder names in order of first appearance.
    pub fn placeholders(&self) -> Vec<&str> {
        let mut names: Vec<&str> = Vec::new();
        for (i, _) in self.body.match_indices('{') {
            if let Some(name) = placeholder_at(&self.body[i..]) {
                if !names.contains(&name) {
                    names.push(name);
                }
            }
        }
        names
    }

    /// Substitutes every placeholder in a single pass. Bindings not used by
    /// the body are ignored; placeholders without a binding are an error.
    pub fn render(&self, vars: &[(&str, &str)]) -> Result<String, TemplateError> {
        let mut out = String::with_capacity(self.body.len() + 256);
        let mut rest = self.body.as_str();
        while let Some(i) = rest.find('{') {
            out.push_str(&rest[..i]);
            let tail = &rest[i..];
            match placeholder_at(tail) {
                Some(name) => {
                    let value = vars.iter().find(|(k, _)| *k == name).map(|(_, v)| *v).ok_or_else(|| {
                        TemplateError::Unbound {
                            template: self.name.clone(),
                            name: name.to_string(),
                        }
                    })?;
                    out.push_str(value);
                    rest = &tail[name.len() + 2..];
                }
                None => {
                    out.push('{');
                    rest = &tail[1..];
                }
            }
        }
        out.push_str(rest);
        Ok(out)
    }
}

const KEYWORDS: &str = include_str!("../../templates/keywords.txt");
const GAG: &str = include_str!("../../templates/gag.txt");
const FEEDBACK: &str = include_str!("../../templates/feedback.txt");
const REGENERATION: &str = include_str!("../../templates/regeneration.txt");
const ARBITRATOR: &str = include_str!("../../templates/arbitrator.txt");
const JUDGE: &str = include_str!("../../templates/judge.txt");

/// The prompts used by every agent role.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    pub keywords: PromptTemplate,
    pub gag: PromptTemplate,
    pub feedback: PromptTemplate,
    pub regeneration: PromptTemplate,
    pub arbitrator: PromptTemplate,
    pub judge: PromptTemplate,
}

impl Default for TemplateSet {
    fn default() -> Self {
        TemplateSet {
            keywords: PromptTemplate::new("keywords", KEYWORDS),
            gag: PromptTemplate::new("gag", GAG),
            feedback: PromptTemplate::new("feedback", FEEDBACK),
            regeneration: PromptTemplate::new("regeneration", REGENERATION),
            arbitrator: PromptTemplate::new("arbitrator", ARBITRATOR),
            judge: PromptTemplate::new("judge", JUDGE),
        }
    }
}

impl TemplateSet {
    /// Defaults, overridden by any of `keywords.txt`, `gag.txt`,
    /// `feedback.txt`, `regeneration.txt`, `arbitrator.txt`, `judge.txt`
    /// present in `dir`.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, TemplateError> {
        let dir = dir.as_ref();
        if !dir.is_dir() {
            return Err(TemplateError::Io {
                path: dir.to_path_buf(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "not a directory"),
            });
        }
        let mut set = TemplateSet::default();
        for t in set.iter_mut() {
            let path = dir.join(format!("{}.txt", t.name));
            if path.exists() {
                t.body = std::fs::read_to_string(&path).map_err(|source| TemplateError::Io { path, source })?;
            }
        }
        Ok(set)
    }

    fn iter_mut(&mut self) -> [&mut PromptTemplate; 6] {
        [
            &mut self.keywords,
            &mut self.gag,
            &mut self.feedback,
            &mut self.regeneration,
            &mut self.arbitrator,
            &mut self.judge,
        ]
    }
}
