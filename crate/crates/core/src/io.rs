//! Line-delimited JSON datasets and result files.
//!
//! Dataset lines look like
//! `{"module_id": str, "anchor_id": str?, "items": [{"id": str, "catalog": str, "title": str, "supplement": str?}]}`.
//! Result files hold one [`PipelineResult`] per line with a fixed field
//! order, so identical runs produce identical bytes.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::Value;
use thiserror::Error;

use crate::domain::ModuleJob;
use crate::pipeline::PipelineResult;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {reason}")]
pub struct SchemaError {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Error)]
pub enum IoError {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Schema(#[from] SchemaError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Default)]
pub struct Dataset {
    /// Parsed jobs with their 1-based line numbers.
    pub jobs: Vec<(usize, ModuleJob)>,
    pub errors: Vec<SchemaError>,
}

impl Dataset {
    pub fn into_jobs(self) -> Vec<ModuleJob> {
        self.jobs.into_iter().map(|(_, j)| j).collect()
    }
}

fn require_str(obj: &serde_json::Map<String, Value>, key: &str, ctx: &str) -> Result<(), String> {
    match obj.get(key) {
        None | Some(Value::Null) => Err(format!("{ctx}{key} required")),
        Some(Value::String(_)) => Ok(()),
        Some(_) => Err(format!("{ctx}{key} must be a string")),
    }
}

fn optional_str(obj: &serde_json::Map<String, Value>, key: &str, ctx: &str) -> Result<(), String> {
    match obj.get(key) {
        None | Some(Value::Null) | Some(Value::String(_)) => Ok(()),
        Some(_) => Err(format!("{ctx}{key} must be a string")),
    }
}

/// Parses and validates one dataset line.
pub fn parse_job_line(text: &str) -> Result<ModuleJob, String> {
    let value: Value = serde_json::from_str(text).map_err(|e| format!("invalid JSON: {e}"))?;
    let obj = value.as_object().ok_or("expected a JSON object")?;
    require_str(obj, "module_id", "")?;
    optional_str(obj, "anchor_id", "")?;
    let items = match obj.get("items") {
        None | Some(Value::Null) => return Err("items required".into()),
        Some(Value::Array(items)) => items,
        Some(_) => return Err("items must be an array".into()),
    };
    for (i, item) in items.iter().enumerate() {
        let ctx = format!("items[{i}].");
        let item = item.as_object().ok_or(format!("items[{i}] must be an object"))?;
        require_str(item, "id", &ctx)?;
        require_str(item, "catalog", &ctx)?;
        require_str(item, "title", &ctx)?;
        optional_str(item, "supplement", &ctx)?;
    }
    let job: ModuleJob = serde_json::from_value(value).map_err(|e| e.to_string())?;
    job.validate().map_err(|e| e.to_string())?;
    Ok(job)
}

/// Reads every non-empty line, collecting malformed lines as errors instead
/// of failing.
pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset, IoError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => IoError::FileNotFound(path.to_path_buf()),
        _ => IoError::Io {
            path: path.to_path_buf(),
            source: e,
        },
    })?;
    let mut dataset = Dataset::default();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let line_no = idx + 1;
        match parse_job_line(&line) {
            Ok(job) => dataset.jobs.push((line_no, job)),
            Err(reason) => dataset.errors.push(SchemaError { line: line_no, reason }),
        }
    }
    if dataset.jobs.is_empty() && dataset.errors.is_empty() {
        log::warn!("{} contains no jobs", path.display());
    }
    Ok(dataset)
}

/// Strict loading: the first malformed line fails the whole file.
pub fn load_jobs(path: impl AsRef<Path>) -> Result<Vec<ModuleJob>, IoError> {
    let dataset = read_dataset(path)?;
    if let Some(err) = dataset.errors.into_iter().next() {
        return Err(err.into());
    }
    Ok(dataset.jobs.into_iter().map(|(_, j)| j).collect())
}

pub fn result_line(result: &PipelineResult) -> String {
    serde_json::to_string(result).expect("results always serialize")
}

pub fn write_results_to<W: Write>(results: &[PipelineResult], mut out: W) -> std::io::Result<()> {
    for r in results {
        out.write_all(result_line(r).as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn write_results(results: &[PipelineResult], path: impl AsRef<Path>) -> Result<(), IoError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(io_err(path))?;
    write_results_to(results, BufWriter::new(file)).map_err(io_err(path))
}

pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<PipelineResult>, IoError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| {
                IoError::Schema(SchemaError {
                    line: i + 1,
                    reason: e.to_string(),
                })
            })
        })
        .collect()
}
