//! Length filtering, prompt rendering and fine-tuning dataset export.

mod prompt;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use prompt::{format_failing_test_case, render_prompt, PromptError, PromptStrategy, Scenario, SLOT_NAMES};

use crate::domain::FeedbackInstance;
use crate::pack::ValidatedPack;
use crate::rubric::count_words;

pub const START_TOKEN: &str = "<feedback>";
pub const END_TOKEN: &str = "</feedback>";
pub const DEFAULT_MIN_WORDS: usize = 5;
pub const DEFAULT_MAX_WORDS: usize = 200;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("min_words {min} is greater than max_words {max}")]
    InvalidBounds { min: usize, max: usize },
    #[error("feedback {feedback_id}: {source}")]
    Unresolvable { feedback_id: String, source: PromptError },
    #[error("validation fraction {0} is outside [0, 1]")]
    InvalidSplit(f64),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Keeps instances whose word count lies in `[min_words, max_words]`, in input order.
pub fn filter_by_length(
    instances: &[FeedbackInstance],
    min_words: usize,
    max_words: usize,
) -> Result<Vec<FeedbackInstance>, DatasetError> {
    if min_words > max_words {
        return Err(DatasetError::InvalidBounds { min: min_words, max: max_words });
    }
    Ok(instances
        .iter()
        .filter(|f| (min_words..=max_words).contains(&count_words(&f.text)))
        .cloned()
        .collect())
}

pub fn wrap_completion(text: &str) -> String {
    format!("{START_TOKEN}{text}{END_TOKEN}")
}

pub fn unwrap_completion(completion: &str) -> Option<&str> {
    completion.strip_prefix(START_TOKEN)?.strip_suffix(END_TOKEN)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub problem_id: String,
    pub buggy_program_id: String,
    #[serde(default, with = "crate::domain::opt_binary")]
    pub understanding: Option<bool>,
    pub num_words: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FineTuneRecord {
    pub prompt: String,
    pub completion: String,
    pub meta: RecordMeta,
}

/// One record per instance, ordered by (problem ordinal, program id, instance id).
pub fn build_finetune_dataset(
    instances: &[FeedbackInstance],
    pack: &ValidatedPack,
) -> Result<Vec<FineTuneRecord>, DatasetError> {
    let mut keyed = Vec::with_capacity(instances.len());
    for f in instances {
        let unresolvable = |source| DatasetError::Unresolvable { feedback_id: f.id.clone(), source };
        if !pack.contains(f.problem_id.as_str(), f.buggy_program_id.as_str()) {
            return Err(unresolvable(PromptError::UnknownProgram(f.buggy_program_id.to_string())));
        }
        let scenario = Scenario::from_pack(pack, f.buggy_program_id.as_str()).map_err(unresolvable)?;
        let prompt = render_prompt(PromptStrategy::Finetune, &scenario).map_err(unresolvable)?;
        let ordinal = pack.ordinal_of(f.problem_id.as_str()).unwrap_or(u32::MAX);
        let record = FineTuneRecord {
            prompt,
            completion: wrap_completion(&f.text),
            meta: RecordMeta {
                problem_id: f.problem_id.to_string(),
                buggy_program_id: f.buggy_program_id.to_string(),
                understanding: f.understanding,
                num_words: count_words(&f.text),
            },
        };
        keyed.push(((ordinal, f.buggy_program_id.clone(), f.id.clone()), record));
    }
    keyed.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(keyed.into_iter().map(|(_, r)| r).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// Share of records routed to the validation file, chosen by content hash.
    pub validation_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportedFile {
    pub path: String,
    pub records: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportManifest {
    pub pack_id: String,
    pub format: String,
    pub min_words: usize,
    pub max_words: usize,
    pub record_count: usize,
    pub counts_per_problem: BTreeMap<String, usize>,
    /// SHA-256 over the concatenated record lines of all files.
    pub digest: String,
    pub files: Vec<ExportedFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitSpec>,
}

#[derive(Debug, Clone)]
pub struct ExportOptions {
    pub pack_id: String,
    pub min_words: usize,
    pub max_words: usize,
    pub split: Option<SplitSpec>,
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    path.with_file_name(name)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().unwrap_or_default().to_string_lossy();
    let ext = path.extension().map(|e| format!(".{}", e.to_string_lossy())).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}{ext}"))
}

fn record_line(record: &FineTuneRecord) -> Vec<u8> {
    let mut line = serde_json::to_vec(record).expect("records serialize");
    line.push(b'\n');
    line
}

fn in_validation(line: &[u8], fraction: f64) -> bool {
    let digest = Sha256::digest(line);
    let x = u64::from_be_bytes(digest[..8].try_into().expect("8 bytes"));
    (x as f64 / u64::MAX as f64) < fraction
}

/// Writes `bytes` to a temp file beside `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), DatasetError> {
    let io = |source| DatasetError::Io { path: path.to_path_buf(), source };
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

/// Writes records as JSON lines plus `<path>.manifest.json`.
///
/// With a split, records go to `<stem>.train<ext>` and `<stem>.validation<ext>`
/// instead of `path`. Output is a pure function of the inputs.
pub fn export_records(
    records: &[FineTuneRecord],
    path: &Path,
    options: &ExportOptions,
) -> Result<ExportManifest, DatasetError> {
    if let Some(split) = options.split {
        if !(0.0..=1.0).contains(&split.validation_fraction) {
            return Err(DatasetError::InvalidSplit(split.validation_fraction));
        }
    }
    let lines: Vec<Vec<u8>> = records.iter().map(record_line).collect();
    let mut hasher = Sha256::new();
    let mut outputs: Vec<(PathBuf, Vec<u8>, usize)> = match options.split {
        None => vec![(path.to_path_buf(), Vec::new(), 0)],
        Some(_) => vec![(sibling(path, "train"), Vec::new(), 0), (sibling(path, "validation"), Vec::new(), 0)],
    };
    for line in &lines {
        let slot = match options.split {
            Some(s) if in_validation(line, s.validation_fraction) => 1,
            _ => 0,
        };
        outputs[slot].1.extend_from_slice(line);
        outputs[slot].2 += 1;
    }
    let mut files = Vec::new();
    for (p, bytes, n) in &outputs {
        hasher.update(bytes);
        files.push(ExportedFile {
            path: p.file_name().unwrap_or_default().to_string_lossy().into_owned(),
            records: *n,
            sha256: hex::encode(Sha256::digest(bytes)),
        });
    }
    let mut counts_per_problem = BTreeMap::new();
    for r in records {
        *counts_per_problem.entry(r.meta.problem_id.clone()).or_insert(0) += 1;
    }
    let manifest = ExportManifest {
        pack_id: options.pack_id.clone(),
        format: "jsonl".into(),
        min_words: options.min_words,
        max_words: options.max_words,
        record_count: records.len(),
        counts_per_problem,
        digest: hex::encode(hasher.finalize()),
        files,
        split: options.split,
    };
    for (p, bytes, _) in &outputs {
        write_atomic(p, bytes)?;
    }
    let mut json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    json.push(b'\n');
    write_atomic(&manifest_path(path), &json)?;
    Ok(manifest)
}

pub fn read_records(path: &Path) -> Result<Vec<FineTuneRecord>, DatasetError> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })?;
    text.lines()
        .filter(|l| !l.is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| DatasetError::Io {
                path: path.to_path_buf(),
                source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
            })
        })
        .collect()
}
