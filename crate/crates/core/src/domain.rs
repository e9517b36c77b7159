//! Shared data types used across the task flow, rubric, dataset and service layers.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Caller-supplied identifier restricted to `[a-z0-9-]{1,64}`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Slug(String);

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid id {0:?}: expected 1-64 characters from [a-z0-9-]")]
pub struct InvalidSlug(pub String);

impl Slug {
    pub const MAX_LEN: usize = 64;

    pub fn new(s: impl Into<String>) -> Result<Self, InvalidSlug> {
        let s = s.into();
        let valid = !s.is_empty()
            && s.len() <= Self::MAX_LEN
            && s.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-');
        if valid {
            Ok(Slug(s))
        } else {
            Err(InvalidSlug(s))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Slug {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for Slug {
    type Err = InvalidSlug;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Slug::new(s)
    }
}

impl AsRef<str> for Slug {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

impl Serialize for Slug {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for Slug {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Slug::new(s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Problem {
    pub id: Slug,
    pub title: String,
    /// Markdown.
    pub description: String,
    /// 1-based position in the fixed task order.
    pub ordinal: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    /// Program stdin.
    pub input: String,
    /// Normalized stdout of the fixed program on `input`.
    pub expected_output: String,
}

/// A buggy C program together with the expert fix and a test case that exposes the bug.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuggyProgram {
    pub id: Slug,
    pub problem_id: Slug,
    pub buggy_source: String,
    pub fixed_source: String,
    pub reference_test: TestCase,
}

/// The failing test case a student claims before seeing the fix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefeedbackSubmission {
    pub input: String,
    pub claimed_buggy_output: String,
    pub claimed_correct_output: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("pre-feedback field `{0}` is empty")]
pub struct EmptyField(pub &'static str);

impl PrefeedbackSubmission {
    pub fn validate(&self) -> Result<(), EmptyField> {
        if self.input.trim().is_empty() {
            return Err(EmptyField("input"));
        }
        if self.claimed_buggy_output.trim().is_empty() {
            return Err(EmptyField("claimed_buggy_output"));
        }
        if self.claimed_correct_output.trim().is_empty() {
            return Err(EmptyField("claimed_correct_output"));
        }
        Ok(())
    }
}

/// Progress of one task inside a session. Variants are ordered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskState {
    Presented,
    PrefeedbackDone,
    FixedShown,
    FeedbackSubmitted,
}

impl TaskState {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskState::Presented => "presented",
            TaskState::PrefeedbackDone => "prefeedback_done",
            TaskState::FixedShown => "fixed_shown",
            TaskState::FeedbackSubmitted => "feedback_submitted",
        }
    }

    pub fn next(self) -> Option<TaskState> {
        match self {
            TaskState::Presented => Some(TaskState::PrefeedbackDone),
            TaskState::PrefeedbackDone => Some(TaskState::FixedShown),
            TaskState::FixedShown => Some(TaskState::FeedbackSubmitted),
            TaskState::FeedbackSubmitted => None,
        }
    }
}

impl fmt::Display for TaskState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Failure codes attached to an unsuccessful pre-feedback attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReasonCode {
    BuggyMismatch,
    FixedMismatch,
    NoDivergence,
    RunError,
}

impl ReasonCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ReasonCode::BuggyMismatch => "buggy_mismatch",
            ReasonCode::FixedMismatch => "fixed_mismatch",
            ReasonCode::NoDivergence => "no_divergence",
            ReasonCode::RunError => "run_error",
        }
    }
}

/// What the student submitted plus what the harness actually observed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefeedbackRecord {
    pub submission: PrefeedbackSubmission,
    pub actual_buggy_output: String,
    pub actual_fixed_output: String,
    pub reasons: Vec<ReasonCode>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionTask {
    pub problem_id: Slug,
    pub buggy_program_id: Slug,
    pub state: TaskState,
    /// Set exactly when the task leaves `presented`.
    #[serde(default, with = "opt_binary")]
    pub understanding: Option<bool>,
    #[serde(default)]
    pub prefeedback: Option<PrefeedbackRecord>,
    #[serde(default)]
    pub feedback_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    /// Opaque pseudonym; never a real name.
    pub student_id: String,
    pub pack_id: Slug,
    pub tasks: Vec<SessionTask>,
    pub cursor: usize,
}

impl Session {
    pub fn is_complete(&self) -> bool {
        self.cursor >= self.tasks.len()
    }

    pub fn current(&self) -> Option<&SessionTask> {
        self.tasks.get(self.cursor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Student,
    Model,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Student => "student",
            Source::Model => "model",
        }
    }
}

impl FromStr for Source {
    type Err = UnknownVariant;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "student" => Ok(Source::Student),
            "model" => Ok(Source::Model),
            other => Err(UnknownVariant("source", other.to_string())),
        }
    }
}

/// Prompting strategy a model-written feedback instance was produced with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "basic")]
    Basic,
    #[serde(rename = "engineered")]
    Engineered,
    #[serde(rename = "finetuned-basic")]
    FinetunedBasic,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Basic => "basic",
            Strategy::Engineered => "engineered",
            Strategy::FinetunedBasic => "finetuned-basic",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown {0} {1:?}")]
pub struct UnknownVariant(pub &'static str, pub String);

impl FromStr for Strategy {
    type Err = UnknownVariant;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "basic" => Ok(Strategy::Basic),
            "engineered" => Ok(Strategy::Engineered),
            "finetuned-basic" => Ok(Strategy::FinetunedBasic),
            other => Err(UnknownVariant("strategy", other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackInstance {
    pub id: String,
    pub problem_id: Slug,
    pub buggy_program_id: Slug,
    pub source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<Strategy>,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "opt_binary")]
    pub understanding: Option<bool>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProvenanceError {
    #[error("student feedback {0} has no session id")]
    MissingSession(String),
    #[error("model feedback {0} must name both a model and a strategy")]
    MissingModel(String),
}

impl FeedbackInstance {
    pub fn check_provenance(&self) -> Result<(), ProvenanceError> {
        match self.source {
            Source::Student if self.session_id.is_none() => {
                Err(ProvenanceError::MissingSession(self.id.clone()))
            }
            Source::Model if self.model_name.is_none() || self.strategy.is_none() => {
                Err(ProvenanceError::MissingModel(self.id.clone()))
            }
            _ => Ok(()),
        }
    }
}

/// The four manually labelled rubric attributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RubricLabels {
    #[serde(with = "binary")]
    pub correct: bool,
    #[serde(with = "binary")]
    pub gives_fix: bool,
    #[serde(with = "binary")]
    pub mentions_variables: bool,
    #[serde(with = "binary")]
    pub mentions_lines: bool,
}

impl RubricLabels {
    /// Labels in the fixed attribute order used for pooled agreement.
    pub fn as_array(&self) -> [bool; 4] {
        [self.correct, self.gives_fix, self.mentions_variables, self.mentions_lines]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RubricAnnotation {
    pub feedback_id: String,
    pub annotator_id: String,
    #[serde(flatten)]
    pub labels: RubricLabels,
    pub num_words: usize,
    pub num_sentences: usize,
    /// Unix seconds of the last write; re-annotation overwrites it.
    #[serde(default)]
    pub updated_at: u64,
}

/// One row of a grouped rubric summary. Percentages and means are unrounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub label: String,
    pub sample_size: usize,
    /// Distinct buggy programs covered by the group.
    pub num_programs: usize,
    pub correct_pct: Option<f64>,
    pub mean_words: Option<f64>,
    pub mean_sentences: Option<f64>,
    pub gives_fix_pct: Option<f64>,
    pub mentions_variables_pct: Option<f64>,
    pub mentions_lines_pct: Option<f64>,
}

/// Serializes `bool` as 0/1; accepts 0/1 or true/false and rejects anything else.
pub mod binary {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &bool, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_u8(u8::from(*value))
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Bool(bool),
        Int(i64),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<bool, D::Error> {
        match Raw::deserialize(deserializer)? {
            Raw::Bool(b) => Ok(b),
            Raw::Int(0) => Ok(false),
            Raw::Int(1) => Ok(true),
            Raw::Int(other) => Err(de::Error::custom(format!(
                "expected a binary value 0 or 1, got {other}"
            ))),
        }
    }
}

pub mod opt_binary {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &Option<bool>, serializer: S) -> Result<S::Ok, S::Error> {
        match value {
            Some(v) => serializer.serialize_some(&u8::from(*v)),
            None => serializer.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<Option<bool>, D::Error> {
        #[derive(Deserialize)]
        struct Wrap(#[serde(with = "super::binary")] bool);
        Ok(Option::<Wrap>::deserialize(deserializer)?.map(|w| w.0))
    }
}
