//! The flipped-role session: a student sees a buggy program, proposes a failing
//! test case, is shown the fix, then writes feedback as if they were the tutor.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::domain::{
    EmptyField, FeedbackInstance, PrefeedbackRecord, PrefeedbackSubmission, ReasonCode, Session, SessionTask,
    Slug, Source, TaskState,
};
use crate::harness::{validate_prefeedback, Harness, HarnessError};
use crate::pack::ValidatedPack;
use crate::store::{EntityKind, Store, StoreError};

pub const TUTOR_INSTRUCTION: &str = "Imagine you are a tutor. A student in the course is asking for your help. \
Here is the problem description and the student's buggy C program. You should provide feedback so that the \
student can understand the issues in their buggy program and fix it. Provide your feedback in the textbox below.";

const MAX_STUDENT_ID_LEN: usize = 128;

#[derive(Debug, Error)]
pub enum TaskFlowError {
    #[error("unknown pack {0}")]
    UnknownPack(String),
    #[error("pack {0} has no problems")]
    EmptyPack(String),
    #[error("invalid student id: {0}")]
    InvalidStudentId(&'static str),
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("session {0} is complete")]
    SessionComplete(String),
    #[error("task is {actual}, this step needs {required}")]
    OutOfOrder { required: TaskState, actual: TaskState },
    #[error(transparent)]
    InvalidSubmission(#[from] EmptyField),
    #[error("feedback text is empty")]
    EmptyFeedback,
    #[error("execution failed: {0}")]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Store(StoreError),
}

impl From<StoreError> for TaskFlowError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound(EntityKind::Session, id) => TaskFlowError::UnknownSession(id),
            StoreError::NotFound(EntityKind::Pack, id) => TaskFlowError::UnknownPack(id),
            other => TaskFlowError::Store(other),
        }
    }
}

impl TaskFlowError {
    /// Environment failures that leave the session untouched and may succeed on retry.
    pub fn is_retryable(&self) -> bool {
        match self {
            TaskFlowError::Harness(e) => e.is_retryable(),
            TaskFlowError::Store(StoreError::Io(_)) => true,
            _ => false,
        }
    }
}

/// What the student sees for the current task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskView {
    pub session_id: String,
    pub task_index: usize,
    pub task_count: usize,
    pub problem_id: Slug,
    pub problem_title: String,
    pub problem_description: String,
    pub buggy_program_id: Slug,
    pub buggy_source: String,
    pub instruction: String,
    pub state: TaskState,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "crate::domain::opt_binary")]
    pub understanding: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_source: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefeedbackOutcome {
    #[serde(with = "crate::domain::binary")]
    pub understanding: bool,
    pub fixed_source: String,
    pub reasons: Vec<ReasonCode>,
}

pub fn session_id_for(pack_id: &str, student_id: &str) -> String {
    let digest = Sha256::new()
        .chain_update(pack_id.as_bytes())
        .chain_update([0u8])
        .chain_update(student_id.as_bytes())
        .finalize();
    format!("s-{}", &hex::encode(digest)[..16])
}

pub fn feedback_id_for(session_id: &str, task_index: usize) -> String {
    format!("{session_id}-{task_index}")
}

/// Uniform choice among `candidates`, reproducible per (student, problem).
pub fn assign_program<'a>(student_id: &str, problem_id: &str, candidates: &[&'a Slug]) -> &'a Slug {
    let seed: [u8; 32] = Sha256::new()
        .chain_update(student_id.as_bytes())
        .chain_update([0u8])
        .chain_update(problem_id.as_bytes())
        .finalize()
        .into();
    let mut rng = ChaCha8Rng::from_seed(seed);
    candidates[rng.random_range(0..candidates.len())]
}

fn check_student_id(student_id: &str) -> Result<(), TaskFlowError> {
    if student_id.trim().is_empty() {
        return Err(TaskFlowError::InvalidStudentId("empty"));
    }
    if student_id.len() > MAX_STUDENT_ID_LEN {
        return Err(TaskFlowError::InvalidStudentId("longer than 128 bytes"));
    }
    if student_id.chars().any(char::is_control) {
        return Err(TaskFlowError::InvalidStudentId("contains control characters"));
    }
    Ok(())
}

pub struct TaskFlow {
    store: Arc<Store>,
    harness: Arc<Harness>,
    packs: Mutex<HashMap<String, Arc<ValidatedPack>>>,
    session_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl TaskFlow {
    pub fn new(store: Arc<Store>, harness: Arc<Harness>) -> Self {
        TaskFlow { store, harness, packs: Mutex::new(HashMap::new()), session_locks: Mutex::new(HashMap::new()) }
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn harness(&self) -> &Arc<Harness> {
        &self.harness
    }

    pub fn pack(&self, pack_id: &str) -> Result<Arc<ValidatedPack>, TaskFlowError> {
        let mut packs = self.packs.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(p) = packs.get(pack_id) {
            return Ok(p.clone());
        }
        let pack: Arc<ValidatedPack> = Arc::new(self.store.get(EntityKind::Pack, pack_id)?);
        packs.insert(pack_id.to_string(), pack.clone());
        Ok(pack)
    }

    fn session_lock(&self, session_id: &str) -> Arc<Mutex<()>> {
        self.session_locks
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .entry(session_id.to_string())
            .or_default()
            .clone()
    }

    pub fn session(&self, session_id: &str) -> Result<Session, TaskFlowError> {
        Ok(self.store.get(EntityKind::Session, session_id)?)
    }

    /// Creates the student's session for `pack_id`, or returns the one they already have.
    pub fn start_session(&self, student_id: &str, pack_id: &str) -> Result<Session, TaskFlowError> {
        check_student_id(student_id)?;
        let pack = self.pack(pack_id)?;
        if pack.problems.is_empty() {
            return Err(TaskFlowError::EmptyPack(pack_id.to_string()));
        }
        let id = session_id_for(pack_id, student_id);
        let lock = self.session_lock(&id);
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(existing) = self.store.get_record(EntityKind::Session, &id) {
            return Ok(serde_json::from_value(existing.payload).map_err(|e| {
                TaskFlowError::Store(StoreError::Payload { kind: EntityKind::Session, id, message: e.to_string() })
            })?);
        }
        let tasks = pack
            .problems
            .iter()
            .map(|problem| {
                let candidates: Vec<&Slug> = pack.programs_for(problem.id.as_str()).map(|b| &b.id).collect();
                let chosen = assign_program(student_id, problem.id.as_str(), &candidates);
                SessionTask {
                    problem_id: problem.id.clone(),
                    buggy_program_id: chosen.clone(),
                    state: TaskState::Presented,
                    understanding: None,
                    prefeedback: None,
                    feedback_id: None,
                }
            })
            .collect();
        let session = Session {
            id: id.clone(),
            student_id: student_id.to_string(),
            pack_id: pack.id.clone(),
            tasks,
            cursor: 0,
        };
        self.store.put(EntityKind::Session, &id, &session)?;
        Ok(session)
    }

    fn view(&self, session: &Session) -> Result<TaskView, TaskFlowError> {
        let task = session.current().ok_or_else(|| TaskFlowError::SessionComplete(session.id.clone()))?;
        let pack = self.pack(session.pack_id.as_str())?;
        let problem = pack
            .problem(task.problem_id.as_str())
            .ok_or_else(|| TaskFlowError::UnknownPack(session.pack_id.to_string()))?;
        let program = pack
            .program(task.buggy_program_id.as_str())
            .ok_or_else(|| TaskFlowError::UnknownPack(session.pack_id.to_string()))?;
        let revealed = task.state >= TaskState::FixedShown;
        Ok(TaskView {
            session_id: session.id.clone(),
            task_index: session.cursor,
            task_count: session.tasks.len(),
            problem_id: problem.id.clone(),
            problem_title: problem.title.clone(),
            problem_description: problem.description.clone(),
            buggy_program_id: program.id.clone(),
            buggy_source: program.buggy_source.clone(),
            instruction: TUTOR_INSTRUCTION.to_string(),
            state: task.state,
            understanding: task.understanding,
            fixed_source: revealed.then(|| program.fixed_source.clone()),
        })
    }

    pub fn get_current_task(&self, session_id: &str) -> Result<TaskView, TaskFlowError> {
        let session = self.session(session_id)?;
        self.view(&session)
    }

    /// Current task view, or `None` once every task has feedback.
    pub fn next_task(&self, session_id: &str) -> Result<Option<TaskView>, TaskFlowError> {
        let session = self.session(session_id)?;
        if session.is_complete() {
            return Ok(None);
        }
        self.view(&session).map(Some)
    }

    fn current_in_state(session: &Session, required: TaskState) -> Result<&SessionTask, TaskFlowError> {
        let task = session.current().ok_or_else(|| TaskFlowError::SessionComplete(session.id.clone()))?;
        if task.state != required {
            return Err(TaskFlowError::OutOfOrder { required, actual: task.state });
        }
        Ok(task)
    }

    /// Runs the student's claimed failing test case, records the outcome and reveals the fix.
    pub fn submit_prefeedback(
        &self,
        session_id: &str,
        submission: &PrefeedbackSubmission,
    ) -> Result<PrefeedbackOutcome, TaskFlowError> {
        let lock = self.session_lock(session_id);
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        let mut session = self.session(session_id)?;
        let task = Self::current_in_state(&session, TaskState::Presented)?;
        submission.validate()?;
        let pack = self.pack(session.pack_id.as_str())?;
        let program = pack
            .program(task.buggy_program_id.as_str())
            .ok_or_else(|| TaskFlowError::UnknownPack(session.pack_id.to_string()))?;
        let outcome = validate_prefeedback(&self.harness, program, submission)?;

        let cursor = session.cursor;
        let task = &mut session.tasks[cursor];
        task.understanding = Some(outcome.understanding);
        task.prefeedback = Some(PrefeedbackRecord {
            submission: submission.clone(),
            actual_buggy_output: outcome.actual_buggy_output,
            actual_fixed_output: outcome.actual_fixed_output,
            reasons: outcome.reasons.clone(),
        });
        // prefeedback_done is transient: the fix is revealed in the same step.
        task.state = TaskState::FixedShown;
        self.store.put(EntityKind::Session, session_id, &session)?;
        Ok(PrefeedbackOutcome {
            understanding: outcome.understanding,
            fixed_source: program.fixed_source.clone(),
            reasons: outcome.reasons,
        })
    }

    /// Stores the student's feedback for the current task and moves to the next one.
    pub fn submit_feedback(&self, session_id: &str, text: &str) -> Result<FeedbackInstance, TaskFlowError> {
        let lock = self.session_lock(session_id);
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        let mut session = self.session(session_id)?;
        let task = Self::current_in_state(&session, TaskState::FixedShown)?;
        let text = text.trim();
        if text.is_empty() {
            return Err(TaskFlowError::EmptyFeedback);
        }
        let pack = self.pack(session.pack_id.as_str())?;
        let feedback = FeedbackInstance {
            id: feedback_id_for(&session.id, session.cursor),
            problem_id: task.problem_id.clone(),
            buggy_program_id: task.buggy_program_id.clone(),
            source: Source::Student,
            session_id: Some(session.id.clone()),
            model_name: None,
            strategy: None,
            text: text.to_string(),
            understanding: task.understanding,
        };
        self.store.put_feedback(&pack, &feedback)?;

        let cursor = session.cursor;
        session.tasks[cursor].state = TaskState::FeedbackSubmitted;
        session.tasks[cursor].feedback_id = Some(feedback.id.clone());
        session.cursor += 1;
        self.store.put(EntityKind::Session, session_id, &session)?;
        Ok(feedback)
    }
}
