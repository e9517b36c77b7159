use serde::{Deserialize, Serialize};

use super::{normalize_output, Harness, HarnessError, RunResult};
use crate::domain::{BuggyProgram, PrefeedbackSubmission, ReasonCode};

/// Result of checking a student's claimed failing test case.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnderstandingOutcome {
    pub understanding: bool,
    pub actual_buggy_output: String,
    pub actual_fixed_output: String,
    pub reasons: Vec<ReasonCode>,
}

/// Classifies a pre-feedback attempt.
///
/// Understanding is 1 iff the buggy program really prints the claimed buggy output,
/// the fixed program really prints the claimed correct output, and the two differ.
/// Outputs are compared after [`normalize_output`]. A timeout, crash, non-zero exit
/// or truncated output of either program yields `run_error` alone.
///
/// Errors are reserved for environment failures (compiler or spawn problems).
pub fn validate_prefeedback(
    harness: &Harness,
    program: &BuggyProgram,
    submission: &PrefeedbackSubmission,
) -> Result<UnderstandingOutcome, HarnessError> {
    let buggy = harness.compile(&program.buggy_source)?;
    let fixed = harness.compile(&program.fixed_source)?;

    let (buggy_run, fixed_run) = std::thread::scope(|s| {
        let b = s.spawn(|| harness.execute(&buggy, &submission.input));
        let f = harness.execute(&fixed, &submission.input);
        (b.join().expect("buggy run thread panicked"), f)
    });
    let (buggy_run, fixed_run) = (buggy_run?, fixed_run?);
    Ok(classify(&buggy_run, &fixed_run, submission))
}

fn classify(
    buggy_run: &RunResult,
    fixed_run: &RunResult,
    submission: &PrefeedbackSubmission,
) -> UnderstandingOutcome {
    let actual_buggy_output = normalize_output(&buggy_run.stdout);
    let actual_fixed_output = normalize_output(&fixed_run.stdout);

    let mut reasons = Vec::new();
    if !buggy_run.is_clean() || !fixed_run.is_clean() {
        reasons.push(ReasonCode::RunError);
    } else {
        if actual_buggy_output != normalize_output(&submission.claimed_buggy_output) {
            reasons.push(ReasonCode::BuggyMismatch);
        }
        if actual_fixed_output != normalize_output(&submission.claimed_correct_output) {
            reasons.push(ReasonCode::FixedMismatch);
        }
        if actual_buggy_output == actual_fixed_output {
            reasons.push(ReasonCode::NoDivergence);
        }
    }
    UnderstandingOutcome {
        understanding: reasons.is_empty(),
        actual_buggy_output,
        actual_fixed_output,
        reasons,
    }
}
