use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pack::ValidatedPack;

const BASIC: &str = include_str!("../../templates/basic.txt");
const ENGINEERED: &str = include_str!("../../templates/engineered.txt");
const FINETUNE: &str = include_str!("../../templates/finetune.txt");

pub const SLOT_NAMES: [&str; 4] = ["problem_description", "failing_test_case", "buggy_program", "fixed_program"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptStrategy {
    Basic,
    Engineered,
    Finetune,
}

impl PromptStrategy {
    pub const ALL: [PromptStrategy; 3] = [PromptStrategy::Basic, PromptStrategy::Engineered, PromptStrategy::Finetune];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptStrategy::Basic => "basic",
            PromptStrategy::Engineered => "engineered",
            PromptStrategy::Finetune => "finetune",
        }
    }

    /// The shipped template text, without the file's final newline.
    pub fn template(self) -> &'static str {
        let raw = match self {
            PromptStrategy::Basic => BASIC,
            PromptStrategy::Engineered => ENGINEERED,
            PromptStrategy::Finetune => FINETUNE,
        };
        raw.strip_suffix('\n').unwrap_or(raw)
    }
}

impl fmt::Display for PromptStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptStrategy {
    type Err = PromptError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "basic" => Ok(PromptStrategy::Basic),
            "engineered" => Ok(PromptStrategy::Engineered),
            "finetune" | "finetuned-basic" => Ok(PromptStrategy::Finetune),
            other => Err(PromptError::UnknownStrategy(other.to_string())),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("unknown prompt strategy {0:?}")]
    UnknownStrategy(String),
    #[error("prompt slot {{{0}}} is empty")]
    EmptySlot(&'static str),
    #[error("buggy program {0} is not in the pack")]
    UnknownProgram(String),
}

/// Everything a prompt needs to describe one buggy program.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub problem_description: String,
    pub failing_test_case: String,
    pub buggy_program: String,
    pub fixed_program: String,
}

pub fn format_failing_test_case(input: &str, buggy_output: &str, expected_output: &str) -> String {
    format!("Input: {input}\nBuggy output: {buggy_output}\nExpected output: {expected_output}")
}

impl Scenario {
    /// Scenario for `program_id`, using the expert fix and the reference test.
    pub fn from_pack(pack: &ValidatedPack, program_id: &str) -> Result<Self, PromptError> {
        let program = pack.program(program_id).ok_or_else(|| PromptError::UnknownProgram(program_id.to_string()))?;
        let problem = pack
            .problem(program.problem_id.as_str())
            .ok_or_else(|| PromptError::UnknownProgram(program_id.to_string()))?;
        let buggy_output = pack.reference_buggy_outputs.get(program_id).map(String::as_str).unwrap_or("");
        Ok(Scenario {
            problem_description: problem.description.clone(),
            failing_test_case: format_failing_test_case(
                program.reference_test.input.trim_end(),
                buggy_output,
                &program.reference_test.expected_output,
            ),
            buggy_program: program.buggy_source.clone(),
            fixed_program: program.fixed_source.clone(),
        })
    }

    fn slot(&self, name: &str) -> Option<&str> {
        Some(match name {
            "problem_description" => &self.problem_description,
            "failing_test_case" => &self.failing_test_case,
            "buggy_program" => &self.buggy_program,
            "fixed_program" => &self.fixed_program,
            _ => return None,
        })
    }

    pub fn check(&self) -> Result<(), PromptError> {
        for name in SLOT_NAMES {
            if self.slot(name).is_none_or(|v| v.trim().is_empty()) {
                return Err(PromptError::EmptySlot(name));
            }
        }
        Ok(())
    }
}

/// Fills the strategy's template. Slot values lose trailing line breaks and are
/// inserted verbatim; braces inside them are never treated as slots.
pub fn render_prompt(strategy: PromptStrategy, scenario: &Scenario) -> Result<String, PromptError> {
    scenario.check()?;
    let template = strategy.template();
    let mut out = String::with_capacity(template.len() + 2048);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let filled = after.find('}').and_then(|close| {
            let value = scenario.slot(&after[..close])?;
            Some((value.trim_end_matches(['\n', '\r']), close))
        });
        match filled {
            Some((value, close)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}
