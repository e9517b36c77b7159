//! Per-group summaries of annotated feedback in the layout of the student and
//! model comparison tables.
//!
//! Every annotation is one observation, so an instance labelled by two experts
//! contributes twice. Understanding filters only ever match student feedback.

use std::collections::{BTreeSet, HashMap};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{AggregateRow, FeedbackInstance, Problem, RubricAnnotation, Source, Strategy};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSelector {
    pub problem_id: Option<String>,
    pub understanding: Option<bool>,
    pub source: Option<Source>,
    pub model_name: Option<String>,
    pub strategy: Option<Strategy>,
}

impl GroupSelector {
    pub fn matches(&self, f: &FeedbackInstance) -> bool {
        self.problem_id.as_deref().is_none_or(|p| f.problem_id.as_str() == p)
            && self.source.is_none_or(|s| f.source == s)
            && self.model_name.as_deref().is_none_or(|m| f.model_name.as_deref() == Some(m))
            && self.strategy.is_none_or(|s| f.strategy == Some(s))
            && self
                .understanding
                .is_none_or(|u| f.source == Source::Student && f.understanding == Some(u))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub label: String,
    pub selector: GroupSelector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupBy {
    Problem,
    Understanding,
    ProblemUnderstanding,
    Source,
}

impl FromStr for GroupBy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts: Vec<&str> = s.split(',').map(str::trim).filter(|p| !p.is_empty()).collect();
        parts.sort_unstable();
        parts.dedup();
        match parts.as_slice() {
            ["problem"] => Ok(GroupBy::Problem),
            ["understanding"] => Ok(GroupBy::Understanding),
            ["problem", "understanding"] => Ok(GroupBy::ProblemUnderstanding),
            ["source"] | ["source", "strategy"] => Ok(GroupBy::Source),
            _ => Err(format!(
                "unsupported grouping {s:?}; use problem, understanding, problem,understanding or source"
            )),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AggregateError {
    #[error("annotation references unknown feedback instance {0}")]
    UnknownFeedback(String),
}

fn all_problems_label(n: usize) -> String {
    match n {
        1 => "One problem".into(),
        2 => "Two problems".into(),
        3 => "Three problems".into(),
        n => format!("All {n} problems"),
    }
}

fn understanding_label(u: Option<bool>) -> &'static str {
    match u {
        None => "Understanding=Any",
        Some(true) => "Understanding=1",
        Some(false) => "Understanding=0",
    }
}

/// Rows in presentation order for the requested grouping.
///
/// Problem and understanding groupings summarize student feedback only. Source
/// grouping puts students first, then one row per (model, strategy) in name order.
pub fn group_specs(group_by: GroupBy, problems: &[Problem], instances: &[FeedbackInstance]) -> Vec<GroupSpec> {
    let mut problems: Vec<&Problem> = problems.iter().collect();
    problems.sort_by_key(|p| p.ordinal);
    let all = all_problems_label(problems.len());
    let student = |problem: Option<&Problem>, understanding: Option<bool>| GroupSpec {
        label: format!(
            "{}:{}",
            problem.map_or(all.clone(), |p| format!("Problem {}", p.ordinal)),
            understanding_label(understanding)
        ),
        selector: GroupSelector {
            problem_id: problem.map(|p| p.id.to_string()),
            understanding,
            source: Some(Source::Student),
            ..GroupSelector::default()
        },
    };

    let mut specs = vec![student(None, None)];
    match group_by {
        GroupBy::Problem => specs.extend(problems.iter().map(|p| student(Some(p), None))),
        GroupBy::Understanding => {
            specs.push(student(None, Some(true)));
            specs.push(student(None, Some(false)));
        }
        GroupBy::ProblemUnderstanding => {
            specs.extend(problems.iter().map(|p| student(Some(p), None)));
            specs.push(student(None, Some(true)));
            specs.push(student(None, Some(false)));
            for p in &problems {
                specs.push(student(Some(p), Some(true)));
                specs.push(student(Some(p), Some(false)));
            }
        }
        GroupBy::Source => {
            specs[0].label = "Human students".into();
            let models: BTreeSet<(&str, Strategy)> = instances
                .iter()
                .filter(|f| f.source == Source::Model)
                .filter_map(|f| Some((f.model_name.as_deref()?, f.strategy?)))
                .collect();
            specs.extend(models.into_iter().map(|(model, strategy)| GroupSpec {
                label: format!("{model}:{strategy}"),
                selector: GroupSelector {
                    source: Some(Source::Model),
                    model_name: Some(model.to_string()),
                    strategy: Some(strategy),
                    ..GroupSelector::default()
                },
            }));
        }
    }
    specs
}

/// One row per spec, over every annotation whose instance the spec selects.
pub fn aggregate(
    instances: &[FeedbackInstance],
    annotations: &[RubricAnnotation],
    specs: &[GroupSpec],
) -> Result<Vec<AggregateRow>, AggregateError> {
    let by_id: HashMap<&str, &FeedbackInstance> = instances.iter().map(|f| (f.id.as_str(), f)).collect();
    let joined: Vec<(&FeedbackInstance, &RubricAnnotation)> = annotations
        .iter()
        .map(|a| {
            by_id
                .get(a.feedback_id.as_str())
                .map(|f| (*f, a))
                .ok_or_else(|| AggregateError::UnknownFeedback(a.feedback_id.clone()))
        })
        .collect::<Result<_, _>>()?;

    Ok(specs
        .iter()
        .map(|spec| {
            let selected: Vec<&(&FeedbackInstance, &RubricAnnotation)> =
                joined.iter().filter(|(f, _)| spec.selector.matches(f)).collect();
            summarize(&spec.label, &selected)
        })
        .collect())
}

fn summarize(label: &str, selected: &[&(&FeedbackInstance, &RubricAnnotation)]) -> AggregateRow {
    let n = selected.len();
    let mean = |value: &dyn Fn(&RubricAnnotation) -> f64| -> Option<f64> {
        (n > 0).then(|| selected.iter().map(|(_, a)| value(a)).sum::<f64>() / n as f64)
    };
    let pct = |flag: &dyn Fn(&RubricAnnotation) -> bool| -> Option<f64> {
        mean(&|a| if flag(a) { 100.0 } else { 0.0 })
    };
    let num_programs = selected
        .iter()
        .map(|(f, _)| f.buggy_program_id.as_str())
        .collect::<BTreeSet<_>>()
        .len();
    AggregateRow {
        label: label.to_string(),
        sample_size: n,
        num_programs,
        correct_pct: pct(&|a| a.labels.correct),
        mean_words: mean(&|a| a.num_words as f64),
        mean_sentences: mean(&|a| a.num_sentences as f64),
        gives_fix_pct: pct(&|a| a.labels.gives_fix),
        mentions_variables_pct: pct(&|a| a.labels.mentions_variables),
        mentions_lines_pct: pct(&|a| a.labels.mentions_lines),
    }
}

/// Half-up rounding to one decimal, as used for display.
pub fn round_1dp(x: f64) -> f64 {
    // Nudge values like 77.25 that sit just below the tie after the multiply.
    let scaled = x * 10.0;
    let nudged = scaled + scaled.abs() * f64::EPSILON * 4.0;
    (nudged + 0.5).floor() / 10.0
}
