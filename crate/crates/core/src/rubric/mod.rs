//! Feedback rubric: automatic length metrics, expert annotations, inter-rater
//! agreement and tabular summaries.

mod aggregate;
mod kappa;
mod report;
mod text;

use std::io::{BufRead, Write};

use thiserror::Error;

pub use aggregate::{aggregate, group_specs, round_1dp, AggregateError, GroupBy, GroupSelector, GroupSpec};
pub use kappa::{
    cohens_kappa, multi_attribute_kappa, AgreementBand, AgreementReport, KappaError, MultiAttributeAgreement,
    ATTRIBUTE_NAMES,
};
pub use report::{render_report, ReportFormat, SizeColumn};
pub use text::{count_sentences, count_words, is_sentence_terminator};

use crate::domain::{FeedbackInstance, RubricAnnotation, RubricLabels};

/// Builds an annotation with the automatic counts filled from the instance text.
pub fn annotate(
    instance: &FeedbackInstance,
    annotator_id: &str,
    labels: RubricLabels,
    updated_at: u64,
) -> RubricAnnotation {
    RubricAnnotation {
        feedback_id: instance.id.clone(),
        annotator_id: annotator_id.to_string(),
        labels,
        num_words: count_words(&instance.text),
        num_sentences: count_sentences(&instance.text),
        updated_at,
    }
}

/// Line-delimited interchange record for manual labels.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct AnnotationLine {
    pub feedback_id: String,
    pub annotator_id: String,
    #[serde(flatten)]
    pub labels: RubricLabels,
}

#[derive(Debug, Error)]
pub enum AnnotationIoError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn read_annotation_lines(reader: impl BufRead) -> Result<Vec<AnnotationLine>, AnnotationIoError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| AnnotationIoError::Parse { line: i + 1, message: e.to_string() })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_annotation_lines<'a>(
    mut writer: impl Write,
    annotations: impl IntoIterator<Item = &'a RubricAnnotation>,
) -> std::io::Result<()> {
    for a in annotations {
        let line = AnnotationLine {
            feedback_id: a.feedback_id.clone(),
            annotator_id: a.annotator_id.clone(),
            labels: a.labels,
        };
        serde_json::to_writer(&mut writer, &line)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}
