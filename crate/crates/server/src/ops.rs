//! Staff operations shared by the HTTP API and the command line.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use flipfeed_core::dataset::{
    build_finetune_dataset, export_records, filter_by_length, DatasetError, ExportManifest, ExportOptions, SplitSpec,
};
use flipfeed_core::domain::{FeedbackInstance, RubricAnnotation, RubricLabels, Source};
use flipfeed_core::pack::ValidatedPack;
use flipfeed_core::rubric::{
    aggregate, annotate, count_sentences, count_words, group_specs, multi_attribute_kappa, AggregateError,
    AnnotationLine, GroupBy, KappaError, MultiAttributeAgreement,
};
use flipfeed_core::store::{annotation_key, unix_now, EntityKind, Store, StoreError};
use flipfeed_core::domain::AggregateRow;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug)]
pub enum OpsError {
    NotFound(String),
    Conflict(String),
    Invalid(String),
    Store(StoreError),
    Dataset(DatasetError),
    Kappa(KappaError),
    Aggregate(AggregateError),
}

impl std::fmt::Display for OpsError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OpsError::NotFound(m) | OpsError::Conflict(m) | OpsError::Invalid(m) => f.write_str(m),
            OpsError::Store(e) => e.fmt(f),
            OpsError::Dataset(e) => e.fmt(f),
            OpsError::Kappa(e) => e.fmt(f),
            OpsError::Aggregate(e) => e.fmt(f),
        }
    }
}

impl std::error::Error for OpsError {}

impl From<StoreError> for OpsError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound(..) => OpsError::NotFound(e.to_string()),
            other => OpsError::Store(other),
        }
    }
}

impl From<DatasetError> for OpsError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::InvalidBounds { .. } | DatasetError::InvalidSplit(_) => OpsError::Invalid(e.to_string()),
            other => OpsError::Dataset(other),
        }
    }
}

pub fn current_pack(store: &Store) -> Result<ValidatedPack, OpsError> {
    store
        .current_pack()?
        .ok_or_else(|| OpsError::NotFound("no problem pack ingested; run `flipfeed ingest <pack-file>` first".into()))
}

pub fn student_feedback(store: &Store) -> Result<Vec<FeedbackInstance>, OpsError> {
    Ok(store.list::<FeedbackInstance>(EntityKind::Feedback)?.into_iter().filter(|f| f.source == Source::Student).collect())
}

/// Filters student feedback by length and writes the fine-tuning dataset.
pub fn export_finetune(
    store: &Store,
    min_words: usize,
    max_words: usize,
    out: &Path,
    split: Option<f64>,
) -> Result<ExportManifest, OpsError> {
    let pack = current_pack(store)?;
    let kept = filter_by_length(&student_feedback(store)?, min_words, max_words)?;
    let records = build_finetune_dataset(&kept, &pack)?;
    let options = ExportOptions {
        pack_id: pack.id.to_string(),
        min_words,
        max_words,
        split: split.map(|validation_fraction| SplitSpec { validation_fraction }),
    };
    Ok(export_records(&records, out, &options)?)
}

pub fn summary(store: &Store, group_by: GroupBy) -> Result<Vec<AggregateRow>, OpsError> {
    let pack = current_pack(store)?;
    let instances: Vec<FeedbackInstance> = store.list(EntityKind::Feedback)?;
    let annotations = store.annotations()?;
    let specs = group_specs(group_by, &pack.problems, &instances);
    aggregate(&instances, &annotations, &specs).map_err(OpsError::Aggregate)
}

/// Agreement of two annotators over the items both of them labelled.
pub fn agreement(store: &Store, annotator_a: &str, annotator_b: &str) -> Result<MultiAttributeAgreement, OpsError> {
    let a = store.annotations_by(annotator_a)?;
    let b = store.annotations_by(annotator_b)?;
    let ids_a: BTreeSet<&str> = a.iter().map(|x| x.feedback_id.as_str()).collect();
    let ids_b: BTreeSet<&str> = b.iter().map(|x| x.feedback_id.as_str()).collect();
    let shared: BTreeSet<&str> = ids_a.intersection(&ids_b).copied().collect();
    if shared.is_empty() {
        return Err(OpsError::NotFound(format!(
            "annotators {annotator_a} and {annotator_b} have no labelled items in common"
        )));
    }
    let keep = |v: &[RubricAnnotation]| -> Vec<RubricAnnotation> {
        v.iter().filter(|x| shared.contains(x.feedback_id.as_str())).cloned().collect()
    };
    multi_attribute_kappa(&keep(&a), &keep(&b)).map_err(OpsError::Kappa)
}

pub fn validate_annotator(annotator_id: &str) -> Result<(), OpsError> {
    if annotator_id.is_empty()
        || annotator_id.len() > 64
        || !annotator_id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
    {
        return Err(OpsError::Invalid(format!("invalid annotator id {annotator_id:?}")));
    }
    Ok(())
}

/// Stores one annotator's labels for a feedback instance. Relabelling needs `overwrite`.
pub fn record_annotation(
    store: &Store,
    feedback_id: &str,
    annotator_id: &str,
    labels: RubricLabels,
    overwrite: bool,
) -> Result<RubricAnnotation, OpsError> {
    validate_annotator(annotator_id)?;
    let instance: FeedbackInstance = store.get(EntityKind::Feedback, feedback_id)?;
    let key = annotation_key(feedback_id, annotator_id);
    if !overwrite && store.contains(EntityKind::Annotation, &key) {
        return Err(OpsError::Conflict(format!("{annotator_id} already annotated {feedback_id}")));
    }
    let annotation = annotate(&instance, annotator_id, labels, unix_now());
    store.put(EntityKind::Annotation, &key, &annotation)?;
    Ok(annotation)
}

pub fn import_annotations(store: &Store, lines: &[AnnotationLine], overwrite: bool) -> Result<usize, OpsError> {
    for line in lines {
        record_annotation(store, &line.feedback_id, &line.annotator_id, line.labels, overwrite)?;
    }
    Ok(lines.len())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueItem {
    pub feedback_id: String,
    pub problem_id: String,
    pub problem_title: String,
    pub buggy_program_id: String,
    pub buggy_source: String,
    pub fixed_source: String,
    pub source: Source,
    pub text: String,
    pub num_words: usize,
    pub num_sentences: usize,
}

fn sample_rank(feedback_id: &str) -> [u8; 32] {
    Sha256::new().chain_update(b"annotation-sample\0").chain_update(feedback_id.as_bytes()).finalize().into()
}

/// Instances `annotator_id` has yet to label, from a fixed per-problem sample.
///
/// The sample takes, per problem, the `n_per_problem` instances of `source`
/// with the smallest hash rank, so it does not move as labels come in.
pub fn annotation_queue(
    store: &Store,
    annotator_id: &str,
    n_per_problem: usize,
    source: Source,
) -> Result<Vec<QueueItem>, OpsError> {
    validate_annotator(annotator_id)?;
    let pack = current_pack(store)?;
    let mut by_problem: BTreeMap<u32, Vec<FeedbackInstance>> = BTreeMap::new();
    for f in store.list::<FeedbackInstance>(EntityKind::Feedback)? {
        if f.source == source {
            let ordinal = pack.ordinal_of(f.problem_id.as_str()).unwrap_or(u32::MAX);
            by_problem.entry(ordinal).or_default().push(f);
        }
    }
    let mut items = Vec::new();
    for (_, mut group) in by_problem {
        group.sort_by_cached_key(|f| sample_rank(&f.id));
        for f in group.into_iter().take(n_per_problem) {
            if store.contains(EntityKind::Annotation, &annotation_key(&f.id, annotator_id)) {
                continue;
            }
            let Some(program) = pack.program(f.buggy_program_id.as_str()) else { continue };
            let title = pack.problem(f.problem_id.as_str()).map(|p| p.title.clone()).unwrap_or_default();
            items.push(QueueItem {
                feedback_id: f.id.clone(),
                problem_id: f.problem_id.to_string(),
                problem_title: title,
                buggy_program_id: f.buggy_program_id.to_string(),
                buggy_source: program.buggy_source.clone(),
                fixed_source: program.fixed_source.clone(),
                source: f.source,
                num_words: count_words(&f.text),
                num_sentences: count_sentences(&f.text),
                text: f.text,
            });
        }
    }
    Ok(items)
}
