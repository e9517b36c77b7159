//! Cohen's kappa for two annotators over binary labels.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::RubricAnnotation;

/// Landis & Koch qualitative bands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgreementBand {
    Poor,
    Slight,
    Fair,
    Moderate,
    Substantial,
    AlmostPerfect,
}

impl AgreementBand {
    pub fn from_kappa(kappa: f64) -> Self {
        if kappa < 0.0 {
            AgreementBand::Poor
        } else if kappa <= 0.20 {
            AgreementBand::Slight
        } else if kappa <= 0.40 {
            AgreementBand::Fair
        } else if kappa <= 0.60 {
            AgreementBand::Moderate
        } else if kappa <= 0.80 {
            AgreementBand::Substantial
        } else {
            AgreementBand::AlmostPerfect
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AgreementBand::Poor => "poor",
            AgreementBand::Slight => "slight",
            AgreementBand::Fair => "fair",
            AgreementBand::Moderate => "moderate",
            AgreementBand::Substantial => "substantial",
            AgreementBand::AlmostPerfect => "almost perfect",
        }
    }
}

impl fmt::Display for AgreementBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub attributes: Vec<String>,
    pub n_items: usize,
    pub observed_agreement: f64,
    pub chance_agreement: f64,
    pub kappa: f64,
    pub band: AgreementBand,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KappaError {
    #[error("label sequences differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("no labels to compare")]
    Empty,
    #[error("annotators labelled different items; only one side has: {0:?}")]
    ItemSetMismatch(Vec<String>),
    #[error("annotator {annotator} labelled item {item} more than once")]
    DuplicateItem { annotator: String, item: String },
}

/// Cohen's kappa: `(p_o - p_e) / (1 - p_e)`, and 1 when both annotators use one
/// identical constant label (`p_o = p_e = 1`).
pub fn cohens_kappa(labels_a: &[bool], labels_b: &[bool]) -> Result<AgreementReport, KappaError> {
    if labels_a.len() != labels_b.len() {
        return Err(KappaError::LengthMismatch(labels_a.len(), labels_b.len()));
    }
    if labels_a.is_empty() {
        return Err(KappaError::Empty);
    }
    let n = labels_a.len();
    let agree = labels_a.iter().zip(labels_b).filter(|(a, b)| a == b).count();
    let a_pos = labels_a.iter().filter(|&&x| x).count();
    let b_pos = labels_b.iter().filter(|&&x| x).count();

    let nf = n as f64;
    let p_o = agree as f64 / nf;
    // Integer numerator so that the p_e = 1 case is detected exactly.
    let chance_num = (a_pos * b_pos + (n - a_pos) * (n - b_pos)) as u128;
    let p_e = chance_num as f64 / (nf * nf);
    let kappa = if chance_num == (n as u128) * (n as u128) {
        1.0
    } else {
        (p_o - p_e) / (1.0 - p_e)
    };
    Ok(AgreementReport {
        attributes: Vec::new(),
        n_items: n,
        observed_agreement: p_o,
        chance_agreement: p_e,
        kappa,
        band: AgreementBand::from_kappa(kappa),
    })
}

pub const ATTRIBUTE_NAMES: [&str; 4] = ["correct", "gives_fix", "mentions_variables", "mentions_lines"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiAttributeAgreement {
    /// All four attributes pooled item-major into one sequence per annotator.
    pub pooled: AgreementReport,
    pub per_attribute: Vec<AgreementReport>,
}

/// Agreement of two annotators over the same set of feedback instances.
pub fn multi_attribute_kappa(
    annotations_a: &[RubricAnnotation],
    annotations_b: &[RubricAnnotation],
) -> Result<MultiAttributeAgreement, KappaError> {
    let by_item = |anns: &[RubricAnnotation]| -> Result<BTreeMap<String, [bool; 4]>, KappaError> {
        let mut map = BTreeMap::new();
        for a in anns {
            if map.insert(a.feedback_id.clone(), a.labels.as_array()).is_some() {
                return Err(KappaError::DuplicateItem {
                    annotator: a.annotator_id.clone(),
                    item: a.feedback_id.clone(),
                });
            }
        }
        Ok(map)
    };
    let a = by_item(annotations_a)?;
    let b = by_item(annotations_b)?;
    let keys_a: BTreeSet<&String> = a.keys().collect();
    let keys_b: BTreeSet<&String> = b.keys().collect();
    if keys_a != keys_b {
        let diff = keys_a.symmetric_difference(&keys_b).map(|s| s.to_string()).collect();
        return Err(KappaError::ItemSetMismatch(diff));
    }

    let pooled_a: Vec<bool> = a.values().flat_map(|v| v.iter().copied()).collect();
    let pooled_b: Vec<bool> = b.values().flat_map(|v| v.iter().copied()).collect();
    let mut pooled = cohens_kappa(&pooled_a, &pooled_b)?;
    pooled.attributes = ATTRIBUTE_NAMES.iter().map(|s| s.to_string()).collect();

    let per_attribute = ATTRIBUTE_NAMES
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let col_a: Vec<bool> = a.values().map(|v| v[i]).collect();
            let col_b: Vec<bool> = b.values().map(|v| v[i]).collect();
            cohens_kappa(&col_a, &col_b).map(|mut r| {
                r.attributes = vec![name.to_string()];
                r
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(MultiAttributeAgreement { pooled, per_attribute })
}
