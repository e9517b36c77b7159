use flipfeed_core::dataset::{END_TOKEN, START_TOKEN};
use flipfeed_core::domain::Strategy;
use serde::{Deserialize, Serialize};

use crate::config::EndpointKind;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Extraction {
    pub text: String,
    /// The expected delimiters were missing and the whole response was kept.
    pub degraded: bool,
}

/// Pulls the evaluated feedback out of a raw model response.
///
/// Fine-tuned endpoints: the text between the first start token and the last end
/// token, as is. Engineered prompts on base models: the answer to the second
/// instruction, i.e. everything after the last line-initial `2.` marker.
/// Anything else, or a missing delimiter: the trimmed response.
pub fn extract_feedback_text(raw: &str, kind: EndpointKind, strategy: Strategy) -> Extraction {
    let fallback = || Extraction { text: raw.trim().to_string(), degraded: true };
    match (kind, strategy) {
        (EndpointKind::Finetuned, _) => {
            let Some(start) = raw.find(START_TOKEN).map(|i| i + START_TOKEN.len()) else {
                return fallback();
            };
            match raw.rfind(END_TOKEN) {
                Some(end) if end >= start => Extraction { text: raw[start..end].to_string(), degraded: false },
                _ => fallback(),
            }
        }
        (EndpointKind::Base, Strategy::Engineered) => {
            let mut offset = 0;
            let mut found = None;
            for line in raw.split_inclusive('\n') {
                let lead = line.len() - line.trim_start().len();
                if line.trim_start().starts_with("2.") {
                    found = Some(offset + lead + 2);
                }
                offset += line.len();
            }
            match found.map(|i| raw[i..].trim()) {
                Some(hint) if !hint.is_empty() => Extraction { text: hint.to_string(), degraded: false },
                _ => fallback(),
            }
        }
        _ => Extraction { text: raw.trim().to_string(), degraded: false },
    }
}
