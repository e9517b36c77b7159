//! Chat-completion client that turns rendered prompts into model-written feedback.

mod batch;
mod client;
mod config;
mod extract;
#[cfg(feature = "mock")]
pub mod mock;

pub use batch::{batch_generate, cell_id, BatchOptions, CellRecord, CellStatus, RunManifest};
pub use client::{effective_strategy, prompt_strategy, GenAiClient, GenError, GeneratedFeedback};
pub use config::{ConfigError, EndpointConfig, EndpointKind, EndpointsFile};
pub use extract::{extract_feedback_text, Extraction};
