use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use flipfeed_core::dataset::Scenario;
use flipfeed_core::domain::{FeedbackInstance, Source, Strategy};
use flipfeed_core::pack::ValidatedPack;
use flipfeed_core::store::{EntityKind, Store};
use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};

use crate::client::{effective_strategy, GenAiClient, GeneratedFeedback};
use crate::config::EndpointConfig;

#[derive(Debug, Clone)]
pub struct BatchOptions {
    pub concurrency: usize,
    pub dry_run: bool,
    /// Leave cells whose feedback is already stored untouched.
    pub skip_existing: bool,
}

impl Default for BatchOptions {
    fn default() -> Self {
        BatchOptions { concurrency: 4, dry_run: false, skip_existing: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Planned,
    Succeeded,
    Failed,
    Skipped,
}

/// One endpoint × strategy × program cell of a generation run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellRecord {
    pub cell_id: String,
    pub endpoint: String,
    pub model_id: String,
    pub strategy: String,
    pub problem_id: String,
    pub buggy_program_id: String,
    pub status: CellStatus,
    #[serde(default)]
    pub attempts: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<u64>,
    #[serde(default)]
    pub degraded: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub cells: Vec<CellRecord>,
}

impl RunManifest {
    pub fn count(&self, status: CellStatus) -> usize {
        self.cells.iter().filter(|c| c.status == status).count()
    }

    pub fn counts(&self) -> BTreeMap<CellStatus, usize> {
        let mut m = BTreeMap::new();
        for c in &self.cells {
            *m.entry(c.status).or_insert(0) += 1;
        }
        m
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for c in &self.cells {
            out.push_str(&serde_json::to_string(c).expect("cells serialize"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_jsonl().as_bytes())?;
        f.sync_all()
    }
}

pub fn cell_id(endpoint: &str, strategy: &str, program_id: &str) -> String {
    format!("gen-{endpoint}-{strategy}-{program_id}")
}

struct Cell {
    endpoint: EndpointConfig,
    strategy: Strategy,
    record: CellRecord,
}

fn plan(endpoints: &[EndpointConfig], strategies: &[Strategy], pack: &ValidatedPack) -> Vec<Cell> {
    let mut cells = Vec::new();
    for endpoint in endpoints {
        let mut seen = Vec::new();
        for &requested in strategies {
            let resolved = effective_strategy(endpoint, requested);
            let label = match &resolved {
                Ok(s) => s.as_str(),
                Err(_) => requested.as_str(),
            };
            if seen.contains(&label) {
                continue;
            }
            seen.push(label);
            for program in &pack.programs {
                let (status, message, strategy) = match &resolved {
                    Ok(s) => (CellStatus::Planned, None, *s),
                    Err(e) => (CellStatus::Skipped, Some(e.to_string()), requested),
                };
                cells.push(Cell {
                    endpoint: endpoint.clone(),
                    strategy,
                    record: CellRecord {
                        cell_id: cell_id(&endpoint.name, label, program.id.as_str()),
                        endpoint: endpoint.name.clone(),
                        model_id: endpoint.model_id.clone(),
                        strategy: label.to_string(),
                        problem_id: program.problem_id.to_string(),
                        buggy_program_id: program.id.to_string(),
                        status,
                        attempts: 0,
                        latency_ms: None,
                        degraded: false,
                        message,
                    },
                });
            }
        }
    }
    cells
}

fn persist(store: &Store, pack: &ValidatedPack, id: &str, generated: &GeneratedFeedback) -> Result<(), String> {
    let program = pack
        .program(&generated.buggy_program_id)
        .ok_or_else(|| format!("unknown program {}", generated.buggy_program_id))?;
    let feedback = FeedbackInstance {
        id: id.to_string(),
        problem_id: program.problem_id.clone(),
        buggy_program_id: program.id.clone(),
        source: Source::Model,
        session_id: None,
        model_name: Some(generated.endpoint.clone()),
        strategy: Some(generated.strategy),
        text: generated.feedback_text.clone(),
        understanding: None,
    };
    store.put(EntityKind::Generation, id, generated).map_err(|e| e.to_string())?;
    store.put_feedback(pack, &feedback).map_err(|e| e.to_string())
}

/// Runs the endpoint × strategy × program cross product and stores every
/// successful cell as model feedback. Failures are recorded per cell and never
/// stop the run. Cells come back in plan order.
pub async fn batch_generate(
    client: &GenAiClient,
    endpoints: &[EndpointConfig],
    strategies: &[Strategy],
    pack: &ValidatedPack,
    store: &Store,
    options: &BatchOptions,
) -> RunManifest {
    let mut cells = plan(endpoints, strategies, pack);
    for cell in &mut cells {
        if cell.record.status == CellStatus::Planned
            && options.skip_existing
            && store.contains(EntityKind::Feedback, &cell.record.cell_id)
        {
            cell.record.status = CellStatus::Skipped;
            cell.record.message = Some("already generated".into());
        }
    }
    if options.dry_run {
        return RunManifest { cells: cells.into_iter().map(|c| c.record).collect() };
    }

    let results: Vec<(usize, CellRecord)> = stream::iter(cells.into_iter().enumerate())
        .map(|(i, cell)| async move {
            let Cell { endpoint, strategy, mut record } = cell;
            if record.status != CellStatus::Planned {
                return (i, record);
            }
            let outcome = match Scenario::from_pack(pack, &record.buggy_program_id) {
                Ok(scenario) => client
                    .generate_feedback(&endpoint, &scenario, strategy, &record.problem_id, &record.buggy_program_id)
                    .await
                    .map_err(|e| e.to_string()),
                Err(e) => Err(e.to_string()),
            };
            match outcome.and_then(|g| persist(store, pack, &record.cell_id, &g).map(|_| g)) {
                Ok(g) => {
                    record.status = CellStatus::Succeeded;
                    record.attempts = g.attempts;
                    record.latency_ms = Some(g.latency_ms);
                    record.degraded = g.degraded;
                }
                Err(message) => {
                    log::warn!("cell {} failed: {message}", record.cell_id);
                    record.status = CellStatus::Failed;
                    record.message = Some(message);
                }
            }
            (i, record)
        })
        .buffer_unordered(options.concurrency.max(1))
        .collect()
        .await;

    let mut ordered = results;
    ordered.sort_by_key(|(i, _)| *i);
    RunManifest { cells: ordered.into_iter().map(|(_, r)| r).collect() }
}
