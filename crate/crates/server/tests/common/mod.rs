#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::{Arc, OnceLock};

use flipfeed_core::domain::PrefeedbackSubmission;
use flipfeed_core::harness::{Harness, HarnessConfig};
use flipfeed_core::pack::{ingest_problem_pack, ValidatedPack, FIXTURE_PACK};
use flipfeed_core::store::Store;
use flipfeed_server::auth::Auth;
use flipfeed_server::{build_state, serve};
use tokio::sync::oneshot;

pub const STAFF: &str = "staff-test-token";

pub fn harness() -> Arc<Harness> {
    static H: OnceLock<Arc<Harness>> = OnceLock::new();
    H.get_or_init(|| Arc::new(Harness::new(HarnessConfig::default()).unwrap())).clone()
}

pub fn fixture_pack() -> &'static ValidatedPack {
    static PACK: OnceLock<ValidatedPack> = OnceLock::new();
    PACK.get_or_init(|| ingest_problem_pack(FIXTURE_PACK, &harness()).unwrap())
}

/// The reference failing test of a program, claimed correctly.
pub fn correct_claim(program_id: &str) -> PrefeedbackSubmission {
    let pack = fixture_pack();
    let program = pack.program(program_id).unwrap();
    PrefeedbackSubmission {
        input: program.reference_test.input.clone(),
        claimed_buggy_output: pack.reference_buggy_outputs[program_id].clone(),
        claimed_correct_output: program.reference_test.expected_output.clone(),
    }
}

pub struct TestServer {
    pub base: String,
    pub store: Arc<Store>,
    pub dir: tempfile::TempDir,
    shutdown: Option<oneshot::Sender<()>>,
}

impl TestServer {
    pub fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }
}

impl Drop for TestServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}

pub async fn start_server(endpoints_path: Option<PathBuf>) -> TestServer {
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(Store::open(dir.path().join("store.journal")).unwrap());
    store.put_pack(fixture_pack()).unwrap();
    let state = build_state(
        store.clone(),
        harness(),
        Auth::new(Some(STAFF.into()), b"test-secret".to_vec()),
        endpoints_path,
        dir.path().join("exports"),
    )
    .unwrap();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let (tx, rx) = oneshot::channel::<()>();
    tokio::spawn(serve(listener, state, async {
        let _ = rx.await;
    }));
    TestServer { base, store, dir, shutdown: Some(tx) }
}
