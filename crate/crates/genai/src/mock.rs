//! A local chat-completion server for tests and demos.

use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};
use tokio::sync::oneshot;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockRequest {
    /// 0-based arrival order.
    pub seq: usize,
    pub model: String,
    pub prompt: String,
    pub authorization: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockReply {
    pub status: u16,
    pub content: String,
}

impl MockReply {
    pub fn ok(content: impl Into<String>) -> Self {
        MockReply { status: 200, content: content.into() }
    }

    pub fn error(status: u16) -> Self {
        MockReply { status, content: "mock failure".into() }
    }
}

type Handler = dyn Fn(&MockRequest) -> MockReply + Send + Sync;

struct Shared {
    handler: Box<Handler>,
    requests: Mutex<Vec<MockRequest>>,
}

pub struct MockServer {
    addr: SocketAddr,
    shared: Arc<Shared>,
    shutdown: Option<oneshot::Sender<()>>,
}

async fn chat(State(shared): State<Arc<Shared>>, headers: HeaderMap, Json(body): Json<Value>) -> (StatusCode, Json<Value>) {
    let prompt = body["messages"][0]["content"].as_str().unwrap_or_default().to_string();
    let request = {
        let mut log = shared.requests.lock().unwrap_or_else(|e| e.into_inner());
        let r = MockRequest {
            seq: log.len(),
            model: body["model"].as_str().unwrap_or_default().to_string(),
            prompt,
            authorization: headers.get("authorization").and_then(|v| v.to_str().ok()).map(str::to_string),
        };
        log.push(r.clone());
        r
    };
    let reply = (shared.handler)(&request);
    let status = StatusCode::from_u16(reply.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    let body = if status.is_success() {
        json!({
            "id": format!("mock-{}", request.seq),
            "object": "chat.completion",
            "model": request.model,
            "choices": [{"index": 0, "message": {"role": "assistant", "content": reply.content}, "finish_reason": "stop"}]
        })
    } else {
        json!({"error": {"message": reply.content}})
    };
    (status, Json(body))
}

impl MockServer {
    /// Binds 127.0.0.1 on a free port. Must be called inside a tokio runtime.
    pub async fn start<F>(handler: F) -> std::io::Result<Self>
    where
        F: Fn(&MockRequest) -> MockReply + Send + Sync + 'static,
    {
        let shared = Arc::new(Shared { handler: Box::new(handler), requests: Mutex::new(Vec::new()) });
        let app = Router::new().route("/v1/chat/completions", post(chat)).with_state(shared.clone());
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
        let addr = listener.local_addr()?;
        let (tx, rx) = oneshot::channel::<()>();
        tokio::spawn(async move {
            let _ = axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await;
        });
        Ok(MockServer { addr, shared, shutdown: Some(tx) })
    }

    /// Base URL in the form the endpoint config expects.
    pub fn base_url(&self) -> String {
        format!("http://{}/v1", self.addr)
    }

    pub fn requests(&self) -> Vec<MockRequest> {
        self.shared.requests.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn request_count(&self) -> usize {
        self.shared.requests.lock().unwrap_or_else(|e| e.into_inner()).len()
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}
