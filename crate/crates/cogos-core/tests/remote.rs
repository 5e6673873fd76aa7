//! Remote chat-completion client behavior against a local mock endpoint:
//! bounded retries, call budgets, and record/replay fidelity.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::State;
use axum::routing::post;
use axum::{Json, Router};
use cogos_core::backend::{
    BackendError, CompletionBackend, CompletionRequest, RecordingBackend, RemoteBackend,
    RemoteConfig, ScriptedBackend,
};
use cogos_core::bus::Bus;
use cogos_core::exec::SimExecutor;
use cogos_core::orchestrator::{ModuleRegistry, Orchestrator, RunLimits};
use cogos_core::profile::RobotProfile;
use cogos_core::world::WorldBuilder;

/// Mock endpoint: serves canned completions in order after a configured
/// number of 500s.
struct MockState {
    hits: AtomicUsize,
    failures_before_success: usize,
    responses: Vec<String>,
}

async fn completions(
    State(state): State<Arc<MockState>>,
    _body: String,
) -> Result<Json<serde_json::Value>, axum::http::StatusCode> {
    let hit = state.hits.fetch_add(1, Ordering::SeqCst);
    if hit < state.failures_before_success {
        return Err(axum::http::StatusCode::INTERNAL_SERVER_ERROR);
    }
    let index = (hit - state.failures_before_success).min(state.responses.len() - 1);
    Ok(Json(serde_json::json!({
        "choices": [ { "message": { "role": "assistant", "content": state.responses[index] } } ]
    })))
}

async fn spawn_mock(failures_before_success: usize, responses: Vec<String>) -> (SocketAddr, Arc<MockState>) {
    let state = Arc::new(MockState {
        hits: AtomicUsize::new(0),
        failures_before_success,
        responses,
    });
    let app = Router::new()
        .route("/v1/chat/completions", post(completions))
        .with_state(state.clone());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move {
        axum::serve(listener, app).await.unwrap();
    });
    (addr, state)
}

fn remote_config(addr: SocketAddr, max_retries: u32) -> RemoteConfig {
    RemoteConfig {
        url: Some(format!("http://{addr}/v1/chat/completions")),
        model: "test-model".to_string(),
        api_key: Some("secret".to_string()),
        max_retries,
        retry_base_ms: 2,
        timeout_ms: 5_000,
        vision: false,
        call_budget: None,
    }
}

#[tokio::test]
async fn recovers_after_two_server_errors() {
    let (addr, state) = spawn_mock(2, vec!["SAY(\"ok\")".to_string()]).await;
    let backend = RemoteBackend::new(remote_config(addr, 3)).unwrap();
    let text = backend
        .complete(&CompletionRequest::text("hello", "t"))
        .await
        .unwrap();
    assert_eq!(text, "SAY(\"ok\")");
    assert_eq!(state.hits.load(Ordering::SeqCst), 3, "two failures then success");
}

#[tokio::test]
async fn total_attempts_are_bounded_by_retry_cap() {
    let (addr, state) = spawn_mock(100, vec!["never".to_string()]).await;
    let backend = RemoteBackend::new(remote_config(addr, 2)).unwrap();
    let err = backend
        .complete(&CompletionRequest::text("hello", "t"))
        .await
        .unwrap_err();
    assert!(matches!(err, BackendError::Remote { status: Some(500), .. }));
    assert_eq!(state.hits.load(Ordering::SeqCst), 3, "1 + max_retries attempts");
}

#[tokio::test]
async fn client_errors_are_not_retried() {
    // The mock treats any non-500 path as 404 via unrouted path.
    let (addr, state) = spawn_mock(0, vec!["unused".to_string()]).await;
    let mut config = remote_config(addr, 5);
    config.url = Some(format!("http://{addr}/nonexistent"));
    let backend = RemoteBackend::new(config).unwrap();
    let err = backend
        .complete(&CompletionRequest::text("hello", "t"))
        .await
        .unwrap_err();
    assert!(matches!(err, BackendError::Remote { status: Some(404), .. }));
    assert_eq!(state.hits.load(Ordering::SeqCst), 0);
}

#[tokio::test]
async fn call_budget_is_enforced() {
    let (addr, _) = spawn_mock(0, vec!["fine".to_string()]).await;
    let mut config = remote_config(addr, 0);
    config.call_budget = Some(2);
    let backend = RemoteBackend::new(config).unwrap();
    let request = CompletionRequest::text("x", "t");
    assert!(backend.complete(&request).await.is_ok());
    assert!(backend.complete(&request).await.is_ok());
    assert!(matches!(
        backend.complete(&request).await.unwrap_err(),
        BackendError::BudgetExceeded { budget: 2 }
    ));
}

fn hello_orchestrator(behavior: Arc<dyn CompletionBackend>) -> Orchestrator {
    let mut world = WorldBuilder::new()
        .location("hall", &[])
        .user("user_1", "hall")
        .build()
        .unwrap();
    world.add_robot("dog", "hall", true, true).unwrap();
    let world = Arc::new(tokio::sync::Mutex::new(world));
    let bus = Arc::new(Bus::new(false));
    bus.register("dog", Some("hall"));
    let executor = Arc::new(SimExecutor::new(world, bus, Duration::from_millis(50)));
    Orchestrator::new(
        RobotProfile::quadruped("dog"),
        ModuleRegistry::minimal(behavior, executor),
        RunLimits::default(),
    )
}

#[tokio::test]
async fn recorded_remote_session_replays_byte_identically() {
    let (addr, _) = spawn_mock(0, vec!["SAY(\"hello\")".to_string(), "FINISH".to_string()]).await;
    let dir = tempfile::tempdir().unwrap();
    let recorded_path = dir.path().join("session.jsonl");

    let original = {
        let remote = RemoteBackend::new(remote_config(addr, 1)).unwrap();
        let recorder = RecordingBackend::create(remote, &recorded_path).unwrap();
        let orchestrator = hello_orchestrator(Arc::new(recorder));
        orchestrator.run("say hello").await
    };
    assert_eq!(original.outcome, cogos_core::RunOutcome::Finished);

    // Replay the captured script offline.
    let replayed = {
        let script = ScriptedBackend::load(&recorded_path).unwrap();
        let orchestrator = hello_orchestrator(Arc::new(script));
        orchestrator.run("say hello").await
    };
    assert_eq!(original.to_jsonl(), replayed.to_jsonl());
}
