//! Thin typed client for the kernel service. Every method maps onto one
//! endpoint; payload types come from `cogos_core::api`.

use cogos_core::api::{
    ErrorKind, ErrorResponse, EvalRequest, EvalResponse, EventsResponse, HealthResponse,
    InputSubmitRequest, RunRequest, RunResponse, SessionCloseResponse, SessionCreateRequest,
    SessionCreateResponse, TaskSubmitRequest, TaskSubmitResponse,
};
use serde::de::DeserializeOwned;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("{kind:?} error from service: {message}")]
    Api {
        kind: ErrorKind,
        status: u16,
        message: String,
    },
    #[error("transport error: {0}")]
    Transport(#[from] reqwest::Error),
}

impl ClientError {
    /// Exit code per the CLI contract: config errors are 2, everything
    /// else on the wire is treated as a backend failure (3).
    pub fn exit_code(&self) -> i32 {
        match self {
            ClientError::Api {
                kind: ErrorKind::Config,
                ..
            } => 2,
            _ => 3,
        }
    }
}

pub struct Client {
    base_url: String,
    http: reqwest::Client,
}

impl Client {
    pub fn new(base_url: impl Into<String>) -> Client {
        Client {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    async fn decode<T: DeserializeOwned>(response: reqwest::Response) -> Result<T, ClientError> {
        let status = response.status();
        if status.is_success() {
            return Ok(response.json::<T>().await?);
        }
        let message = response.text().await.unwrap_or_default();
        let (kind, message) = match serde_json::from_str::<ErrorResponse>(&message) {
            Ok(body) => (body.kind, body.error),
            Err(_) => (ErrorKind::Internal, message),
        };
        Err(ClientError::Api {
            kind,
            status: status.as_u16(),
            message,
        })
    }

    pub async fn health(&self) -> Result<HealthResponse, ClientError> {
        let response = self.http.get(format!("{}/health", self.base_url)).send().await?;
        Self::decode(response).await
    }

    pub async fn run(&self, request: &RunRequest) -> Result<RunResponse, ClientError> {
        let response = self
            .http
            .post(format!("{}/v1/run", self.base_url))
            .json(request)
            .send()
            .await?;
        Self::decode(response).await
    }

    pub async fn eval(&self, request: &EvalRequest) -> Result<EvalResponse, ClientError> {
        let response = self
            .http
            .post(format!("{}/v1/eval", self.base_url))
            .json(request)
            .send()
            .await?;
        Self::decode(response).await
    }

    pub async fn create_session(
        &self,
        config_path: &str,
    ) -> Result<SessionCreateResponse, ClientError> {
        let response = self
            .http
            .post(format!("{}/v1/sessions", self.base_url))
            .json(&SessionCreateRequest {
                config_path: config_path.to_string(),
            })
            .send()
            .await?;
        Self::decode(response).await
    }

    pub async fn submit_task(
        &self,
        session_id: &str,
        task: &str,
        robot: Option<&str>,
    ) -> Result<TaskSubmitResponse, ClientError> {
        let response = self
            .http
            .post(format!("{}/v1/sessions/{session_id}/task", self.base_url))
            .json(&TaskSubmitRequest {
                task: task.to_string(),
                robot: robot.map(str::to_string),
            })
            .send()
            .await?;
        Self::decode(response).await
    }

    pub async fn poll_events(
        &self,
        session_id: &str,
        after: u64,
        wait_ms: u64,
    ) -> Result<EventsResponse, ClientError> {
        let response = self
            .http
            .get(format!(
                "{}/v1/sessions/{session_id}/events?after={after}&wait_ms={wait_ms}",
                self.base_url
            ))
            .send()
            .await?;
        Self::decode(response).await
    }

    pub async fn send_input(&self, session_id: &str, text: &str) -> Result<(), ClientError> {
        let response = self
            .http
            .post(format!("{}/v1/sessions/{session_id}/input", self.base_url))
            .json(&InputSubmitRequest {
                text: text.to_string(),
            })
            .send()
            .await?;
        let _: serde_json::Value = Self::decode(response).await?;
        Ok(())
    }

    pub async fn close_session(
        &self,
        session_id: &str,
    ) -> Result<SessionCloseResponse, ClientError> {
        let response = self
            .http
            .delete(format!("{}/v1/sessions/{session_id}", self.base_url))
            .send()
            .await?;
        Self::decode(response).await
    }
}
