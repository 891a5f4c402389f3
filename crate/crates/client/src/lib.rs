//! Async client for the selection service.

use serde::de::DeserializeOwned;
use serde::Serialize;

use lowconf_core::api::{
    ErrorBody, GenRequest, GenResponse, ScoreRequest, ScoreResponse, SubsetRequest, SubsetResponse,
};
use lowconf_core::pipeline::{RunReport, TransferReport};
use lowconf_core::{PipelineConfig, TransferConfig};

pub const DEFAULT_SERVER: &str = "http://127.0.0.1:7878";

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    /// The service ran the request and reported a failure.
    #[error("{} ({})", .0.error, .0.kind)]
    Api(ErrorBody),
    #[error("cannot reach service: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("unexpected response {status}: {body}")]
    Protocol { status: u16, body: String },
}

impl ClientError {
    /// Process exit code for this failure. Transport and protocol failures
    /// fall outside the config/data/numeric classes and map to 1.
    pub fn exit_code(&self) -> i32 {
        match self {
            ClientError::Api(body) => body.exit_code,
            ClientError::Transport(_) | ClientError::Protocol { .. } => 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    pub fn new(base: impl Into<String>) -> Self {
        Client {
            base: base.into().trim_end_matches('/').to_owned(),
            http: reqwest::Client::new(),
        }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    async fn post<B: Serialize, T: DeserializeOwned>(
        &self,
        path: &str,
        body: &B,
    ) -> Result<T, ClientError> {
        let resp = self
            .http
            .post(format!("{}{path}", self.base))
            .json(body)
            .send()
            .await?;
        let status = resp.status();
        let bytes = resp.bytes().await?;
        if status.is_success() {
            return serde_json::from_slice(&bytes).map_err(|e| ClientError::Protocol {
                status: status.as_u16(),
                body: format!("{e}: {}", String::from_utf8_lossy(&bytes)),
            });
        }
        match serde_json::from_slice::<ErrorBody>(&bytes) {
            Ok(err) => Err(ClientError::Api(err)),
            Err(_) => Err(ClientError::Protocol {
                status: status.as_u16(),
                body: String::from_utf8_lossy(&bytes).into_owned(),
            }),
        }
    }

    pub async fn health(&self) -> Result<serde_json::Value, ClientError> {
        let resp = self
            .http
            .get(format!("{}/health", self.base))
            .send()
            .await?;
        Ok(resp.error_for_status()?.json().await?)
    }

    pub async fn gen(&self, req: &GenRequest) -> Result<GenResponse, ClientError> {
        self.post("/v1/gen", req).await
    }

    pub async fn run(&self, config: &PipelineConfig) -> Result<RunReport, ClientError> {
        self.post("/v1/run", config).await
    }

    pub async fn transfer(&self, config: &TransferConfig) -> Result<TransferReport, ClientError> {
        self.post("/v1/transfer", config).await
    }

    pub async fn score(&self, req: &ScoreRequest) -> Result<ScoreResponse, ClientError> {
        self.post("/v1/score", req).await
    }

    pub async fn subset(&self, req: &SubsetRequest) -> Result<SubsetResponse, ClientError> {
        self.post("/v1/subset", req).await
    }
}
