//! Language-model client over HTTP and a stub server speaking the same
//! protocol.

use std::sync::Arc;
use std::time::Duration;

use amrule_core::prompt_rules::{
    check_distribution, EmbedRequest, EmbedResponse, FillMaskRequest, FillMaskResponse, LmClient, StubLm,
};
use amrule_core::{Error, Result};
use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};

/// `POST {base}/v1/fill_mask` and `POST {base}/v1/embed`.
pub struct HttpLm {
    base: String,
    agent: ureq::Agent,
}

impl HttpLm {
    pub fn new(base: &str, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        HttpLm {
            base: base.trim_end_matches('/').to_owned(),
            agent,
        }
    }

    fn call<Req: serde::Serialize, Resp: serde::de::DeserializeOwned>(&self, path: &str, body: &Req) -> Result<Resp> {
        let url = format!("{}{path}", self.base);
        let mut resp = self.agent.post(&url).send_json(body).map_err(|e| classify(&url, e))?;
        resp.body_mut()
            .read_json::<Resp>()
            .map_err(|e| Error::Protocol(format!("{url}: malformed response: {e}")))
    }
}

fn classify(url: &str, e: ureq::Error) -> Error {
    match e {
        // a 4xx means the request itself is wrong; retrying will not help
        ureq::Error::StatusCode(code) if (400..500).contains(&code) => {
            Error::Protocol(format!("{url}: HTTP {code}"))
        }
        other => Error::Transport {
            attempts: 1,
            message: format!("{url}: {other}"),
        },
    }
}

impl LmClient for HttpLm {
    fn fill_mask(&self, prompt: &str) -> Result<FillMaskResponse> {
        let r: FillMaskResponse = self.call(
            "/v1/fill_mask",
            &FillMaskRequest {
                prompt: prompt.to_owned(),
            },
        )?;
        check_distribution(&r)?;
        Ok(r)
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let r: EmbedResponse = self.call("/v1/embed", &EmbedRequest { text: text.to_owned() })?;
        Ok(r.vector)
    }
}

type ApiError = (StatusCode, Json<serde_json::Value>);

fn reject(e: Error) -> ApiError {
    let code = match e {
        Error::Validation(_) | Error::Protocol(_) => StatusCode::UNPROCESSABLE_ENTITY,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    };
    (code, Json(serde_json::json!({ "error": e.to_string() })))
}

async fn fill_mask(State(lm): State<Arc<StubLm>>, Json(req): Json<FillMaskRequest>) -> Result<Json<FillMaskResponse>, ApiError> {
    lm.fill_mask(&req.prompt).map(Json).map_err(reject)
}

async fn embed(State(lm): State<Arc<StubLm>>, Json(req): Json<EmbedRequest>) -> Result<Json<EmbedResponse>, ApiError> {
    lm.embed(&req.text).map(|vector| Json(EmbedResponse { vector })).map_err(reject)
}

/// Routes of the stub language-model server.
pub fn stub_router(lm: StubLm) -> Router {
    Router::new()
        .route("/v1/fill_mask", post(fill_mask))
        .route("/v1/embed", post(embed))
        .with_state(Arc::new(lm))
}
