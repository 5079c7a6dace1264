//! Blocking JSON-over-HTTP helpers shared by the remote verbalizer and the
//! external scorer client.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum PostError {
    /// Connection failure, timeout or non-2xx status.
    Transport(String),
    /// 2xx with a body that does not decode.
    Decode(String),
}

pub(crate) fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into()
}

/// Joins `base` and `route` unless `base` already ends with the route.
pub(crate) fn endpoint_url(base: &str, route: &str) -> String {
    let base = base.trim_end_matches('/');
    if base.ends_with(route) {
        base.to_string()
    } else {
        format!("{base}{route}")
    }
}

pub(crate) fn post_json<B: Serialize, R: DeserializeOwned>(
    agent: &ureq::Agent,
    url: &str,
    body: &B,
) -> Result<R, PostError> {
    let payload = serde_json::to_string(body).map_err(|e| PostError::Decode(e.to_string()))?;
    let response = agent
        .post(url)
        .header("Content-Type", "application/json")
        .send(payload.as_str())
        .map_err(|e| PostError::Transport(e.to_string()))?;
    let status = response.status().as_u16();
    let text = response
        .into_body()
        .with_config()
        .limit(64 * 1024 * 1024)
        .read_to_string()
        .map_err(|e| PostError::Transport(e.to_string()))?;
    if !(200..300).contains(&status) {
        let excerpt: String = text.chars().take(200).collect();
        return Err(PostError::Transport(format!("HTTP {status}: {excerpt}")));
    }
    serde_json::from_str(&text).map_err(|e| PostError::Decode(e.to_string()))
}
