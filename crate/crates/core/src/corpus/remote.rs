//! Minimal client for an issue tracker's public JSON API
//! (`GET {base}/bugs/{id}` returning at least `title` and `description`,
//! the shape Launchpad serves).
//!
//! Experiments never call this; it only feeds the `ingest` subcommand.

use std::thread;
use std::time::Duration;

use serde::Deserialize;
use thiserror::Error;

use super::BugReport;

#[derive(Debug, Error)]
pub enum RemoteError {
    #[error("bug {0:?} not found")]
    NotFound(String),
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("http status {status} for bug {bug_id:?}")]
    Status { status: u16, bug_id: String },
    #[error("could not decode response for bug {bug_id:?}: {message}")]
    Decode { bug_id: String, message: String },
    #[error("bug id must be nonempty")]
    EmptyId,
}

impl RemoteError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, RemoteError::Transport { .. })
            || matches!(self, RemoteError::Status { status, .. } if *status >= 500)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            initial_backoff: Duration::from_secs(1),
        }
    }
}

/// Report text fetched from a tracker. The label flags are not part of the
/// tracker payload and must be supplied before the report can be labeled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FetchedReport {
    pub bug_id: String,
    pub project: Option<String>,
    pub title: String,
    pub description: String,
}

impl FetchedReport {
    pub fn into_report(self, project: &str, is_bug: bool, has_bic: bool) -> BugReport {
        BugReport {
            bug_id: self.bug_id,
            project: self.project.unwrap_or_else(|| project.to_string()),
            is_bug,
            has_bic,
            title: self.title,
            description: self.description,
        }
    }
}

#[derive(Deserialize)]
struct Payload {
    title: String,
    #[serde(default)]
    description: Option<String>,
    #[serde(default)]
    project: Option<String>,
}

pub struct RemoteClient {
    base_url: String,
    agent: ureq::Agent,
    retry: RetryPolicy,
}

impl RemoteClient {
    pub fn new(base_url: &str, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        RemoteClient {
            base_url: base_url.trim_end_matches('/').to_string(),
            agent,
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn fetch(&self, bug_id: &str) -> Result<FetchedReport, RemoteError> {
        if bug_id.trim().is_empty() {
            return Err(RemoteError::EmptyId);
        }
        let mut backoff = self.retry.initial_backoff;
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.fetch_once(bug_id, attempt) {
                Err(e) if e.is_retryable() && attempt <= self.retry.max_retries => {
                    log::warn!("fetch {bug_id} failed ({e}); retrying in {backoff:?}");
                    thread::sleep(backoff);
                    backoff *= 2;
                }
                other => return other,
            }
        }
    }

    fn fetch_once(&self, bug_id: &str, attempt: u32) -> Result<FetchedReport, RemoteError> {
        let url = format!("{}/bugs/{}", self.base_url, bug_id);
        let transport = |e: ureq::Error| RemoteError::Transport {
            attempts: attempt,
            message: e.to_string(),
        };
        let mut response = self
            .agent
            .get(&url)
            .header("Accept", "application/json")
            .call()
            .map_err(transport)?;
        let status = response.status().as_u16();
        if status == 404 {
            return Err(RemoteError::NotFound(bug_id.to_string()));
        }
        if status != 200 {
            return Err(RemoteError::Status {
                status,
                bug_id: bug_id.to_string(),
            });
        }
        let decode = |message: String| RemoteError::Decode {
            bug_id: bug_id.to_string(),
            message,
        };
        let body = response
            .body_mut()
            .read_to_string()
            .map_err(|e| decode(e.to_string()))?;
        let payload: Payload = serde_json::from_str(&body).map_err(|e| decode(e.to_string()))?;
        Ok(FetchedReport {
            bug_id: bug_id.to_string(),
            project: payload.project,
            title: payload.title,
            description: payload.description.unwrap_or_default(),
        })
    }
}
