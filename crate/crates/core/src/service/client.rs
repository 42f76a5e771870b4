//! Blocking HTTP client for the platform API, used by the CLI.

use std::fmt;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use reqwest::blocking::{Client as Http, RequestBuilder, Response};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use super::api::{RegisterDatasetRequest, SplitRequest};
use super::platform::{SubmitOutcome, SubmitRequest};
use super::state::{DatasetRecord, SplitRecord, State, SubmissionRecord, SubmissionStatus};
use crate::fraction::Fraction;
use crate::leaderboard::{LeaderboardEntry, ViewFilter};
use crate::metrics::EvaluationReport;
use crate::registry::LabeledCase;
use crate::task::TaskDescriptor;

/// A failed call: HTTP status (0 for transport failures) and the platform's
/// error code.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ApiError {
    pub status: u16,
    pub code: String,
    pub message: String,
    /// Full response body, when JSON.
    pub body: Option<Value>,
}

impl fmt::Display for ApiError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}: {}", self.status, self.code, self.message)
    }
}

impl std::error::Error for ApiError {}

impl From<reqwest::Error> for ApiError {
    fn from(e: reqwest::Error) -> Self {
        ApiError {
            status: 0,
            code: "TRANSPORT".into(),
            message: e.to_string(),
            body: None,
        }
    }
}

pub type ApiResult<T> = std::result::Result<T, ApiError>;

pub struct Client {
    base: String,
    token: Option<String>,
    http: Http,
}

impl Client {
    pub fn new(base: impl Into<String>, token: Option<String>) -> ApiResult<Self> {
        let http = Http::builder().timeout(Duration::from_secs(600)).build()?;
        Ok(Self {
            base: base.into().trim_end_matches('/').to_string(),
            token,
            http,
        })
    }

    fn auth(&self, req: RequestBuilder) -> RequestBuilder {
        match &self.token {
            Some(t) => req.bearer_auth(t),
            None => req,
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    fn check(resp: Response) -> ApiResult<Response> {
        let status = resp.status();
        if status.is_success() {
            return Ok(resp);
        }
        let text = resp.text().unwrap_or_default();
        let body: Option<Value> = serde_json::from_str(&text).ok();
        let field = |k: &str| {
            body.as_ref()
                .and_then(|b| b[k].as_str())
                .map(str::to_string)
        };
        Err(ApiError {
            status: status.as_u16(),
            code: field("error").unwrap_or_else(|| "HTTP".into()),
            message: field("message").unwrap_or(text),
            body,
        })
    }

    fn get<T: DeserializeOwned>(&self, path: &str) -> ApiResult<T> {
        Ok(Self::check(self.auth(self.http.get(self.url(path))).send()?)?.json()?)
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> ApiResult<T> {
        Ok(Self::check(
            self.auth(self.http.post(self.url(path)))
                .json(body)
                .send()?,
        )?
        .json()?)
    }

    pub fn health(&self) -> ApiResult<()> {
        Self::check(self.http.get(self.url("/health")).send()?).map(|_| ())
    }

    pub fn register_dataset(
        &self,
        task: TaskDescriptor,
        cases: Vec<LabeledCase>,
        files_dir: Option<PathBuf>,
    ) -> ApiResult<DatasetRecord> {
        self.post(
            "/datasets",
            &RegisterDatasetRequest {
                task,
                cases,
                files_dir,
            },
        )
    }

    pub fn create_split(
        &self,
        dataset_id: &str,
        seed: u64,
        test_fraction: Fraction,
    ) -> ApiResult<SplitRecord> {
        self.post(
            &format!("/datasets/{dataset_id}/splits"),
            &SplitRequest {
                seed,
                test_fraction,
            },
        )
    }

    /// Public archive bytes (tar) of a task's active split.
    pub fn export_public(&self, task_id: &str) -> ApiResult<Vec<u8>> {
        let resp = Self::check(
            self.http
                .get(self.url(&format!("/tasks/{task_id}/public")))
                .send()?,
        )?;
        Ok(resp.bytes()?.to_vec())
    }

    pub fn submit(&self, task_id: &str, req: &SubmitRequest) -> ApiResult<SubmitOutcome> {
        self.post(&format!("/tasks/{task_id}/submissions"), req)
    }

    pub fn submission(&self, id: &str) -> ApiResult<SubmissionRecord> {
        self.get(&format!("/submissions/{id}"))
    }

    pub fn report(&self, id: &str) -> ApiResult<EvaluationReport> {
        self.get(&format!("/submissions/{id}/report"))
    }

    /// Polls until the submission is published or rejected, then returns its
    /// report (rejected submissions have none and yield NOT_FOUND).
    pub fn wait_report(&self, id: &str, timeout: Duration) -> ApiResult<EvaluationReport> {
        let deadline = Instant::now() + timeout;
        loop {
            let rec = self.submission(id)?;
            match rec.status {
                SubmissionStatus::Published | SubmissionStatus::Rejected => return self.report(id),
                _ if Instant::now() >= deadline => {
                    return Err(ApiError {
                        status: 0,
                        code: "TIMEOUT".into(),
                        message: format!("submission `{id}` still {:?}", rec.status),
                        body: None,
                    })
                }
                _ => std::thread::sleep(Duration::from_millis(100)),
            }
        }
    }

    fn leaderboard_query(filter: &ViewFilter) -> Vec<(&'static str, String)> {
        let mut q = Vec::new();
        if let Some(p) = &filter.participant {
            q.push(("participant", p.clone()));
        }
        if let Some(g) = filter.grade {
            q.push((
                "grade",
                serde_json::to_value(g)
                    .ok()
                    .and_then(|v| v.as_str().map(str::to_string))
                    .unwrap_or_default(),
            ));
        }
        if let Some(b) = filter.baseline {
            q.push(("baseline", b.to_string()));
        }
        q
    }

    pub fn leaderboard(
        &self,
        task_id: &str,
        filter: &ViewFilter,
    ) -> ApiResult<Vec<LeaderboardEntry>> {
        let req = self
            .http
            .get(self.url(&format!("/tasks/{task_id}/leaderboard")))
            .query(&Self::leaderboard_query(filter));
        let body: Value = Self::check(req.send()?)?.json()?;
        serde_json::from_value(body["entries"].clone()).map_err(|e| ApiError {
            status: 0,
            code: "INVALID_JSON".into(),
            message: e.to_string(),
            body: Some(body),
        })
    }

    pub fn leaderboard_text(&self, task_id: &str, filter: &ViewFilter) -> ApiResult<String> {
        let mut q = Self::leaderboard_query(filter);
        q.push(("format", "text".into()));
        let req = self
            .http
            .get(self.url(&format!("/tasks/{task_id}/leaderboard")))
            .query(&q);
        Ok(Self::check(req.send()?)?.text()?)
    }

    pub fn state(&self) -> ApiResult<State> {
        self.get("/admin/state")
    }
}
