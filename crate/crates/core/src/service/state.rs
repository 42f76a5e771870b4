//! Platform state as a fold over the event log.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::events::{check_sequence, Event, EventKind};
use crate::error::{Error, Result};
use crate::fraction::Fraction;
use crate::gate::{EligibilityReport, EvaluationQueue, Submission};
use crate::harness::RunExit;
use crate::leaderboard::Leaderboards;
use crate::metrics::EvaluationReport;
use crate::registry::AuditRecord;
use crate::task::TaskDescriptor;

/// Which of a submission's runs an event refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Track {
    Clean,
    Perturbed,
    Replay,
}

// Event payloads.

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetRegistered {
    pub dataset_id: String,
    pub content_digest: String,
    pub task: TaskDescriptor,
    pub n_cases: usize,
    pub registered_by: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCreated {
    pub manifest_digest: String,
    pub dataset_id: String,
    pub seed: u64,
    pub test_fraction: Fraction,
    pub n_train: usize,
    pub n_test: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Submitted {
    pub submission: Submission,
    pub dataset_id: String,
    pub manifest_digest: String,
    pub run_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Validated {
    pub submission_id: String,
    pub eligibility: EligibilityReport,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Queued {
    pub submission_id: String,
    pub position: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStarted {
    pub submission_id: String,
    pub track: Track,
    pub run_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunFinished {
    pub submission_id: String,
    pub track: Track,
    pub run_seed: u64,
    pub exit: RunExit,
    pub n_predictions: usize,
    pub total_wall_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportIssued {
    pub report: EvaluationReport,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeaderboardUpdated {
    pub task_id: String,
    pub submission_id: String,
    pub report_digest: String,
    pub baseline: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecretAccessed {
    pub who: String,
    pub dataset_id: String,
    pub manifest_digest: String,
}

// State records.

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub dataset_id: String,
    pub content_digest: String,
    pub task_id: String,
    pub n_cases: usize,
    pub registered_at: DateTime<Utc>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub manifest_digest: String,
    pub dataset_id: String,
    pub seed: u64,
    pub test_fraction: Fraction,
    pub n_train: usize,
    pub n_test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task: TaskDescriptor,
    /// Split evaluated against; the most recently created one.
    pub active_split: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SubmissionStatus {
    Submitted,
    Rejected,
    Queued,
    Running,
    Reported,
    Published,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub track: Track,
    pub exit: RunExit,
    pub n_predictions: usize,
    pub total_wall_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmissionRecord {
    pub submission: Submission,
    pub dataset_id: String,
    pub manifest_digest: String,
    pub run_seed: u64,
    pub status: SubmissionStatus,
    pub eligibility: Option<EligibilityReport>,
    /// Every finished run, including ones repeated after a restart.
    pub runs: Vec<RunSummary>,
    pub report_digest: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub last_seq: u64,
    pub datasets: BTreeMap<String, DatasetRecord>,
    pub splits: BTreeMap<String, SplitRecord>,
    pub tasks: BTreeMap<String, TaskRecord>,
    pub submissions: BTreeMap<String, SubmissionRecord>,
    pub queue: EvaluationQueue,
    pub reports: BTreeMap<String, EvaluationReport>,
    pub leaderboards: Leaderboards,
    pub secret_accesses: Vec<AuditRecord>,
}

fn reject(event: &Event, why: impl std::fmt::Display) -> Error {
    Error::CorruptLog(format!("event {} ({:?}): {why}", event.seq, event.kind))
}

impl State {
    /// Folds a whole log. Refuses gaps and events that do not apply.
    pub fn rebuild(events: &[Event]) -> Result<State> {
        check_sequence(events)?;
        let mut state = State::default();
        for e in events {
            state.apply(e)?;
        }
        Ok(state)
    }

    pub fn submission(&self, id: &str) -> Result<&SubmissionRecord> {
        self.submissions
            .get(id)
            .ok_or_else(|| Error::not_found("submission", id))
    }

    /// Applies one event. Validation happens before any mutation, so a
    /// rejected event leaves the state untouched.
    pub fn apply(&mut self, event: &Event) -> Result<()> {
        if event.seq != self.last_seq + 1 {
            return Err(reject(event, format!("expected seq {}", self.last_seq + 1)));
        }
        match event.kind {
            EventKind::DatasetRegistered => {
                let p: DatasetRegistered = event.payload_as()?;
                if self.datasets.contains_key(&p.dataset_id) {
                    return Err(reject(event, "dataset registered twice"));
                }
                if let Some(t) = self.tasks.get(&p.task.task_id) {
                    if t.task != p.task {
                        return Err(reject(event, "task descriptor changed"));
                    }
                } else {
                    let board = self.leaderboards.ensure_task(&p.task);
                    if let Some(rate) = p.task.human_gold_rate {
                        board
                            .set_human_baseline(rate, event.at)
                            .map_err(|e| reject(event, e))?;
                    }
                    self.tasks.insert(
                        p.task.task_id.clone(),
                        TaskRecord {
                            task: p.task.clone(),
                            active_split: None,
                        },
                    );
                }
                self.datasets.insert(
                    p.dataset_id.clone(),
                    DatasetRecord {
                        dataset_id: p.dataset_id,
                        content_digest: p.content_digest,
                        task_id: p.task.task_id,
                        n_cases: p.n_cases,
                        registered_at: event.at,
                    },
                );
            }
            EventKind::SplitCreated => {
                let p: SplitCreated = event.payload_as()?;
                let task_id = match self.datasets.get(&p.dataset_id) {
                    Some(d) => d.task_id.clone(),
                    None => return Err(reject(event, "split of unknown dataset")),
                };
                if let Some(task) = self.tasks.get_mut(&task_id) {
                    task.active_split = Some(p.manifest_digest.clone());
                }
                self.splits
                    .entry(p.manifest_digest.clone())
                    .or_insert(SplitRecord {
                        manifest_digest: p.manifest_digest,
                        dataset_id: p.dataset_id,
                        seed: p.seed,
                        test_fraction: p.test_fraction,
                        n_train: p.n_train,
                        n_test: p.n_test,
                    });
            }
            EventKind::Submitted => {
                let p: Submitted = event.payload_as()?;
                let id = p.submission.submission_id.clone();
                if self.submissions.contains_key(&id) {
                    return Err(reject(event, "submission id reused"));
                }
                if !self.splits.contains_key(&p.manifest_digest) {
                    return Err(reject(event, "submission against unknown split"));
                }
                self.submissions.insert(
                    id,
                    SubmissionRecord {
                        submission: p.submission,
                        dataset_id: p.dataset_id,
                        manifest_digest: p.manifest_digest,
                        run_seed: p.run_seed,
                        status: SubmissionStatus::Submitted,
                        eligibility: None,
                        runs: Vec::new(),
                        report_digest: None,
                    },
                );
            }
            EventKind::Validated => {
                let p: Validated = event.payload_as()?;
                let rec = self
                    .submissions
                    .get_mut(&p.submission_id)
                    .ok_or_else(|| reject(event, "unknown submission"))?;
                rec.status = if p.eligibility.eligible {
                    rec.status
                } else {
                    SubmissionStatus::Rejected
                };
                rec.eligibility = Some(p.eligibility);
            }
            EventKind::Queued => {
                let p: Queued = event.payload_as()?;
                let rec = self
                    .submissions
                    .get_mut(&p.submission_id)
                    .ok_or_else(|| reject(event, "unknown submission"))?;
                let eligibility = rec
                    .eligibility
                    .as_ref()
                    .ok_or_else(|| reject(event, "queued before validation"))?;
                if self.queue.len() != p.position {
                    return Err(reject(event, "queue position differs from log"));
                }
                self.queue
                    .enqueue(&rec.submission, eligibility)
                    .map_err(|e| reject(event, e))?;
                rec.status = SubmissionStatus::Queued;
            }
            EventKind::RunStarted => {
                let p: RunStarted = event.payload_as()?;
                let rec = self
                    .submissions
                    .get_mut(&p.submission_id)
                    .ok_or_else(|| reject(event, "unknown submission"))?;
                if !self.queue.contains(&p.submission_id) {
                    return Err(reject(event, "run of a submission that is not queued"));
                }
                rec.status = SubmissionStatus::Running;
            }
            EventKind::RunFinished => {
                let p: RunFinished = event.payload_as()?;
                let rec = self
                    .submissions
                    .get_mut(&p.submission_id)
                    .ok_or_else(|| reject(event, "unknown submission"))?;
                rec.runs.push(RunSummary {
                    track: p.track,
                    exit: p.exit,
                    n_predictions: p.n_predictions,
                    total_wall_ms: p.total_wall_ms,
                });
            }
            EventKind::ReportIssued => {
                let p: ReportIssued = event.payload_as()?;
                p.report.verify_digest().map_err(|e| reject(event, e))?;
                let id = p.report.submission_id.clone();
                let rec = self
                    .submissions
                    .get_mut(&id)
                    .ok_or_else(|| reject(event, "report for unknown submission"))?;
                // Exactly one report per (submission, dataset digest, run seed); later copies are ignored.
                if !self.reports.contains_key(&id) {
                    rec.status = SubmissionStatus::Reported;
                    rec.report_digest = Some(p.report.digest.clone());
                    self.reports.insert(id, p.report);
                }
            }
            EventKind::LeaderboardUpdated => {
                let p: LeaderboardUpdated = event.payload_as()?;
                let report = self
                    .reports
                    .get(&p.submission_id)
                    .ok_or_else(|| reject(event, "no report issued"))?;
                if report.digest != p.report_digest {
                    return Err(reject(event, "report digest differs"));
                }
                let board = self
                    .leaderboards
                    .board_mut(&p.task_id)
                    .map_err(|e| reject(event, e))?;
                if p.baseline {
                    board.set_baseline(report).map_err(|e| reject(event, e))?;
                } else {
                    board.insert(report).map_err(|e| reject(event, e))?;
                }
                self.queue.remove(&p.submission_id);
                if let Some(rec) = self.submissions.get_mut(&p.submission_id) {
                    rec.status = SubmissionStatus::Published;
                }
            }
            EventKind::SecretAccessed => {
                let p: SecretAccessed = event.payload_as()?;
                self.secret_accesses.push(AuditRecord {
                    who: p.who,
                    at: event.at,
                    dataset_id: p.dataset_id,
                    manifest_digest: p.manifest_digest,
                });
            }
        }
        self.last_seq = event.seq;
        Ok(())
    }
}
