use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use chrono::{DateTime, TimeDelta, Utc};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tracing::{info, warn};

use super::events::{Event, EventKind, EventLog};
use super::state::*;
use crate::auth::{Credentials, Principal};
use crate::error::{Error, Result};
use crate::fraction::Fraction;
use crate::gate::{self, CheckName, CheckOutcome, EligibilityReport, Submission};
use crate::harness::{
    perturb_case, replay_run, resolve_entry, run_model, RunExit, RunResult, RunSpec,
};
use crate::leaderboard::{LeaderboardEntry, ViewFilter};
use crate::metrics::{compile_report, EvaluationReport, ReportInputs};
use crate::registry::{
    AuditRecord, AuditSink, Case, Dataset, LabeledCase, PublicArchive, Registry, SplitManifest,
};
use crate::rng::{fnv1a64, splitmix64};
use crate::task::TaskDescriptor;

/// Identity the worker uses when opening secret splits.
pub const WORKER_PRINCIPAL: &str = "worker";

/// Seed of every run of a submission.
pub fn run_seed_for(submission_id: &str, manifest_seed: u64) -> u64 {
    splitmix64(fnv1a64(submission_id) ^ manifest_seed)
}

/// Log plus the state folded from it. Every commit appends and applies under
/// the state write lock.
struct Journal {
    log: EventLog,
    state: RwLock<State>,
}

impl Journal {
    fn commit<P: Serialize>(&self, kind: EventKind, payload: &P) -> Result<Event> {
        self.commit_with(kind, |_| Ok(payload))
    }

    /// Commits a payload built from the current state, under the write lock.
    fn commit_with<P: Serialize>(
        &self,
        kind: EventKind,
        make: impl FnOnce(&State) -> Result<P>,
    ) -> Result<Event> {
        let mut state = self.state.write();
        let payload: Value = serde_json::to_value(make(&state)?)?;
        let (event, ()) = self.log.append_with(kind, payload, |e| state.apply(e))?;
        Ok(event)
    }
}

impl AuditSink for Journal {
    fn record(&self, r: &AuditRecord) -> Result<()> {
        let payload = SecretAccessed {
            who: r.who.clone(),
            dataset_id: r.dataset_id.clone(),
            manifest_digest: r.manifest_digest.clone(),
        };
        self.commit(EventKind::SecretAccessed, &payload).map(|_| ())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitRequest {
    /// Model package path on the platform host.
    pub model_ref: PathBuf,
    pub name: String,
    #[serde(default)]
    pub version: String,
    /// Admin-only: evaluate as a baseline.
    #[serde(default)]
    pub baseline: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitOutcome {
    pub submission_id: String,
    pub eligibility: EligibilityReport,
    /// Queue position when eligible.
    pub position: Option<usize>,
}

/// The benchmarking platform: registry, gate, queue, worker and leaderboards
/// over one event log.
pub struct Platform {
    journal: Arc<Journal>,
    registry: Registry,
    credentials: Credentials,
    admin_lock: Mutex<()>,
    claimed: Mutex<BTreeSet<String>>,
}

impl Platform {
    /// Volatile platform for tests and local validation.
    pub fn in_memory(credentials: Credentials) -> Self {
        let journal = Arc::new(Journal {
            log: EventLog::in_memory(),
            state: RwLock::default(),
        });
        let registry = Registry::in_memory().with_audit_sink(journal.clone());
        Self::assemble(journal, registry, credentials)
    }

    /// Opens the platform stored under `data_dir`, rebuilding state from its
    /// event log. Datasets are reloaded and splits recomputed; any digest that
    /// disagrees with the log is CORRUPT_LOG.
    pub fn open(data_dir: &Path, credentials: Credentials) -> Result<Self> {
        let (log, events) = EventLog::open(data_dir.join("events.jsonl"))?;
        let state = State::rebuild(&events)?;
        let journal = Arc::new(Journal {
            log,
            state: RwLock::new(state),
        });
        let registry = Registry::persistent(data_dir)?.with_audit_sink(journal.clone());
        {
            let state = journal.state.read();
            for d in state.datasets.values() {
                registry.load_dataset(&d.dataset_id, &d.content_digest)?;
            }
            for s in state.splits.values() {
                let ds = registry
                    .dataset(&s.dataset_id)
                    .ok_or_else(|| Error::not_found("dataset", &s.dataset_id))?;
                let m = registry.split_dataset(&ds, s.seed, s.test_fraction)?;
                if m.manifest_digest != s.manifest_digest {
                    return Err(Error::CorruptLog(format!(
                        "split {} does not reproduce",
                        s.manifest_digest
                    )));
                }
            }
        }
        info!(events = events.len(), "platform state rebuilt");
        let platform = Self::assemble(journal, registry, credentials);
        let ungated: Vec<String> = {
            let state = platform.journal.state.read();
            state
                .submissions
                .values()
                .filter(|r| r.status == SubmissionStatus::Submitted)
                .map(|r| r.submission.submission_id.clone())
                .collect()
        };
        for id in ungated {
            info!(submission = %id, "finishing interrupted gate");
            platform.admit(&id)?;
        }
        Ok(platform)
    }

    fn assemble(journal: Arc<Journal>, registry: Registry, credentials: Credentials) -> Self {
        Self {
            journal,
            registry,
            credentials,
            admin_lock: Mutex::new(()),
            claimed: Mutex::new(BTreeSet::new()),
        }
    }

    pub fn log_path(&self) -> Option<&Path> {
        self.journal.log.path()
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    /// Resolves a bearer token; absent or unknown tokens are UNAUTHORIZED.
    pub fn authenticate(&self, token: Option<&str>) -> Result<Principal> {
        let token = token.ok_or_else(|| Error::Unauthorized("missing token".into()))?;
        self.credentials
            .resolve(token)
            .ok_or_else(|| Error::Unauthorized("unknown token".into()))
    }

    /// Snapshot of the folded state.
    pub fn state(&self) -> State {
        self.journal.state.read().clone()
    }

    pub fn register_dataset(
        &self,
        who: &Principal,
        task: TaskDescriptor,
        cases: Vec<LabeledCase>,
        files_root: Option<&Path>,
    ) -> Result<DatasetRecord> {
        who.require_admin()?;
        let _guard = self.admin_lock.lock();
        if let Some(existing) = self.journal.state.read().tasks.get(&task.task_id) {
            if existing.task != task {
                return Err(Error::TaskMismatch {
                    expected: format!("{} as registered", task.task_id),
                    found: "a different descriptor".into(),
                });
            }
        }
        let ds = self.registry.register_dataset(task, cases, files_root)?;
        if let Some(rec) = self.journal.state.read().datasets.get(&ds.dataset_id) {
            return Ok(rec.clone());
        }
        let payload = DatasetRegistered {
            dataset_id: ds.dataset_id.clone(),
            content_digest: ds.content_digest.clone(),
            task: ds.task.clone(),
            n_cases: ds.cases.len(),
            registered_by: who.id.clone(),
        };
        self.journal
            .commit(EventKind::DatasetRegistered, &payload)?;
        Ok(self.journal.state.read().datasets[&ds.dataset_id].clone())
    }

    /// Splits a dataset and makes the split the active one for its task.
    pub fn create_split(
        &self,
        who: &Principal,
        dataset_id: &str,
        seed: u64,
        test_fraction: Fraction,
    ) -> Result<SplitRecord> {
        who.require_admin()?;
        let _guard = self.admin_lock.lock();
        let ds = self.dataset(dataset_id)?;
        let m = self.registry.split_dataset(&ds, seed, test_fraction)?;
        {
            let state = self.journal.state.read();
            let active = state
                .tasks
                .get(&ds.task.task_id)
                .and_then(|t| t.active_split.as_deref());
            if active == Some(m.manifest_digest.as_str()) {
                return Ok(state.splits[&m.manifest_digest].clone());
            }
        }
        let payload = SplitCreated {
            manifest_digest: m.manifest_digest.clone(),
            dataset_id: ds.dataset_id.clone(),
            seed,
            test_fraction: m.test_fraction,
            n_train: m.train_ids.len(),
            n_test: m.test_ids.len(),
        };
        self.journal.commit(EventKind::SplitCreated, &payload)?;
        Ok(self.journal.state.read().splits[&m.manifest_digest].clone())
    }

    fn dataset(&self, dataset_id: &str) -> Result<Arc<Dataset>> {
        self.registry
            .dataset(dataset_id)
            .ok_or_else(|| Error::not_found("dataset", dataset_id))
    }

    fn manifest(&self, digest: &str) -> Result<Arc<SplitManifest>> {
        self.registry
            .manifest(digest)
            .ok_or_else(|| Error::not_found("split", digest))
    }

    /// Dataset and split a task is currently evaluated on.
    pub fn active_split(&self, task_id: &str) -> Result<(Arc<Dataset>, Arc<SplitManifest>)> {
        let digest = {
            let state = self.journal.state.read();
            let task = state
                .tasks
                .get(task_id)
                .ok_or_else(|| Error::UnknownTask(task_id.to_string()))?;
            task.active_split
                .clone()
                .ok_or_else(|| Error::not_found("split for task", task_id))?
        };
        let m = self.manifest(&digest)?;
        Ok((self.dataset(&m.dataset_id)?, m))
    }

    /// Public archive of the task's active split.
    pub fn export_public(&self, task_id: &str) -> Result<PublicArchive> {
        let (ds, m) = self.active_split(task_id)?;
        self.registry.export_public(&ds, &m)
    }

    /// Registers a submission, runs the eligibility gate on public probe
    /// cases and queues it when eligible.
    pub fn submit(
        &self,
        who: &Principal,
        task_id: &str,
        req: &SubmitRequest,
    ) -> Result<SubmitOutcome> {
        if req.baseline {
            who.require_admin()?;
        } else {
            who.require_participant()?;
        }
        if req.name.trim().is_empty() {
            return Err(Error::invalid("model name is empty"));
        }
        let (ds, manifest) = self.active_split(task_id)?;
        resolve_entry(&req.model_ref)?;

        let event = self.journal.commit_with(EventKind::Submitted, |state| {
            let id = format!("sub-{:06}", state.submissions.len() + 1);
            let last = state
                .submissions
                .values()
                .map(|s| s.submission.created_at)
                .max();
            Ok(Submitted {
                submission: Submission {
                    submission_id: id.clone(),
                    task_id: task_id.to_string(),
                    participant_id: who.id.clone(),
                    model_ref: req.model_ref.clone(),
                    declared_name: req.name.clone(),
                    declared_version: req.version.clone(),
                    created_at: unique_after(Utc::now(), last),
                    is_baseline: req.baseline,
                },
                dataset_id: ds.dataset_id.clone(),
                manifest_digest: manifest.manifest_digest.clone(),
                run_seed: run_seed_for(&id, manifest.seed),
            })
        })?;
        let id = event.payload_as::<Submitted>()?.submission.submission_id;
        let (eligibility, position) = self.admit(&id)?;
        Ok(SubmitOutcome {
            submission_id: id,
            eligibility,
            position,
        })
    }

    /// Gates a submitted record and queues it when eligible. Steps already in
    /// the log are not repeated, so this also finishes a gate interrupted by
    /// a crash.
    fn admit(&self, id: &str) -> Result<(EligibilityReport, Option<usize>)> {
        let rec = self.journal.state.read().submission(id)?.clone();
        let eligibility = match rec.eligibility.clone() {
            Some(e) => e,
            None => {
                let ds = self
                    .registry
                    .dataset(&rec.dataset_id)
                    .ok_or_else(|| Error::not_found("dataset", &rec.dataset_id))?;
                let manifest = self
                    .registry
                    .manifest(&rec.manifest_digest)
                    .ok_or_else(|| Error::not_found("split", &rec.manifest_digest))?;
                let probes = gate::probe_cases(&ds, &manifest)?;
                let eligibility = match gate::validate_submission(
                    &rec.submission,
                    &ds.task,
                    &manifest,
                    &probes,
                ) {
                    Ok(r) => r,
                    Err(e) => failed_eligibility(id, &e),
                };
                let payload = Validated {
                    submission_id: id.to_string(),
                    eligibility: eligibility.clone(),
                };
                self.journal.commit(EventKind::Validated, &payload)?;
                eligibility
            }
        };
        if !eligibility.eligible {
            return Ok((eligibility, None));
        }
        let event = self.journal.commit_with(EventKind::Queued, |state| {
            Ok(Queued {
                submission_id: id.to_string(),
                position: state.queue.len(),
            })
        })?;
        Ok((eligibility, Some(event.payload_as::<Queued>()?.position)))
    }

    fn owned_submission(&self, who: &Principal, id: &str) -> Result<SubmissionRecord> {
        let state = self.journal.state.read();
        let rec = state.submission(id)?;
        if !who.is_admin() && rec.submission.participant_id != who.id {
            return Err(Error::Unauthorized(format!(
                "submission `{id}` belongs to another participant"
            )));
        }
        Ok(rec.clone())
    }

    pub fn submission(&self, who: &Principal, id: &str) -> Result<SubmissionRecord> {
        self.owned_submission(who, id)
    }

    pub fn report(&self, who: &Principal, id: &str) -> Result<EvaluationReport> {
        self.owned_submission(who, id)?;
        self.journal
            .state
            .read()
            .reports
            .get(id)
            .cloned()
            .ok_or_else(|| Error::not_found("report", id))
    }

    /// Public leaderboard view.
    pub fn leaderboard(&self, task_id: &str, filter: &ViewFilter) -> Result<Vec<LeaderboardEntry>> {
        self.journal.state.read().leaderboards.view(task_id, filter)
    }

    /// Takes the oldest queued submission not already being evaluated.
    fn claim(&self) -> Option<String> {
        let state = self.journal.state.read();
        let mut claimed = self.claimed.lock();
        let id = state
            .queue
            .pending()
            .find(|id| !claimed.contains(*id))?
            .to_string();
        claimed.insert(id.clone());
        Some(id)
    }

    /// Evaluates one queued submission. Returns its id, or `None` when the
    /// queue holds nothing unclaimed.
    pub fn work_once(&self) -> Result<Option<String>> {
        let Some(id) = self.claim() else {
            return Ok(None);
        };
        let result = self.evaluate(&id);
        self.claimed.lock().remove(&id);
        result.map(|()| Some(id))
    }

    fn evaluate(&self, id: &str) -> Result<()> {
        let (rec, existing) = {
            let state = self.journal.state.read();
            (
                state.submission(id)?.clone(),
                state.reports.get(id).cloned(),
            )
        };
        let report = match existing {
            // Issued before a restart; only publication is missing.
            Some(report) => report,
            None => {
                let report = self.run_and_compile(&rec)?;
                self.journal
                    .commit(EventKind::ReportIssued, &ReportIssued { report })?;
                self.journal.state.read().reports[id].clone()
            }
        };
        let payload = LeaderboardUpdated {
            task_id: rec.submission.task_id.clone(),
            submission_id: id.to_string(),
            report_digest: report.digest.clone(),
            baseline: rec.submission.is_baseline,
        };
        self.journal
            .commit(EventKind::LeaderboardUpdated, &payload)?;
        info!(submission = id, grade = ?report.grade, "report published");
        Ok(())
    }

    fn run_and_compile(&self, rec: &SubmissionRecord) -> Result<EvaluationReport> {
        let ds = self.dataset(&rec.dataset_id)?;
        let manifest = self.manifest(&rec.manifest_digest)?;
        let task = &ds.task;
        let cases =
            self.registry
                .open_secret(&ds, &manifest, &Principal::admin(WORKER_PRINCIPAL))?;
        let plain: Vec<Case> = cases.iter().map(|c| c.case.clone()).collect();
        let sub = &rec.submission;
        let spec = RunSpec {
            submission_id: &sub.submission_id,
            model_ref: &sub.model_ref,
            task,
            limits: task.limits,
            run_seed: rec.run_seed,
        };

        let clean = self.tracked(&spec, Track::Clean, || run_model(&spec, &plain))?;
        let mut perturbed = None;
        let mut replay = None;
        if clean.completed() {
            if task.perturbed_track() {
                let noisy: Vec<Case> = plain
                    .iter()
                    .map(|c| perturb_case(c, &task.perturbation, rec.run_seed))
                    .collect();
                perturbed =
                    Some(self.tracked(&spec, Track::Perturbed, || run_model(&spec, &noisy))?);
            }
            replay = Some(self.tracked(&spec, Track::Replay, || replay_run(&spec, &plain))?);
        }
        compile_report(&ReportInputs {
            task,
            submission_id: &sub.submission_id,
            participant_id: &sub.participant_id,
            model_name: &sub.declared_name,
            submitted_at: sub.created_at,
            dataset_digest: &ds.content_digest,
            cases: &cases,
            clean: &clean,
            perturbed: perturbed.as_ref(),
            replay: replay.as_ref(),
        })
    }

    /// Runs one track between RUN_STARTED and RUN_FINISHED events. A run that
    /// cannot even start is recorded as a crash.
    fn tracked(
        &self,
        spec: &RunSpec<'_>,
        track: Track,
        run: impl FnOnce() -> Result<RunResult>,
    ) -> Result<RunResult> {
        let id = spec.submission_id.to_string();
        self.journal.commit(
            EventKind::RunStarted,
            &RunStarted {
                submission_id: id.clone(),
                track,
                run_seed: spec.run_seed,
            },
        )?;
        let result = run().unwrap_or_else(|e| {
            warn!(submission = %id, error = %e, "run failed to start");
            RunResult {
                submission_id: id.clone(),
                run_seed: spec.run_seed,
                predictions: Vec::new(),
                total_wall_ms: 0,
                exit: RunExit::Crash,
                handshake_ok: false,
                violation: None,
                detail: Some(e.to_string()),
            }
        });
        let payload = RunFinished {
            submission_id: id,
            track,
            run_seed: spec.run_seed,
            exit: result.exit,
            n_predictions: result.predictions.len(),
            total_wall_ms: result.total_wall_ms,
            detail: result.detail.clone(),
        };
        self.journal.commit(EventKind::RunFinished, &payload)?;
        Ok(result)
    }

    /// Worker loop: evaluates queued submissions until `stop` is set,
    /// polling every `idle` when the queue is empty.
    pub fn run_worker(&self, stop: &AtomicBool, idle: Duration) {
        while !stop.load(Ordering::Relaxed) {
            match self.work_once() {
                Ok(Some(_)) => {}
                Ok(None) => thread::sleep(idle),
                Err(e) => {
                    warn!(error = %e, "evaluation failed");
                    thread::sleep(idle);
                }
            }
        }
    }
}

/// `now`, moved past `last` so creation times stay unique.
fn unique_after(now: DateTime<Utc>, last: Option<DateTime<Utc>>) -> DateTime<Utc> {
    match last {
        Some(last) if now <= last => last + TimeDelta::microseconds(1),
        _ => now,
    }
}

fn failed_eligibility(id: &str, err: &Error) -> EligibilityReport {
    let checks = [
        CheckName::ProtocolHandshake,
        CheckName::PerCaseTime,
        CheckName::ResidentMemory,
        CheckName::CodesInLabelSpace,
        CheckName::ConfidenceRange,
    ]
    .into_iter()
    .map(|check| CheckOutcome {
        check,
        passed: false,
        detail: format!("{}: {err}", err.code()),
    })
    .collect();
    EligibilityReport::from_checks(id, checks)
}
