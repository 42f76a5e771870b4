//! Submission intake: eligibility checks on public probe cases, then the
//! FIFO evaluation queue.

mod queue;

use std::path::PathBuf;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{resolve_entry, run_model, RunExit, RunResult, RunSpec, Violation};
use crate::registry::{Case, Dataset, SplitManifest};

pub use crate::task::{ResourceLimits, TaskDescriptor};
pub use queue::{EvaluationQueue, QueuePosition};

/// Probe cases used for eligibility: at most this many.
pub const MAX_PROBE_CASES: usize = 5;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Submission {
    pub submission_id: String,
    pub task_id: String,
    pub participant_id: String,
    /// Executable file, or directory with a `run` entry point.
    pub model_ref: PathBuf,
    pub declared_name: String,
    pub declared_version: String,
    pub created_at: DateTime<Utc>,
    /// Admin-designated reference model.
    #[serde(default)]
    pub is_baseline: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckName {
    ProtocolHandshake,
    PerCaseTime,
    ResidentMemory,
    CodesInLabelSpace,
    ConfidenceRange,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub check: CheckName,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EligibilityReport {
    pub submission_id: String,
    pub eligible: bool,
    pub checks: Vec<CheckOutcome>,
}

impl EligibilityReport {
    /// Builds the report; `eligible` is derived from the checks.
    pub fn from_checks(submission_id: impl Into<String>, checks: Vec<CheckOutcome>) -> Self {
        let eligible = checks.iter().all(|c| c.passed);
        Self {
            submission_id: submission_id.into(),
            eligible,
            checks,
        }
    }

    /// True when `eligible` agrees with the checks.
    pub fn is_consistent(&self) -> bool {
        self.eligible == self.checks.iter().all(|c| c.passed)
    }
}

/// The lexicographically smallest train case ids, at most [`MAX_PROBE_CASES`],
/// stripped of gold labels.
pub fn probe_cases(dataset: &Dataset, manifest: &SplitManifest) -> Result<Vec<Case>> {
    manifest.check_belongs_to(dataset)?;
    let mut ids: Vec<&String> = manifest.train_ids.iter().collect();
    ids.sort_unstable();
    ids.into_iter()
        .take(MAX_PROBE_CASES)
        .map(|id| {
            dataset
                .case(id)
                .map(|c| c.case.clone())
                .ok_or_else(|| Error::ManifestMismatch(dataset.dataset_id.clone()))
        })
        .collect()
}

/// Runs the model on public probe cases and records the five checks.
///
/// Every probe case must be a train case of `manifest`; the secret split is
/// never touched. Check failures are report content, not errors.
pub fn validate_submission(
    sub: &Submission,
    task: &TaskDescriptor,
    manifest: &SplitManifest,
    probes: &[Case],
) -> Result<EligibilityReport> {
    if let Some(leak) = probes.iter().find(|c| !manifest.is_train(&c.case_id)) {
        return Err(Error::invalid(format!(
            "probe case `{}` is not in the public split",
            leak.case_id
        )));
    }
    if probes.is_empty() {
        return Err(Error::invalid("no probe cases"));
    }
    resolve_entry(&sub.model_ref)?;
    let spec = RunSpec {
        submission_id: &sub.submission_id,
        model_ref: &sub.model_ref,
        task,
        limits: task.limits,
        run_seed: 0,
    };
    let run = run_model(&spec, probes)?;
    Ok(EligibilityReport::from_checks(
        &sub.submission_id,
        checks_for(&run, task),
    ))
}

fn outcome(check: CheckName, passed: bool, ok: &str, why: impl FnOnce() -> String) -> CheckOutcome {
    CheckOutcome {
        check,
        passed,
        detail: if passed { ok.to_string() } else { why() },
    }
}

/// Maps a probe run onto the five eligibility checks. All pass iff the run
/// completed.
pub fn checks_for(run: &RunResult, task: &TaskDescriptor) -> Vec<CheckOutcome> {
    let detail = || run.detail.clone().unwrap_or_default();
    let attributable = matches!(
        run.violation,
        Some(Violation::UnknownCode | Violation::ConfidenceOutOfRange)
    );
    let conversation_ok = run.handshake_ok
        && match run.exit {
            RunExit::ProtocolError => attributable,
            RunExit::Crash => false,
            RunExit::Completed | RunExit::Timeout | RunExit::MemoryExceeded => true,
        };
    vec![
        outcome(
            CheckName::ProtocolHandshake,
            conversation_ok,
            "handshake and exchange conform",
            || {
                if run.handshake_ok {
                    format!("{:?}: {}", run.exit, detail())
                } else {
                    format!("no ready message: {}", detail())
                }
            },
        ),
        outcome(
            CheckName::PerCaseTime,
            run.exit != RunExit::Timeout,
            "every probe answered in time",
            || format!("limit {} ms: {}", task.limits.per_case_wall_ms, detail()),
        ),
        outcome(
            CheckName::ResidentMemory,
            run.exit != RunExit::MemoryExceeded,
            "resident memory within limit",
            detail,
        ),
        outcome(
            CheckName::CodesInLabelSpace,
            run.violation != Some(Violation::UnknownCode),
            "all codes in label space",
            detail,
        ),
        outcome(
            CheckName::ConfidenceRange,
            run.violation != Some(Violation::ConfidenceOutOfRange),
            "all confidences in [0, 1]",
            detail,
        ),
    ]
}
