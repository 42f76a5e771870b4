use std::collections::BTreeSet;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{
    gold_map, reproducibility_agreement, robustness_ratio, subgroup_disparity, MetricBlock,
};
use crate::canonical;
use crate::error::{Error, Result};
use crate::fraction::Fraction;
use crate::harness::{PredictionRecord, RunExit, RunResult};
use crate::leaderboard::{classify, Grade};
use crate::registry::{Case, LabeledCase};
use crate::task::TaskDescriptor;

/// Placeholder for quality dimensions without a measurement procedure.
pub const NOT_ASSESSED: &str = "not assessed";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubgroupDisparity {
    pub subgroup_key: String,
    pub disparity: Fraction,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timing {
    pub total_wall_ms: u64,
    pub mean_case_ms: Fraction,
    pub max_case_ms: u64,
}

/// Reserved cost columns; only wall-clock time is measured today.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Costs {
    pub monetary: Option<String>,
    pub energy: Option<String>,
}

/// What a participant gets back for one evaluated submission.
///
/// Metric fields are absent when the clean run did not complete. The
/// `digest` is the SHA-256 of the canonical report with `digest` omitted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub submission_id: String,
    pub task_id: String,
    pub participant_id: String,
    pub model_name: String,
    pub submitted_at: DateTime<Utc>,
    pub dataset_digest: String,
    pub run_seed: u64,
    pub exit: RunExit,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clean: Option<MetricBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbed: Option<MetricBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robustness_ratio: Option<Fraction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reproducibility_agreement: Option<Fraction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<Vec<SubgroupDisparity>>,
    pub timing: Timing,
    pub grade: Grade,
    pub explainability: String,
    pub interpretability: String,
    pub costs: Costs,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub digest: String,
}

impl EvaluationReport {
    pub fn compute_digest(&self) -> Result<String> {
        let mut body = self.clone();
        body.digest.clear();
        canonical::digest(&body)
    }

    pub fn verify_digest(&self) -> Result<()> {
        if self.compute_digest()? != self.digest {
            return Err(Error::invalid(format!(
                "report for `{}` fails digest check",
                self.submission_id
            )));
        }
        Ok(())
    }

    /// Canonical JSON bytes, digest included.
    pub fn canonical_bytes(&self) -> Result<Vec<u8>> {
        canonical::to_vec(self)
    }
}

/// Everything `compile_report` reads.
#[derive(Clone, Copy, Debug)]
pub struct ReportInputs<'a> {
    pub task: &'a TaskDescriptor,
    pub submission_id: &'a str,
    pub participant_id: &'a str,
    pub model_name: &'a str,
    pub submitted_at: DateTime<Utc>,
    pub dataset_digest: &'a str,
    /// Secret test cases in manifest order.
    pub cases: &'a [LabeledCase],
    pub clean: &'a RunResult,
    /// Required when the task has a perturbation track.
    pub perturbed: Option<&'a RunResult>,
    pub replay: Option<&'a RunResult>,
}

/// Builds the digest-stamped report. A clean run that did not complete yields
/// a FAIL report without metric fields. Auxiliary runs that did not complete
/// are scored conservatively: missing perturbed answers count as misses, and
/// an incomplete replay agrees on nothing.
pub fn compile_report(inputs: &ReportInputs<'_>) -> Result<EvaluationReport> {
    let task = inputs.task;
    let clean = inputs.clean;
    let mut report = EvaluationReport {
        submission_id: inputs.submission_id.to_string(),
        task_id: task.task_id.clone(),
        participant_id: inputs.participant_id.to_string(),
        model_name: inputs.model_name.to_string(),
        submitted_at: inputs.submitted_at,
        dataset_digest: inputs.dataset_digest.to_string(),
        run_seed: clean.run_seed,
        exit: clean.exit,
        detail: clean.detail.clone(),
        clean: None,
        perturbed: None,
        robustness_ratio: None,
        reproducibility_agreement: None,
        bias: None,
        timing: timing(clean),
        grade: Grade::Fail,
        explainability: NOT_ASSESSED.into(),
        interpretability: NOT_ASSESSED.into(),
        costs: Costs::default(),
        digest: String::new(),
    };

    if clean.completed() {
        let ids_match = clean.predictions.len() == inputs.cases.len()
            && clean
                .predictions
                .iter()
                .zip(inputs.cases)
                .all(|(p, c)| p.case_id == c.case_id());
        if !ids_match {
            return Err(Error::RunMismatch(
                "clean run does not cover the test cases in order".into(),
            ));
        }
        let gold = gold_map(inputs.cases);
        let k = task.top_k as usize;
        let clean_block = MetricBlock::compute(&clean.predictions, &gold, k)?;

        if task.perturbed_track() {
            let run = inputs.perturbed.ok_or_else(|| {
                Error::invalid("task has a perturbation track but no perturbed run was given")
            })?;
            if run.run_seed != clean.run_seed {
                return Err(Error::RunMismatch(
                    "perturbed run used a different seed".into(),
                ));
            }
            let padded = pad_with_misses(run, inputs.cases);
            let block = MetricBlock::compute(&padded, &gold, k)?;
            report.robustness_ratio = Some(robustness_ratio(&clean_block, &block));
            report.perturbed = Some(block);
        }

        report.reproducibility_agreement = match inputs.replay {
            Some(replay) if replay.completed() => Some(reproducibility_agreement(clean, replay)?),
            Some(_) => Some(Fraction::ZERO),
            None => None,
        };

        let plain: Vec<Case> = inputs.cases.iter().map(|c| c.case.clone()).collect();
        let keys: BTreeSet<&String> = plain.iter().flat_map(|c| c.subgroups.keys()).collect();
        let mut bias = Vec::with_capacity(keys.len());
        for key in keys {
            bias.push(SubgroupDisparity {
                subgroup_key: key.clone(),
                disparity: subgroup_disparity(&clean.predictions, &gold, &plain, key)?,
            });
        }
        report.bias = Some(bias);
        report.clean = Some(clean_block);
    }

    report.grade = classify(&report, &task.thresholds);
    report.digest = report.compute_digest()?;
    Ok(report)
}

fn timing(run: &RunResult) -> Timing {
    let n = run.predictions.len();
    let sum: u64 = run.predictions.iter().map(|p| p.wall_ms).sum();
    Timing {
        total_wall_ms: run.total_wall_ms,
        mean_case_ms: Fraction::ratio_or(sum as usize, n, Fraction::ZERO),
        max_case_ms: run.predictions.iter().map(|p| p.wall_ms).max().unwrap_or(0),
    }
}

/// One prediction per case, in case order; cases the run never reached
/// become abstentions.
fn pad_with_misses(run: &RunResult, cases: &[LabeledCase]) -> Vec<PredictionRecord> {
    cases
        .iter()
        .map(|c| {
            run.predictions
                .iter()
                .find(|p| p.case_id == c.case_id())
                .cloned()
                .unwrap_or_else(|| PredictionRecord::abstain(c.case_id(), 0.0))
        })
        .collect()
}
