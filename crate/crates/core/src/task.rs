//! Benchmark task definition: label space, metric configuration, resource
//! limits, perturbation and grading thresholds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fraction::Fraction;
use crate::registry::{LabelCode, LabelSystem};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskDescriptor {
    pub task_id: String,
    pub label_system: LabelSystem,
    /// Ordered, duplicate-free set of codes.
    pub label_space: Vec<String>,
    pub top_k: u32,
    pub limits: ResourceLimits,
    #[serde(default)]
    pub perturbation: PerturbationPolicy,
    pub thresholds: GradeThresholds,
    #[serde(default)]
    pub human_gold_rate: Option<Fraction>,
    #[serde(default)]
    pub policy: TaskPolicy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceLimits {
    pub per_case_wall_ms: u64,
    pub total_wall_ms: u64,
    pub max_resident_bytes: u64,
}

/// Multiplicative Gaussian noise on numeric features; `magnitude` is the
/// relative standard deviation. Zero disables the perturbed track.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PerturbationPolicy {
    pub magnitude: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GradeThresholds {
    pub theta_ds: Fraction,
    pub theta_auto: Fraction,
    #[serde(default = "default_min_coverage")]
    pub min_coverage: Fraction,
}

fn default_min_coverage() -> Fraction {
    Fraction::new(7, 10)
}

impl GradeThresholds {
    pub fn new(theta_ds: Fraction, theta_auto: Fraction) -> Self {
        Self {
            theta_ds,
            theta_auto,
            min_coverage: default_min_coverage(),
        }
    }
}

/// Which clean-run metric orders the leaderboard.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankingMetric {
    #[default]
    Top1All,
    TopkAll,
    Top1Selective,
}

/// Policy switches left open to the task owner.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskPolicy {
    #[serde(default = "yes")]
    pub export_subgroups: bool,
    #[serde(default)]
    pub hide_failed_entries: bool,
    #[serde(default)]
    pub ranking_metric: RankingMetric,
}

fn yes() -> bool {
    true
}

impl Default for TaskPolicy {
    fn default() -> Self {
        Self {
            export_subgroups: true,
            hide_failed_entries: false,
            ranking_metric: RankingMetric::Top1All,
        }
    }
}

impl TaskDescriptor {
    pub fn validate(&self) -> Result<()> {
        if self.task_id.is_empty() {
            return Err(Error::invalid("task_id is empty"));
        }
        if self.label_space.is_empty() {
            return Err(Error::invalid("label_space is empty"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for code in &self.label_space {
            LabelCode::check_code(code)?;
            if !seen.insert(code.as_str()) {
                return Err(Error::invalid(format!("label `{code}` listed twice")));
            }
        }
        if self.top_k == 0 || self.top_k as usize > self.label_space.len() {
            return Err(Error::invalid(format!(
                "top_k {} must be within 1..={}",
                self.top_k,
                self.label_space.len()
            )));
        }
        self.limits.validate()?;
        if !(self.perturbation.magnitude.is_finite() && self.perturbation.magnitude >= 0.0) {
            return Err(Error::invalid(
                "perturbation magnitude must be finite and >= 0",
            ));
        }
        self.thresholds.validate()?;
        if let Some(rate) = self.human_gold_rate {
            if !rate.in_unit_interval() {
                return Err(Error::invalid("human_gold_rate must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn contains_label(&self, code: &str) -> bool {
        self.label_space.iter().any(|c| c == code)
    }

    pub fn perturbed_track(&self) -> bool {
        self.perturbation.magnitude > 0.0
    }
}

impl ResourceLimits {
    pub fn validate(&self) -> Result<()> {
        if self.per_case_wall_ms == 0 || self.total_wall_ms == 0 || self.max_resident_bytes == 0 {
            return Err(Error::invalid("resource limits must be positive"));
        }
        if self.per_case_wall_ms > self.total_wall_ms {
            return Err(Error::invalid("per_case_wall_ms exceeds total_wall_ms"));
        }
        Ok(())
    }
}

impl GradeThresholds {
    pub fn validate(&self) -> Result<()> {
        let ordered = Fraction::ZERO <= self.theta_ds
            && self.theta_ds <= self.theta_auto
            && self.theta_auto <= Fraction::ONE;
        if !ordered {
            return Err(Error::invalid(
                "thresholds must satisfy 0 <= theta_ds <= theta_auto <= 1",
            ));
        }
        if !self.min_coverage.in_unit_interval() {
            return Err(Error::invalid("min_coverage must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) fn sample_task(labels: &[&str]) -> TaskDescriptor {
    TaskDescriptor {
        task_id: "triage-demo".into(),
        label_system: LabelSystem::Triage,
        label_space: labels.iter().map(|s| s.to_string()).collect(),
        top_k: labels.len().min(2) as u32,
        limits: ResourceLimits {
            per_case_wall_ms: 2_000,
            total_wall_ms: 60_000,
            max_resident_bytes: 512 << 20,
        },
        perturbation: PerturbationPolicy { magnitude: 0.1 },
        thresholds: GradeThresholds::new(Fraction::new(1, 2), Fraction::new(9, 10)),
        human_gold_rate: None,
        policy: TaskPolicy::default(),
    }
}
