//! Synthetic triage datasets for demos and end-to-end tests.

use std::fs;
use std::path::Path;

use crate::canonical;
use crate::error::Result;
use crate::fraction::Fraction;
use crate::registry::{Case, FeatureValue, LabelCode, LabelSystem, LabeledCase};
use crate::rng::SplitMix64;
use crate::task::{
    GradeThresholds, PerturbationPolicy, ResourceLimits, TaskDescriptor, TaskPolicy,
};

/// Seed used when none is given.
pub const DEFAULT_SEED: u64 = 20_190_717;

/// Relative class frequencies, cycled when more classes are asked for.
const CLASS_WEIGHTS: [u64; 5] = [5, 3, 2, 2, 1];

pub fn task(task_id: &str, n_labels: usize) -> TaskDescriptor {
    TaskDescriptor {
        task_id: task_id.to_string(),
        label_system: LabelSystem::Triage,
        label_space: (1..=n_labels).map(|i| format!("T{i}")).collect(),
        top_k: n_labels.min(2) as u32,
        limits: ResourceLimits {
            per_case_wall_ms: 2_000,
            total_wall_ms: 120_000,
            max_resident_bytes: 256 << 20,
        },
        perturbation: PerturbationPolicy { magnitude: 0.05 },
        thresholds: GradeThresholds::new(Fraction::new(1, 2), Fraction::new(9, 10)),
        human_gold_rate: Some(Fraction::new(17, 20)),
        policy: TaskPolicy::default(),
    }
}

/// `n_cases` cases over `n_labels` triage classes with skewed priors. Vital
/// signs shift with the class; `sex` and `site` are subgroup tags.
pub fn generate(
    task_id: &str,
    n_cases: usize,
    n_labels: usize,
    seed: u64,
) -> (TaskDescriptor, Vec<LabeledCase>) {
    let task = task(task_id, n_labels);
    let weights: Vec<u64> = (0..n_labels)
        .map(|i| CLASS_WEIGHTS[i % CLASS_WEIGHTS.len()])
        .collect();
    let total: u64 = weights.iter().sum();
    let mut rng = SplitMix64::new(seed);
    let mut cases = Vec::with_capacity(n_cases);
    for i in 0..n_cases {
        let mut draw = rng.below(total);
        let class = weights.iter().position(|w| {
            if draw < *w {
                true
            } else {
                draw -= w;
                false
            }
        });
        let class = class.unwrap_or(0);
        let severity = class as f64;
        let round1 = |x: f64| (x * 10.0).round() / 10.0;
        let mut case = Case {
            case_id: format!("case-{i:04}"),
            features: Default::default(),
            subgroups: Default::default(),
        };
        case.features.insert(
            "age".into(),
            FeatureValue::Number((18.0 + 70.0 * rng.next_unit()).floor()),
        );
        case.features.insert(
            "temperature".into(),
            FeatureValue::Number(round1(37.0 + 0.6 * severity + 0.5 * rng.next_gaussian())),
        );
        case.features.insert(
            "heart_rate".into(),
            FeatureValue::Number(round1(75.0 + 12.0 * severity + 8.0 * rng.next_gaussian())),
        );
        case.features.insert(
            "vitals_trend".into(),
            FeatureValue::Array(
                (0..3)
                    .map(|k| round1(severity * k as f64 + rng.next_gaussian()))
                    .collect(),
            ),
        );
        case.subgroups.insert(
            "sex".into(),
            if rng.below(2) == 0 { "F" } else { "M" }.into(),
        );
        case.subgroups.insert(
            "site".into(),
            if rng.below(3) == 0 { "rural" } else { "urban" }.into(),
        );
        let gold = LabelCode {
            system: task.label_system,
            code: task.label_space[class].clone(),
        };
        cases.push(LabeledCase { case, gold });
    }
    (task, cases)
}

/// Writes `task.json` and `cases.jsonl` into `dir`.
pub fn write_dataset_dir(dir: &Path, task: &TaskDescriptor, cases: &[LabeledCase]) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("task.json"), canonical::to_vec(task)?)?;
    let mut out = Vec::new();
    for c in cases {
        out.extend(canonical::to_vec(c)?);
        out.push(b'\n');
    }
    fs::write(dir.join("cases.jsonl"), out)?;
    Ok(())
}
