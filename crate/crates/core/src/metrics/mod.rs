//! Counting metrics over model predictions, all in exact rationals.

mod report;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fraction::Fraction;
use crate::harness::{Answer, PredictionRecord, RunResult};
use crate::registry::{Case, LabeledCase};

pub use report::{
    compile_report, Costs, EvaluationReport, ReportInputs, SubgroupDisparity, Timing, NOT_ASSESSED,
};

/// Case id to gold code.
pub type GoldMap = HashMap<String, String>;

/// Subgroup bucket for cases that lack the key.
pub const MISSING_SUBGROUP: &str = "∅";

pub fn gold_map(cases: &[LabeledCase]) -> GoldMap {
    cases
        .iter()
        .map(|c| (c.case_id().to_string(), c.gold.code.clone()))
        .collect()
}

fn gold_of<'a>(gold: &'a GoldMap, case_id: &str) -> Result<&'a str> {
    gold.get(case_id)
        .map(String::as_str)
        .ok_or_else(|| Error::MissingGold(case_id.to_string()))
}

fn hit_at(p: &PredictionRecord, gold: &str, k: usize) -> bool {
    p.top_k(k).any(|code| code == gold)
}

/// Share of cases whose gold code is among the first `k` ranked codes.
/// Abstentions are misses.
pub fn top_k_accuracy(
    predictions: &[PredictionRecord],
    gold: &GoldMap,
    k: usize,
) -> Result<Fraction> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let mut hits = 0;
    for p in predictions {
        if hit_at(p, gold_of(gold, &p.case_id)?, k) {
            hits += 1;
        }
    }
    Ok(Fraction::ratio_or(hits, predictions.len(), Fraction::ZERO))
}

/// Share of predictions that are ranked answers rather than abstentions.
pub fn coverage(predictions: &[PredictionRecord]) -> Fraction {
    let answered = predictions.iter().filter(|p| p.is_ranked()).count();
    Fraction::ratio_or(answered, predictions.len(), Fraction::ZERO)
}

/// Top-1 accuracy among answered cases; 1 when nothing was answered.
pub fn top1_selective(predictions: &[PredictionRecord], gold: &GoldMap) -> Result<Fraction> {
    let mut answered = 0;
    let mut hits = 0;
    for p in predictions {
        let g = gold_of(gold, &p.case_id)?;
        if p.is_ranked() {
            answered += 1;
            if hit_at(p, g, 1) {
                hits += 1;
            }
        }
    }
    Ok(Fraction::ratio_or(hits, answered, Fraction::ONE))
}

/// Headline numbers of one run.
///
/// `top1_selective * coverage == top1_all` holds exactly.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricBlock {
    pub top1_all: Fraction,
    pub topk_all: Fraction,
    pub coverage: Fraction,
    pub top1_selective: Fraction,
    pub n_cases: u64,
}

impl MetricBlock {
    pub fn compute(predictions: &[PredictionRecord], gold: &GoldMap, k: usize) -> Result<Self> {
        Ok(Self {
            top1_all: top_k_accuracy(predictions, gold, 1)?,
            topk_all: top_k_accuracy(predictions, gold, k)?,
            coverage: coverage(predictions),
            top1_selective: top1_selective(predictions, gold)?,
            n_cases: predictions.len() as u64,
        })
    }
}

/// Max minus min top-1 accuracy across the values of `subgroup_key`.
///
/// Every case in `cases` counts; a case with no prediction is a miss, a case
/// without the key falls in the [`MISSING_SUBGROUP`] bucket.
pub fn subgroup_disparity(
    predictions: &[PredictionRecord],
    gold: &GoldMap,
    cases: &[Case],
    subgroup_key: &str,
) -> Result<Fraction> {
    let by_case: HashMap<&str, &PredictionRecord> = predictions
        .iter()
        .map(|p| (p.case_id.as_str(), p))
        .collect();
    let mut groups: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for case in cases {
        let value = case
            .subgroups
            .get(subgroup_key)
            .map_or(MISSING_SUBGROUP, String::as_str);
        let g = gold_of(gold, &case.case_id)?;
        let hit = by_case
            .get(case.case_id.as_str())
            .is_some_and(|p| hit_at(p, g, 1));
        let slot = groups.entry(value).or_default();
        slot.1 += 1;
        if hit {
            slot.0 += 1;
        }
    }
    let rates: Vec<Fraction> = groups
        .values()
        .map(|&(h, n)| Fraction::new(h as i64, n as i64))
        .collect();
    match (rates.iter().max(), rates.iter().min()) {
        (Some(&hi), Some(&lo)) => Ok(hi - lo),
        _ => Ok(Fraction::ZERO),
    }
}

/// `min(1, perturbed.top1_all / clean.top1_all)`, 1 when clean accuracy is 0.
pub fn robustness_ratio(clean: &MetricBlock, perturbed: &MetricBlock) -> Fraction {
    if clean.top1_all.is_zero() {
        return Fraction::ONE;
    }
    (perturbed.top1_all / clean.top1_all).min(Fraction::ONE)
}

fn agrees(a: &PredictionRecord, b: &PredictionRecord) -> bool {
    match (&a.answer, &b.answer) {
        (Answer::Abstain { .. }, Answer::Abstain { .. }) => true,
        (Answer::Ranked { .. }, Answer::Ranked { .. }) => a.top1() == b.top1(),
        _ => false,
    }
}

/// Share of cases on which two completed runs give the same kind of answer
/// and, when ranked, the same top-1 code.
pub fn reproducibility_agreement(run_a: &RunResult, run_b: &RunResult) -> Result<Fraction> {
    if !run_a.completed() || !run_b.completed() {
        return Err(Error::RunMismatch("both runs must have completed".into()));
    }
    if run_a.run_seed != run_b.run_seed {
        return Err(Error::RunMismatch(format!(
            "seeds {} and {} differ",
            run_a.run_seed, run_b.run_seed
        )));
    }
    let same_cases = run_a.predictions.len() == run_b.predictions.len()
        && run_a
            .predictions
            .iter()
            .zip(&run_b.predictions)
            .all(|(a, b)| a.case_id == b.case_id);
    if !same_cases {
        return Err(Error::RunMismatch("runs cover different cases".into()));
    }
    let agreeing = run_a
        .predictions
        .iter()
        .zip(&run_b.predictions)
        .filter(|(a, b)| agrees(a, b))
        .count();
    Ok(Fraction::ratio_or(
        agreeing,
        run_a.predictions.len(),
        Fraction::ONE,
    ))
}
