//! Per-task leaderboards with two-tier grading and baseline comparison.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fraction::Fraction;
use crate::harness::RunExit;
use crate::metrics::{EvaluationReport, MetricBlock};
use crate::task::{GradeThresholds, RankingMetric, TaskDescriptor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Grade {
    Fail,
    DecisionSupport,
    Autonomous,
}

fn grade_block(block: &MetricBlock, th: &GradeThresholds) -> Grade {
    if block.top1_all >= th.theta_auto {
        Grade::Autonomous
    } else if block.top1_selective >= th.theta_ds && block.coverage >= th.min_coverage {
        Grade::DecisionSupport
    } else {
        Grade::Fail
    }
}

/// Autonomous use counts abstentions as errors; decision support judges
/// answered cases only but demands minimum coverage, since every abstention
/// goes to a human.
pub fn classify(report: &EvaluationReport, thresholds: &GradeThresholds) -> Grade {
    match &report.clean {
        Some(block) if report.exit == RunExit::Completed => grade_block(block, thresholds),
        _ => Grade::Fail,
    }
}

/// Where an entry came from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum EntrySource {
    Report {
        report_digest: String,
        submission_id: String,
        participant_id: String,
        model_name: String,
    },
    HumanGold,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    pub rank: u32,
    pub is_baseline: bool,
    #[serde(flatten)]
    pub source: EntrySource,
    /// Value of the task's ranking metric on the clean run.
    pub score: Option<Fraction>,
    pub robustness_ratio: Option<Fraction>,
    pub total_wall_ms: Option<u64>,
    pub created_at: DateTime<Utc>,
    pub grade: Grade,
    /// Score minus the best baseline score, when both exist.
    pub delta_to_best_baseline: Option<Fraction>,
}

impl LeaderboardEntry {
    /// Unique key: report digest, or the pseudo-entry marker.
    pub fn key(&self) -> &str {
        match &self.source {
            EntrySource::Report { report_digest, .. } => report_digest,
            EntrySource::HumanGold => "human-gold",
        }
    }

    pub fn participant(&self) -> Option<&str> {
        match &self.source {
            EntrySource::Report { participant_id, .. } => Some(participant_id),
            EntrySource::HumanGold => None,
        }
    }
}

/// Higher is better; absent sorts last.
fn desc<T: Ord>(a: &Option<T>, b: &Option<T>) -> Ordering {
    match (a, b) {
        (Some(x), Some(y)) => y.cmp(x),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => Ordering::Equal,
    }
}

/// Lower is better; absent sorts last.
fn asc<T: Ord>(a: &Option<T>, b: &Option<T>) -> Ordering {
    match (a, b) {
        (Some(x), Some(y)) => x.cmp(y),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => Ordering::Equal,
    }
}

/// Ranking order: score desc, robustness desc, total wall time asc,
/// creation time asc, then entry key.
pub fn ranking_order(a: &LeaderboardEntry, b: &LeaderboardEntry) -> Ordering {
    desc(&a.score, &b.score)
        .then_with(|| desc(&a.robustness_ratio, &b.robustness_ratio))
        .then_with(|| asc(&a.total_wall_ms, &b.total_wall_ms))
        .then_with(|| a.created_at.cmp(&b.created_at))
        .then_with(|| a.key().cmp(b.key()))
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewFilter {
    #[serde(default)]
    pub participant: Option<String>,
    #[serde(default)]
    pub grade: Option<Grade>,
    #[serde(default)]
    pub baseline: Option<bool>,
}

impl ViewFilter {
    fn admits(&self, e: &LeaderboardEntry) -> bool {
        self.participant
            .as_deref()
            .map_or(true, |p| e.participant() == Some(p))
            && self.grade.map_or(true, |g| e.grade == g)
            && self.baseline.map_or(true, |b| e.is_baseline == b)
    }
}

/// One task's board. Entries are kept in rank order with dense ranks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Leaderboard {
    pub task: TaskDescriptor,
    entries: Vec<LeaderboardEntry>,
}

impl Leaderboard {
    pub fn new(task: TaskDescriptor) -> Self {
        Self {
            task,
            entries: Vec::new(),
        }
    }

    pub fn entries(&self) -> &[LeaderboardEntry] {
        &self.entries
    }

    fn score_of(&self, block: &MetricBlock) -> Fraction {
        match self.task.policy.ranking_metric {
            RankingMetric::Top1All => block.top1_all,
            RankingMetric::TopkAll => block.topk_all,
            RankingMetric::Top1Selective => block.top1_selective,
        }
    }

    fn entry_for(&self, report: &EvaluationReport, is_baseline: bool) -> Result<LeaderboardEntry> {
        if report.task_id != self.task.task_id {
            return Err(Error::TaskMismatch {
                expected: self.task.task_id.clone(),
                found: report.task_id.clone(),
            });
        }
        if report.digest.is_empty() {
            return Err(Error::invalid("report is not digest-stamped"));
        }
        Ok(LeaderboardEntry {
            rank: 0,
            is_baseline,
            source: EntrySource::Report {
                report_digest: report.digest.clone(),
                submission_id: report.submission_id.clone(),
                participant_id: report.participant_id.clone(),
                model_name: report.model_name.clone(),
            },
            score: report.clean.as_ref().map(|b| self.score_of(b)),
            robustness_ratio: report.robustness_ratio,
            total_wall_ms: Some(report.timing.total_wall_ms),
            created_at: report.submitted_at,
            grade: report.grade,
            delta_to_best_baseline: None,
        })
    }

    /// Inserts a report; re-inserting the same digest returns the existing entry.
    pub fn insert(&mut self, report: &EvaluationReport) -> Result<LeaderboardEntry> {
        let entry = self.entry_for(report, false)?;
        Ok(self.place(entry))
    }

    /// Inserts a report flagged as a baseline.
    pub fn set_baseline(&mut self, report: &EvaluationReport) -> Result<LeaderboardEntry> {
        let entry = self.entry_for(report, true)?;
        Ok(self.place(entry))
    }

    /// Adds the human gold-standard rate as a baseline pseudo-entry without
    /// timing. Humans answer every case, so coverage is taken as 1.
    pub fn set_human_baseline(
        &mut self,
        rate: Fraction,
        created_at: DateTime<Utc>,
    ) -> Result<LeaderboardEntry> {
        if !rate.in_unit_interval() {
            return Err(Error::invalid("human gold rate must lie in [0, 1]"));
        }
        let block = MetricBlock {
            top1_all: rate,
            topk_all: rate,
            coverage: Fraction::ONE,
            top1_selective: rate,
            n_cases: 0,
        };
        let entry = LeaderboardEntry {
            rank: 0,
            is_baseline: true,
            source: EntrySource::HumanGold,
            score: Some(rate),
            robustness_ratio: None,
            total_wall_ms: None,
            created_at,
            grade: grade_block(&block, &self.task.thresholds),
            delta_to_best_baseline: None,
        };
        Ok(self.place(entry))
    }

    fn place(&mut self, entry: LeaderboardEntry) -> LeaderboardEntry {
        if let Some(existing) = self.entries.iter().find(|e| e.key() == entry.key()) {
            return existing.clone();
        }
        let key = entry.key().to_string();
        let at = self
            .entries
            .partition_point(|e| ranking_order(e, &entry) == Ordering::Less);
        self.entries.insert(at, entry);
        self.refresh();
        self.entries
            .iter()
            .find(|e| e.key() == key)
            .cloned()
            .expect("just inserted")
    }

    fn refresh(&mut self) {
        let best = self
            .entries
            .iter()
            .filter(|e| e.is_baseline)
            .filter_map(|e| e.score)
            .max();
        for (i, e) in self.entries.iter_mut().enumerate() {
            e.rank = i as u32 + 1;
            e.delta_to_best_baseline = match (e.score, best) {
                (Some(s), Some(b)) => Some(s - b),
                _ => None,
            };
        }
    }

    /// Entries in rank order, filtered. FAIL entries are hidden when the task
    /// policy asks for it; ranks are unaffected.
    pub fn view(&self, filter: &ViewFilter) -> Vec<LeaderboardEntry> {
        self.entries
            .iter()
            .filter(|e| !(self.task.policy.hide_failed_entries && e.grade == Grade::Fail))
            .filter(|e| filter.admits(e))
            .cloned()
            .collect()
    }
}

/// All boards, keyed by task id.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Leaderboards {
    boards: BTreeMap<String, Leaderboard>,
}

impl Leaderboards {
    /// Creates the board if absent; an existing board keeps its entries.
    pub fn ensure_task(&mut self, task: &TaskDescriptor) -> &mut Leaderboard {
        self.boards
            .entry(task.task_id.clone())
            .or_insert_with(|| Leaderboard::new(task.clone()))
    }

    pub fn board(&self, task_id: &str) -> Result<&Leaderboard> {
        self.boards
            .get(task_id)
            .ok_or_else(|| Error::UnknownTask(task_id.to_string()))
    }

    pub fn board_mut(&mut self, task_id: &str) -> Result<&mut Leaderboard> {
        self.boards
            .get_mut(task_id)
            .ok_or_else(|| Error::UnknownTask(task_id.to_string()))
    }

    pub fn insert(&mut self, task_id: &str, report: &EvaluationReport) -> Result<LeaderboardEntry> {
        self.board_mut(task_id)?.insert(report)
    }

    pub fn set_baseline(
        &mut self,
        task_id: &str,
        report: &EvaluationReport,
    ) -> Result<LeaderboardEntry> {
        self.board_mut(task_id)?.set_baseline(report)
    }

    pub fn view(&self, task_id: &str, filter: &ViewFilter) -> Result<Vec<LeaderboardEntry>> {
        Ok(self.board(task_id)?.view(filter))
    }

    pub fn task_ids(&self) -> impl Iterator<Item = &str> {
        self.boards.keys().map(String::as_str)
    }
}

fn show(f: &Option<Fraction>) -> String {
    f.map_or_else(|| "-".to_string(), |v| v.decimal())
}

/// Plain-text table for terminals.
pub fn render_table(task_id: &str, entries: &[LeaderboardEntry]) -> String {
    let names: Vec<(String, &str)> = entries
        .iter()
        .map(|e| {
            let (name, who) = match &e.source {
                EntrySource::Report {
                    model_name,
                    participant_id,
                    ..
                } => (model_name.as_str(), participant_id.as_str()),
                EntrySource::HumanGold => ("human gold standard", "-"),
            };
            let name = if e.is_baseline {
                format!("{name} [baseline]")
            } else {
                name.to_string()
            };
            (name, who)
        })
        .collect();
    let w = names.iter().map(|(n, _)| n.chars().count()).max().unwrap_or(0).max(24);
    let mut out = String::new();
    let _ = writeln!(out, "leaderboard: {task_id}");
    let _ = writeln!(
        out,
        "{:>4}  {:<w$} {:<14} {:>9} {:>10} {:>10} {:>9}  {}",
        "rank", "model", "participant", "score", "robust", "delta", "wall_ms", "grade"
    );
    for (e, (name, who)) in entries.iter().zip(&names) {
        let grade = match e.grade {
            Grade::Fail => "FAIL",
            Grade::DecisionSupport => "DECISION_SUPPORT",
            Grade::Autonomous => "AUTONOMOUS",
        };
        let _ = writeln!(
            out,
            "{:>4}  {:<w$} {:<14} {:>9} {:>10} {:>10} {:>9}  {}",
            e.rank,
            name,
            who,
            show(&e.score),
            show(&e.robustness_ratio),
            e.delta_to_best_baseline
                .map_or_else(|| "-".to_string(), |d| d.signed_decimal()),
            e.total_wall_ms
                .map_or_else(|| "-".to_string(), |t| t.to_string()),
            grade
        );
    }
    out
}
