//! Isolated model execution: one child process per run, strict
//! request/response over the wire protocol, wall-clock and resident-memory
//! limits.

mod memory;
mod perturb;
pub mod protocol;
mod runner;

use serde::{Deserialize, Serialize};

pub use memory::tree_rss_bytes;
pub use perturb::perturb_case;
pub use protocol::{FromModel, RankedCode, TaskInfo, ToModel, PROTOCOL_VERSION};
pub use runner::{
    check_answer, replay_run, resolve_entry, run_model, RunSpec, GRACE_MS, MEMORY_POLL_MS,
};

/// A model's answer to one case.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Answer {
    /// Codes in rank order with non-increasing confidences.
    Ranked { ranking: Vec<RankedCode> },
    /// The model declined; a human should decide.
    Abstain { confidence: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub case_id: String,
    #[serde(flatten)]
    pub answer: Answer,
    pub wall_ms: u64,
}

impl PredictionRecord {
    pub fn ranked(case_id: impl Into<String>, codes: &[(&str, f64)]) -> Self {
        let ranking = codes
            .iter()
            .map(|(c, p)| RankedCode {
                code: c.to_string(),
                confidence: *p,
            })
            .collect();
        Self {
            case_id: case_id.into(),
            answer: Answer::Ranked { ranking },
            wall_ms: 0,
        }
    }

    pub fn abstain(case_id: impl Into<String>, confidence: f64) -> Self {
        Self {
            case_id: case_id.into(),
            answer: Answer::Abstain { confidence },
            wall_ms: 0,
        }
    }

    pub fn is_ranked(&self) -> bool {
        matches!(self.answer, Answer::Ranked { .. })
    }

    pub fn top1(&self) -> Option<&str> {
        match &self.answer {
            Answer::Ranked { ranking } => ranking.first().map(|r| r.code.as_str()),
            Answer::Abstain { .. } => None,
        }
    }

    /// First `k` ranked codes (all of them if the ranking is shorter).
    pub fn top_k(&self, k: usize) -> impl Iterator<Item = &str> {
        let ranking: &[RankedCode] = match &self.answer {
            Answer::Ranked { ranking } => ranking,
            Answer::Abstain { .. } => &[],
        };
        ranking.iter().take(k).map(|r| r.code.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RunExit {
    Completed,
    Timeout,
    MemoryExceeded,
    ProtocolError,
    Crash,
}

/// Which protocol rule a model broke.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Violation {
    /// Not a JSON object of a known message type.
    Malformed,
    /// Well-formed message in the wrong place, e.g. a second `ready`.
    UnexpectedMessage,
    WrongCaseId,
    UnknownCode,
    ConfidenceOutOfRange,
    /// Empty ranking, repeated code, or increasing confidences.
    InvalidRanking,
    OutputAfterEnd,
    ExitStatusAfterEnd,
    LineTooLong,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub submission_id: String,
    pub run_seed: u64,
    pub predictions: Vec<PredictionRecord>,
    /// Wall clock of the whole run, handshake to reap.
    pub total_wall_ms: u64,
    pub exit: RunExit,
    /// Whether the hello/ready exchange succeeded.
    pub handshake_ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub violation: Option<Violation>,
    /// Human-readable reason for a non-completed exit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl RunResult {
    pub fn completed(&self) -> bool {
        self.exit == RunExit::Completed
    }
}
