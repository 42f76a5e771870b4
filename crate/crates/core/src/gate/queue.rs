use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::{EligibilityReport, Submission};
use crate::error::{Error, Result};

/// 0-based position in the evaluation queue at enqueue time.
pub type QueuePosition = usize;

/// FIFO of eligible submission ids. A submission can be enqueued once.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluationQueue {
    pending: VecDeque<String>,
    seen: BTreeSet<String>,
}

impl EvaluationQueue {
    pub fn enqueue(
        &mut self,
        sub: &Submission,
        report: &EligibilityReport,
    ) -> Result<QueuePosition> {
        if !report.eligible || !report.is_consistent() || report.submission_id != sub.submission_id
        {
            return Err(Error::NotEligible(sub.submission_id.clone()));
        }
        if !self.seen.insert(sub.submission_id.clone()) {
            return Err(Error::DuplicateSubmission(sub.submission_id.clone()));
        }
        self.pending.push_back(sub.submission_id.clone());
        Ok(self.pending.len() - 1)
    }

    pub fn dequeue(&mut self) -> Option<String> {
        self.pending.pop_front()
    }

    pub fn peek(&self) -> Option<&str> {
        self.pending.front().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn pending(&self) -> impl Iterator<Item = &str> {
        self.pending.iter().map(String::as_str)
    }

    pub fn contains(&self, submission_id: &str) -> bool {
        self.pending.iter().any(|id| id == submission_id)
    }

    /// Drops a pending submission wherever it sits. Returns whether it was pending.
    pub fn remove(&mut self, submission_id: &str) -> bool {
        let before = self.pending.len();
        self.pending.retain(|id| id != submission_id);
        self.pending.len() != before
    }
}
