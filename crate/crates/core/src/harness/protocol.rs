//! Newline-delimited JSON messages exchanged with a model process.
//!
//! ```text
//! -> {"type":"hello","protocol":1,"task":{...}}
//! <- {"type":"ready","name":...,"version":...}
//! -> {"type":"case","case_id":...,"features":{...}}
//! <- {"type":"prediction","case_id":...,"ranking":[{"code":...,"confidence":...}]}
//!    or {"type":"abstain","case_id":...,"confidence":...}
//! -> {"type":"end"}
//! ```

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::registry::{FeatureValue, LabelSystem};
use crate::task::TaskDescriptor;

pub const PROTOCOL_VERSION: u32 = 1;

/// Task fields disclosed to the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskInfo {
    pub task_id: String,
    pub label_system: LabelSystem,
    pub label_space: Vec<String>,
    pub top_k: u32,
}

impl From<&TaskDescriptor> for TaskInfo {
    fn from(t: &TaskDescriptor) -> Self {
        Self {
            task_id: t.task_id.clone(),
            label_system: t.label_system,
            label_space: t.label_space.clone(),
            top_k: t.top_k,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ToModel {
    Hello {
        protocol: u32,
        task: TaskInfo,
    },
    Case {
        case_id: String,
        features: BTreeMap<String, FeatureValue>,
    },
    End,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedCode {
    pub code: String,
    pub confidence: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FromModel {
    Ready {
        name: String,
        version: String,
    },
    Prediction {
        case_id: String,
        ranking: Vec<RankedCode>,
    },
    Abstain {
        case_id: String,
        confidence: f64,
    },
}

impl ToModel {
    /// One protocol line, LF-terminated.
    pub fn to_line(&self) -> Vec<u8> {
        let mut line = serde_json::to_vec(self).expect("protocol messages serialize");
        line.push(b'\n');
        line
    }
}

impl FromModel {
    pub fn to_line(&self) -> Vec<u8> {
        let mut line = serde_json::to_vec(self).expect("protocol messages serialize");
        line.push(b'\n');
        line
    }
}
