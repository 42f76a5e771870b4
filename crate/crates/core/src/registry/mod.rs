//! Dataset storage, deterministic stratified splitting, public export and
//! guarded access to the secret test split.

mod archive;
mod split;
mod store;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::canonical;
use crate::error::{Error, Result};
use crate::task::TaskDescriptor;

pub use archive::{export_public, read_archive_dir, PublicArchive};
pub use split::{split_dataset, stratum_test_count, SplitManifest};
pub use store::{AuditRecord, AuditSink, Registry};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LabelSystem {
    IcdLike,
    IchiLike,
    Triage,
    Custom,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LabelCode {
    pub system: LabelSystem,
    pub code: String,
}

impl LabelCode {
    pub fn new(system: LabelSystem, code: impl Into<String>) -> Result<Self> {
        let code = code.into();
        Self::check_code(&code)?;
        Ok(Self { system, code })
    }

    /// Non-empty, at most 64 chars, ASCII alphanumerics plus `.-_`.
    pub fn check_code(code: &str) -> Result<()> {
        let ok = !code.is_empty()
            && code.len() <= 64
            && code
                .bytes()
                .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'-' | b'_'));
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("malformed label code `{code}`")))
        }
    }
}

/// One input feature. File references point into the dataset's `files/`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FeatureValue {
    Number(f64),
    Text(String),
    Array(Vec<f64>),
    File { file: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Case {
    pub case_id: String,
    #[serde(default)]
    pub features: BTreeMap<String, FeatureValue>,
    #[serde(default)]
    pub subgroups: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledCase {
    #[serde(flatten)]
    pub case: Case,
    pub gold: LabelCode,
}

impl LabeledCase {
    pub fn case_id(&self) -> &str {
        &self.case.case_id
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub dataset_id: String,
    pub task: TaskDescriptor,
    /// Sorted by case id.
    pub cases: Vec<LabeledCase>,
    /// SHA-256 of every referenced blob, keyed by path relative to `files/`.
    #[serde(default)]
    pub files: BTreeMap<String, String>,
    pub content_digest: String,
}

#[derive(Serialize)]
struct DigestInput<'a> {
    task: &'a TaskDescriptor,
    cases: &'a [LabeledCase],
    files: &'a BTreeMap<String, String>,
}

impl Dataset {
    /// Validates and assembles a dataset. Blobs behind file references are
    /// hashed from `files_root`; without one, file references are rejected.
    pub fn build(
        task: TaskDescriptor,
        mut cases: Vec<LabeledCase>,
        files_root: Option<&Path>,
    ) -> Result<Self> {
        task.validate()?;
        if cases.is_empty() {
            return Err(Error::EmptyDataset);
        }
        cases.sort_by(|a, b| a.case_id().cmp(b.case_id()));
        for pair in cases.windows(2) {
            if pair[0].case_id() == pair[1].case_id() {
                return Err(Error::DuplicateCaseId(pair[0].case_id().to_string()));
            }
        }
        let mut files = BTreeMap::new();
        for lc in &cases {
            if lc.case_id().is_empty() {
                return Err(Error::invalid("empty case_id"));
            }
            if lc.gold.system != task.label_system || !task.contains_label(&lc.gold.code) {
                return Err(Error::UnknownLabel {
                    case_id: lc.case_id().to_string(),
                    code: lc.gold.code.clone(),
                });
            }
            for (name, value) in &lc.case.features {
                if name.is_empty() {
                    return Err(Error::invalid(format!(
                        "case `{}` has an empty feature name",
                        lc.case_id()
                    )));
                }
                if let FeatureValue::File { file } = value {
                    check_relative(file)?;
                    let root = files_root.ok_or_else(|| {
                        Error::invalid(format!(
                            "file reference `{file}` has no archive to resolve against"
                        ))
                    })?;
                    let bytes = std::fs::read(root.join(file)).map_err(|e| {
                        Error::invalid(format!("file reference `{file}` does not resolve: {e}"))
                    })?;
                    files.insert(file.clone(), canonical::sha256_hex(&bytes));
                }
            }
        }
        let content_digest = canonical::digest(&DigestInput {
            task: &task,
            cases: &cases,
            files: &files,
        })?;
        Ok(Dataset {
            dataset_id: dataset_id_for(&content_digest),
            task,
            cases,
            files,
            content_digest,
        })
    }

    /// Recomputes the digest from content and compares.
    pub fn verify(&self) -> Result<()> {
        let d = canonical::digest(&DigestInput {
            task: &self.task,
            cases: &self.cases,
            files: &self.files,
        })?;
        if d != self.content_digest || self.dataset_id != dataset_id_for(&d) {
            return Err(Error::invalid(format!(
                "dataset `{}` fails digest verification",
                self.dataset_id
            )));
        }
        Ok(())
    }

    pub fn case(&self, case_id: &str) -> Option<&LabeledCase> {
        self.cases
            .binary_search_by(|c| c.case_id().cmp(case_id))
            .ok()
            .map(|i| &self.cases[i])
    }

    pub fn case_ids(&self) -> BTreeSet<&str> {
        self.cases.iter().map(LabeledCase::case_id).collect()
    }
}

pub fn dataset_id_for(digest: &str) -> String {
    format!("ds-{}", &digest[..16])
}

fn check_relative(path: &str) -> Result<()> {
    let p = Path::new(path);
    let escapes = p.is_absolute()
        || path.is_empty()
        || p.components()
            .any(|c| !matches!(c, std::path::Component::Normal(_)));
    if escapes {
        return Err(Error::invalid(format!(
            "file reference `{path}` must stay inside the archive"
        )));
    }
    Ok(())
}

#[cfg(test)]
pub(crate) fn labeled(id: &str, code: &str) -> LabeledCase {
    LabeledCase {
        case: Case {
            case_id: id.into(),
            features: BTreeMap::from([("x".to_string(), FeatureValue::Number(1.5))]),
            subgroups: BTreeMap::new(),
        },
        gold: LabelCode {
            system: LabelSystem::Triage,
            code: code.into(),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::sample_task;

    #[test]
    fn label_code_charset() {
        assert!(LabelCode::new(LabelSystem::IcdLike, "J45.9").is_ok());
        assert!(LabelCode::new(LabelSystem::IcdLike, "a_b-c").is_ok());
        assert!(LabelCode::new(LabelSystem::IcdLike, "").is_err());
        assert!(LabelCode::new(LabelSystem::IcdLike, "no space").is_err());
        assert!(LabelCode::new(LabelSystem::IcdLike, "x".repeat(65)).is_err());
    }

    #[test]
    fn single_case_dataset() {
        let ds = Dataset::build(sample_task(&["A", "B"]), vec![labeled("c1", "A")], None).unwrap();
        assert_eq!(ds.cases.len(), 1);
        assert_eq!(ds.content_digest.len(), 64);
        assert!(ds.dataset_id.starts_with("ds-"));
        ds.verify().unwrap();
    }

    #[test]
    fn unknown_label_rejected() {
        let err =
            Dataset::build(sample_task(&["A", "B"]), vec![labeled("c1", "C")], None).unwrap_err();
        assert_eq!(err.code(), "UNKNOWN_LABEL");
    }

    #[test]
    fn wrong_system_rejected() {
        let mut c = labeled("c1", "A");
        c.gold.system = LabelSystem::IcdLike;
        let err = Dataset::build(sample_task(&["A"]), vec![c], None).unwrap_err();
        assert_eq!(err.code(), "UNKNOWN_LABEL");
    }

    #[test]
    fn duplicate_and_empty() {
        let err = Dataset::build(
            sample_task(&["A"]),
            vec![labeled("c1", "A"), labeled("c1", "A")],
            None,
        )
        .unwrap_err();
        assert_eq!(err.code(), "DUPLICATE_CASE_ID");
        assert_eq!(
            Dataset::build(sample_task(&["A"]), vec![], None)
                .unwrap_err()
                .code(),
            "EMPTY_DATASET"
        );
    }

    #[test]
    fn digest_ignores_input_order_and_matches_recomputation() {
        let cases = vec![labeled("c2", "B"), labeled("c1", "A"), labeled("c3", "A")];
        let mut reversed = cases.clone();
        reversed.reverse();
        let a = Dataset::build(sample_task(&["A", "B"]), cases, None).unwrap();
        let b = Dataset::build(sample_task(&["A", "B"]), reversed, None).unwrap();
        assert_eq!(a.content_digest, b.content_digest);
        assert_eq!(a.dataset_id, b.dataset_id);

        // Independent recomputation straight from serde_json values.
        let task = serde_json::to_value(&a.task).unwrap();
        let cases = serde_json::to_value(&a.cases).unwrap();
        let doc = serde_json::json!({"cases": cases, "files": {}, "task": task});
        let text = serde_json::to_string(&doc).unwrap();
        assert_eq!(canonical::sha256_hex(text.as_bytes()), a.content_digest);
    }

    #[test]
    fn file_references_must_resolve_inside_archive() {
        let mut c = labeled("c1", "A");
        c.case.features.insert(
            "img".into(),
            FeatureValue::File {
                file: "../etc/passwd".into(),
            },
        );
        let dir = tempfile::tempdir().unwrap();
        assert!(Dataset::build(sample_task(&["A"]), vec![c.clone()], Some(dir.path())).is_err());

        c.case.features.insert(
            "img".into(),
            FeatureValue::File {
                file: "scan.png".into(),
            },
        );
        assert!(Dataset::build(sample_task(&["A"]), vec![c.clone()], None).is_err());
        std::fs::write(dir.path().join("scan.png"), b"\x89PNG").unwrap();
        let ds = Dataset::build(sample_task(&["A"]), vec![c], Some(dir.path())).unwrap();
        assert_eq!(ds.files.len(), 1);
    }
}
