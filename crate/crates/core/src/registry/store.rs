use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use super::archive::{export_public, read_archive_dir, PublicArchive};
use super::split::{split_dataset, SplitManifest};
use super::{Dataset, FeatureValue, LabeledCase};
use crate::auth::Principal;
use crate::canonical;
use crate::error::{Error, Result};
use crate::fraction::Fraction;
use crate::task::TaskDescriptor;

/// One secret-split access.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub who: String,
    pub at: DateTime<Utc>,
    pub dataset_id: String,
    pub manifest_digest: String,
}

/// Receives audit records as secret data is opened. An error from the sink
/// aborts the access.
pub trait AuditSink: Send + Sync {
    fn record(&self, record: &AuditRecord) -> Result<()>;
}

#[derive(Default)]
struct Inner {
    datasets: BTreeMap<String, Arc<Dataset>>,
    manifests: BTreeMap<String, Arc<SplitManifest>>,
    audit: Vec<AuditRecord>,
}

/// Dataset store. With a root directory, each dataset is kept as an archive
/// directory `datasets/<id>/` (`task.json`, `cases.jsonl`, `files/`).
///
/// Reads take a shared lock; registration takes the write lock, so concurrent
/// registrations of the same content collapse onto one dataset.
pub struct Registry {
    root: Option<PathBuf>,
    sink: Option<Arc<dyn AuditSink>>,
    inner: RwLock<Inner>,
}

impl Registry {
    pub fn in_memory() -> Self {
        Self {
            root: None,
            sink: None,
            inner: RwLock::default(),
        }
    }

    pub fn persistent(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(root.join("datasets"))?;
        Ok(Self {
            root: Some(root),
            sink: None,
            inner: RwLock::default(),
        })
    }

    pub fn with_audit_sink(mut self, sink: Arc<dyn AuditSink>) -> Self {
        self.sink = Some(sink);
        self
    }

    fn dataset_dir(&self, dataset_id: &str) -> Option<PathBuf> {
        self.root
            .as_ref()
            .map(|r| r.join("datasets").join(dataset_id))
    }

    /// Directory holding the dataset's blobs, when persisted.
    pub fn files_root(&self, dataset_id: &str) -> Option<PathBuf> {
        self.dataset_dir(dataset_id).map(|d| d.join("files"))
    }

    /// Registers a dataset; identical content yields the existing dataset.
    pub fn register_dataset(
        &self,
        task: TaskDescriptor,
        cases: Vec<LabeledCase>,
        files_root: Option<&Path>,
    ) -> Result<Arc<Dataset>> {
        let dataset = Dataset::build(task, cases, files_root)?;
        let mut inner = self.inner.write();
        if let Some(existing) = inner.datasets.get(&dataset.dataset_id) {
            return Ok(existing.clone());
        }
        if let Some(dir) = self.dataset_dir(&dataset.dataset_id) {
            persist(&dir, &dataset, files_root)?;
        }
        let dataset = Arc::new(dataset);
        inner
            .datasets
            .insert(dataset.dataset_id.clone(), dataset.clone());
        Ok(dataset)
    }

    /// Loads a previously persisted dataset and checks its digest.
    pub fn load_dataset(&self, dataset_id: &str, expected_digest: &str) -> Result<Arc<Dataset>> {
        if let Some(ds) = self.dataset(dataset_id) {
            return Ok(ds);
        }
        let dir = self
            .dataset_dir(dataset_id)
            .ok_or_else(|| Error::not_found("dataset", dataset_id))?;
        let contents = read_archive_dir(&dir).map_err(|e| {
            Error::CorruptLog(format!(
                "dataset `{dataset_id}` cannot be loaded from store: {e}"
            ))
        })?;
        let files = dir.join("files");
        let dataset = Dataset::build(contents.task, contents.cases, Some(&files))?;
        if dataset.content_digest != expected_digest {
            return Err(Error::CorruptLog(format!(
                "dataset `{dataset_id}` digest differs from log"
            )));
        }
        let dataset = Arc::new(dataset);
        self.inner
            .write()
            .datasets
            .insert(dataset_id.to_string(), dataset.clone());
        Ok(dataset)
    }

    pub fn dataset(&self, dataset_id: &str) -> Option<Arc<Dataset>> {
        self.inner.read().datasets.get(dataset_id).cloned()
    }

    pub fn datasets(&self) -> Vec<Arc<Dataset>> {
        self.inner.read().datasets.values().cloned().collect()
    }

    pub fn split_dataset(
        &self,
        dataset: &Dataset,
        seed: u64,
        test_fraction: Fraction,
    ) -> Result<Arc<SplitManifest>> {
        let manifest = Arc::new(split_dataset(dataset, seed, test_fraction)?);
        self.inner
            .write()
            .manifests
            .entry(manifest.manifest_digest.clone())
            .or_insert_with(|| manifest.clone());
        Ok(manifest)
    }

    pub fn manifest(&self, manifest_digest: &str) -> Option<Arc<SplitManifest>> {
        self.inner.read().manifests.get(manifest_digest).cloned()
    }

    pub fn export_public(
        &self,
        dataset: &Dataset,
        manifest: &SplitManifest,
    ) -> Result<PublicArchive> {
        let files = self.files_root(&dataset.dataset_id);
        export_public(dataset, manifest, files.as_deref())
    }

    /// Public train cases of a split, in manifest order. Never touches the test side.
    pub fn public_cases(
        &self,
        dataset: &Dataset,
        manifest: &SplitManifest,
    ) -> Result<Vec<LabeledCase>> {
        manifest.check_belongs_to(dataset)?;
        manifest
            .train_ids
            .iter()
            .map(|id| {
                dataset
                    .case(id)
                    .cloned()
                    .ok_or_else(|| Error::ManifestMismatch(dataset.dataset_id.clone()))
            })
            .collect()
    }

    /// Secret test cases in manifest order. Admin scope only; every call is
    /// audited before any case is returned.
    pub fn open_secret(
        &self,
        dataset: &Dataset,
        manifest: &SplitManifest,
        principal: &Principal,
    ) -> Result<Vec<LabeledCase>> {
        principal.require_admin()?;
        manifest.check_belongs_to(dataset)?;
        let record = AuditRecord {
            who: principal.id.clone(),
            at: Utc::now(),
            dataset_id: dataset.dataset_id.clone(),
            manifest_digest: manifest.manifest_digest.clone(),
        };
        if let Some(sink) = &self.sink {
            sink.record(&record)?;
        }
        self.inner.write().audit.push(record);
        manifest
            .test_ids
            .iter()
            .map(|id| {
                dataset
                    .case(id)
                    .cloned()
                    .ok_or_else(|| Error::ManifestMismatch(dataset.dataset_id.clone()))
            })
            .collect()
    }

    pub fn audit_log(&self) -> Vec<AuditRecord> {
        self.inner.read().audit.clone()
    }
}

fn persist(dir: &Path, dataset: &Dataset, files_root: Option<&Path>) -> Result<()> {
    let tmp = dir.with_extension("partial");
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    fs::create_dir_all(tmp.join("files"))?;
    fs::write(tmp.join("task.json"), canonical::to_vec(&dataset.task)?)?;
    let mut lines = Vec::new();
    for lc in &dataset.cases {
        lines.extend(canonical::to_vec(lc)?);
        lines.push(b'\n');
        for value in lc.case.features.values() {
            if let (FeatureValue::File { file }, Some(src)) = (value, files_root) {
                let dst = tmp.join("files").join(file);
                if let Some(parent) = dst.parent() {
                    fs::create_dir_all(parent)?;
                }
                fs::copy(src.join(file), dst)?;
            }
        }
    }
    fs::write(tmp.join("cases.jsonl"), lines)?;
    if dir.exists() {
        fs::remove_dir_all(dir)?;
    }
    fs::rename(tmp, dir)?;
    Ok(())
}
