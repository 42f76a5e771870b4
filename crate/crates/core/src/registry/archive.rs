use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, FeatureValue, LabeledCase, SplitManifest};
use crate::canonical;
use crate::error::{Error, Result};
use crate::fraction::Fraction;
use crate::task::TaskDescriptor;

/// The `manifest.json` of a public archive: the train side of a split only.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicManifest {
    pub dataset_id: String,
    pub task_id: String,
    pub seed: u64,
    pub test_fraction: Fraction,
    pub train_ids: Vec<String>,
}

/// Tar image of the public training portion of a split.
///
/// Layout: `manifest.json`, `task.json`, `cases.jsonl` (one canonical labeled
/// case per line) and `files/` for blobs referenced by train cases. Entry
/// order, metadata and content are canonical, so re-exports are byte-identical.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PublicArchive {
    pub bytes: Vec<u8>,
}

pub fn export_public(
    dataset: &Dataset,
    manifest: &SplitManifest,
    files_root: Option<&Path>,
) -> Result<PublicArchive> {
    manifest.check_belongs_to(dataset)?;
    let mut entries: BTreeMap<String, Vec<u8>> = BTreeMap::new();

    let public = PublicManifest {
        dataset_id: dataset.dataset_id.clone(),
        task_id: dataset.task.task_id.clone(),
        seed: manifest.seed,
        test_fraction: manifest.test_fraction,
        train_ids: manifest.train_ids.clone(),
    };
    entries.insert("manifest.json".into(), canonical::to_vec(&public)?);
    entries.insert("task.json".into(), canonical::to_vec(&dataset.task)?);

    let mut lines = Vec::new();
    for id in &manifest.train_ids {
        let mut lc = dataset
            .case(id)
            .ok_or_else(|| Error::ManifestMismatch(dataset.dataset_id.clone()))?
            .clone();
        if !dataset.task.policy.export_subgroups {
            lc.case.subgroups.clear();
        }
        for value in lc.case.features.values() {
            if let FeatureValue::File { file } = value {
                let root = files_root
                    .ok_or_else(|| Error::invalid("dataset has blobs but no files root"))?;
                entries.insert(format!("files/{file}"), fs::read(root.join(file))?);
            }
        }
        lines.extend(canonical::to_vec(&lc)?);
        lines.push(b'\n');
    }
    entries.insert("cases.jsonl".into(), lines);

    let mut builder = tar::Builder::new(Vec::new());
    for (path, data) in &entries {
        let mut header = tar::Header::new_ustar();
        header.set_path(path)?;
        header.set_size(data.len() as u64);
        header.set_mode(0o644);
        header.set_mtime(0);
        header.set_uid(0);
        header.set_gid(0);
        header.set_entry_type(tar::EntryType::Regular);
        header.set_cksum();
        builder.append(&header, data.as_slice())?;
    }
    Ok(PublicArchive {
        bytes: builder.into_inner()?,
    })
}

impl PublicArchive {
    /// Entries as `(path, bytes)` in archive order.
    pub fn entries(&self) -> Result<Vec<(String, Vec<u8>)>> {
        let mut archive = tar::Archive::new(self.bytes.as_slice());
        let mut out = Vec::new();
        for entry in archive.entries()? {
            let mut entry = entry?;
            let path = entry.path()?.to_string_lossy().into_owned();
            let mut data = Vec::new();
            entry.read_to_end(&mut data)?;
            out.push((path, data));
        }
        Ok(out)
    }

    pub fn unpack(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        tar::Archive::new(self.bytes.as_slice()).unpack(dir)?;
        Ok(())
    }
}

/// Contents of an archive directory (`task.json` + `cases.jsonl`, optional
/// `manifest.json`). Used both for importing datasets and for reading the
/// public training export.
#[derive(Clone, Debug)]
pub struct ArchiveContents {
    pub task: TaskDescriptor,
    pub cases: Vec<LabeledCase>,
    pub manifest: Option<PublicManifest>,
}

pub fn read_archive_dir(dir: &Path) -> Result<ArchiveContents> {
    let task: TaskDescriptor = serde_json::from_slice(&fs::read(dir.join("task.json"))?)?;
    let text = fs::read_to_string(dir.join("cases.jsonl"))?;
    let mut cases = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let case = serde_json::from_str(line)
            .map_err(|e| Error::invalid(format!("cases.jsonl line {}: {e}", n + 1)))?;
        cases.push(case);
    }
    let manifest_path = dir.join("manifest.json");
    let manifest = if manifest_path.exists() {
        Some(serde_json::from_slice(&fs::read(manifest_path)?)?)
    } else {
        None
    };
    Ok(ArchiveContents {
        task,
        cases,
        manifest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::{labeled, split_dataset};
    use crate::task::sample_task;

    fn five_case() -> Dataset {
        let mut cases = Vec::new();
        for (id, l, g) in [
            ("p1", "A", "m"),
            ("p2", "A", "f"),
            ("p3", "A", "m"),
            ("p4", "B", "f"),
            ("p5", "B", "m"),
        ] {
            let mut c = labeled(id, l);
            c.case.subgroups.insert("sex".into(), g.into());
            cases.push(c);
        }
        Dataset::build(sample_task(&["A", "B"]), cases, None).unwrap()
    }

    #[test]
    fn export_lists_exactly_the_train_cases() {
        let ds = five_case();
        let m = split_dataset(&ds, 11, Fraction::new(2, 5)).unwrap();
        assert_eq!((m.train_ids.len(), m.test_ids.len()), (3, 2));
        let archive = export_public(&ds, &m, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        archive.unpack(dir.path()).unwrap();
        let contents = read_archive_dir(dir.path()).unwrap();
        let ids: Vec<_> = contents
            .cases
            .iter()
            .map(|c| c.case_id().to_string())
            .collect();
        assert_eq!(ids, m.train_ids);
        assert!(contents
            .cases
            .iter()
            .all(|c| c.case.subgroups.contains_key("sex")));
        assert_eq!(contents.manifest.unwrap().train_ids, m.train_ids);
        assert_eq!(contents.task, ds.task);
    }

    #[test]
    fn no_test_identifier_anywhere_in_archive() {
        let ds = five_case();
        let m = split_dataset(&ds, 11, Fraction::new(2, 5)).unwrap();
        let bytes = export_public(&ds, &m, None).unwrap().bytes;
        for id in &m.test_ids {
            let hit = bytes.windows(id.len()).any(|w| w == id.as_bytes());
            assert!(!hit, "test id {id} leaked");
        }
    }

    #[test]
    fn re_export_is_byte_identical() {
        let ds = five_case();
        let m = split_dataset(&ds, 11, Fraction::new(2, 5)).unwrap();
        assert_eq!(
            export_public(&ds, &m, None).unwrap(),
            export_public(&ds, &m, None).unwrap()
        );
    }

    #[test]
    fn subgroups_can_be_withheld() {
        let mut ds = five_case();
        ds.task.policy.export_subgroups = false;
        let m = split_dataset(&ds, 1, Fraction::new(2, 5)).unwrap();
        let archive = export_public(&ds, &m, None).unwrap();
        let cases = archive
            .entries()
            .unwrap()
            .into_iter()
            .find(|(p, _)| p == "cases.jsonl")
            .unwrap()
            .1;
        assert!(!String::from_utf8(cases).unwrap().contains("sex"));
    }

    #[test]
    fn foreign_manifest_rejected() {
        let ds = five_case();
        let other = Dataset::build(
            sample_task(&["A"]),
            vec![labeled("z1", "A"), labeled("z2", "A")],
            None,
        )
        .unwrap();
        let m = split_dataset(&other, 1, Fraction::new(1, 2)).unwrap();
        assert_eq!(
            export_public(&ds, &m, None).unwrap_err().code(),
            "MANIFEST_MISMATCH"
        );
    }
}
