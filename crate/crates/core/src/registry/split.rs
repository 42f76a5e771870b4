use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::canonical;
use crate::error::{Error, Result};
use crate::fraction::Fraction;
use crate::rng::{shuffle, SplitMix64};

/// Partition of a dataset into public train and secret test case ids.
/// Both id lists are sorted lexicographically.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub dataset_id: String,
    pub seed: u64,
    pub test_fraction: Fraction,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub manifest_digest: String,
}

#[derive(Serialize)]
struct ManifestBody<'a> {
    dataset_id: &'a str,
    seed: u64,
    test_fraction: Fraction,
    train_ids: &'a [String],
    test_ids: &'a [String],
}

impl SplitManifest {
    fn body(&self) -> ManifestBody<'_> {
        ManifestBody {
            dataset_id: &self.dataset_id,
            seed: self.seed,
            test_fraction: self.test_fraction,
            train_ids: &self.train_ids,
            test_ids: &self.test_ids,
        }
    }

    /// Checks that the manifest was produced for `dataset` and is intact.
    pub fn check_belongs_to(&self, dataset: &Dataset) -> Result<()> {
        let mismatch = || Error::ManifestMismatch(dataset.dataset_id.clone());
        if self.dataset_id != dataset.dataset_id {
            return Err(mismatch());
        }
        if canonical::digest(&self.body())? != self.manifest_digest {
            return Err(mismatch());
        }
        let listed = self.train_ids.len() + self.test_ids.len();
        let all_known = self
            .train_ids
            .iter()
            .chain(&self.test_ids)
            .all(|id| dataset.case(id).is_some());
        if listed != dataset.cases.len() || !all_known {
            return Err(mismatch());
        }
        Ok(())
    }

    pub fn is_train(&self, case_id: &str) -> bool {
        self.train_ids
            .binary_search_by(|id| id.as_str().cmp(case_id))
            .is_ok()
    }

    pub fn is_test(&self, case_id: &str) -> bool {
        self.test_ids
            .binary_search_by(|id| id.as_str().cmp(case_id))
            .is_ok()
    }
}

/// Number of test cases drawn from a stratum of `n` cases.
///
/// `round_half_up(fraction * n)`, clamped into `1..=n-1` when `n >= 2`;
/// a singleton stratum stays entirely in train.
pub fn stratum_test_count(n: usize, fraction: Fraction) -> usize {
    if n < 2 {
        return 0;
    }
    let raw = (fraction * Fraction::from(n as i64)).round_half_up();
    raw.clamp(1, n as i64 - 1) as usize
}

/// Deterministic stratified split.
///
/// Strata are the gold codes in lexicographic order. One SplitMix64 stream,
/// seeded with `seed ^ low64(content_digest)`, drives a Fisher–Yates shuffle
/// of each stratum's sorted case ids; the first `stratum_test_count` ids go to
/// test.
pub fn split_dataset(
    dataset: &Dataset,
    seed: u64,
    test_fraction: Fraction,
) -> Result<SplitManifest> {
    if !(Fraction::ZERO < test_fraction && test_fraction < Fraction::ONE) {
        return Err(Error::FractionOutOfRange(test_fraction.to_string()));
    }
    let mut strata: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for lc in &dataset.cases {
        strata
            .entry(lc.gold.code.as_str())
            .or_default()
            .push(lc.case_id());
    }
    let mut rng = SplitMix64::new(seed ^ canonical::digest_low_u64(&dataset.content_digest)?);
    let mut train_ids = Vec::new();
    let mut test_ids = Vec::new();
    for ids in strata.values_mut() {
        ids.sort_unstable();
        shuffle(ids, &mut rng);
        let k = stratum_test_count(ids.len(), test_fraction);
        test_ids.extend(ids[..k].iter().map(|s| s.to_string()));
        train_ids.extend(ids[k..].iter().map(|s| s.to_string()));
    }
    train_ids.sort_unstable();
    test_ids.sort_unstable();
    let mut manifest = SplitManifest {
        dataset_id: dataset.dataset_id.clone(),
        seed,
        test_fraction,
        train_ids,
        test_ids,
        manifest_digest: String::new(),
    };
    manifest.manifest_digest = canonical::digest(&manifest.body())?;
    Ok(manifest)
}
