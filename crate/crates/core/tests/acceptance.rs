//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

mod common;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use bench_core::auth::Principal;
use bench_core::fraction::Fraction;
use bench_core::gate::{self, CheckName, Submission};
use bench_core::harness::{
    perturb_case, run_model, PredictionRecord, RunExit, RunResult, RunSpec, Violation, GRACE_MS,
};
use bench_core::leaderboard::{Grade, ViewFilter};
use bench_core::metrics::{self, MetricBlock};
use bench_core::reference::{self, Fault};
use bench_core::registry::{split_dataset, Case, Dataset, FeatureValue, LabeledCase};
use bench_core::rng::SplitMix64;
use bench_core::service::events::parse_log;
use bench_core::service::{EventKind, Platform, State, SubmissionStatus, SubmitRequest};
use bench_core::synthetic;
use bench_core::task::{PerturbationPolicy, ResourceLimits, TaskDescriptor};
use common::*;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 7] = [
        ("metric oracle equivalence", metric_oracle),
        ("split determinism and stratification", split_determinism),
        ("limit enforcement", limit_enforcement),
        ("protocol conformance", protocol_conformance),
        ("end-to-end pipeline", end_to_end),
        ("event-sourcing recovery", recovery),
        ("perturbation golden values", perturbation_golden),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    let mut ran = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let started = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {name} [{secs:.1}s] {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name} [{secs:.1}s] {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------------------
// Metric oracle

/// Prediction in oracle form: `None` abstains, otherwise label indices.
type OPred = Option<Vec<u8>>;

fn label(i: u8) -> String {
    ["A", "B", "C"][i as usize].to_string()
}

/// Every prediction over `n_labels` labels: abstain plus every ordered
/// selection of 1..=3 distinct labels.
fn all_predictions(n_labels: u8) -> Vec<OPred> {
    fn extend(prefix: Vec<u8>, n: u8, out: &mut Vec<OPred>) {
        if !prefix.is_empty() {
            out.push(Some(prefix.clone()));
        }
        if prefix.len() == 3 {
            return;
        }
        for l in 0..n {
            if !prefix.contains(&l) {
                let mut p = prefix.clone();
                p.push(l);
                extend(p, n, out);
            }
        }
    }
    let mut out = vec![None];
    extend(Vec::new(), n_labels, &mut out);
    out
}

fn record(i: usize, p: &OPred) -> PredictionRecord {
    match p {
        None => PredictionRecord::abstain(format!("c{i}"), 0.5),
        Some(codes) => {
            let n = codes.len() as f64;
            let ranking: Vec<(String, f64)> = codes
                .iter()
                .enumerate()
                .map(|(r, &c)| (label(c), (n - r as f64) / n))
                .collect();
            let refs: Vec<(&str, f64)> = ranking.iter().map(|(c, p)| (c.as_str(), *p)).collect();
            PredictionRecord::ranked(format!("c{i}"), &refs)
        }
    }
}

fn run_of(preds: &[OPred]) -> RunResult {
    RunResult {
        submission_id: "sub-oracle".into(),
        run_seed: 1,
        predictions: preds
            .iter()
            .enumerate()
            .map(|(i, p)| record(i, p))
            .collect(),
        total_wall_ms: 0,
        exit: RunExit::Completed,
        handshake_ok: true,
        violation: None,
        detail: None,
    }
}

/// Exact equality of a fraction with `num/den`, by cross-multiplication.
fn same(f: Fraction, num: i64, den: i64) -> bool {
    f.numer() * den == num * f.denom()
}

fn hit(p: &OPred, gold: u8, k: usize) -> bool {
    p.as_ref()
        .is_some_and(|codes| codes.iter().take(k).any(|&c| c == gold))
}

/// One instance: golds, predictions and optional subgroup per case.
fn check_instance(golds: &[u8], preds: &[OPred], groups: &[Option<u8>]) -> Result<(), String> {
    let n = golds.len() as i64;
    let records: Vec<PredictionRecord> = preds
        .iter()
        .enumerate()
        .map(|(i, p)| record(i, p))
        .collect();
    let gold: metrics::GoldMap = golds
        .iter()
        .enumerate()
        .map(|(i, &g)| (format!("c{i}"), label(g)))
        .collect();
    let cases: Vec<Case> = groups
        .iter()
        .enumerate()
        .map(|(i, g)| Case {
            case_id: format!("c{i}"),
            features: BTreeMap::new(),
            subgroups: g
                .map(|v| BTreeMap::from([("sex".to_string(), ["m", "f"][v as usize].to_string())]))
                .unwrap_or_default(),
        })
        .collect();
    let fail = || format!("golds {golds:?} preds {preds:?} groups {groups:?}");

    for k in 1..=3usize {
        let hits = golds
            .iter()
            .zip(preds)
            .filter(|(&g, p)| hit(p, g, k))
            .count() as i64;
        let got = metrics::top_k_accuracy(&records, &gold, k).map_err(|e| e.to_string())?;
        ensure!(
            same(got, hits, n),
            "top-{k} {got} != {hits}/{n} for {}",
            fail()
        );
    }
    let block = MetricBlock::compute(&records, &gold, 2).map_err(|e| e.to_string())?;
    let answered = preds.iter().filter(|p| p.is_some()).count() as i64;
    let hits1 = golds
        .iter()
        .zip(preds)
        .filter(|(&g, p)| hit(p, g, 1))
        .count() as i64;
    ensure!(same(block.coverage, answered, n), "coverage for {}", fail());
    let (sn, sd) = if answered == 0 {
        (1, 1)
    } else {
        (hits1, answered)
    };
    ensure!(
        same(block.top1_selective, sn, sd),
        "selective for {}",
        fail()
    );
    ensure!(
        block.top1_selective * block.coverage == block.top1_all,
        "block identity for {}",
        fail()
    );

    // Disparity: per-group hit rates, max minus min.
    let mut per: BTreeMap<Option<u8>, (i64, i64)> = BTreeMap::new();
    for ((&g, p), grp) in golds.iter().zip(preds).zip(groups) {
        let slot = per.entry(*grp).or_default();
        slot.1 += 1;
        slot.0 += i64::from(hit(p, g, 1));
    }
    let rates: Vec<(i64, i64)> = per.into_values().collect();
    let hi = rates
        .iter()
        .copied()
        .max_by(|a, b| (a.0 * b.1).cmp(&(b.0 * a.1)))
        .unwrap();
    let lo = rates
        .iter()
        .copied()
        .min_by(|a, b| (a.0 * b.1).cmp(&(b.0 * a.1)))
        .unwrap();
    let (dn, dd) = (hi.0 * lo.1 - lo.0 * hi.1, hi.1 * lo.1);
    let got =
        metrics::subgroup_disparity(&records, &gold, &cases, "sex").map_err(|e| e.to_string())?;
    ensure!(
        same(got, dn, dd),
        "disparity {got} != {dn}/{dd} for {}",
        fail()
    );
    ensure!(
        got.in_unit_interval(),
        "disparity out of range for {}",
        fail()
    );
    Ok(())
}

fn check_pair(golds: &[u8], a: &[OPred], b: &[OPred]) -> Result<(), String> {
    let n = golds.len() as i64;
    let (ra, rb) = (run_of(a), run_of(b));
    let gold: metrics::GoldMap = golds
        .iter()
        .enumerate()
        .map(|(i, &g)| (format!("c{i}"), label(g)))
        .collect();
    let agree = a
        .iter()
        .zip(b)
        .filter(|(x, y)| match (x, y) {
            (None, None) => true,
            (Some(x), Some(y)) => x[0] == y[0],
            _ => false,
        })
        .count() as i64;
    let got = metrics::reproducibility_agreement(&ra, &rb).map_err(|e| e.to_string())?;
    ensure!(
        same(got, agree, n),
        "agreement {got} != {agree}/{n} for {a:?} vs {b:?}"
    );

    let hc = golds.iter().zip(a).filter(|(&g, p)| hit(p, g, 1)).count() as i64;
    let hp = golds.iter().zip(b).filter(|(&g, p)| hit(p, g, 1)).count() as i64;
    let (rn, rd) = if hc == 0 || hp >= hc {
        (1, 1)
    } else {
        (hp, hc)
    };
    let ca = MetricBlock::compute(&ra.predictions, &gold, 1).map_err(|e| e.to_string())?;
    let cb = MetricBlock::compute(&rb.predictions, &gold, 1).map_err(|e| e.to_string())?;
    let got = metrics::robustness_ratio(&ca, &cb);
    ensure!(
        same(got, rn, rd),
        "robustness {got} != {rn}/{rd} for {a:?} vs {b:?}"
    );
    Ok(())
}

/// All length-`n` sequences over `0..base`.
fn sequences(base: usize, n: usize) -> impl Iterator<Item = Vec<usize>> {
    (0..base.pow(n as u32)).map(move |mut x| {
        (0..n)
            .map(|_| {
                let d = x % base;
                x /= base;
                d
            })
            .collect()
    })
}

/// All non-decreasing length-`n` sequences over `0..base` (multisets).
fn multisets(base: usize, n: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, base: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if left == 0 {
            out.push(cur.clone());
            return;
        }
        for t in start..base {
            cur.push(t);
            go(t, base, left - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, base, n, &mut Vec::new(), &mut out);
    out
}

/// Per-case outcome class up to relabeling: ranking length (0 abstains)
/// and the gold position within it.
fn reduced_types(n_labels: u8) -> Vec<(usize, Option<usize>)> {
    let mut out = vec![(0, None)];
    for len in 1..=3.min(n_labels as usize) {
        for pos in 0..len {
            out.push((len, Some(pos)));
        }
        if len < n_labels as usize {
            out.push((len, None));
        }
    }
    out
}

fn realize(gold: u8, n_labels: u8, (len, pos): (usize, Option<usize>)) -> OPred {
    if len == 0 {
        return None;
    }
    let mut others = (0..n_labels).filter(|&l| l != gold);
    let mut codes = Vec::new();
    for r in 0..len {
        codes.push(if pos == Some(r) {
            gold
        } else {
            others.next().unwrap()
        });
    }
    Some(codes)
}

fn metric_oracle() -> Outcome {
    let started = Instant::now();
    let mut instances = 0usize;
    let group_values = [None, Some(0u8), Some(1u8)];

    // Every concrete (gold, prediction, subgroup) sequence up to 3 cases.
    for n_labels in 1..=3u8 {
        let preds = all_predictions(n_labels);
        let per_case = n_labels as usize * preds.len() * group_values.len();
        for n in 1..=3 {
            for seq in sequences(per_case, n) {
                let mut golds = Vec::new();
                let mut ps = Vec::new();
                let mut groups = Vec::new();
                for t in seq {
                    groups.push(group_values[t % 3]);
                    let t = t / 3;
                    ps.push(preds[t % preds.len()].clone());
                    golds.push((t / preds.len()) as u8);
                }
                check_instance(&golds, &ps, &groups)?;
                instances += 1;
            }
        }
    }

    // Every multiset of outcome classes up to 6 cases, golds rotating over labels.
    for n_labels in 1..=3u8 {
        let types = reduced_types(n_labels);
        let base = types.len() * group_values.len();
        for n in 1..=6 {
            for ms in multisets(base, n) {
                let golds: Vec<u8> = (0..n).map(|i| (i % n_labels as usize) as u8).collect();
                let ps: Vec<OPred> = ms
                    .iter()
                    .zip(&golds)
                    .map(|(&t, &g)| realize(g, n_labels, types[t / 3]))
                    .collect();
                let groups: Vec<Option<u8>> = ms.iter().map(|&t| group_values[t % 3]).collect();
                check_instance(&golds, &ps, &groups)?;
                instances += 1;
            }
        }
    }

    // Run pairs: every concrete pair up to 2 cases.
    let mut pairs = 0usize;
    for n_labels in 1..=3u8 {
        let preds = all_predictions(n_labels);
        for n in 1..=2 {
            for gs in sequences(n_labels as usize, n) {
                let golds: Vec<u8> = gs.iter().map(|&g| g as u8).collect();
                for sa in sequences(preds.len(), n) {
                    let a: Vec<OPred> = sa.iter().map(|&i| preds[i].clone()).collect();
                    for sb in sequences(preds.len(), n) {
                        let b: Vec<OPred> = sb.iter().map(|&i| preds[i].clone()).collect();
                        check_pair(&golds, &a, &b)?;
                        pairs += 1;
                    }
                }
            }
        }
    }
    // Run pairs up to 6 cases over top-1 classes (abstain or one of 3 codes).
    let top1 = [None, Some(vec![0u8]), Some(vec![1]), Some(vec![2])];
    for n in 1..=6 {
        for ms in multisets(16, n) {
            let golds: Vec<u8> = (0..n).map(|i| (i % 3) as u8).collect();
            let a: Vec<OPred> = ms.iter().map(|&t| top1[t / 4].clone()).collect();
            let b: Vec<OPred> = ms.iter().map(|&t| top1[t % 4].clone()).collect();
            check_pair(&golds, &a, &b)?;
            pairs += 1;
        }
    }

    let secs = started.elapsed().as_secs_f64();
    ensure!(secs < 60.0, "took {secs:.1}s, limit 60s");
    Ok(format!("{instances} datasets, {pairs} run pairs"))
}

// ---------------------------------------------------------------------------
// Split

fn split_determinism() -> Outcome {
    let mut rng = SplitMix64::new(0x5EED);
    let codes = ["A", "B", "C", "D"];
    for trial in 0..1000 {
        let n = 1 + rng.below(20) as usize;
        let n_labels = 1 + rng.below(4) as usize;
        let den = 2 + rng.below(19) as i64;
        let num = 1 + rng.below(den as u64 - 1) as i64;
        let fraction = Fraction::new(num, den);
        let seed = rng.next_u64();
        let cases: Vec<LabeledCase> = (0..n)
            .map(|i| {
                case(
                    &format!("p{:03}", rng.below(1000) * 100 + i as u64),
                    codes[rng.below(n_labels as u64) as usize],
                )
            })
            .collect();
        let t = task("split-trial", &codes[..n_labels]);
        let ds = Dataset::build(t.clone(), cases.clone(), None).map_err(|e| e.to_string())?;
        let mut reversed = cases.clone();
        reversed.reverse();
        let ds2 = Dataset::build(t, reversed, None).map_err(|e| e.to_string())?;

        let m1 = split_dataset(&ds, seed, fraction).map_err(|e| e.to_string())?;
        let m2 = split_dataset(&ds2, seed, fraction).map_err(|e| e.to_string())?;
        let (b1, b2) = (
            serde_json::to_vec(&m1).unwrap(),
            serde_json::to_vec(&m2).unwrap(),
        );
        ensure!(b1 == b2, "trial {trial}: regenerated manifest differs");

        let mut strata: BTreeMap<&str, (i64, i64)> = BTreeMap::new();
        for lc in &ds.cases {
            let slot = strata.entry(lc.gold.code.as_str()).or_default();
            slot.0 += 1;
            slot.1 += i64::from(m1.is_test(lc.case_id()));
        }
        for (code, (size, in_test)) in strata {
            let expected = if size < 2 {
                0
            } else {
                ((2 * num * size + den) / (2 * den)).clamp(1, size - 1)
            };
            ensure!(
                in_test == expected,
                "trial {trial}: label {code} of size {size} at {num}/{den} has {in_test} test cases, expected {expected}"
            );
        }
        ensure!(
            m1.train_ids.len() + m1.test_ids.len() == n,
            "trial {trial}: cases lost"
        );
    }
    Ok("1000 triples".into())
}

// ---------------------------------------------------------------------------
// Limits

fn limit_task(per_case_ms: u64, max_bytes: u64) -> TaskDescriptor {
    let mut t = task("limits", &["A", "B"]);
    t.limits = ResourceLimits {
        per_case_wall_ms: per_case_ms,
        total_wall_ms: 30_000,
        max_resident_bytes: max_bytes,
    };
    t
}

fn plain_cases(n: usize) -> Vec<Case> {
    (0..n)
        .map(|i| Case {
            case_id: format!("c{i}"),
            features: BTreeMap::from([("x".to_string(), FeatureValue::Number(i as f64))]),
            subgroups: BTreeMap::new(),
        })
        .collect()
}

fn run(pkg: &Path, task: &TaskDescriptor, cases: &[Case]) -> Result<RunResult, String> {
    let spec = RunSpec {
        submission_id: "sub-limits",
        model_ref: pkg,
        task,
        limits: task.limits,
        run_seed: 3,
    };
    run_model(&spec, cases).map_err(|e| e.to_string())
}

/// Shell model that records every line it receives, then abstains.
fn recorder(dir: &Path) -> PathBuf {
    use std::os::unix::fs::PermissionsExt;
    let pkg = dir.join("recorder");
    fs::create_dir_all(&pkg).unwrap();
    let log = pkg.join("seen.log");
    let script = format!(
        r#"#!/bin/sh
while IFS= read -r line; do
  printf '%s\n' "$line" >> '{}'
  id=$(printf '%s' "$line" | sed -n 's/.*"case_id":"\([^"]*\)".*/\1/p')
  case "$line" in
    *'"type":"hello"'*) echo '{{"type":"ready","name":"rec","version":"1"}}' ;;
    *'"type":"end"'*) exit 0 ;;
    *) echo "{{\"type\":\"abstain\",\"case_id\":\"$id\",\"confidence\":0}}" ;;
  esac
done
"#,
        log.display()
    );
    fs::write(pkg.join("run"), script).unwrap();
    fs::set_permissions(pkg.join("run"), fs::Permissions::from_mode(0o755)).unwrap();
    pkg
}

fn limit_enforcement() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let per_case = 400;
    let sleeper = model_package(
        dir.path(),
        "sleep",
        &["sleep", "--ms", &(2 * per_case).to_string()],
    );
    let t = limit_task(per_case, 256 << 20);
    let started = Instant::now();
    let r = run(&sleeper, &t, &plain_cases(3))?;
    let elapsed = started.elapsed().as_millis() as u64;
    ensure!(
        r.exit == RunExit::Timeout,
        "sleeping model gave {:?}",
        r.exit
    );
    ensure!(
        r.predictions.is_empty(),
        "sleeping model recorded {} predictions",
        r.predictions.len()
    );
    let bound = per_case + GRACE_MS + 1000;
    ensure!(
        elapsed <= bound,
        "timeout declared after {elapsed} ms, bound {bound} ms"
    );

    let max = 64u64 << 20;
    let hog = model_package(
        dir.path(),
        "hog",
        &["hog", "--bytes", &(2 * max).to_string()],
    );
    let t = limit_task(5_000, max);
    let r = run(&hog, &t, &plain_cases(2))?;
    ensure!(
        r.exit == RunExit::MemoryExceeded,
        "hog gave {:?} ({:?})",
        r.exit,
        r.detail
    );

    // Through the platform: both fail the gate, which only ever sees train cases.
    let platform =
        Platform::open(&dir.path().join("data"), credentials()).map_err(|e| e.to_string())?;
    let admin = Principal::admin("admin");
    let alice = Principal::participant("alice");
    let (mut lt, cases) = synthetic::generate("limits", 30, 2, 9);
    lt.limits = limit_task(per_case, max).limits;
    let ds = platform
        .register_dataset(&admin, lt, cases, None)
        .map_err(|e| e.to_string())?;
    platform
        .create_split(&admin, &ds.dataset_id, 4, Fraction::new(1, 2))
        .map_err(|e| e.to_string())?;
    let (dataset, manifest) = platform.active_split("limits").map_err(|e| e.to_string())?;

    let rec = recorder(dir.path());
    let mut failed_checks = Vec::new();
    for (pkg, expect) in [
        (&sleeper, CheckName::PerCaseTime),
        (&hog, CheckName::ResidentMemory),
        (&rec, CheckName::ProtocolHandshake),
    ] {
        let req = SubmitRequest {
            model_ref: pkg.clone(),
            name: "limit".into(),
            version: String::new(),
            baseline: false,
        };
        let out = platform
            .submit(&alice, "limits", &req)
            .map_err(|e| e.to_string())?;
        let failed: Vec<CheckName> = out
            .eligibility
            .checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.check)
            .collect();
        if expect == CheckName::ProtocolHandshake {
            ensure!(
                out.eligibility.eligible,
                "recorder should be eligible: {failed:?}"
            );
        } else {
            ensure!(
                failed == vec![expect],
                "expected only {expect:?} to fail, got {failed:?}"
            );
            ensure!(
                platform.state().submissions[&out.submission_id].status
                    == SubmissionStatus::Rejected,
                "ineligible submission not rejected"
            );
            failed_checks.push(expect);
        }
    }
    ensure!(
        platform.registry().audit_log().is_empty(),
        "the gate opened the secret split"
    );
    ensure!(
        platform.state().secret_accesses.is_empty(),
        "secret access logged during gating"
    );

    let seen = fs::read_to_string(rec.join("seen.log")).unwrap_or_default();
    let ids: Vec<String> = seen
        .lines()
        .filter_map(|l| serde_json::from_str::<serde_json::Value>(l).ok())
        .filter_map(|v| {
            v.get("case_id")
                .and_then(|c| c.as_str())
                .map(str::to_string)
        })
        .collect();
    ensure!(!ids.is_empty(), "recorder saw no cases");
    ensure!(
        ids.iter().all(|id| manifest.is_train(id)),
        "gate sent a non-train case: {ids:?}"
    );
    let probes = gate::probe_cases(&dataset, &manifest).map_err(|e| e.to_string())?;
    ensure!(
        probes.iter().all(|c| !manifest.is_test(&c.case_id)),
        "probe set contains test cases"
    );
    let leaked = manifest
        .test_ids
        .iter()
        .find(|id| seen.contains(&format!("\"{id}\"")));
    ensure!(leaked.is_none(), "test id {:?} reached the gate", leaked);

    // A probe list carrying a test case is refused outright.
    let sub = Submission {
        submission_id: "sub-x".into(),
        task_id: "limits".into(),
        participant_id: "alice".into(),
        model_ref: rec.clone(),
        declared_name: "rec".into(),
        declared_version: String::new(),
        created_at: chrono::Utc::now(),
        is_baseline: false,
    };
    let secret = dataset.case(&manifest.test_ids[0]).unwrap().case.clone();
    ensure!(
        gate::validate_submission(&sub, &dataset.task, &manifest, &[secret]).is_err(),
        "gate accepted a test case"
    );

    Ok(format!("timeout after {elapsed} ms (bound {bound}), memory breach caught, gate saw {} train cases only", ids.len()))
}

// ---------------------------------------------------------------------------
// Protocol fuzz

fn expected(fault: Fault) -> (RunExit, Option<Violation>) {
    use Fault::*;
    use RunExit::{Crash, ProtocolError as PE, Timeout};
    match fault {
        WrongCaseId | DuplicateAnswer => (PE, Some(Violation::WrongCaseId)),
        JunkLine | UnknownMessageType | MissingCaseId | JsonArray | TruncatedLine
        | StringConfidence => (PE, Some(Violation::Malformed)),
        EarlyExit | EarlyExitNonzero | Abort | ClosedStdout => (Crash, None),
        ConfidenceAboveOne | ConfidenceNegative | AbstainConfidenceAboveOne => {
            (PE, Some(Violation::ConfidenceOutOfRange))
        }
        UnknownCode => (PE, Some(Violation::UnknownCode)),
        NoReady | DoubleReady => (PE, Some(Violation::UnexpectedMessage)),
        SilentHandshake | HangAfterEnd => (Timeout, None),
        EmptyRanking | RepeatedCode | IncreasingConfidences => {
            (PE, Some(Violation::InvalidRanking))
        }
        OutputAfterEnd => (PE, Some(Violation::OutputAfterEnd)),
        NonzeroExitAfterEnd => (PE, Some(Violation::ExitStatusAfterEnd)),
    }
}

fn protocol_conformance() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut t = task("fuzz", &["A", "B", "C"]);
    t.limits = ResourceLimits {
        per_case_wall_ms: 600,
        total_wall_ms: 10_000,
        max_resident_bytes: 256 << 20,
    };
    let cases = plain_cases(3);
    let mut mismatches = Vec::new();
    let handles: Vec<_> = Fault::ALL
        .iter()
        .map(|&fault| {
            let pkg = model_package(
                dir.path(),
                &fault.name(),
                &["faulty", "--fault", &fault.name()],
            );
            let (t, cases) = (t.clone(), cases.clone());
            std::thread::spawn(move || (fault, run(&pkg, &t, &cases)))
        })
        .collect();
    for h in handles {
        let (fault, result) = h
            .join()
            .map_err(|_| "platform thread panicked".to_string())?;
        let r = result?;
        let got = (r.exit, r.violation);
        if got != expected(fault) {
            mismatches.push(format!(
                "{}: got {got:?}, expected {:?}",
                fault.name(),
                expected(fault)
            ));
        }
        let checks = gate::checks_for(&r, &t);
        if checks.iter().all(|c| c.passed) {
            mismatches.push(format!("{}: passed every eligibility check", fault.name()));
        }
    }
    // The well-behaved control completes.
    let control = model_package(dir.path(), "abstain", &["abstain"]);
    let r = run(&control, &t, &cases)?;
    ensure!(
        r.completed() && r.predictions.len() == 3,
        "control model gave {:?}",
        r.exit
    );
    ensure!(mismatches.is_empty(), "{}", mismatches.join("; "));
    Ok(format!("{} malformed behaviours mapped", Fault::ALL.len()))
}

// ---------------------------------------------------------------------------
// End to end

fn end_to_end() -> Outcome {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let platform =
        Platform::open(&dir.path().join("data"), credentials()).map_err(|e| e.to_string())?;
    let server = TestServer::start(platform);
    let admin = server.client(Some(ADMIN));
    let api = |e: bench_core::service::client::ApiError| {
        format!("{} {}: {}", e.status, e.code, e.message)
    };

    let (task, cases) = synthetic::generate("synthetic-triage", 200, 3, synthetic::DEFAULT_SEED);
    let ds = admin
        .register_dataset(task.clone(), cases.clone(), None)
        .map_err(api)?;
    let split = admin
        .create_split(
            &ds.dataset_id,
            synthetic::DEFAULT_SEED,
            Fraction::new(3, 10),
        )
        .map_err(api)?;

    let public = dir.path().join("public");
    let tar = server
        .client(None)
        .export_public("synthetic-triage")
        .map_err(api)?;
    bench_core::registry::PublicArchive { bytes: tar }
        .unpack(&public)
        .map_err(|e| e.to_string())?;
    let train = bench_core::registry::read_archive_dir(&public)
        .map_err(|e| e.to_string())?
        .cases;
    let pkg = reference::write_majority_package(&dir.path().join("majority"), &bench_exe(), &train)
        .map_err(|e| e.to_string())?;

    let req = SubmitRequest {
        model_ref: pkg,
        name: "majority".into(),
        version: "1".into(),
        baseline: true,
    };
    let out = admin.submit("synthetic-triage", &req).map_err(api)?;
    let report = admin
        .wait_report(&out.submission_id, Duration::from_secs(30))
        .map_err(api)?;
    let board = admin
        .leaderboard("synthetic-triage", &ViewFilter::default())
        .map_err(api)?;
    let table = admin
        .leaderboard_text("synthetic-triage", &ViewFilter::default())
        .map_err(api)?;
    let secs = started.elapsed().as_secs_f64();
    ensure!(secs < 30.0, "pipeline took {secs:.1}s");
    ensure!(
        board.iter().any(|e| e.key() == report.digest),
        "report missing from leaderboard"
    );
    ensure!(table.contains("majority"), "table lacks the entry");

    // Independent count over the secret split.
    let test_ids = server
        .platform
        .active_split("synthetic-triage")
        .map_err(|e| e.to_string())?
        .1
        .test_ids
        .clone();
    ensure!(test_ids.len() == split.n_test, "split size disagrees");
    let gold: HashMap<&str, &str> = cases
        .iter()
        .map(|c| (c.case_id(), c.gold.code.as_str()))
        .collect();
    let mut counts: BTreeMap<&str, i64> = BTreeMap::new();
    for id in &test_ids {
        *counts.entry(gold[id.as_str()]).or_default() += 1;
    }
    let (&top_code, &top_count) = counts
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .unwrap();
    let n = test_ids.len() as i64;
    let clean = report.clean.as_ref().ok_or("no clean block")?;
    ensure!(
        same(clean.top1_all, top_count, n),
        "top1_all {} != test majority share {top_count}/{n} (class {top_code})",
        clean.top1_all
    );

    let th = &task.thresholds;
    ensure!(
        th.theta_ds == Fraction::new(1, 2) && th.theta_auto == Fraction::new(9, 10),
        "unexpected thresholds"
    );
    let want = if clean.top1_all >= th.theta_auto {
        Grade::Autonomous
    } else if clean.top1_selective >= th.theta_ds && clean.coverage >= th.min_coverage {
        Grade::DecisionSupport
    } else {
        Grade::Fail
    };
    ensure!(
        report.grade == want,
        "grade {:?}, rule gives {want:?}",
        report.grade
    );
    Ok(format!(
        "top1_all {}/{} = {} (class {top_code}), grade {:?}, {secs:.1}s",
        top_count,
        n,
        clean.top1_all.decimal(),
        report.grade
    ))
}

// ---------------------------------------------------------------------------
// Recovery

struct Server {
    child: Child,
    base: String,
}

impl Server {
    fn start(data: &Path) -> Self {
        let mut child = Command::new(bench_exe())
            .arg("serve")
            .env("BENCH_LISTEN", "127.0.0.1:0")
            .env("BENCH_DATA_DIR", data)
            .env("BENCH_WORKERS", "1")
            .env("BENCH_ADMIN_TOKEN", ADMIN)
            .env("BENCH_PARTICIPANT_TOKENS", format!("alice:{ALICE}"))
            .env("BENCH_LOG", "warn")
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .expect("start server");
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap())
            .read_line(&mut line)
            .unwrap();
        let base = line.trim().trim_start_matches("listening on ").to_string();
        Self { child, base }
    }

    fn client(&self, token: &str) -> bench_core::service::client::Client {
        bench_core::service::client::Client::new(self.base.clone(), Some(token.to_string()))
            .unwrap()
    }

    fn kill(mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn read_events(data: &Path) -> Vec<bench_core::service::Event> {
    parse_log(&fs::read_to_string(data.join("events.jsonl")).unwrap_or_default())
        .map(|(e, _)| e)
        .unwrap_or_default()
}

/// `REPORT_ISSUED` and `LEADERBOARD_UPDATED` counts per submission.
fn issue_counts(events: &[bench_core::service::Event]) -> BTreeMap<String, (usize, usize)> {
    let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for e in events {
        match e.kind {
            EventKind::Submitted => {
                counts
                    .entry(
                        e.payload["submission"]["submission_id"]
                            .as_str()
                            .unwrap_or_default()
                            .into(),
                    )
                    .or_default();
            }
            EventKind::ReportIssued => {
                counts
                    .entry(
                        e.payload["report"]["submission_id"]
                            .as_str()
                            .unwrap_or_default()
                            .into(),
                    )
                    .or_default()
                    .0 += 1;
            }
            EventKind::LeaderboardUpdated => {
                counts
                    .entry(
                        e.payload["submission_id"]
                            .as_str()
                            .unwrap_or_default()
                            .into(),
                    )
                    .or_default()
                    .1 += 1;
            }
            _ => {}
        }
    }
    counts
}

fn copy_dir(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for entry in fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let target = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_dir(&entry.path(), &target);
        } else {
            fs::copy(entry.path(), target).unwrap();
        }
    }
}

fn state_json(state: &State) -> String {
    serde_json::to_string(state).unwrap()
}

fn recovery() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let api = |e: bench_core::service::client::ApiError| {
        format!("{} {}: {}", e.status, e.code, e.message)
    };

    let (task, cases) = synthetic::generate("recovery", 40, 3, 77);
    let train_cases = cases.clone();
    let server = Server::start(&data);
    let admin = server.client(ADMIN);
    let alice = server.client(ALICE);
    let ds = admin.register_dataset(task, cases, None).map_err(api)?;
    admin
        .create_split(&ds.dataset_id, 5, Fraction::new(3, 10))
        .map_err(api)?;
    let params_dir = dir.path().join("majority");
    reference::write_majority_package(&params_dir, &bench_exe(), &train_cases)
        .map_err(|e| e.to_string())?;
    let abs = fs::canonicalize(&params_dir).unwrap().display().to_string();
    let slow = model_package(
        dir.path(),
        "slow",
        &["majority", "--package", &abs, "--delay-ms", "120"],
    );

    let mut ids = Vec::new();
    for name in ["first", "second"] {
        let req = SubmitRequest {
            model_ref: slow.clone(),
            name: name.into(),
            version: "1".into(),
            baseline: false,
        };
        ids.push(alice.submit("recovery", &req).map_err(api)?.submission_id);
    }

    // Kill once the first submission's clean run has finished.
    let deadline = Instant::now() + Duration::from_secs(30);
    loop {
        let events = read_events(&data);
        let clean_done = events.iter().any(|e| {
            e.kind == EventKind::RunFinished && e.payload["submission_id"] == ids[0].as_str()
        });
        if clean_done {
            break;
        }
        ensure!(Instant::now() < deadline, "first run never finished");
        std::thread::sleep(Duration::from_millis(20));
    }
    server.kill();
    let at_kill = read_events(&data);
    let issued_before = at_kill
        .iter()
        .filter(|e| e.kind == EventKind::ReportIssued)
        .count();
    ensure!(
        issued_before == 0,
        "killed too late: {issued_before} reports already issued"
    );

    let server = Server::start(&data);
    let alice = server.client(ALICE);
    for id in &ids {
        alice
            .wait_report(id, Duration::from_secs(60))
            .map_err(api)?;
    }
    let live = server.client(ADMIN).state().map_err(api)?;
    server.kill();
    let events = read_events(&data);
    for (id, (issued, updated)) in issue_counts(&events) {
        ensure!(
            issued == 1 && updated == 1,
            "{id}: {issued} REPORT_ISSUED, {updated} LEADERBOARD_UPDATED"
        );
    }
    let rebuilt = State::rebuild(&events).map_err(|e| e.to_string())?;
    ensure!(
        state_json(&rebuilt) == state_json(&live),
        "rebuilt state differs from live state"
    );

    // Crash at every event boundary, and with a torn trailing line.
    fs::write(
        slow.join("run"),
        fs::read_to_string(params_dir.join("run")).unwrap(),
    )
    .unwrap();
    let text = fs::read_to_string(data.join("events.jsonl")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let first_submit = events
        .iter()
        .position(|e| e.kind == EventKind::Submitted)
        .unwrap();
    let mut restarts = 0;
    for cut in first_submit..lines.len() {
        for torn in [false, true] {
            let copy = dir.path().join(format!("crash-{cut}-{torn}"));
            copy_dir(&data, &copy);
            let mut prefix: String = lines[..cut].iter().map(|l| format!("{l}\n")).collect();
            if torn {
                prefix.push_str(&lines[cut][..lines[cut].len() / 2]);
            }
            fs::write(copy.join("events.jsonl"), prefix).unwrap();
            let platform =
                Platform::open(&copy, credentials()).map_err(|e| format!("cut {cut}: {e}"))?;
            while platform.work_once().map_err(|e| e.to_string())?.is_some() {}
            let evs = read_events(&copy);
            for (id, (issued, updated)) in issue_counts(&evs) {
                ensure!(
                    issued == 1 && updated == 1,
                    "cut {cut} torn {torn}: {id} issued {issued}, updated {updated}"
                );
            }
            let folded = State::rebuild(&evs).map_err(|e| e.to_string())?;
            ensure!(
                state_json(&folded) == state_json(&platform.state()),
                "cut {cut}: rebuilt state differs"
            );
            restarts += 1;
            fs::remove_dir_all(&copy).ok();
        }
    }
    Ok(format!(
        "killed mid-run after {} events; {restarts} simulated crash points recovered",
        at_kill.len()
    ))
}

// ---------------------------------------------------------------------------
// Perturbation

/// Values computed by `tests/oracles/perturb.py`.
fn perturbation_golden() -> Outcome {
    let num = |x: f64| FeatureValue::Number(x);
    let cases: Vec<(&str, u64, f64, Vec<(&str, FeatureValue)>, Vec<f64>)> = vec![
        (
            "x-case",
            7,
            0.1,
            vec![("x", num(2.0))],
            vec![2.005130992750606],
        ),
        (
            "patient-7",
            9,
            0.05,
            vec![
                ("age", num(61.0)),
                ("ecg", FeatureValue::Array(vec![0.1, -0.2, 0.3])),
                ("note", FeatureValue::Text("chest pain".into())),
            ],
            vec![
                60.38250516006643,
                0.09643731818510337,
                -0.20882587337282557,
                0.27652170457689,
            ],
        ),
        (
            "c0",
            0,
            0.2,
            vec![("x", num(1.0)), ("y", num(-3.5))],
            vec![0.9892463332920085, -3.477560452862681],
        ),
        (
            "ward-ß",
            u64::MAX,
            0.01,
            vec![
                ("a_temp", num(36.6)),
                ("bp", FeatureValue::Array(vec![120.0, 80.0])),
                (
                    "scan",
                    FeatureValue::File {
                        file: "s.png".into(),
                    },
                ),
            ],
            vec![36.68657519524697, 119.87003967344049, 79.16381931998808],
        ),
        (
            "p",
            synthetic::DEFAULT_SEED,
            1.0,
            vec![("f", FeatureValue::Array(vec![0.0, 1e-9, 1e9]))],
            vec![0.0, 1.0833426556684162e-09, 819502647.5602959],
        ),
    ];
    for (case_id, seed, eps, features, want) in cases {
        let case = Case {
            case_id: case_id.into(),
            features: features
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            subgroups: BTreeMap::from([("site".to_string(), "north".to_string())]),
        };
        let out = perturb_case(&case, &PerturbationPolicy { magnitude: eps }, seed);
        let got: Vec<f64> = out
            .features
            .values()
            .flat_map(|v| match v {
                FeatureValue::Number(x) => vec![*x],
                FeatureValue::Array(xs) => xs.clone(),
                _ => vec![],
            })
            .collect();
        ensure!(
            got.len() == want.len(),
            "{case_id}: {} numeric elements",
            got.len()
        );
        for (g, w) in got.iter().zip(&want) {
            let tol = 1e-12 * w.abs().max(1e-300);
            ensure!((g - w).abs() <= tol, "{case_id}: {g:e} vs oracle {w:e}");
        }
        ensure!(
            out.subgroups == case.subgroups && out.case_id == case.case_id,
            "{case_id}: identity fields changed"
        );
        let untouched = out.features.iter().all(|(k, v)| {
            !matches!(v, FeatureValue::Text(_) | FeatureValue::File { .. })
                || case.features[k] == *v
        });
        ensure!(untouched, "{case_id}: non-numeric feature changed");
    }
    Ok("5 cases, 13 elements within 1e-12 relative".into())
}
