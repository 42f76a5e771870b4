//! Built-in reference models speaking the wire protocol, and helpers that
//! package them as executable model directories.
//!
//! The `bench model <kind>` subcommand runs these; packages are a `run`
//! script that execs it. They cover the platform's own baselines and every
//! failure mode the harness must classify.

use std::collections::hash_map::RandomState;
use std::collections::BTreeMap;
use std::fs;
use std::hash::BuildHasher;
use std::io::{self, BufRead, Write};
use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fraction::Fraction;
use crate::harness::{FromModel, RankedCode, TaskInfo, ToModel};
use crate::registry::LabeledCase;

/// Deliberate protocol violations, one per variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fault {
    WrongCaseId,
    DuplicateAnswer,
    JunkLine,
    EarlyExit,
    EarlyExitNonzero,
    ConfidenceAboveOne,
    ConfidenceNegative,
    AbstainConfidenceAboveOne,
    UnknownCode,
    NoReady,
    SilentHandshake,
    UnknownMessageType,
    EmptyRanking,
    RepeatedCode,
    IncreasingConfidences,
    MissingCaseId,
    JsonArray,
    DoubleReady,
    OutputAfterEnd,
    NonzeroExitAfterEnd,
    HangAfterEnd,
    TruncatedLine,
    Abort,
    StringConfidence,
    ClosedStdout,
}

impl Fault {
    pub const ALL: [Fault; 25] = [
        Fault::WrongCaseId,
        Fault::DuplicateAnswer,
        Fault::JunkLine,
        Fault::EarlyExit,
        Fault::EarlyExitNonzero,
        Fault::ConfidenceAboveOne,
        Fault::ConfidenceNegative,
        Fault::AbstainConfidenceAboveOne,
        Fault::UnknownCode,
        Fault::NoReady,
        Fault::SilentHandshake,
        Fault::UnknownMessageType,
        Fault::EmptyRanking,
        Fault::RepeatedCode,
        Fault::IncreasingConfidences,
        Fault::MissingCaseId,
        Fault::JsonArray,
        Fault::DoubleReady,
        Fault::OutputAfterEnd,
        Fault::NonzeroExitAfterEnd,
        Fault::HangAfterEnd,
        Fault::TruncatedLine,
        Fault::Abort,
        Fault::StringConfidence,
        Fault::ClosedStdout,
    ];

    pub fn name(self) -> String {
        serde_json::to_value(self)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default()
    }

    pub fn parse(name: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(name.to_string()))
            .map_err(|_| Error::invalid(format!("unknown fault `{name}`")))
    }
}

/// Parameters of the majority baseline, stored as `model.json`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MajorityParams {
    pub code: String,
    pub confidence: Fraction,
}

/// Most frequent training label and its share; ties go to the
/// lexicographically smallest code.
pub fn majority_params(train: &[LabeledCase]) -> Result<MajorityParams> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for c in train {
        *counts.entry(c.gold.code.as_str()).or_default() += 1;
    }
    // max_by_key keeps the last maximum; iterate in reverse so ties pick the smallest code.
    let (code, count) = counts
        .iter()
        .rev()
        .max_by_key(|(_, n)| **n)
        .ok_or_else(|| Error::invalid("no training cases"))?;
    Ok(MajorityParams {
        code: code.to_string(),
        confidence: Fraction::new(*count as i64, train.len() as i64),
    })
}

/// Behaviour of a built-in model.
#[derive(Clone, Debug, PartialEq)]
pub enum Behavior {
    /// Always the same code with a fixed confidence.
    Majority(MajorityParams),
    /// Abstains on everything with confidence 0.
    Abstain,
    /// Sleeps `ms` before every answer (abstains).
    Sleep {
        ms: u64,
    },
    /// Touches `bytes` of memory on the first case, then stalls.
    Hog {
        bytes: u64,
    },
    /// Random top-1 drawn from a per-process random state.
    Noisy,
    Faulty(Fault),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelOptions {
    pub behavior: Behavior,
    pub name: String,
    /// Extra delay before each answer.
    pub delay_ms: u64,
}

impl ModelOptions {
    pub fn new(behavior: Behavior) -> Self {
        Self {
            behavior,
            name: "reference".into(),
            delay_ms: 0,
        }
    }
}

fn emit(out: &mut impl Write, msg: &FromModel) -> io::Result<()> {
    out.write_all(&msg.to_line())?;
    out.flush()
}

fn raw(out: &mut impl Write, line: &str) -> io::Result<()> {
    out.write_all(line.as_bytes())?;
    out.flush()
}

/// Runs the model side of the protocol until `end` or EOF. Returns the
/// process exit status to use.
pub fn serve(opts: &ModelOptions, input: impl BufRead, mut out: impl Write) -> io::Result<i32> {
    let fault = match opts.behavior {
        Behavior::Faulty(f) => Some(f),
        _ => None,
    };
    let mut task: Option<TaskInfo> = None;
    let mut answered = 0usize;
    let mut hoard: Vec<u8> = Vec::new();
    let state = RandomState::new();

    for line in input.lines() {
        let line = line?;
        let msg: ToModel = match serde_json::from_str(&line) {
            Ok(m) => m,
            Err(_) => return Ok(2),
        };
        match msg {
            ToModel::Hello { task: info, .. } => {
                task = Some(info);
                match fault {
                    Some(Fault::SilentHandshake) => continue,
                    Some(Fault::NoReady) => {
                        emit(
                            &mut out,
                            &FromModel::Abstain {
                                case_id: "hello".into(),
                                confidence: 0.0,
                            },
                        )?;
                        continue;
                    }
                    _ => {}
                }
                let ready = FromModel::Ready {
                    name: opts.name.clone(),
                    version: env!("CARGO_PKG_VERSION").into(),
                };
                emit(&mut out, &ready)?;
                if fault == Some(Fault::DoubleReady) {
                    emit(&mut out, &ready)?;
                }
            }
            ToModel::Case { case_id, .. } => {
                let labels = task
                    .as_ref()
                    .map(|t| t.label_space.clone())
                    .unwrap_or_default();
                let first = labels.first().cloned().unwrap_or_else(|| "A".into());
                if opts.delay_ms > 0 {
                    thread::sleep(Duration::from_millis(opts.delay_ms));
                }
                let answer = match &opts.behavior {
                    Behavior::Majority(p) => FromModel::Prediction {
                        case_id,
                        ranking: vec![RankedCode {
                            code: p.code.clone(),
                            confidence: p.confidence.to_f64(),
                        }],
                    },
                    Behavior::Abstain => FromModel::Abstain {
                        case_id,
                        confidence: 0.0,
                    },
                    Behavior::Sleep { ms } => {
                        thread::sleep(Duration::from_millis(*ms));
                        FromModel::Abstain {
                            case_id,
                            confidence: 0.0,
                        }
                    }
                    Behavior::Hog { bytes } => {
                        hoard = vec![1u8; *bytes as usize];
                        // Touch every page so it is resident.
                        for i in (0..hoard.len()).step_by(4096) {
                            hoard[i] = (i % 251) as u8;
                        }
                        thread::sleep(Duration::from_secs(60));
                        FromModel::Abstain {
                            case_id,
                            confidence: hoard[hoard.len() / 2] as f64 / 255.0,
                        }
                    }
                    Behavior::Noisy => {
                        let pick = state.hash_one(&case_id) as usize % labels.len().max(1);
                        let code = labels.get(pick).cloned().unwrap_or_else(|| first.clone());
                        FromModel::Prediction {
                            case_id,
                            ranking: vec![RankedCode {
                                code,
                                confidence: 0.5,
                            }],
                        }
                    }
                    Behavior::Faulty(f) => {
                        let second = labels.get(1).cloned().unwrap_or_else(|| first.clone());
                        if let Some(code) =
                            faulty_case(*f, &case_id, &first, &second, answered, &mut out)?
                        {
                            return Ok(code);
                        }
                        answered += 1;
                        continue;
                    }
                };
                emit(&mut out, &answer)?;
                answered += 1;
            }
            ToModel::End => {
                return match fault {
                    Some(Fault::OutputAfterEnd) => {
                        emit(
                            &mut out,
                            &FromModel::Abstain {
                                case_id: "bye".into(),
                                confidence: 0.0,
                            },
                        )?;
                        Ok(0)
                    }
                    Some(Fault::NonzeroExitAfterEnd) => Ok(2),
                    Some(Fault::HangAfterEnd) => {
                        thread::sleep(Duration::from_secs(3600));
                        Ok(0)
                    }
                    _ => Ok(0),
                };
            }
        }
    }
    Ok(if hoard.is_empty() { 0 } else { 1 })
}

/// Answers one case the faulty way. `Some(code)` ends the process.
fn faulty_case(
    fault: Fault,
    case_id: &str,
    code: &str,
    other: &str,
    answered: usize,
    out: &mut impl Write,
) -> io::Result<Option<i32>> {
    let ranked = |ranking: Vec<(&str, f64)>| FromModel::Prediction {
        case_id: case_id.to_string(),
        ranking: ranking
            .into_iter()
            .map(|(c, p)| RankedCode {
                code: c.into(),
                confidence: p,
            })
            .collect(),
    };
    let fine = ranked(vec![(code, 0.5)]);
    match fault {
        Fault::WrongCaseId => emit(
            out,
            &FromModel::Abstain {
                case_id: format!("{case_id}-x"),
                confidence: 0.0,
            },
        )?,
        Fault::DuplicateAnswer => {
            emit(out, &fine)?;
            emit(out, &fine)?;
        }
        Fault::JunkLine => raw(out, "this is not json\n")?,
        Fault::EarlyExit => return Ok(Some(0)),
        Fault::EarlyExitNonzero => return Ok(Some(3)),
        Fault::ConfidenceAboveOne => emit(out, &ranked(vec![(code, 1.5)]))?,
        Fault::ConfidenceNegative => emit(out, &ranked(vec![(code, -0.1)]))?,
        Fault::AbstainConfidenceAboveOne => emit(
            out,
            &FromModel::Abstain {
                case_id: case_id.into(),
                confidence: 2.0,
            },
        )?,
        Fault::UnknownCode => emit(out, &ranked(vec![("NOT-A-CODE", 0.9)]))?,
        Fault::UnknownMessageType => raw(
            out,
            &format!("{{\"type\":\"shrug\",\"case_id\":\"{case_id}\"}}\n"),
        )?,
        Fault::EmptyRanking => emit(out, &ranked(vec![]))?,
        Fault::RepeatedCode => emit(out, &ranked(vec![(code, 0.6), (code, 0.4)]))?,
        // A one-label task degenerates to a repeated code.
        Fault::IncreasingConfidences => emit(out, &ranked(vec![(code, 0.2), (other, 0.8)]))?,
        Fault::MissingCaseId => raw(out, "{\"type\":\"abstain\",\"confidence\":0.1}\n")?,
        Fault::JsonArray => raw(out, "[1,2,3]\n")?,
        Fault::TruncatedLine => {
            raw(
                out,
                &format!("{{\"type\":\"abstain\",\"case_id\":\"{case_id}\",\"conf"),
            )?;
            return Ok(Some(0));
        }
        Fault::Abort => {
            if answered > 0 {
                std::process::abort();
            }
            emit(out, &fine)?
        }
        Fault::StringConfidence => raw(
            out,
            &format!(
                "{{\"type\":\"abstain\",\"case_id\":\"{case_id}\",\"confidence\":\"high\"}}\n"
            ),
        )?,
        Fault::ClosedStdout => {
            // SAFETY: closing our own stdout descriptor; nothing else uses it afterwards.
            unsafe {
                libc::close(1);
            }
            thread::sleep(Duration::from_secs(3600));
        }
        Fault::NoReady
        | Fault::SilentHandshake
        | Fault::DoubleReady
        | Fault::OutputAfterEnd
        | Fault::NonzeroExitAfterEnd
        | Fault::HangAfterEnd => emit(out, &fine)?,
    }
    Ok(None)
}

fn shell_quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', r"'\''"))
}

/// Writes an executable package directory whose `run` entry execs
/// `bench_exe model <args>`.
pub fn write_package(dir: &Path, bench_exe: &Path, args: &[String]) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut script = String::from("#!/bin/sh\nexec ");
    script.push_str(&shell_quote(&bench_exe.display().to_string()));
    script.push_str(" model");
    for a in args {
        script.push(' ');
        script.push_str(&shell_quote(a));
    }
    script.push('\n');
    let run = dir.join("run");
    fs::write(&run, script)?;
    fs::set_permissions(&run, fs::Permissions::from_mode(0o755))?;
    Ok(dir.to_path_buf())
}

/// Builds the majority baseline package from training cases: `model.json`
/// holds the parameters, `run` serves them.
pub fn write_majority_package(
    dir: &Path,
    bench_exe: &Path,
    train: &[LabeledCase],
) -> Result<PathBuf> {
    let params = majority_params(train)?;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("model.json"), crate::canonical::to_vec(&params)?)?;
    let abs = fs::canonicalize(dir)?;
    write_package(
        dir,
        bench_exe,
        &[
            "majority".into(),
            "--package".into(),
            abs.display().to_string(),
            "--name".into(),
            "majority-baseline".into(),
        ],
    )
}

pub fn read_majority_params(package: &Path) -> Result<MajorityParams> {
    Ok(serde_json::from_slice(&fs::read(
        package.join("model.json"),
    )?)?)
}
