use std::io::{BufRead, BufReader, Read, Write};
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, Command, ExitStatus, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use tracing::debug;

use super::protocol::{FromModel, TaskInfo, ToModel, PROTOCOL_VERSION};
use super::{memory, Answer, PredictionRecord, RunExit, RunResult, Violation};
use crate::error::{Error, Result};
use crate::registry::Case;
use crate::task::{ResourceLimits, TaskDescriptor};

/// Slack added to every wall-clock limit before a timeout is declared.
pub const GRACE_MS: u64 = 250;
/// Resident-memory sampling period.
pub const MEMORY_POLL_MS: u64 = 50;
/// Longest line accepted from a model.
const MAX_LINE_BYTES: usize = 16 << 20;

/// Everything a run needs besides the case stream.
#[derive(Clone, Debug)]
pub struct RunSpec<'a> {
    pub submission_id: &'a str,
    pub model_ref: &'a Path,
    pub task: &'a TaskDescriptor,
    pub limits: ResourceLimits,
    pub run_seed: u64,
}

/// Resolves a model package to its entry point: the file itself, or `run`
/// inside a package directory.
pub fn resolve_entry(model_ref: &Path) -> Result<PathBuf> {
    let entry = if model_ref.is_dir() {
        model_ref.join("run")
    } else {
        model_ref.to_path_buf()
    };
    if !entry.is_file() {
        return Err(Error::ModelNotFound(model_ref.display().to_string()));
    }
    Ok(entry)
}

/// Runs the model once over `cases`, in order.
///
/// Limit breaches and protocol violations end the run early and are reported
/// through [`RunResult::exit`]; only a model that cannot be started at all is
/// an error.
pub fn run_model(spec: &RunSpec<'_>, cases: &[Case]) -> Result<RunResult> {
    let entry = resolve_entry(spec.model_ref)?;
    let mut cmd = Command::new(&entry);
    if let Some(dir) = entry.parent() {
        cmd.current_dir(dir);
    }
    cmd.stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .process_group(0);
    let child = cmd
        .spawn()
        .map_err(|e| Error::SpawnFailed(format!("{}: {e}", entry.display())))?;

    let started = Instant::now();
    let mut session = Session::start(child, spec.limits);
    let outcome = session.drive(spec, cases, started);
    session.shutdown();
    let result = RunResult {
        submission_id: spec.submission_id.to_string(),
        run_seed: spec.run_seed,
        predictions: session.predictions,
        total_wall_ms: started.elapsed().as_millis() as u64,
        exit: outcome.exit,
        handshake_ok: session.handshake_ok,
        violation: outcome.violation,
        detail: outcome.detail,
    };
    debug!(submission = spec.submission_id, exit = ?result.exit, n = result.predictions.len(), "run finished");
    Ok(result)
}

/// A second run with an identical contract, kept separate so reports can
/// refer to run A and run B.
pub fn replay_run(spec: &RunSpec<'_>, cases: &[Case]) -> Result<RunResult> {
    run_model(spec, cases)
}

enum Signal {
    Line(Vec<u8>, Instant),
    Oversize,
    Eof,
    Memory(u64),
}

struct Session {
    child: Child,
    stdin: Option<ChildStdin>,
    rx: Receiver<Signal>,
    stop: Arc<AtomicBool>,
    limits: ResourceLimits,
    handshake_ok: bool,
    predictions: Vec<PredictionRecord>,
}

struct Outcome {
    exit: RunExit,
    violation: Option<Violation>,
    detail: Option<String>,
}

impl Session {
    fn start(mut child: Child, limits: ResourceLimits) -> Self {
        let (tx, rx) = mpsc::channel();
        let stdout = child.stdout.take().expect("stdout piped");
        let stdin = child.stdin.take();
        let reader_tx = tx.clone();
        thread::spawn(move || read_lines(stdout, reader_tx));
        let stop = Arc::new(AtomicBool::new(false));
        let pid = child.id();
        let monitor_stop = stop.clone();
        thread::spawn(move || watch_memory(pid, limits.max_resident_bytes, monitor_stop, tx));
        Self {
            child,
            stdin,
            rx,
            stop,
            limits,
            handshake_ok: false,
            predictions: Vec::new(),
        }
    }

    fn drive(&mut self, spec: &RunSpec<'_>, cases: &[Case], started: Instant) -> Outcome {
        let total_deadline = started + Duration::from_millis(self.limits.total_wall_ms + GRACE_MS);
        let per_case = Duration::from_millis(self.limits.per_case_wall_ms + GRACE_MS);

        let hello = ToModel::Hello {
            protocol: PROTOCOL_VERSION,
            task: TaskInfo::from(spec.task),
        };
        if let Err(outcome) = self.send(&hello) {
            return outcome;
        }
        let deadline = (Instant::now() + per_case).min(total_deadline);
        match self.next_message(deadline) {
            Ok((FromModel::Ready { .. }, _)) => self.handshake_ok = true,
            Ok((other, _)) => {
                return protocol_error(
                    Violation::UnexpectedMessage,
                    format!("expected ready, got {}", kind(&other)),
                )
            }
            Err(outcome) => return outcome,
        }

        for case in cases {
            let msg = ToModel::Case {
                case_id: case.case_id.clone(),
                features: case.features.clone(),
            };
            if let Err(outcome) = self.send(&msg) {
                return outcome;
            }
            let sent = Instant::now();
            let deadline = (sent + per_case).min(total_deadline);
            let (msg, at) = match self.next_message(deadline) {
                Ok(m) => m,
                Err(outcome) => return outcome,
            };
            let answer = match check_answer(msg, &case.case_id, spec.task) {
                Ok(a) => a,
                Err((violation, why)) => return protocol_error(violation, why),
            };
            let wall_ms = at.saturating_duration_since(sent).as_millis() as u64;
            self.predictions.push(PredictionRecord {
                case_id: case.case_id.clone(),
                answer,
                wall_ms,
            });
        }

        if let Err(outcome) = self.send(&ToModel::End) {
            return outcome;
        }
        let deadline = (Instant::now() + per_case).min(total_deadline);
        loop {
            match self
                .rx
                .recv_timeout(deadline.saturating_duration_since(Instant::now()))
            {
                Ok(Signal::Eof) => break,
                Ok(Signal::Memory(rss)) => return memory_exceeded(rss, self.limits),
                Ok(Signal::Line(..)) | Ok(Signal::Oversize) => {
                    return protocol_error(
                        Violation::OutputAfterEnd,
                        "output after end message".into(),
                    );
                }
                Err(RecvTimeoutError::Timeout) => return timeout("model did not exit after end"),
                Err(RecvTimeoutError::Disconnected) => break,
            }
        }
        match self.wait_exit(deadline) {
            Some(status) if status.success() => Outcome {
                exit: RunExit::Completed,
                violation: None,
                detail: None,
            },
            Some(status) => protocol_error(
                Violation::ExitStatusAfterEnd,
                format!("model exited with {status} after end"),
            ),
            None => timeout("model did not exit after end"),
        }
    }

    fn send(&mut self, msg: &ToModel) -> std::result::Result<(), Outcome> {
        let stdin = self.stdin.as_mut().expect("stdin open while driving");
        let written = stdin.write_all(&msg.to_line()).and_then(|_| stdin.flush());
        if written.is_err() {
            return Err(self.crashed("model closed its input"));
        }
        Ok(())
    }

    /// Next protocol message, or the outcome that ends the run.
    fn next_message(
        &mut self,
        deadline: Instant,
    ) -> std::result::Result<(FromModel, Instant), Outcome> {
        match self
            .rx
            .recv_timeout(deadline.saturating_duration_since(Instant::now()))
        {
            Ok(Signal::Line(bytes, at)) => match serde_json::from_slice::<FromModel>(&bytes) {
                Ok(msg) => Ok((msg, at)),
                Err(e) => Err(protocol_error(
                    Violation::Malformed,
                    format!("unparseable message: {e}"),
                )),
            },
            Ok(Signal::Oversize) => Err(protocol_error(
                Violation::LineTooLong,
                format!("line longer than {MAX_LINE_BYTES} bytes"),
            )),
            Ok(Signal::Memory(rss)) => Err(memory_exceeded(rss, self.limits)),
            Ok(Signal::Eof) | Err(RecvTimeoutError::Disconnected) => {
                Err(self.crashed("model exited early"))
            }
            Err(RecvTimeoutError::Timeout) => Err(timeout("answer not received in time")),
        }
    }

    /// The model went away mid-protocol. A memory breach seen while it was
    /// dying still takes precedence.
    fn crashed(&mut self, what: &str) -> Outcome {
        let status = self.wait_exit(Instant::now() + Duration::from_millis(GRACE_MS));
        while let Ok(sig) = self.rx.try_recv() {
            if let Signal::Memory(rss) = sig {
                return memory_exceeded(rss, self.limits);
            }
        }
        let status = status.map_or_else(|| "still running".to_string(), |s| s.to_string());
        Outcome {
            exit: RunExit::Crash,
            violation: None,
            detail: Some(format!("{what} ({status})")),
        }
    }

    fn wait_exit(&mut self, deadline: Instant) -> Option<ExitStatus> {
        loop {
            match self.child.try_wait() {
                Ok(Some(status)) => return Some(status),
                Ok(None) if Instant::now() < deadline => thread::sleep(Duration::from_millis(5)),
                _ => return None,
            }
        }
    }

    fn shutdown(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        self.stdin.take();
        // The model runs in its own process group; take all of it down.
        let pgid = self.child.id() as libc::pid_t;
        // SAFETY: kill has no memory-safety preconditions.
        unsafe {
            libc::kill(-pgid, libc::SIGKILL);
        }
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn read_lines(stdout: std::process::ChildStdout, tx: Sender<Signal>) {
    let mut reader = BufReader::new(stdout);
    loop {
        let mut line = Vec::new();
        match (&mut reader)
            .take(MAX_LINE_BYTES as u64 + 1)
            .read_until(b'\n', &mut line)
        {
            Ok(0) | Err(_) => {
                let _ = tx.send(Signal::Eof);
                return;
            }
            Ok(_) => {
                let at = Instant::now();
                if line.last() != Some(&b'\n') {
                    let sig = if line.len() > MAX_LINE_BYTES {
                        Signal::Oversize
                    } else {
                        Signal::Line(line, at)
                    };
                    let _ = tx.send(sig);
                    let _ = tx.send(Signal::Eof);
                    return;
                }
                line.pop();
                if line.last() == Some(&b'\r') {
                    line.pop();
                }
                if tx.send(Signal::Line(line, at)).is_err() {
                    return;
                }
            }
        }
    }
}

fn watch_memory(pid: u32, limit: u64, stop: Arc<AtomicBool>, tx: Sender<Signal>) {
    while !stop.load(Ordering::Relaxed) {
        match memory::tree_rss_bytes(pid) {
            Some(rss) if rss > limit => {
                let _ = tx.send(Signal::Memory(rss));
                return;
            }
            Some(_) => {}
            None => return,
        }
        thread::sleep(Duration::from_millis(MEMORY_POLL_MS));
    }
}

/// Validates one answer against the pending case and the task label space.
pub fn check_answer(
    msg: FromModel,
    expected: &str,
    task: &TaskDescriptor,
) -> std::result::Result<Answer, (Violation, String)> {
    let in_unit = |p: f64| p.is_finite() && (0.0..=1.0).contains(&p);
    let wrong_case = |case_id: &str| {
        (
            Violation::WrongCaseId,
            format!("answer for `{case_id}` while `{expected}` was pending"),
        )
    };
    match msg {
        FromModel::Abstain {
            case_id,
            confidence,
        } => {
            if case_id != expected {
                return Err(wrong_case(&case_id));
            }
            if !in_unit(confidence) {
                return Err((
                    Violation::ConfidenceOutOfRange,
                    format!("abstention confidence {confidence} outside [0, 1]"),
                ));
            }
            Ok(Answer::Abstain { confidence })
        }
        FromModel::Prediction { case_id, ranking } => {
            if case_id != expected {
                return Err(wrong_case(&case_id));
            }
            if ranking.is_empty() {
                return Err((Violation::InvalidRanking, "empty ranking".into()));
            }
            for (i, r) in ranking.iter().enumerate() {
                if !task.contains_label(&r.code) {
                    return Err((
                        Violation::UnknownCode,
                        format!("code `{}` is not in the label space", r.code),
                    ));
                }
                if !in_unit(r.confidence) {
                    return Err((
                        Violation::ConfidenceOutOfRange,
                        format!("confidence {} outside [0, 1]", r.confidence),
                    ));
                }
                if ranking[..i].iter().any(|p| p.code == r.code) {
                    return Err((
                        Violation::InvalidRanking,
                        format!("code `{}` ranked twice", r.code),
                    ));
                }
                if i > 0 && r.confidence > ranking[i - 1].confidence {
                    return Err((
                        Violation::InvalidRanking,
                        "ranking confidences increase".into(),
                    ));
                }
            }
            Ok(Answer::Ranked { ranking })
        }
        other => Err((
            Violation::UnexpectedMessage,
            format!("expected an answer, got {}", kind(&other)),
        )),
    }
}

fn kind(msg: &FromModel) -> &'static str {
    match msg {
        FromModel::Ready { .. } => "ready",
        FromModel::Prediction { .. } => "prediction",
        FromModel::Abstain { .. } => "abstain",
    }
}

fn protocol_error(violation: Violation, why: String) -> Outcome {
    Outcome {
        exit: RunExit::ProtocolError,
        violation: Some(violation),
        detail: Some(why),
    }
}

fn timeout(why: &str) -> Outcome {
    Outcome {
        exit: RunExit::Timeout,
        violation: None,
        detail: Some(why.to_string()),
    }
}

fn memory_exceeded(rss: u64, limits: ResourceLimits) -> Outcome {
    let detail = format!(
        "resident set {rss} bytes over limit {}",
        limits.max_resident_bytes
    );
    Outcome {
        exit: RunExit::MemoryExceeded,
        violation: None,
        detail: Some(detail),
    }
}
