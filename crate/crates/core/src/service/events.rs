//! Append-only event log: one canonical-JSON event per LF-terminated line.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::canonical;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventKind {
    DatasetRegistered,
    SplitCreated,
    Submitted,
    Validated,
    Queued,
    RunStarted,
    RunFinished,
    ReportIssued,
    LeaderboardUpdated,
    SecretAccessed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub at: DateTime<Utc>,
    pub kind: EventKind,
    pub payload: Value,
}

impl Event {
    pub fn payload_as<T: serde::de::DeserializeOwned>(&self) -> Result<T> {
        serde_json::from_value(self.payload.clone()).map_err(|e| {
            Error::CorruptLog(format!(
                "event {} ({:?}) has a malformed payload: {e}",
                self.seq, self.kind
            ))
        })
    }
}

/// Checks that sequence numbers run 1, 2, 3, ... without gaps.
pub fn check_sequence(events: &[Event]) -> Result<()> {
    for (i, e) in events.iter().enumerate() {
        let want = i as u64 + 1;
        if e.seq != want {
            return Err(Error::CorruptLog(format!(
                "expected seq {want}, found {}",
                e.seq
            )));
        }
    }
    Ok(())
}

/// Parses log text. A final line without its LF is a torn append and is
/// ignored; any other unparsable line is corruption. Returns the events and
/// the byte length of the intact prefix.
pub fn parse_log(text: &str) -> Result<(Vec<Event>, usize)> {
    let mut events = Vec::new();
    let mut intact = 0;
    for (n, chunk) in text.split_inclusive('\n').enumerate() {
        let Some(line) = chunk.strip_suffix('\n') else {
            break;
        };
        let event: Event = serde_json::from_str(line)
            .map_err(|e| Error::CorruptLog(format!("line {}: {e}", n + 1)))?;
        events.push(event);
        intact += chunk.len();
    }
    check_sequence(&events)?;
    Ok((events, intact))
}

struct Writer {
    file: Option<File>,
    next_seq: u64,
}

/// The log. Appends are serialized by an internal lock and are durable
/// (`fsync`) before they return.
pub struct EventLog {
    path: Option<PathBuf>,
    writer: Mutex<Writer>,
}

impl EventLog {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            writer: Mutex::new(Writer {
                file: None,
                next_seq: 1,
            }),
        }
    }

    /// Opens (or creates) a log file and returns it with the events already in it.
    pub fn open(path: impl Into<PathBuf>) -> Result<(Self, Vec<Event>)> {
        let path = path.into();
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let text = match fs::read(&path) {
            Ok(bytes) => String::from_utf8(bytes)
                .map_err(|_| Error::CorruptLog("log is not UTF-8".into()))?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(e.into()),
        };
        let (events, intact) = parse_log(&text)?;
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        if intact < text.len() {
            tracing::warn!(
                bytes = text.len() - intact,
                "dropping torn tail of event log"
            );
            file.set_len(intact as u64)?;
        }
        let next_seq = events.len() as u64 + 1;
        Ok((
            Self {
                path: Some(path),
                writer: Mutex::new(Writer {
                    file: Some(file),
                    next_seq,
                }),
            },
            events,
        ))
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Appends one event. `apply` sees the event first and may reject it, in
    /// which case nothing is written and the sequence number is not used. If
    /// the write itself fails after `apply` accepted, later appends fail too
    /// (the observer is ahead of the log) until the log is reopened.
    pub fn append_with<R>(
        &self,
        kind: EventKind,
        payload: Value,
        apply: impl FnOnce(&Event) -> Result<R>,
    ) -> Result<(Event, R)> {
        let mut w = self.writer.lock();
        let event = Event {
            seq: w.next_seq,
            at: Utc::now(),
            kind,
            payload,
        };
        let mut line = canonical::to_vec(&event)?;
        line.push(b'\n');
        let out = apply(&event)?;
        if let Some(file) = w.file.as_mut() {
            file.write_all(&line)?;
            file.sync_data()?;
        }
        w.next_seq += 1;
        Ok((event, out))
    }

    /// Reads every event back from disk.
    pub fn read_all(path: &Path) -> Result<Vec<Event>> {
        let text = fs::read_to_string(path)?;
        Ok(parse_log(&text)?.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn line(seq: u64) -> String {
        format!("{{\"at\":\"2026-01-01T00:00:00Z\",\"kind\":\"QUEUED\",\"payload\":{{}},\"seq\":{seq}}}\n")
    }

    #[test]
    fn empty_log_is_empty() {
        assert!(parse_log("").unwrap().0.is_empty());
    }

    #[test]
    fn gap_is_corrupt() {
        let text = [1, 2, 4].map(line).concat();
        let err = parse_log(&text).unwrap_err();
        assert_eq!(err.code(), "CORRUPT_LOG");
        let text = [1, 2, 3].map(line).concat();
        assert_eq!(parse_log(&text).unwrap().0.len(), 3);
    }

    #[test]
    fn malformed_line_is_corrupt_but_torn_tail_is_dropped() {
        let text = format!("{}garbage\n{}", line(1), line(2));
        assert_eq!(parse_log(&text).unwrap_err().code(), "CORRUPT_LOG");
        let torn = format!("{}{}{{\"at\":", line(1), line(2));
        let (events, intact) = parse_log(&torn).unwrap();
        assert_eq!(events.len(), 2);
        assert_eq!(intact, line(1).len() + line(2).len());
    }

    #[test]
    fn file_log_round_trips_and_repairs_tail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        let (log, prior) = EventLog::open(&path).unwrap();
        assert!(prior.is_empty());
        for i in 0..3 {
            log.append_with(EventKind::Queued, json!({ "i": i }), |_| Ok(()))
                .unwrap();
        }
        drop(log);
        fs::OpenOptions::new()
            .append(true)
            .open(&path)
            .unwrap()
            .write_all(b"{\"seq\":4,")
            .unwrap();
        let (log, prior) = EventLog::open(&path).unwrap();
        assert_eq!(
            prior.iter().map(|e| e.seq).collect::<Vec<_>>(),
            vec![1, 2, 3]
        );
        let (e, ()) = log
            .append_with(EventKind::Queued, json!({}), |_| Ok(()))
            .unwrap();
        assert_eq!(e.seq, 4);
        assert_eq!(EventLog::read_all(&path).unwrap().len(), 4);
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.ends_with('\n') && text.lines().all(|l| l.starts_with('{')));
    }
}
