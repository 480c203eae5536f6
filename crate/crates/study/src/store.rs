//! Append-only JSONL event log with a derived snapshot per study directory.
//!
//! Every accepted event is written and synced before the in-memory state and
//! the snapshot change. The snapshot is replaced by rename, so it is always a
//! complete file, but it can lag the log after a crash; recovery rebuilds the
//! state from the log alone.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Result, StudyError};
use crate::state::{Event, EventKind, StudyState};

pub const LOG_FILE: &str = "events.jsonl";
pub const SNAPSHOT_FILE: &str = "snapshot.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub events: usize,
    /// Bytes cut from the end of the log because the final record was torn.
    pub truncated_bytes: u64,
    /// Whether the snapshot on disk already matched the replayed log.
    pub snapshot_matched: bool,
    /// Sessions whose running interval was closed at the last event time.
    pub closed_intervals: Vec<(String, u32)>,
}

#[derive(Debug)]
pub struct LogContents {
    pub events: Vec<Event>,
    /// Length of the prefix made of complete, parseable records.
    pub valid_len: u64,
    pub torn: bool,
}

/// Reads a log. Only the last record may be damaged (no newline or bad
/// JSON); damage anywhere else is an error.
pub fn read_log(path: &Path) -> Result<LogContents> {
    let file = File::open(path).map_err(StudyError::io(path))?;
    let mut reader = BufReader::new(file);
    let mut events = Vec::new();
    let mut valid_len = 0u64;
    let mut buf = Vec::new();
    let mut line = 0;
    loop {
        buf.clear();
        let n = reader.read_until(b'\n', &mut buf).map_err(StudyError::io(path))?;
        if n == 0 {
            return Ok(LogContents { events, valid_len, torn: false });
        }
        line += 1;
        let complete = buf.last() == Some(&b'\n');
        let parsed = serde_json::from_slice::<Event>(&buf);
        match (complete, parsed) {
            (true, Ok(e)) => {
                events.push(e);
                valid_len += n as u64;
            }
            (_, res) => {
                let mut rest = Vec::new();
                std::io::Read::read_to_end(&mut reader, &mut rest).map_err(StudyError::io(path))?;
                if rest.is_empty() {
                    return Ok(LogContents { events, valid_len, torn: true });
                }
                let message = match res {
                    Err(e) => e.to_string(),
                    Ok(_) => "record without newline".into(),
                };
                return Err(StudyError::CorruptLog { path: path.to_path_buf(), line, message });
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    state: StudyState,
}

pub fn read_snapshot(dir: &Path) -> Result<Option<StudyState>> {
    let path = dir.join(SNAPSHOT_FILE);
    match fs::read(&path) {
        Ok(bytes) => Ok(serde_json::from_slice::<Snapshot>(&bytes).ok().map(|s| s.state)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(StudyError::Io { path, source: e }),
    }
}

fn write_snapshot(dir: &Path, state: &StudyState) -> Result<()> {
    let tmp = dir.join(format!("{SNAPSHOT_FILE}.tmp"));
    let bytes = serde_json::to_vec(&Snapshot { state: state.clone() }).expect("state serializes");
    let mut f = File::create(&tmp).map_err(StudyError::io(&tmp))?;
    f.write_all(&bytes).and_then(|_| f.sync_all()).map_err(StudyError::io(&tmp))?;
    let path = dir.join(SNAPSHOT_FILE);
    fs::rename(&tmp, &path).map_err(StudyError::io(&path))
}

pub struct StudyStore {
    dir: PathBuf,
    log: File,
    state: StudyState,
}

impl StudyStore {
    /// Starts a new study in `dir`, which must not hold a log yet.
    pub fn create(dir: &Path, study_id: &str, plan: mammocolor::mrmc::StudyPlan, washout_days: u32, at: DateTime<Utc>) -> Result<Self> {
        let event = Event {
            seq: 1,
            at,
            kind: EventKind::StudyCreated { study_id: study_id.to_string(), plan, washout_days },
        };
        let state = StudyState::create(&event)?;
        fs::create_dir_all(dir).map_err(StudyError::io(dir))?;
        let path = dir.join(LOG_FILE);
        let log = OpenOptions::new().create_new(true).append(true).open(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::AlreadyExists {
                StudyError::Conflict(format!("study {study_id} already exists"))
            } else {
                StudyError::Io { path: path.clone(), source: e }
            }
        })?;
        let mut store = StudyStore { dir: dir.to_path_buf(), log, state };
        store.write_event(&event)?;
        write_snapshot(&store.dir, &store.state)?;
        Ok(store)
    }

    /// Rebuilds the study from its log, truncating a torn final record and
    /// pausing sessions that were mid-interval at the crash.
    pub fn open(dir: &Path) -> Result<(Self, RecoveryReport)> {
        let path = dir.join(LOG_FILE);
        let contents = read_log(&path)?;
        let file_len = fs::metadata(&path).map_err(StudyError::io(&path))?.len();
        if contents.events.is_empty() {
            return Err(StudyError::EmptyLog { path });
        }
        let mut truncated_bytes = 0;
        if contents.torn {
            truncated_bytes = file_len - contents.valid_len;
            tracing::warn!(path = %path.display(), truncated_bytes, "dropping torn final record");
            let f = OpenOptions::new().write(true).open(&path).map_err(StudyError::io(&path))?;
            f.set_len(contents.valid_len).and_then(|_| f.sync_all()).map_err(StudyError::io(&path))?;
        }
        let state = StudyState::replay(&contents.events).map_err(|e| StudyError::CorruptLog {
            path: path.clone(),
            line: contents.events.len(),
            message: e.to_string(),
        })?;
        let snapshot_matched = read_snapshot(dir)?.as_ref() == Some(&state);
        let mut log = OpenOptions::new().append(true).open(&path).map_err(StudyError::io(&path))?;
        log.seek(std::io::SeekFrom::End(0)).map_err(StudyError::io(&path))?;
        let mut store = StudyStore { dir: dir.to_path_buf(), log, state };
        let running = store.state.running_sessions();
        let last_at = store.state.last_at;
        for (reader_id, session) in &running {
            store.append(last_at, EventKind::Paused { reader_id: reader_id.clone(), session: *session, recovered: true })?;
        }
        write_snapshot(&store.dir, &store.state)?;
        let report = RecoveryReport { events: contents.events.len(), truncated_bytes, snapshot_matched, closed_intervals: running };
        Ok((store, report))
    }

    pub fn state(&self) -> &StudyState {
        &self.state
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn write_event(&mut self, event: &Event) -> Result<()> {
        let mut line = serde_json::to_vec(event).expect("event serializes");
        line.push(b'\n');
        let path = self.dir.join(LOG_FILE);
        self.log.write_all(&line).and_then(|_| self.log.sync_data()).map_err(StudyError::io(path))
    }

    /// Validates, persists and applies one event. The clock is clamped so
    /// event times never go backwards.
    pub fn append(&mut self, at: DateTime<Utc>, kind: EventKind) -> Result<&StudyState> {
        let event = Event { seq: self.state.last_seq + 1, at: at.max(self.state.last_at), kind };
        let mut next = self.state.clone();
        next.apply(&event)?;
        self.write_event(&event)?;
        self.state = next;
        write_snapshot(&self.dir, &self.state)?;
        Ok(&self.state)
    }
}
