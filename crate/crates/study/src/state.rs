use std::collections::BTreeMap;

use chrono::{DateTime, Duration, Utc};
use mammocolor::mrmc::{BinaryCall, Condition, Interval, ReaderRating, StudyPlan};
use mammocolor::pipeline::Birads;
use serde::{Deserialize, Serialize};

use crate::error::{Result, StudyError};

/// Which rendering of a case an image is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageKind {
    Grayscale,
    Tdce,
}

impl ImageKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ImageKind::Grayscale => "grayscale",
            ImageKind::Tdce => "tdce",
        }
    }

    /// Renderings a reader may see under a condition.
    pub fn allowed(condition: Condition) -> &'static [ImageKind] {
        match condition {
            Condition::GrayscaleOnly => &[ImageKind::Grayscale],
            Condition::TdceOnly => &[ImageKind::Tdce],
            Condition::SideBySide => &[ImageKind::Grayscale, ImageKind::Tdce],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub at: DateTime<Utc>,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventKind {
    StudyCreated { study_id: String, plan: StudyPlan, washout_days: u32 },
    SessionOpened { reader_id: String, session: u32 },
    Paused {
        reader_id: String,
        session: u32,
        /// Written by crash recovery rather than by the reader.
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        recovered: bool,
    },
    Resumed { reader_id: String, session: u32 },
    Rated { reader_id: String, session: u32, case_id: String, binary_call: BinaryCall, birads: Birads },
    /// Side-by-side display switch, kept for audit only.
    Switched { reader_id: String, session: u32, case_id: String, display: ImageKind },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionStatus {
    Locked,
    Open,
    Paused,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSpan {
    pub start: DateTime<Utc>,
    pub stop: DateTime<Utc>,
}

impl TimeSpan {
    pub fn seconds(&self) -> f64 {
        (self.stop - self.start).num_microseconds().unwrap_or(i64::MAX) as f64 * 1e-6
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session: u32,
    pub condition: Condition,
    pub status: SessionStatus,
    /// Index of the next case to rate in the plan's case order.
    pub cursor: usize,
    pub opened_at: Option<DateTime<Utc>>,
    pub completed_at: Option<DateTime<Utc>>,
    /// Start of the running timing interval for the cursor case.
    pub active_since: Option<DateTime<Utc>>,
    /// Closed intervals for the cursor case.
    pub pending: Vec<TimeSpan>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredRating {
    pub reader_id: String,
    pub session: u32,
    pub condition: Condition,
    pub case_id: String,
    pub binary_call: BinaryCall,
    pub birads: Birads,
    pub intervals: Vec<TimeSpan>,
    pub rated_at: DateTime<Utc>,
}

impl StoredRating {
    pub fn to_reader_rating(&self) -> ReaderRating {
        let secs = |t: &DateTime<Utc>| t.timestamp_micros() as f64 * 1e-6;
        ReaderRating {
            reader_id: self.reader_id.clone(),
            case_id: self.case_id.clone(),
            condition: self.condition,
            binary_call: Some(self.binary_call),
            birads: Some(self.birads),
            intervals: self.intervals.iter().map(|s| Interval { start: secs(&s.start), stop: secs(&s.stop) }).collect(),
        }
    }

    pub fn seconds(&self) -> f64 {
        self.intervals.iter().map(TimeSpan::seconds).sum()
    }
}

/// Everything derivable from the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyState {
    pub study_id: String,
    pub plan: StudyPlan,
    pub washout_days: u32,
    pub created_at: DateTime<Utc>,
    pub sessions: BTreeMap<String, Vec<SessionState>>,
    pub ratings: Vec<StoredRating>,
    pub switches: u64,
    pub last_seq: u64,
    pub last_at: DateTime<Utc>,
}

/// Empty spans carry no time and are not recorded.
fn push_span(spans: &mut Vec<TimeSpan>, start: DateTime<Utc>, stop: DateTime<Utc>) {
    if stop > start {
        spans.push(TimeSpan { start, stop });
    }
}

fn validate_plan(plan: &StudyPlan) -> Result<()> {
    if plan.cases.is_empty() || plan.readers.is_empty() {
        return Err(StudyError::Invalid("plan needs readers and cases".into()));
    }
    let mut sorted = plan.cases.clone();
    sorted.sort();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(StudyError::Invalid("duplicate case ids in plan".into()));
    }
    let mut ids: Vec<&str> = plan.readers.iter().map(|r| r.reader_id.as_str()).collect();
    ids.sort();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(StudyError::Invalid("duplicate reader ids in plan".into()));
    }
    for r in &plan.readers {
        for (k, s) in r.sessions.iter().enumerate() {
            if s.session as usize != k + 1 {
                return Err(StudyError::Invalid(format!("reader {}: sessions must be numbered 1..n", r.reader_id)));
            }
            let mut order = s.case_order.clone();
            order.sort();
            if order != sorted {
                return Err(StudyError::Invalid(format!(
                    "reader {} session {}: case order is not a permutation of the case list",
                    r.reader_id, s.session
                )));
            }
        }
    }
    Ok(())
}

impl StudyState {
    /// State after the creation event.
    pub fn create(event: &Event) -> Result<StudyState> {
        let EventKind::StudyCreated { study_id, plan, washout_days } = &event.kind else {
            return Err(StudyError::Invalid("first event must create the study".into()));
        };
        validate_plan(plan)?;
        let sessions = plan
            .readers
            .iter()
            .map(|r| {
                let s = r
                    .sessions
                    .iter()
                    .map(|s| SessionState {
                        session: s.session,
                        condition: s.condition,
                        status: SessionStatus::Locked,
                        cursor: 0,
                        opened_at: None,
                        completed_at: None,
                        active_since: None,
                        pending: Vec::new(),
                    })
                    .collect();
                (r.reader_id.clone(), s)
            })
            .collect();
        Ok(StudyState {
            study_id: study_id.clone(),
            plan: plan.clone(),
            washout_days: *washout_days,
            created_at: event.at,
            sessions,
            ratings: Vec::new(),
            switches: 0,
            last_seq: event.seq,
            last_at: event.at,
        })
    }

    pub fn replay(events: &[Event]) -> Result<StudyState> {
        let (first, rest) = events.split_first().ok_or_else(|| StudyError::Invalid("no events".into()))?;
        let mut state = StudyState::create(first)?;
        for e in rest {
            state.apply(e)?;
        }
        Ok(state)
    }

    pub fn session(&self, reader_id: &str, session: u32) -> Result<&SessionState> {
        let list = self.sessions.get(reader_id).ok_or_else(|| StudyError::NotFound(format!("reader {reader_id}")))?;
        list.iter()
            .find(|s| s.session == session)
            .ok_or_else(|| StudyError::NotFound(format!("reader {reader_id} session {session}")))
    }

    fn session_mut(&mut self, reader_id: &str, session: u32) -> Result<&mut SessionState> {
        self.session(reader_id, session)?;
        Ok(self.sessions.get_mut(reader_id).unwrap().iter_mut().find(|s| s.session == session).unwrap())
    }

    pub fn case_order(&self, reader_id: &str, session: u32) -> Result<&[String]> {
        let r = self.plan.reader(reader_id).ok_or_else(|| StudyError::NotFound(format!("reader {reader_id}")))?;
        r.sessions
            .iter()
            .find(|s| s.session == session)
            .map(|s| s.case_order.as_slice())
            .ok_or_else(|| StudyError::NotFound(format!("reader {reader_id} session {session}")))
    }

    /// Case at the cursor, `None` once the session is complete.
    pub fn cursor_case(&self, reader_id: &str, session: u32) -> Result<Option<&str>> {
        let s = self.session(reader_id, session)?;
        Ok(self.case_order(reader_id, session)?.get(s.cursor).map(String::as_str))
    }

    /// When `session` may be opened, given the previous session's completion.
    /// `Err(Locked)` with `unlock_at = None` while the previous session is
    /// unfinished.
    pub fn unlock_time(&self, reader_id: &str, session: u32) -> Result<Option<DateTime<Utc>>> {
        self.session(reader_id, session)?;
        if session <= 1 {
            return Ok(None);
        }
        let prev = self.session(reader_id, session - 1)?;
        match prev.completed_at {
            Some(done) => Ok(Some(done + Duration::days(self.washout_days as i64))),
            None => Err(StudyError::Locked { reason: format!("session {} is not complete", session - 1), unlock_at: None }),
        }
    }

    fn open_check(&self, reader_id: &str, session: u32, at: DateTime<Utc>) -> Result<()> {
        let s = self.session(reader_id, session)?;
        match s.status {
            SessionStatus::Locked => {}
            SessionStatus::Open => return Err(StudyError::Conflict(format!("session {session} is already open"))),
            SessionStatus::Paused => return Err(StudyError::Conflict(format!("session {session} is paused; resume it"))),
            SessionStatus::Complete => return Err(StudyError::Conflict(format!("session {session} is complete"))),
        }
        if let Some(unlock) = self.unlock_time(reader_id, session)? {
            if at < unlock {
                return Err(StudyError::Locked {
                    reason: format!("washout of {} days after session {}", self.washout_days, session - 1),
                    unlock_at: Some(unlock),
                });
            }
        }
        let list = &self.sessions[reader_id];
        if let Some(other) = list.iter().find(|o| matches!(o.status, SessionStatus::Open | SessionStatus::Paused)) {
            return Err(StudyError::Conflict(format!("session {} is still in progress", other.session)));
        }
        Ok(())
    }

    /// Checks `event` against the current state and applies it. The state is
    /// untouched when an error is returned.
    pub fn apply(&mut self, event: &Event) -> Result<()> {
        if event.seq != self.last_seq + 1 {
            return Err(StudyError::Invalid(format!("event seq {} does not follow {}", event.seq, self.last_seq)));
        }
        if event.at < self.last_at {
            return Err(StudyError::Invalid("event time goes backwards".into()));
        }
        let at = event.at;
        match &event.kind {
            EventKind::StudyCreated { .. } => return Err(StudyError::Conflict("study already exists".into())),
            EventKind::SessionOpened { reader_id, session } => {
                self.open_check(reader_id, *session, at)?;
                let s = self.session_mut(reader_id, *session)?;
                s.status = SessionStatus::Open;
                s.opened_at = Some(at);
                s.active_since = Some(at);
            }
            EventKind::Paused { reader_id, session, .. } => {
                let s = self.session_mut(reader_id, *session)?;
                if s.status != SessionStatus::Open {
                    return Err(StudyError::Conflict(format!("session {session} is not open")));
                }
                let start = s.active_since.take().expect("open session has a running interval");
                push_span(&mut s.pending, start, at);
                s.status = SessionStatus::Paused;
            }
            EventKind::Resumed { reader_id, session } => {
                let s = self.session_mut(reader_id, *session)?;
                if s.status != SessionStatus::Paused {
                    return Err(StudyError::Conflict(format!("session {session} is not paused")));
                }
                s.status = SessionStatus::Open;
                s.active_since = Some(at);
            }
            EventKind::Rated { reader_id, session, case_id, binary_call, birads } => {
                let expected = self.cursor_case(reader_id, *session)?.map(str::to_string);
                let s = self.session(reader_id, *session)?;
                if s.status != SessionStatus::Open {
                    return Err(StudyError::Conflict(format!("session {session} is not open")));
                }
                if self.ratings.iter().any(|r| &r.reader_id == reader_id && &r.case_id == case_id && r.condition == s.condition) {
                    return Err(StudyError::Conflict(format!("case {case_id} already rated")));
                }
                if expected.as_deref() != Some(case_id.as_str()) {
                    return Err(StudyError::Conflict(format!(
                        "case {case_id} is not the current case{}",
                        expected.map(|c| format!(" ({c})")).unwrap_or_default()
                    )));
                }
                let total = self.case_order(reader_id, *session)?.len();
                let condition = s.condition;
                let s = self.session_mut(reader_id, *session)?;
                let start = s.active_since.take().expect("open session has a running interval");
                let mut intervals = std::mem::take(&mut s.pending);
                push_span(&mut intervals, start, at);
                s.cursor += 1;
                if s.cursor == total {
                    s.status = SessionStatus::Complete;
                    s.completed_at = Some(at);
                } else {
                    s.active_since = Some(at);
                }
                self.ratings.push(StoredRating {
                    reader_id: reader_id.clone(),
                    session: *session,
                    condition,
                    case_id: case_id.clone(),
                    binary_call: *binary_call,
                    birads: *birads,
                    intervals,
                    rated_at: at,
                });
            }
            EventKind::Switched { reader_id, session, case_id, .. } => {
                let s = self.session(reader_id, *session)?;
                if s.condition != Condition::SideBySide {
                    return Err(StudyError::Forbidden("display switching is only available side by side".into()));
                }
                if s.status != SessionStatus::Open || self.cursor_case(reader_id, *session)? != Some(case_id.as_str()) {
                    return Err(StudyError::Conflict(format!("case {case_id} is not on screen")));
                }
                self.switches += 1;
            }
        }
        self.last_seq = event.seq;
        self.last_at = at;
        Ok(())
    }

    /// Sessions whose timing interval is still running.
    pub fn running_sessions(&self) -> Vec<(String, u32)> {
        self.sessions
            .iter()
            .flat_map(|(r, list)| list.iter().filter(|s| s.status == SessionStatus::Open).map(move |s| (r.clone(), s.session)))
            .collect()
    }

    pub fn reader_ratings(&self) -> Vec<ReaderRating> {
        self.ratings.iter().map(StoredRating::to_reader_rating).collect()
    }
}
