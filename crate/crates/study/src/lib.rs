//! Observer-study service. Readers work through their planned sessions one
//! case at a time; every action is an event in a per-study append-only log,
//! and the served state is whatever replaying that log produces.
//!
//! Readers only ever receive case identifiers and the images allowed under
//! the active condition. The service holds no reference labels.

pub mod api;
pub mod clock;
pub mod error;
pub mod images;
pub mod state;
pub mod store;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use api::{router, serve, AppState, CaseDescriptor, ImageRef, ServiceConfig, SessionView, StudySummary, Tokens};
pub use clock::{Clock, ManualClock, SystemClock};
pub use error::{Result, StudyError};
pub use images::ImageStore;
pub use state::{Event, EventKind, ImageKind, SessionStatus, StudyState};
pub use store::{read_log, RecoveryReport, StudyStore, LOG_FILE, SNAPSHOT_FILE};
