//! The platform service: event-sourced state, evaluation worker, HTTP API,
//! configuration and a blocking client.

pub mod api;
pub mod client;
pub mod config;
pub mod events;
mod platform;
pub mod state;

pub use events::{Event, EventKind, EventLog};
pub use platform::{run_seed_for, Platform, SubmitOutcome, SubmitRequest, WORKER_PRINCIPAL};
pub use state::{State, SubmissionRecord, SubmissionStatus, Track};
