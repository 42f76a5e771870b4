pub mod auth;
pub mod canonical;
pub mod error;
pub mod fraction;
pub mod gate;
pub mod harness;
pub mod leaderboard;
pub mod metrics;
pub mod reference;
pub mod registry;
pub mod rng;
pub mod service;
pub mod synthetic;
pub mod task;

pub use error::{Error, Result};
pub use fraction::Fraction;
