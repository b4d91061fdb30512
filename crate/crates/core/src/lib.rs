//! Federated learning simulator with checkpoint-based poison forensics.
//!
//! The crate trains a small classifier across simulated clients under
//! configurable backdoor attacks, records per-round checkpoints with the
//! individual client updates, and later traces a misclassified input back
//! to the clients whose updates pushed the model toward that mistake.
//! Everything is seeded and deterministic: the same config and seed
//! reproduce training, checkpoints, scores, and reports byte for byte.

pub mod attacks;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod detect;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod influence;
pub mod metrics;
pub mod model;
pub mod params;
pub mod report;
pub mod seeds;

pub use error::{Error, Result};
