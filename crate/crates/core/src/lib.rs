//! Core of the SMS triage service: text features, Random Forest learning,
//! labeling, persistence, exports and the engine tying them together.

pub mod clock;
pub mod engine;
pub mod error;
pub mod export;
pub mod gateway;
pub mod harness;
pub mod labeling;
pub mod learn;
pub mod store;
pub mod text;

mod seed;

pub use engine::{Engine, EngineConfig, ExecutionMode};
pub use error::{Error, Result};
