//! Session engine and HTTP API over prepared search indexes.
//!
//! A session is either FREE (the user volunteers relative statements about
//! displayed images), ACTIVE (the engine asks pivot questions) or HYBRID
//! (statements plus relevant/irrelevant marks feeding a per-session ranker).

pub mod cli;
pub mod engine;
pub mod error;
pub mod http;
pub mod session;

pub use engine::{CreateSession, Engine, EngineConfig, FeedbackOutcome, SessionCreated};
pub use error::{Result, ServiceError};
pub use session::{FeedbackRequest, Mode, Page, PageRequest, SessionRecord, Statement};
