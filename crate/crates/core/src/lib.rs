//! Interpreting defect models built from correlated software metrics.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod experiments;
pub mod export;
pub mod forest;
pub mod glm;
pub mod importance;
pub mod mitigation;
pub mod rank_stats;
pub mod seeding;
pub mod skesd;

mod linalg;

pub use error::{Error, Result};
