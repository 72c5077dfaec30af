//! Evaluation of trained agents: episode logs, position decoding, goal
//! latency, loop-closure F1 and learning-curve summaries.

mod decoder;
mod logs;
mod metrics;

pub use decoder::*;
pub use logs::*;
pub use metrics::*;
