//! Navigation agents for first-person mazes: a small reverse-mode autodiff
//! substrate, a raycast maze simulator, auxiliary target generators, the
//! agent networks, an asynchronous actor-critic trainer, and the analysis
//! tools used to evaluate trained agents.

pub mod agent;
pub mod analysis;
pub mod autodiff;
pub mod error;
pub mod maze;
pub mod runner;
pub mod targets;
pub mod trainer;

pub use error::{NavError, Result};
