//! Asynchronous actor-critic training with auxiliary losses.

mod hyper;
mod loss;
mod replay;
mod run;

pub use hyper::*;
pub use loss::*;
pub use replay::*;
pub use run::*;
