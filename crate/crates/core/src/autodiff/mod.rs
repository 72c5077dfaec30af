//! Minimal reverse-mode differentiation for the agent networks.
//!
//! Everything works on flat `Vec<T>` buffers with an explicit shape. A
//! [`Tape`] records one node per forward op and replays them in reverse to
//! accumulate gradients into a flat parameter-gradient buffer laid out by a
//! [`Registry`]. Training runs in `f32`; the gradient checks run in `f64`.

mod checkpoint;
mod gradcheck;
mod optim;
mod params;
mod real;
mod tape;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{central_difference, grad_check, relative_error, GradCheckReport};
pub use optim::{clip_global_norm, RmsPropConfig, RmsPropState, SharedRmsProp};
pub use params::{AtomicF32, ParamSlot, ParamVector, Registry, SharedParams};
pub use real::Real;
pub use tape::{ConvGeom, Grads, Tape, Tensor, Var};
