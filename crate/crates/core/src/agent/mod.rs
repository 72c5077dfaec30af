//! Actor-critic agents: a conv encoder followed by a feed-forward layer, one
//! LSTM, or two stacked LSTMs, with optional depth, loop-closure and reward
//! prediction heads.

mod network;
mod spec;

pub use network::{
    act, entropy, image_planes, softmax, Bound, ForwardOut, LstmState, Network, RecurrentState, StepInput,
    StepVars, REWARD_CLASSES,
};
pub use spec::{ArchitectureSpec, ConvLayer, DepthMode, Head, InputMode, Variant};
