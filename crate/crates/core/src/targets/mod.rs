//! Targets for the auxiliary losses and for the position decoder: depth
//! preprocessing and banding, loop-closure labels, and floor-cell ids.

mod depth;
mod loops;

pub use depth::{
    check_depth_frame, depth_plane, depth_to_bytes, preprocess_depth, quantize_depth, zbuffer_value, DepthTarget, BAND_EDGES,
    CROP_FRACTION, DEPTH_BANDS, DEPTH_CELLS, DEPTH_COLS, DEPTH_POWER, DEPTH_ROWS, NEAR_PLANE,
};
pub use loops::{loop_closure_labels, loop_label_at, LoopThresholds, LoopTracker};

use crate::error::{NavError, Result};
use crate::maze::{Cell, MazeLayout};

/// Row-major floor-cell id of world position `p`.
pub fn position_cell(p: [f64; 2], layout: &MazeLayout) -> Result<usize> {
    Cell::containing(p[0], p[1])
        .and_then(|c| layout.floor_id(c))
        .ok_or_else(|| NavError::Data(format!("position ({}, {}) is not on a floor cell", p[0], p[1])))
}
