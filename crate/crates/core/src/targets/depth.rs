use serde::{Deserialize, Serialize};

use crate::error::{config_err, data_err, Result};

pub const DEPTH_ROWS: usize = 4;
pub const DEPTH_COLS: usize = 16;
pub const DEPTH_CELLS: usize = DEPTH_ROWS * DEPTH_COLS;
pub const DEPTH_BANDS: usize = 8;

/// Band edges over normalised depth; band `i` is `[e_i, e_{i+1})`, the last band is closed.
pub const BAND_EDGES: [f64; DEPTH_BANDS + 1] = [0.0, 0.05, 0.175, 0.3, 0.425, 0.55, 0.675, 0.8, 1.0];

/// Near plane of the depth-buffer encoding.
pub const NEAR_PLANE: f64 = 0.1;

/// Exponent applied after normalising bytes to `[0, 1]`.
pub const DEPTH_POWER: i32 = 10;

/// Fraction of image rows dropped at the top and at the bottom.
pub const CROP_FRACTION: f64 = 0.25;

/// Perspective z-buffer value in `[0, 1]` for distance `d`, with 0 at the
/// near plane and 1 at the far plane.
pub fn zbuffer_value(d: f64, far: f64) -> f64 {
    let d = d.clamp(NEAR_PLANE, far);
    (far / (far - NEAR_PLANE)) * (1.0 - NEAR_PLANE / d)
}

/// Encodes raw distances as z-buffer bytes (far plane maps to 255).
pub fn depth_to_bytes(depth_raw: &[f32], far: f32) -> Vec<u8> {
    depth_raw.iter().map(|&d| (255.0 * zbuffer_value(d as f64, far as f64)).round() as u8).collect()
}

/// Full-resolution `(zbuffer)^10` plane used as a fourth input channel.
pub fn depth_plane(depth_raw: &[f32], far: f32) -> Vec<f32> {
    depth_raw.iter().map(|&d| zbuffer_value(d as f64, far as f64).powi(DEPTH_POWER) as f32).collect()
}

/// Checks that an `h x w` frame still holds the depth grid after cropping.
pub fn check_depth_frame(h: usize, w: usize) -> Result<()> {
    let rows = h.saturating_sub(2 * (h as f64 * CROP_FRACTION).floor() as usize);
    if rows < DEPTH_ROWS || w < DEPTH_COLS {
        return config_err(format!("depth targets need {DEPTH_ROWS}x{DEPTH_COLS} pixels after cropping, frame is {h}x{w}"));
    }
    Ok(())
}

/// Crops the top and bottom quarter of rows of an `h x w` byte image,
/// average-pools the rest to 4x16 and applies `(mean / 255)^10`.
pub fn preprocess_depth(bytes: &[u8], h: usize, w: usize) -> Result<[f64; DEPTH_CELLS]> {
    if bytes.len() != h * w {
        return data_err(format!("depth image has {} bytes, expected {h}x{w}", bytes.len()));
    }
    check_depth_frame(h, w)?;
    let crop = (h as f64 * CROP_FRACTION).floor() as usize;
    let rows = h - 2 * crop;
    let mut out = [0.0; DEPTH_CELLS];
    for br in 0..DEPTH_ROWS {
        let (r0, r1) = (crop + br * rows / DEPTH_ROWS, crop + (br + 1) * rows / DEPTH_ROWS);
        for bc in 0..DEPTH_COLS {
            let (c0, c1) = (bc * w / DEPTH_COLS, (bc + 1) * w / DEPTH_COLS);
            let mut sum = 0u64;
            for r in r0..r1 {
                sum += bytes[r * w + c0..r * w + c1].iter().map(|&b| b as u64).sum::<u64>();
            }
            let mean = sum as f64 / ((r1 - r0) * (c1 - c0)) as f64;
            out[br * DEPTH_COLS + bc] = (mean / 255.0).powi(DEPTH_POWER);
        }
    }
    Ok(out)
}

/// Band index of normalised depth `d`.
pub fn quantize_depth(d: f64) -> Result<u8> {
    if !(0.0..=1.0).contains(&d) {
        return data_err(format!("normalised depth {d} outside [0, 1]"));
    }
    let band = BAND_EDGES[1..DEPTH_BANDS].iter().take_while(|&&e| d >= e).count();
    Ok(band as u8)
}

/// Depth targets for one frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthTarget {
    pub values: Vec<f64>,
    pub bands: Vec<u8>,
}

impl DepthTarget {
    pub fn from_raw(depth_raw: &[f32], h: usize, w: usize, far: f32) -> Result<Self> {
        let values = preprocess_depth(&depth_to_bytes(depth_raw, far), h, w)?.to_vec();
        let bands = values.iter().map(|&v| quantize_depth(v)).collect::<Result<_>>()?;
        Ok(Self { values, bands })
    }
}
