use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoopThresholds {
    /// A revisit is within this distance of an earlier position.
    pub eta1: f64,
    /// The agent must have been at least this far away in between.
    pub eta2: f64,
}

impl Default for LoopThresholds {
    fn default() -> Self {
        Self { eta1: 1.0, eta2: 2.0 }
    }
}

impl LoopThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta1 > 0.0 && self.eta2 > self.eta1) {
            return config_err(format!("loop thresholds need 0 < eta1 < eta2, got {} and {}", self.eta1, self.eta2));
        }
        Ok(())
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Label of the last position in `path`: 1 when some earlier position is
/// within `eta1` of it and the agent went at least `eta2` away in between.
pub fn loop_label_at(path: &[[f64; 2]], thr: &LoopThresholds) -> bool {
    let Some((&p, earlier)) = path.split_last() else {
        return false;
    };
    // Walk backwards; `far` records whether a far point lies strictly between
    // the candidate and the current step.
    let mut far = false;
    for &q in earlier.iter().rev() {
        let d = dist(p, q);
        if far && d <= thr.eta1 {
            return true;
        }
        far |= d >= thr.eta2;
    }
    false
}

/// Loop-closure labels for every step of one continuous trajectory.
pub fn loop_closure_labels(path: &[[f64; 2]], thr: &LoopThresholds) -> Vec<bool> {
    (1..=path.len()).map(|t| loop_label_at(&path[..t], thr)).collect()
}

/// Incremental labeller that restarts on every respawn.
#[derive(Clone, Debug, Default)]
pub struct LoopTracker {
    thr: LoopThresholds,
    path: Vec<[f64; 2]>,
}

impl LoopTracker {
    pub fn new(thr: LoopThresholds) -> Self {
        Self { thr, path: Vec::new() }
    }

    pub fn push(&mut self, p: [f64; 2]) -> bool {
        self.path.push(p);
        loop_label_at(&self.path, &self.thr)
    }

    /// Starts a new segment (after a teleport the old path is meaningless).
    pub fn reset(&mut self) {
        self.path.clear();
    }
}
