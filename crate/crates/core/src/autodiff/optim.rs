use super::params::{AtomicF32, SharedParams};
use super::Real;
use crate::error::{config_err, Result};

/// RMSProp without momentum or centering.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RmsPropConfig {
    pub decay: f64,
    pub epsilon: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        Self { decay: 0.99, epsilon: 0.1 }
    }
}

/// Per-parameter mean-square accumulator for a single-owner parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct RmsPropState<T> {
    pub ms: Vec<T>,
    pub decay: T,
    pub epsilon: T,
}

impl<T: Real> RmsPropState<T> {
    pub fn new(len: usize, cfg: RmsPropConfig) -> Self {
        Self { ms: vec![T::zero(); len], decay: T::of(cfg.decay), epsilon: T::of(cfg.epsilon) }
    }

    /// `ms <- d ms + (1 - d) g^2; p <- p - lr g / sqrt(ms + eps)`
    pub fn apply(&mut self, params: &mut [T], grads: &[T], lr: T) -> Result<()> {
        if params.len() != self.ms.len() || grads.len() != self.ms.len() {
            return config_err(format!(
                "rmsprop length mismatch: params {}, grads {}, state {}",
                params.len(),
                grads.len(),
                self.ms.len()
            ));
        }
        let one_minus = T::one() - self.decay;
        for ((p, &g), ms) in params.iter_mut().zip(grads).zip(self.ms.iter_mut()) {
            *ms = self.decay * *ms + one_minus * g * g;
            *p -= lr * g / (*ms + self.epsilon).sqrt();
        }
        Ok(())
    }
}

/// RMSProp statistics shared between Hogwild workers.
#[derive(Debug)]
pub struct SharedRmsProp {
    ms: Box<[AtomicF32]>,
    decay: f32,
    epsilon: f32,
}

impl SharedRmsProp {
    pub fn new(len: usize, cfg: RmsPropConfig) -> Self {
        Self {
            ms: (0..len).map(|_| AtomicF32::new(0.0)).collect(),
            decay: cfg.decay as f32,
            epsilon: cfg.epsilon as f32,
        }
    }

    pub fn mean_square(&self) -> Vec<f32> {
        self.ms.iter().map(AtomicF32::load).collect()
    }

    /// Same update as [`RmsPropState::apply`], element by element against the
    /// shared vectors. Concurrent appliers may interleave per element.
    pub fn apply(&self, params: &SharedParams, grads: &[f32], lr: f32) -> Result<()> {
        if params.len() != self.ms.len() || grads.len() != self.ms.len() {
            return config_err("shared rmsprop length mismatch");
        }
        let one_minus = 1.0 - self.decay;
        for ((p, &g), ms) in params.elements().iter().zip(grads).zip(self.ms.iter()) {
            let m = self.decay * ms.load() + one_minus * g * g;
            ms.store(m);
            if g != 0.0 {
                p.store(p.load() - lr * g / (m + self.epsilon).sqrt());
            }
        }
        Ok(())
    }
}

/// Rescales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<T: Real>(grads: &mut [T], max_norm: T) -> T {
    let norm = grads.iter().map(|&g| g * g).sum::<T>().sqrt();
    if norm > max_norm && norm > T::zero() {
        let k = max_norm / norm;
        for g in grads.iter_mut() {
            *g *= k;
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_and_decays_ms() {
        let mut st = RmsPropState::<f64>::new(3, RmsPropConfig::default());
        st.ms = vec![1.0, 0.5, 0.0];
        let mut p = vec![1.0, 2.0, 3.0];
        st.apply(&mut p, &[0.0; 3], 0.1).unwrap();
        assert_eq!(p, vec![1.0, 2.0, 3.0]);
        assert_eq!(st.ms, vec![0.99, 0.495, 0.0]);
    }

    #[test]
    fn single_step_arithmetic() {
        let eps = 0.01;
        let lr = 0.5;
        let mut st = RmsPropState::<f64>::new(1, RmsPropConfig { decay: 0.99, epsilon: eps });
        let mut p = vec![0.0];
        st.apply(&mut p, &[1.0], lr).unwrap();
        assert!((st.ms[0] - 0.01).abs() < 1e-15);
        assert!((p[0] + lr / (0.01f64 + eps).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn repeated_identical_gradients_shrink_the_step() {
        let mut st = RmsPropState::<f64>::new(1, RmsPropConfig::default());
        let mut p = vec![0.0];
        let mut prev = p[0];
        let mut last_step = f64::INFINITY;
        for _ in 0..5 {
            st.apply(&mut p, &[1.0], 1e-3).unwrap();
            let step = (prev - p[0]).abs();
            assert!(step < last_step);
            last_step = step;
            prev = p[0];
        }
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let mut st = RmsPropState::<f32>::new(4, RmsPropConfig::default());
        let mut p = vec![0.3, -1.0, 2.0, 5.5];
        let before = p.clone();
        st.apply(&mut p, &[1.0, -2.0, 0.5, 9.0], 0.0).unwrap();
        assert_eq!(p, before);
        assert!(st.ms.iter().all(|&m| m >= 0.0));
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let mut st = RmsPropState::<f32>::new(2, RmsPropConfig::default());
        assert!(st.apply(&mut [0.0; 3], &[0.0; 3], 0.1).is_err());
    }

    #[test]
    fn clipping_caps_the_norm() {
        let mut g = vec![30.0f64, 40.0];
        let n = clip_global_norm(&mut g, 40.0);
        assert_eq!(n, 50.0);
        assert!((g[0] - 24.0).abs() < 1e-12 && (g[1] - 32.0).abs() < 1e-12);
        let mut small = vec![1.0f64, 1.0];
        clip_global_norm(&mut small, 40.0);
        assert_eq!(small, vec![1.0, 1.0]);
    }
}
