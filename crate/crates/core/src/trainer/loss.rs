use super::hyper::HyperParams;
use crate::agent::{Bound, DepthMode, Network};
use crate::autodiff::{Real, Tape, Var};
use crate::error::{usage_err, Result};
use crate::targets::DepthTarget;

/// `R_t = r_t + gamma R_{t+1}`, seeded with `bootstrap` after the last step.
pub fn compute_returns(rewards: &[f64], gamma: f64, bootstrap: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = bootstrap;
    for (o, &r) in out.iter_mut().zip(rewards).rev() {
        acc = r + gamma * acc;
        *o = acc;
    }
    out
}

/// Tape handles and targets of one unrolled step.
#[derive(Clone, Debug)]
pub struct StepRecord {
    pub policy: Var,
    pub value: Var,
    pub action: u8,
    /// Reward after [`super::transform_reward`].
    pub reward: f32,
    pub d1: Option<Var>,
    pub d2: Option<Var>,
    pub loop_logit: Option<Var>,
    pub depth: Option<DepthTarget>,
    pub loop_label: Option<bool>,
}

/// `sum_t [ -log pi(a_t) A_t + value_coef (R_t - V_t)^2 - beta_entropy H(pi_t) ]`
/// with the advantage treated as a constant.
pub fn a3c_loss<T: Real>(tape: &mut Tape<'_, T>, steps: &[StepRecord], returns: &[f64], hp: &HyperParams) -> Result<Var> {
    if steps.len() != returns.len() {
        return usage_err("one return per step is required");
    }
    let mut terms = Vec::with_capacity(3 * steps.len());
    for (s, &ret) in steps.iter().zip(returns) {
        let v = tape.scalar(s.value).f64();
        let adv = ret - v;
        let nll = tape.categorical_nll(s.policy, &[s.action as usize])?;
        terms.push((nll, T::of(adv)));
        let se = tape.mse(s.value, &[T::of(ret)])?;
        terms.push((se, T::of(hp.value_coef)));
        if hp.beta_entropy != 0.0 {
            let h = tape.policy_entropy(s.policy);
            terms.push((h, T::of(-hp.beta_entropy)));
        }
    }
    tape.weighted_sum(&terms)
}

fn depth_term<T: Real>(tape: &mut Tape<'_, T>, head: Var, target: &DepthTarget, mode: DepthMode) -> Result<Var> {
    match mode {
        DepthMode::Classify8 => {
            let bands: Vec<usize> = target.bands.iter().map(|&b| b as usize).collect();
            tape.categorical_nll(head, &bands)
        }
        DepthMode::Regress => {
            let values: Vec<T> = target.values.iter().map(|&v| T::of(v)).collect();
            tape.mse(head, &values)
        }
    }
}

/// Weighted depth and loop-closure losses summed over the steps.
pub fn aux_loss<T: Real>(tape: &mut Tape<'_, T>, steps: &[StepRecord], hp: &HyperParams, mode: DepthMode) -> Result<Var> {
    let mut terms = Vec::new();
    for s in steps {
        for (head, beta) in [(s.d1, hp.beta_d1), (s.d2, hp.beta_d2)] {
            if let Some(h) = head {
                let Some(target) = &s.depth else {
                    return usage_err("depth head enabled but the step has no depth target");
                };
                if beta != 0.0 {
                    terms.push((depth_term(tape, h, target, mode)?, T::of(beta)));
                }
            }
        }
        if let Some(l) = s.loop_logit {
            let Some(label) = s.loop_label else {
                return usage_err("loop head enabled but the step has no loop label");
            };
            if hp.beta_l != 0.0 {
                let nll = tape.bernoulli_nll(l, if label { T::one() } else { T::zero() })?;
                terms.push((nll, T::of(hp.beta_l)));
            }
        }
    }
    tape.weighted_sum(&terms)
}

/// Mean reward-class nll over a batch of `(planar image, class)` pairs.
/// Returns `None` for an empty batch.
pub fn reward_pred_loss<T: Real>(
    tape: &mut Tape<'_, T>,
    net: &Network,
    bound: &Bound,
    batch: &[(Vec<f32>, usize)],
) -> Result<Option<Var>> {
    if batch.is_empty() {
        return Ok(None);
    }
    let mut terms = Vec::with_capacity(batch.len());
    let w = T::of(1.0 / batch.len() as f64);
    for (image, class) in batch {
        let logits = net.reward_logits(tape, bound, image)?;
        terms.push((tape.categorical_nll(logits, &[*class])?, w));
    }
    tape.weighted_sum(&terms).map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    #[test]
    fn return_examples() {
        let r = compute_returns(&[0.0, 0.0, 1.0], 0.99, 0.0);
        assert!((r[0] - 0.9801).abs() < 1e-12 && (r[1] - 0.99).abs() < 1e-12 && r[2] == 1.0);
        assert_eq!(compute_returns(&[0.0; 4], 0.9, 0.0), vec![0.0; 4]);
        let g0 = compute_returns(&[1.0, -2.0, 3.0], 0.0, 5.0);
        assert_eq!(g0, vec![1.0, -2.0, 3.0]);
        assert!(compute_returns(&[], 0.9, 1.0).is_empty());
    }

    fn record(tape: &mut Tape<'_, f64>, logits: Vec<f64>, value: f64, action: u8) -> StepRecord {
        let policy = tape.variable(Tensor::vector(logits));
        let value = tape.variable(Tensor::vector(vec![value]));
        StepRecord { policy, value, action, reward: 0.0, d1: None, d2: None, loop_logit: None, depth: None, loop_label: None }
    }

    #[test]
    fn uniform_policy_entropy_term() {
        let p: Vec<f64> = vec![];
        let mut tape = Tape::new(&p);
        let steps: Vec<_> = (0..5).map(|_| record(&mut tape, vec![0.0; 8], 0.0, 2)).collect();
        let hp = HyperParams { beta_entropy: 0.01, ..Default::default() };
        // returns equal values and advantages are zero, so only entropy remains
        let l = a3c_loss(&mut tape, &steps, &[0.0; 5], &hp).unwrap();
        assert!((tape.scalar(l) + 0.01 * 5.0 * 8f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_advantage_gives_no_policy_gradient() {
        let p: Vec<f64> = vec![];
        let mut tape = Tape::new(&p);
        let steps = vec![record(&mut tape, vec![0.3, -0.2, 0.0, 1.0, 0.5, 0.0, 0.1, -1.0], 0.7, 3)];
        let hp = HyperParams { beta_entropy: 0.0, ..Default::default() };
        let l = a3c_loss(&mut tape, &steps, &[0.7], &hp).unwrap();
        assert_eq!(tape.scalar(l), 0.0);
        let g = tape.backward(l, &mut []).unwrap();
        assert!(g.get(steps[0].policy).unwrap().iter().all(|&v| v == 0.0));
        assert_eq!(g.get(steps[0].value).unwrap(), &[0.0]);
    }

    #[test]
    fn aux_needs_targets_and_zero_betas_vanish() {
        let p: Vec<f64> = vec![];
        let mut tape = Tape::new(&p);
        let mut s = record(&mut tape, vec![0.0; 8], 0.0, 0);
        s.loop_logit = Some(tape.variable(Tensor::vector(vec![0.4])));
        let hp = HyperParams::default();
        assert!(aux_loss(&mut tape, std::slice::from_ref(&s), &hp, DepthMode::Classify8).is_err());
        s.loop_label = Some(true);
        let zero = HyperParams { beta_l: 0.0, ..Default::default() };
        let l = aux_loss(&mut tape, &[s], &zero, DepthMode::Classify8).unwrap();
        assert_eq!(tape.scalar(l), 0.0);
    }
}
