use std::io::Write;

use serde::{Deserialize, Serialize};

use super::logs::EpisodeLog;
use crate::error::{NavError, Result};
use crate::maze::ENV_STEPS_PER_SECOND;

/// Mean time to the first goal and mean time between later goals, in seconds.
/// Each goal event has equal weight within its mean.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Latency {
    pub first_s: Option<f64>,
    pub rest_s: Option<f64>,
}

/// `goal_times[e]` holds the environment steps of the goals of episode `e`.
pub fn latency_from_goal_times(goal_times: &[Vec<u32>]) -> Latency {
    let mut first = Vec::new();
    let mut rest = Vec::new();
    for times in goal_times {
        if let Some(&t0) = times.first() {
            first.push(t0 as f64);
        }
        rest.extend(times.windows(2).map(|w| (w[1] - w[0]) as f64));
    }
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64 / ENV_STEPS_PER_SECOND);
    Latency { first_s: mean(&first), rest_s: mean(&rest) }
}

pub fn latency_metric(logs: &[EpisodeLog]) -> Latency {
    let times: Vec<Vec<u32>> = logs.iter().map(EpisodeLog::goal_times).collect();
    latency_from_goal_times(&times)
}

/// Number of episodes with at least one goal.
pub fn goals_metric(logs: &[EpisodeLog]) -> usize {
    logs.iter().filter(|l| l.steps.iter().any(|s| !s.goals.is_empty())).count()
}

/// F1 of the positive class; 0 when precision and recall are both 0.
pub fn loop_f1(predicted: &[bool], truth: &[bool]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(NavError::Data(format!("{} predictions for {} labels", predicted.len(), truth.len())));
    }
    let (mut tp, mut fp, mut fal_n) = (0usize, 0usize, 0usize);
    for (&p, &t) in predicted.iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fal_n += 1,
            (false, false) => {}
        }
    }
    if tp == 0 {
        return Ok(0.0);
    }
    // harmonic mean of precision and recall, in one rounding
    Ok((2 * tp) as f64 / (2 * tp + fp + fal_n) as f64)
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Loop-closure F1 over every step with a loop prediction.
pub fn loop_f1_from_logs(logs: &[EpisodeLog]) -> Result<Option<f64>> {
    let (mut pred, mut truth) = (Vec::new(), Vec::new());
    for s in logs.iter().flat_map(|l| &l.steps) {
        if let Some(z) = s.loop_logit {
            pred.push(sigmoid(z as f64) > 0.5);
            truth.push(s.loop_label);
        }
    }
    if pred.is_empty() {
        return Ok(None);
    }
    loop_f1(&pred, &truth).map(Some)
}

/// A learning curve as `(agent_steps, score)` pairs with increasing steps.
pub type Curve = Vec<(f64, f64)>;

fn check_curve(c: &[(f64, f64)]) -> Result<()> {
    if c.is_empty() {
        return Err(NavError::Data("empty curve".into()));
    }
    if c.windows(2).any(|w| !(w[1].0 > w[0].0)) {
        return Err(NavError::Data("curve steps must be strictly increasing".into()));
    }
    Ok(())
}

/// Trapezoidal area under the curve divided by its step range. A single
/// point yields its score.
pub fn curve_auc(c: &[(f64, f64)]) -> Result<f64> {
    check_curve(c)?;
    if c.len() == 1 {
        return Ok(c[0].1);
    }
    let area: f64 = c.windows(2).map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0)).sum();
    Ok(area / (c[c.len() - 1].0 - c[0].0))
}

/// Linear interpolation onto `grid`; values outside the curve are held flat.
pub fn resample(c: &[(f64, f64)], grid: &[f64]) -> Result<Curve> {
    check_curve(c)?;
    Ok(grid
        .iter()
        .map(|&x| {
            let i = c.partition_point(|p| p.0 <= x);
            let y = if i == 0 {
                c[0].1
            } else if i == c.len() {
                c[c.len() - 1].1
            } else {
                let (a, b) = (c[i - 1], c[i]);
                a.1 + (b.1 - a.1) * (x - a.0) / (b.0 - a.0)
            };
            (x, y)
        })
        .collect())
}

/// Mean of the `k` curves with the best final score, on the union of their
/// step grids restricted to the common range.
pub fn top_k_mean(curves: &[Curve], k: usize) -> Result<Curve> {
    if curves.is_empty() || k == 0 {
        return Err(NavError::Data("top-k needs at least one curve and k > 0".into()));
    }
    for c in curves {
        check_curve(c)?;
    }
    let k = if k > curves.len() {
        log::warn!("asked for the top {k} of {} curves; using all of them", curves.len());
        curves.len()
    } else {
        k
    };
    let mut order: Vec<usize> = (0..curves.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = curves[a].last().expect("checked").1;
        let fb = curves[b].last().expect("checked").1;
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let chosen: Vec<&Curve> = order[..k].iter().map(|&i| &curves[i]).collect();
    let lo = chosen.iter().map(|c| c[0].0).fold(f64::NEG_INFINITY, f64::max);
    let hi = chosen.iter().map(|c| c[c.len() - 1].0).fold(f64::INFINITY, f64::min);
    if lo > hi {
        return Err(NavError::Data("selected curves do not overlap".into()));
    }
    let mut grid: Vec<f64> = chosen.iter().flat_map(|c| c.iter().map(|p| p.0)).filter(|&x| x >= lo && x <= hi).collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let mut mean = vec![0.0; grid.len()];
    for c in &chosen {
        for (m, (_, y)) in mean.iter_mut().zip(resample(c, &grid)?) {
            *m += y / k as f64;
        }
    }
    Ok(grid.into_iter().zip(mean).collect())
}

/// Writes `episode, step, goal, a_0..a_n` rows for external projection tools.
pub fn export_activations<W: Write>(mut out: W, logs: &[EpisodeLog]) -> Result<usize> {
    let width = logs
        .iter()
        .flat_map(|l| &l.steps)
        .next()
        .and_then(|s| s.activations.as_ref())
        .map(Vec::len)
        .ok_or_else(|| NavError::Data("logs carry no activations".into()))?;
    write!(out, "episode,step,goal")?;
    for i in 0..width {
        write!(out, ",h{i}")?;
    }
    writeln!(out)?;
    let mut rows = 0;
    for log in logs {
        for s in &log.steps {
            let a = s.activations.as_ref().filter(|a| a.len() == width).ok_or_else(|| {
                NavError::Data(format!("episode {} step {} lacks {width} activations", log.meta.episode, s.step))
            })?;
            write!(out, "{},{},{}", log.meta.episode, s.step, log.meta.goal)?;
            for v in a {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
            rows += 1;
        }
    }
    Ok(rows)
}

/// Evaluation summary of an agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub episodes: usize,
    pub goals: usize,
    pub score: f64,
    pub position_acc: Option<f64>,
    pub latency_first_s: Option<f64>,
    pub latency_rest_s: Option<f64>,
    pub loop_f1: Option<f64>,
    pub auc: Option<f64>,
}

impl MetricsReport {
    pub fn from_logs(logs: &[EpisodeLog]) -> Result<Self> {
        let lat = latency_metric(logs);
        let score = if logs.is_empty() { 0.0 } else { logs.iter().map(|l| l.meta.score).sum::<f64>() / logs.len() as f64 };
        Ok(Self {
            episodes: logs.len(),
            goals: goals_metric(logs),
            score,
            position_acc: None,
            latency_first_s: lat.first_s,
            latency_rest_s: lat.rest_s,
            loop_f1: loop_f1_from_logs(logs)?,
            auc: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn latency_examples() {
        let l = latency_from_goal_times(&[vec![600, 1200]]);
        assert_eq!(l, Latency { first_s: Some(10.0), rest_s: Some(10.0) });
        let l = latency_from_goal_times(&[vec![0]]);
        assert_eq!(l, Latency { first_s: Some(0.0), rest_s: None });
        assert_eq!(latency_from_goal_times(&[vec![], vec![]]), Latency { first_s: None, rest_s: None });
        // events, not episodes, carry equal weight
        let l = latency_from_goal_times(&[vec![60, 120, 180, 240], vec![120, 480], vec![]]);
        assert_eq!(l.first_s, Some(1.5));
        assert_eq!(l.rest_s, Some((60.0 * 3.0 + 360.0) / 4.0 / 60.0));
    }

    #[test]
    fn f1_examples() {
        let t = [true, false, true, true, false];
        assert_eq!(loop_f1(&t, &t).unwrap(), 1.0);
        assert_eq!(loop_f1(&[false; 5], &t).unwrap(), 0.0);
        let p = [true, true, true, false, false];
        let y = [true, true, false, true, false];
        assert!((loop_f1(&p, &y).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(loop_f1(&p, &y[..4]).is_err());
        assert_eq!(loop_f1(&[false; 3], &[false; 3]).unwrap(), 0.0);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(curve_auc(&[(0.0, 7.0), (5.0, 7.0), (20.0, 7.0)]).unwrap(), 7.0);
        assert_eq!(curve_auc(&[(0.0, 0.0), (100.0, 100.0)]).unwrap(), 50.0);
        assert_eq!(curve_auc(&[(3.0, 4.0)]).unwrap(), 4.0);
        assert!(curve_auc(&[]).is_err());
        assert!(curve_auc(&[(1.0, 0.0), (1.0, 2.0)]).is_err());
    }

    #[test]
    fn top_k_examples() {
        let a = vec![(0.0, 0.0), (10.0, 5.0)];
        let b = vec![(0.0, 1.0), (10.0, 9.0)];
        let c = vec![(0.0, 2.0), (5.0, 3.0), (10.0, 7.0)];
        assert_eq!(top_k_mean(&[a.clone(), b.clone(), c.clone()], 1).unwrap(), b);
        let two = top_k_mean(&[a.clone(), b.clone(), c.clone()], 2).unwrap();
        assert_eq!(two, vec![(0.0, 1.5), (5.0, 4.0), (10.0, 8.0)]);
        let all = top_k_mean(&[a.clone(), b.clone()], 5).unwrap();
        assert_eq!(all, vec![(0.0, 0.5), (10.0, 7.0)]);
        assert!(top_k_mean(&[], 1).is_err());
        assert!(top_k_mean(&[a], 0).is_err());
    }

    #[test]
    fn resample_holds_ends() {
        let c = vec![(1.0, 2.0), (3.0, 6.0)];
        assert_eq!(resample(&c, &[0.0, 2.0, 4.0]).unwrap(), vec![(0.0, 2.0), (2.0, 4.0), (4.0, 6.0)]);
    }

    fn confusion_f1(p: &[bool], t: &[bool]) -> f64 {
        let count = |a: bool, b: bool| p.iter().zip(t).filter(|&(&x, &y)| x == a && y == b).count() as f64;
        let (tp, fp, fal_n) = (count(true, true), count(true, false), count(false, true));
        if 2.0 * tp + fp + fal_n == 0.0 || tp == 0.0 {
            0.0
        } else {
            2.0 * tp / (2.0 * tp + fp + fal_n)
        }
    }

    fn piecewise() -> impl Strategy<Value = Curve> {
        prop::collection::vec((0.01f64..10.0, -100.0f64..100.0), 2..12).prop_map(|v| {
            let mut x = 0.0;
            v.into_iter()
                .map(|(dx, y)| {
                    x += dx;
                    (x, y)
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn f1_matches_confusion_oracle(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 0..200)) {
            let (p, t): (Vec<bool>, Vec<bool>) = pairs.into_iter().unzip();
            let f = loop_f1(&p, &t).unwrap();
            prop_assert!((f - confusion_f1(&p, &t)).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&f));
        }

        #[test]
        fn auc_invariant_to_refinement(c in piecewise(), extra in prop::collection::vec(0.0f64..1.0, 0..50)) {
            let (lo, hi) = (c[0].0, c[c.len() - 1].0);
            let mut grid: Vec<f64> = c.iter().map(|p| p.0).chain(extra.iter().map(|u| lo + u * (hi - lo))).collect();
            grid.sort_by(f64::total_cmp);
            grid.dedup();
            let fine = resample(&c, &grid).unwrap();
            prop_assert!((curve_auc(&fine).unwrap() - curve_auc(&c).unwrap()).abs() < 1e-9);
        }
    }
}
