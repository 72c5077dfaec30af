use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::logs::Dataset;
use crate::error::{NavError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoderConfig {
    pub lr: f64,
    pub momentum: f64,
    pub l2: f64,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            lr: 0.5,
            momentum: 0.9,
            l2: 1e-4,
            max_epochs: 1000,
            patience: 30,
            val_fraction: 0.2,
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

/// Multinomial logistic regression over standardised features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderModel {
    pub num_classes: usize,
    pub dim: usize,
    /// Row-major `[num_classes, dim]`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl DecoderModel {
    fn standardise(&self, x: &[f32], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = (x[j] as f64 - self.mean[j]) / self.scale[j];
        }
    }

    pub fn logits(&self, x: &[f32]) -> Vec<f64> {
        let mut z = vec![0.0; self.dim];
        self.standardise(x, &mut z);
        (0..self.num_classes)
            .map(|k| self.bias[k] + dot(&self.weights[k * self.dim..(k + 1) * self.dim], &z))
            .collect()
    }

    pub fn predict(&self, x: &[f32]) -> usize {
        argmax(&self.logits(x))
    }

    pub fn accuracy(&self, ds: &Dataset, rows: &[usize]) -> f64 {
        if rows.is_empty() {
            return f64::NAN;
        }
        let hits = rows.iter().filter(|&&i| self.predict(ds.row(i)) == ds.labels[i]).count();
        hits as f64 / rows.len() as f64
    }
}

#[derive(Clone, Debug)]
pub struct DecoderReport {
    pub model: DecoderModel,
    pub train_accuracy: f64,
    /// Accuracy on episodes used neither for fitting nor for early stopping.
    pub test_accuracy: f64,
    pub epochs: usize,
    pub best_val_loss: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn argmax(v: &[f64]) -> usize {
    v.iter().enumerate().fold(0, |best, (i, &x)| if x > v[best] { i } else { best })
}

/// Episode-level split into train, validation and test row indices.
fn split(ds: &Dataset, cfg: &DecoderConfig) -> Result<[Vec<usize>; 3]> {
    let mut eps: Vec<usize> = ds.episodes.clone();
    eps.sort_unstable();
    eps.dedup();
    if eps.len() < 3 {
        return Err(NavError::Data(format!("decoder needs at least 3 episodes, got {}", eps.len())));
    }
    eps.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let n = eps.len() as f64;
    let n_test = ((cfg.test_fraction * n).round() as usize).max(1);
    let n_val = ((cfg.val_fraction * n).round() as usize).max(1);
    if n_test + n_val >= eps.len() {
        return Err(NavError::Data("split leaves no training episodes".into()));
    }
    let role = |e: usize| {
        let pos = eps.iter().position(|&x| x == e).expect("episode is listed");
        if pos < n_test {
            2
        } else if pos < n_test + n_val {
            1
        } else {
            0
        }
    };
    let mut out: [Vec<usize>; 3] = Default::default();
    for (i, &e) in ds.episodes.iter().enumerate() {
        out[role(e)].push(i);
    }
    Ok(out)
}

/// Fits the decoder by full-batch gradient descent with momentum and keeps
/// the parameters with the lowest validation loss.
pub fn train_position_decoder(ds: &Dataset, num_classes: usize, cfg: &DecoderConfig) -> Result<DecoderReport> {
    if let Some(&bad) = ds.labels.iter().find(|&&l| l >= num_classes) {
        return Err(NavError::Data(format!("label {bad} outside 0..{num_classes}")));
    }
    let first = ds.labels.first().copied();
    if first.is_none() || ds.labels.iter().all(|&l| Some(l) == first) {
        return Err(NavError::Data("decoder needs at least two distinct cells".into()));
    }
    let [train, val, test] = split(ds, cfg)?;
    let d = ds.dim;
    let k = num_classes;

    let mut mean = vec![0.0; d];
    for &i in &train {
        for (m, &x) in mean.iter_mut().zip(ds.row(i)) {
            *m += x as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= train.len() as f64);
    let mut var = vec![0.0; d];
    for &i in &train {
        for ((v, &x), m) in var.iter_mut().zip(ds.row(i)).zip(&mean) {
            *v += (x as f64 - m).powi(2);
        }
    }
    let scale: Vec<f64> = var
        .iter()
        .map(|v| {
            let s = (v / train.len() as f64).sqrt();
            if s > 1e-8 {
                s
            } else {
                1.0
            }
        })
        .collect();
    let mut model = DecoderModel { num_classes: k, dim: d, weights: vec![0.0; k * d], bias: vec![0.0; k], mean, scale };
    let standardise = |rows: &[usize], m: &DecoderModel| -> Vec<f64> {
        let mut z = vec![0.0; rows.len() * d];
        for (r, &i) in rows.iter().enumerate() {
            m.standardise(ds.row(i), &mut z[r * d..(r + 1) * d]);
        }
        z
    };
    let xtr = standardise(&train, &model);
    let xval = standardise(&val, &model);
    let ytr: Vec<usize> = train.iter().map(|&i| ds.labels[i]).collect();
    let yval: Vec<usize> = val.iter().map(|&i| ds.labels[i]).collect();

    let nll = |m: &DecoderModel, x: &[f64], y: &[usize]| -> f64 {
        let mut total = 0.0;
        for (r, &label) in y.iter().enumerate() {
            let z: Vec<f64> = (0..k).map(|c| m.bias[c] + dot(&m.weights[c * d..(c + 1) * d], &x[r * d..(r + 1) * d])).collect();
            let mx = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + z.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            total += lse - z[label];
        }
        total / y.len().max(1) as f64
    };

    let mut vel_w = vec![0.0; k * d];
    let mut vel_b = vec![0.0; k];
    let mut best = (nll(&model, &xval, &yval), model.clone());
    let mut since_best = 0;
    let mut epochs = 0;
    let n = ytr.len() as f64;
    for _ in 0..cfg.max_epochs {
        epochs += 1;
        let mut gw = vec![0.0; k * d];
        let mut gb = vec![0.0; k];
        let mut z = vec![0.0; k];
        for (r, &label) in ytr.iter().enumerate() {
            let x = &xtr[r * d..(r + 1) * d];
            for (c, zc) in z.iter_mut().enumerate() {
                *zc = model.bias[c] + dot(&model.weights[c * d..(c + 1) * d], x);
            }
            let mx = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = z.iter().map(|v| (v - mx).exp()).sum();
            for c in 0..k {
                let g = ((z[c] - mx).exp() / s - if c == label { 1.0 } else { 0.0 }) / n;
                gb[c] += g;
                for (w, &xj) in gw[c * d..(c + 1) * d].iter_mut().zip(x) {
                    *w += g * xj;
                }
            }
        }
        for (i, g) in gw.iter().enumerate() {
            vel_w[i] = cfg.momentum * vel_w[i] - cfg.lr * (g + cfg.l2 * model.weights[i]);
            model.weights[i] += vel_w[i];
        }
        for c in 0..k {
            vel_b[c] = cfg.momentum * vel_b[c] - cfg.lr * gb[c];
            model.bias[c] += vel_b[c];
        }
        let v = nll(&model, &xval, &yval);
        if v < best.0 - 1e-9 {
            best = (v, model.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    let (best_val_loss, model) = best;
    Ok(DecoderReport {
        train_accuracy: model.accuracy(ds, &train),
        test_accuracy: model.accuracy(ds, &test),
        model,
        epochs,
        best_val_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn dataset(n_eps: usize, per_ep: usize, k: usize, f: impl Fn(usize, &mut ChaCha8Rng) -> Vec<f32>) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut ds = Dataset::default();
        for e in 0..n_eps {
            for _ in 0..per_ep {
                let label = rng.random_range(0..k);
                let x = f(label, &mut rng);
                ds.push(&x, label, e).unwrap();
            }
        }
        ds
    }

    #[test]
    fn one_hot_features_are_decoded() {
        let ds = dataset(10, 100, 25, |l, _| {
            let mut v = vec![0.0; 25];
            v[l] = 1.0;
            v
        });
        let r = train_position_decoder(&ds, 25, &DecoderConfig::default()).unwrap();
        assert!(r.test_accuracy > 0.99, "{}", r.test_accuracy);
    }

    #[test]
    fn noise_features_stay_near_chance() {
        let ds = dataset(20, 200, 25, |_, rng| (0..32).map(|_| rng.random::<f32>()).collect());
        let r = train_position_decoder(&ds, 25, &DecoderConfig::default()).unwrap();
        assert!((r.test_accuracy - 0.04).abs() < 0.02, "{}", r.test_accuracy);
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        let single = dataset(5, 10, 1, |_, _| vec![1.0, 2.0]);
        assert!(train_position_decoder(&single, 1, &DecoderConfig::default()).is_err());
        let two_eps = dataset(2, 50, 3, |l, _| vec![l as f32]);
        assert!(train_position_decoder(&two_eps, 3, &DecoderConfig::default()).is_err());
        let ok = dataset(5, 50, 3, |l, _| vec![l as f32]);
        assert!(train_position_decoder(&ok, 2, &DecoderConfig::default()).is_err());
        assert!(train_position_decoder(&Dataset::default(), 3, &DecoderConfig::default()).is_err());
    }

    #[test]
    fn split_is_by_episode() {
        let ds = dataset(10, 7, 4, |l, _| vec![l as f32]);
        let parts = split(&ds, &DecoderConfig::default()).unwrap();
        let eps = |rows: &Vec<usize>| {
            let mut e: Vec<usize> = rows.iter().map(|&i| ds.episodes[i]).collect();
            e.dedup();
            e
        };
        let sets: Vec<_> = parts.iter().map(eps).collect();
        for a in 0..3 {
            for b in a + 1..3 {
                assert!(sets[a].iter().all(|e| !sets[b].contains(e)));
            }
        }
        assert_eq!(parts.iter().map(Vec::len).sum::<usize>(), 70);
    }
}
