use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::spec::{ArchitectureSpec, DepthMode, Head, InputMode, Variant};
use crate::autodiff::{ParamSlot, ParamVector, Real, Registry, Tape, Tensor, Var};
use crate::error::{config_err, usage_err, NavError, Result};
use crate::maze::{Observation, NUM_ACTIONS};
use crate::targets::{depth_plane, DEPTH_BANDS, DEPTH_CELLS};

/// Number of reward classes predicted by the reward head.
pub const REWARD_CLASSES: usize = 3;

/// Network input for one agent step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepInput {
    /// Planar `[C, H, W]` image with values in `[0, 1]`.
    pub image: Vec<f32>,
    pub velocity: [f32; 6],
    pub prev_action: [f32; NUM_ACTIONS],
    pub prev_reward: f32,
}

impl StepInput {
    /// Converts an observation; `far` is the renderer's far plane, used for
    /// the extra depth plane in RGBD mode.
    pub fn from_observation(obs: &Observation, spec: &ArchitectureSpec, far: f32) -> Result<Self> {
        Ok(Self {
            image: image_planes(&obs.rgb, &obs.depth_raw, obs.width, obs.height, spec, far)?,
            velocity: obs.velocity,
            prev_action: obs.prev_action_one_hot(),
            prev_reward: obs.prev_reward,
        })
    }
}

/// HWC bytes (plus depth in RGBD mode) to planar floats.
pub fn image_planes(
    rgb: &[u8],
    depth_raw: &[f32],
    width: usize,
    height: usize,
    spec: &ArchitectureSpec,
    far: f32,
) -> Result<Vec<f32>> {
    if width != spec.image_width || height != spec.image_height {
        return usage_err(format!(
            "observation is {width}x{height} but the network expects {}x{}",
            spec.image_width, spec.image_height
        ));
    }
    let n = width * height;
    if rgb.len() != 3 * n {
        return usage_err("rgb buffer does not match the image size");
    }
    let mut out = vec![0.0; spec.in_channels() * n];
    for (i, px) in rgb.chunks_exact(3).enumerate() {
        for c in 0..3 {
            out[c * n + i] = px[c] as f32 / 255.0;
        }
    }
    if spec.input_mode == InputMode::Rgbd {
        if depth_raw.len() != n {
            return usage_err("depth buffer does not match the image size");
        }
        out[3 * n..].copy_from_slice(&depth_plane(depth_raw, far));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

/// Hidden and cell state of every recurrent layer, bottom first.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct RecurrentState {
    pub layers: Vec<LstmState>,
}

impl RecurrentState {
    pub fn zeros(spec: &ArchitectureSpec) -> Self {
        let layers = spec.lstm_widths().into_iter().map(|n| LstmState { h: vec![0.0; n], c: vec![0.0; n] }).collect();
        Self { layers }
    }
}

/// Plain values of one forward pass. Depth heads hold 64x8 logits, or 64
/// values in regression mode.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOut {
    pub policy_logits: Vec<f32>,
    pub value: f32,
    pub d1: Option<Vec<f32>>,
    pub d2: Option<Vec<f32>>,
    pub loop_logit: Option<f32>,
    pub reward_logits: Option<Vec<f32>>,
    /// Encoder features `f_t`.
    pub features: Vec<f32>,
    /// Output of the top recurrent layer, when there is one.
    pub top: Option<Vec<f32>>,
}

#[derive(Clone, Debug, PartialEq)]
struct Lin {
    w: ParamSlot,
    b: ParamSlot,
}

#[derive(Clone, Debug, PartialEq)]
struct Mlp {
    hidden: Lin,
    out: Lin,
}

#[derive(Clone, Copy, Debug)]
struct BoundLin {
    w: Var,
    b: Var,
}

#[derive(Clone, Copy, Debug)]
struct BoundMlp {
    hidden: BoundLin,
    out: BoundLin,
}

/// Parameter leaves of a [`Network`] recorded on one tape. Binding once per
/// tape lets every unrolled step share the same leaves.
#[derive(Clone, Debug)]
pub struct Bound {
    conv: Vec<(BoundLin, usize)>,
    fc: BoundLin,
    lstm: Vec<BoundLin>,
    policy: BoundLin,
    value: BoundLin,
    d1: Option<BoundMlp>,
    d2: Option<BoundMlp>,
    loop_head: Option<BoundMlp>,
    reward: Option<BoundMlp>,
}

/// Tape handles produced by one step.
#[derive(Clone, Debug)]
pub struct StepVars {
    pub policy: Var,
    pub value: Var,
    pub features: Var,
    pub top: Option<Var>,
    /// `(h, c)` per recurrent layer after this step.
    pub state: Vec<(Var, Var)>,
    pub d1: Option<Var>,
    pub d2: Option<Var>,
    pub loop_logit: Option<Var>,
    pub reward: Option<Var>,
}

/// Layer layout of an agent over a flat parameter vector.
#[derive(Clone, Debug)]
pub struct Network {
    spec: ArchitectureSpec,
    registry: Arc<Registry>,
    conv: Vec<(Lin, usize)>,
    fc: Lin,
    lstm: Vec<Lin>,
    policy: Lin,
    value: Lin,
    d1: Option<Mlp>,
    d2: Option<Mlp>,
    loop_head: Option<Mlp>,
    reward: Option<Mlp>,
}

fn lin(reg: &mut Registry, name: &str, n_out: usize, n_in: usize) -> Result<Lin> {
    Ok(Lin { w: reg.register(&format!("{name}.w"), &[n_out, n_in])?, b: reg.register(&format!("{name}.b"), &[n_out])? })
}

fn mlp(reg: &mut Registry, name: &str, n_in: usize, hidden: usize, n_out: usize) -> Result<Mlp> {
    Ok(Mlp { hidden: lin(reg, &format!("{name}.hidden"), hidden, n_in)?, out: lin(reg, &format!("{name}.out"), n_out, hidden)? })
}

impl Network {
    pub fn build(spec: &ArchitectureSpec) -> Result<Self> {
        spec.validate()?;
        let mut reg = Registry::new();
        let mut conv = Vec::new();
        for (i, (l, g)) in spec.conv.iter().zip(spec.conv_geoms()?).enumerate() {
            let w = reg.register(&format!("conv{}.w", i + 1), &[l.channels, g.in_c, l.kernel, l.kernel])?;
            let b = reg.register(&format!("conv{}.b", i + 1), &[l.channels])?;
            conv.push((Lin { w, b }, l.stride));
        }
        let fc = lin(&mut reg, "fc", spec.fc_width, spec.conv_out_len()?)?;
        let f = spec.fc_width;
        let mut lstm = Vec::new();
        match spec.variant {
            Variant::Ff => {}
            Variant::Lstm1 => {
                let n = spec.lstm2_width;
                lstm.push(lin(&mut reg, "lstm", 4 * n, f + n)?);
            }
            Variant::Nav2lstm => {
                let (n1, n2) = (spec.lstm1_width, spec.lstm2_width);
                lstm.push(lin(&mut reg, "lstm1", 4 * n1, f + 1 + n1)?);
                lstm.push(lin(&mut reg, "lstm2", 4 * n2, n1 + f + 6 + NUM_ACTIONS + n2)?);
            }
        }
        let top = spec.top_width();
        let policy = lin(&mut reg, "policy", NUM_ACTIONS, top)?;
        let value = lin(&mut reg, "value", 1, top)?;
        let depth_out = match spec.depth_mode {
            DepthMode::Classify8 => DEPTH_CELLS * DEPTH_BANDS,
            DepthMode::Regress => DEPTH_CELLS,
        };
        let hid = spec.aux_hidden;
        let d1 = spec.has(Head::D1).then(|| mlp(&mut reg, "d1", f, hid, depth_out)).transpose()?;
        let d2 = spec.has(Head::D2).then(|| mlp(&mut reg, "d2", top, hid, depth_out)).transpose()?;
        let loop_head = spec.has(Head::L).then(|| mlp(&mut reg, "loop", top, hid, 1)).transpose()?;
        let reward = spec.has(Head::R).then(|| mlp(&mut reg, "reward", f, hid, REWARD_CLASSES)).transpose()?;
        Ok(Self {
            spec: spec.clone(),
            registry: Arc::new(reg),
            conv,
            fc,
            lstm,
            policy,
            value,
            d1,
            d2,
            loop_head,
            reward,
        })
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    pub fn registry(&self) -> &Arc<Registry> {
        &self.registry
    }

    pub fn num_params(&self) -> usize {
        self.registry.len()
    }

    /// Fresh parameters: uniform `±1/sqrt(fan_in)` weights, zero biases,
    /// orthogonal recurrent blocks and a forget-gate bias of one.
    pub fn init_params<R: Rng>(&self, rng: &mut R) -> ParamVector<f32> {
        let mut p = ParamVector::zeros(Arc::clone(&self.registry));
        let mut uniform = |slot: &ParamSlot, gain: f32, flat: &mut [f32]| {
            let fan_in: usize = slot.shape[1..].iter().product();
            let lim = gain / (fan_in as f32).sqrt();
            for v in &mut flat[slot.range()] {
                *v = rng.random_range(-lim..=lim);
            }
        };
        for (l, _) in &self.conv {
            uniform(&l.w, 1.0, &mut p.flat);
        }
        uniform(&self.fc.w, 1.0, &mut p.flat);
        uniform(&self.policy.w, 0.1, &mut p.flat);
        uniform(&self.value.w, 1.0, &mut p.flat);
        for m in [&self.d1, &self.d2, &self.loop_head, &self.reward].into_iter().flatten() {
            uniform(&m.hidden.w, 1.0, &mut p.flat);
            uniform(&m.out.w, 1.0, &mut p.flat);
        }
        for l in &self.lstm {
            uniform(&l.w, 1.0, &mut p.flat);
        }
        for l in &self.lstm {
            let (rows, cols) = (l.w.shape[0], l.w.shape[1]);
            let n = rows / 4;
            let nx = cols - n;
            for gate in 0..4 {
                let q = random_orthogonal(n, rng);
                for r in 0..n {
                    let row = l.w.offset + (gate * n + r) * cols + nx;
                    p.flat[row..row + n].copy_from_slice(&q[r * n..(r + 1) * n]);
                }
            }
            p.flat[l.b.offset + n..l.b.offset + 2 * n].fill(1.0);
        }
        p
    }

    pub fn bind<T: Real>(&self, tape: &mut Tape<'_, T>) -> Result<Bound> {
        let mut bl = |l: &Lin| -> Result<BoundLin> { Ok(BoundLin { w: tape.param(&l.w)?, b: tape.param(&l.b)? }) };
        let conv = self.conv.iter().map(|(l, s)| Ok((bl(l)?, *s))).collect::<Result<Vec<_>>>()?;
        let fc = bl(&self.fc)?;
        let lstm = self.lstm.iter().map(&mut bl).collect::<Result<Vec<_>>>()?;
        let policy = bl(&self.policy)?;
        let value = bl(&self.value)?;
        let mut bm = |m: &Option<Mlp>| -> Result<Option<BoundMlp>> {
            m.as_ref().map(|m| Ok(BoundMlp { hidden: bl(&m.hidden)?, out: bl(&m.out)? })).transpose()
        };
        Ok(Bound {
            conv,
            fc,
            lstm,
            policy,
            value,
            d1: bm(&self.d1)?,
            d2: bm(&self.d2)?,
            loop_head: bm(&self.loop_head)?,
            reward: bm(&self.reward)?,
        })
    }

    /// Conv stack and fully connected layer: the features `f_t`.
    pub fn encode<T: Real>(&self, tape: &mut Tape<'_, T>, b: &Bound, image: &[f32]) -> Result<Var> {
        let shape = vec![self.spec.in_channels(), self.spec.image_height, self.spec.image_width];
        if image.len() != shape.iter().product::<usize>() {
            return usage_err(format!("image has {} values, expected {:?}", image.len(), shape));
        }
        let mut x = tape.constant(Tensor::new(shape, image.iter().map(|&v| T::of(v as f64)).collect())?);
        for (l, stride) in &b.conv {
            let y = tape.conv2d(x, l.w, l.b, *stride)?;
            x = tape.relu(y);
        }
        let n = tape.value(x).len();
        let flat = tape.reshape(x, &[n])?;
        let y = tape.linear(flat, b.fc.w, b.fc.b)?;
        Ok(tape.relu(y))
    }

    fn head<T: Real>(tape: &mut Tape<'_, T>, m: &BoundMlp, x: Var) -> Result<Var> {
        let h = tape.linear(x, m.hidden.w, m.hidden.b)?;
        let h = tape.relu(h);
        tape.linear(h, m.out.w, m.out.b)
    }

    fn depth_head<T: Real>(&self, tape: &mut Tape<'_, T>, m: &BoundMlp, x: Var) -> Result<Var> {
        let y = Self::head(tape, m, x)?;
        match self.spec.depth_mode {
            DepthMode::Classify8 => tape.reshape(y, &[DEPTH_CELLS, DEPTH_BANDS]),
            DepthMode::Regress => Ok(y),
        }
    }

    /// Reward-class logits for a replayed frame.
    pub fn reward_logits<T: Real>(&self, tape: &mut Tape<'_, T>, b: &Bound, image: &[f32]) -> Result<Var> {
        let Some(m) = &b.reward else {
            return config_err("network has no reward head");
        };
        let f = self.encode(tape, b, image)?;
        Self::head(tape, m, f)
    }

    /// Records one agent step on `tape`. `state` holds `(h, c)` per recurrent layer.
    pub fn step<T: Real>(
        &self,
        tape: &mut Tape<'_, T>,
        b: &Bound,
        input: &StepInput,
        state: &[(Var, Var)],
        with_reward_head: bool,
    ) -> Result<StepVars> {
        let widths = self.spec.lstm_widths();
        if state.len() != widths.len()
            || state.iter().zip(&widths).any(|(&(h, c), &n)| tape.value(h).len() != n || tape.value(c).len() != n)
        {
            return usage_err("recurrent state does not match the network");
        }
        let f = self.encode(tape, b, &input.image)?;
        let t = |v: f32| T::of(v as f64);
        let mut new_state = Vec::new();
        let mut cell = |tape: &mut Tape<'_, T>, x: Var, k: usize| -> Result<Var> {
            let (h, c) = state[k];
            let n = widths[k];
            let out = tape.lstm_cell(x, h, c, b.lstm[k].w, b.lstm[k].b)?;
            let h2 = tape.slice(out, 0, n)?;
            let c2 = tape.slice(out, n, n)?;
            new_state.push((h2, c2));
            Ok(h2)
        };
        let top = match self.spec.variant {
            Variant::Ff => None,
            Variant::Lstm1 => Some(cell(tape, f, 0)?),
            Variant::Nav2lstm => {
                let r = tape.constant_vec(vec![t(input.prev_reward)]);
                let x1 = tape.concat(&[f, r]);
                let h1 = cell(tape, x1, 0)?;
                let v = tape.constant_vec(input.velocity.iter().map(|&x| t(x)).collect());
                let a = tape.constant_vec(input.prev_action.iter().map(|&x| t(x)).collect());
                let x2 = tape.concat(&[h1, f, v, a]);
                Some(cell(tape, x2, 1)?)
            }
        };
        let trunk = top.unwrap_or(f);
        let policy = tape.linear(trunk, b.policy.w, b.policy.b)?;
        let value = tape.linear(trunk, b.value.w, b.value.b)?;
        let d1 = b.d1.as_ref().map(|m| self.depth_head(tape, m, f)).transpose()?;
        let d2 = b.d2.as_ref().map(|m| self.depth_head(tape, m, trunk)).transpose()?;
        let loop_logit = b.loop_head.as_ref().map(|m| Self::head(tape, m, trunk)).transpose()?;
        let reward = match (&b.reward, with_reward_head) {
            (Some(m), true) => Some(Self::head(tape, m, f)?),
            _ => None,
        };
        Ok(StepVars { policy, value, features: f, top, state: new_state, d1, d2, loop_logit, reward })
    }

    /// Puts a detached recurrent state on the tape.
    pub fn state_vars<T: Real>(&self, tape: &mut Tape<'_, T>, state: &RecurrentState) -> Result<Vec<(Var, Var)>> {
        let widths = self.spec.lstm_widths();
        if state.layers.len() != widths.len()
            || state.layers.iter().zip(&widths).any(|(l, &n)| l.h.len() != n || l.c.len() != n)
        {
            return usage_err("recurrent state does not match the network");
        }
        let conv = |v: &[f64]| v.iter().map(|&x| T::of(x)).collect::<Vec<T>>();
        Ok(state
            .layers
            .iter()
            .map(|l| (tape.constant_vec(conv(&l.h)), tape.constant_vec(conv(&l.c))))
            .collect())
    }

    /// Reads a recurrent state back from tape handles.
    pub fn read_state<T: Real>(tape: &Tape<'_, T>, vars: &[(Var, Var)]) -> RecurrentState {
        let read = |v: Var| tape.value(v).iter().map(|x| x.f64()).collect();
        RecurrentState { layers: vars.iter().map(|&(h, c)| LstmState { h: read(h), c: read(c) }).collect() }
    }

    /// Extracts plain outputs from step handles.
    pub fn read_out<T: Real>(tape: &Tape<'_, T>, s: &StepVars) -> ForwardOut {
        let read = |v: Var| tape.value(v).iter().map(|x| x.f64() as f32).collect::<Vec<f32>>();
        ForwardOut {
            policy_logits: read(s.policy),
            value: tape.scalar(s.value).f64() as f32,
            d1: s.d1.map(read),
            d2: s.d2.map(read),
            loop_logit: s.loop_logit.map(|v| tape.scalar(v).f64() as f32),
            reward_logits: s.reward.map(read),
            features: read(s.features),
            top: s.top.map(read),
        }
    }

    /// One forward pass outside training.
    pub fn forward<T: Real>(
        &self,
        params: &[T],
        input: &StepInput,
        state: &RecurrentState,
    ) -> Result<(ForwardOut, RecurrentState)> {
        if params.len() != self.num_params() {
            return Err(NavError::Usage(format!(
                "parameter vector has {} values, network needs {}",
                params.len(),
                self.num_params()
            )));
        }
        let mut tape = Tape::new(params);
        let b = self.bind(&mut tape)?;
        let sv = self.state_vars(&mut tape, state)?;
        let out = self.step(&mut tape, &b, input, &sv, true)?;
        Ok((Self::read_out(&tape, &out), Self::read_state(&tape, &out.state)))
    }
}

/// Samples an action from `softmax(logits)`.
pub fn act<R: Rng>(logits: &[f32], rng: &mut R) -> u8 {
    let probs = softmax(logits);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i as u8;
        }
    }
    // rounding left a sliver at the top; return the last action with mass
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0) as u8
}

pub fn softmax(logits: &[f32]) -> Vec<f64> {
    let m = logits.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x as f64));
    let e: Vec<f64> = logits.iter().map(|&x| (x as f64 - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Entropy of `softmax(logits)` in nats.
pub fn entropy(logits: &[f32]) -> f64 {
    softmax(logits).iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum()
}

fn random_orthogonal<R: Rng>(n: usize, rng: &mut R) -> Vec<f32> {
    let mut m: Vec<f64> = (0..n * n).map(|_| StandardNormal.sample(rng)).collect();
    for i in 0..n {
        for j in 0..i {
            let d: f64 = (0..n).map(|k| m[i * n + k] * m[j * n + k]).sum();
            for k in 0..n {
                m[i * n + k] -= d * m[j * n + k];
            }
        }
        let norm = (0..n).map(|k| m[i * n + k].powi(2)).sum::<f64>().sqrt().max(1e-12);
        for k in 0..n {
            m[i * n + k] /= norm;
        }
    }
    m.into_iter().map(|v| v as f32).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::ConvLayer;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_spec(variant: Variant, heads: Vec<Head>) -> ArchitectureSpec {
        ArchitectureSpec {
            variant,
            heads,
            lstm1_width: 8,
            lstm2_width: 12,
            fc_width: 16,
            aux_hidden: 10,
            image_width: 16,
            image_height: 16,
            conv: vec![ConvLayer { channels: 4, kernel: 4, stride: 4 }],
            ..Default::default()
        }
    }

    fn input(spec: &ArchitectureSpec, seed: u64) -> StepInput {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = spec.in_channels() * spec.image_width * spec.image_height;
        StepInput {
            image: (0..n).map(|_| rng.random()).collect(),
            velocity: [0.1, -0.05, 0.0, 0.02, 0.0, 0.0],
            prev_action: {
                let mut a = [0.0; 8];
                a[3] = 1.0;
                a
            },
            prev_reward: 1.0,
        }
    }

    #[test]
    fn closed_form_parameter_count_ff() {
        let s = ArchitectureSpec { variant: Variant::Ff, ..Default::default() };
        let net = Network::build(&s).unwrap();
        let conv = (16 * 3 * 64 + 16) + (32 * 16 * 16 + 32);
        let fc = 256 * 2592 + 256;
        let heads = (8 * 256 + 8) + (256 + 1);
        assert_eq!(net.num_params(), conv + fc + heads);
    }

    #[test]
    fn nav_wiring_widths() {
        let s = ArchitectureSpec { heads: vec![Head::D1, Head::D2, Head::L, Head::R], ..Default::default() };
        let net = Network::build(&s).unwrap();
        let r = net.registry();
        assert_eq!(r.get("lstm1.w").unwrap().shape, vec![4 * 64, 256 + 1 + 64]);
        assert_eq!(r.get("lstm2.w").unwrap().shape, vec![4 * 256, 64 + 256 + 6 + 8 + 256]);
        assert_eq!(r.get("d1.out.w").unwrap().shape, vec![512, 128]);
        assert_eq!(r.get("d2.hidden.w").unwrap().shape, vec![128, 256]);
        assert_eq!(r.get("loop.out.w").unwrap().shape, vec![1, 128]);
        assert_eq!(r.get("reward.out.w").unwrap().shape, vec![3, 128]);
    }

    #[test]
    fn rgbd_changes_only_first_conv() {
        let a = Network::build(&ArchitectureSpec::default()).unwrap();
        let b = Network::build(&ArchitectureSpec { input_mode: InputMode::Rgbd, ..Default::default() }).unwrap();
        for (name, slot) in a.registry().iter() {
            let other = &b.registry().get(name).unwrap().shape;
            if name == "conv1.w" {
                assert_eq!(other, &vec![16, 4, 8, 8]);
            } else {
                assert_eq!(other, &slot.shape);
            }
        }
    }

    #[test]
    fn init_is_deterministic_and_orthogonal() {
        let s = small_spec(Variant::Nav2lstm, vec![]);
        let net = Network::build(&s).unwrap();
        let p1 = net.init_params(&mut ChaCha8Rng::seed_from_u64(5));
        let p2 = net.init_params(&mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(p1.flat, p2.flat);
        let w = p1.slice("lstm2.w").unwrap();
        let (n, cols) = (12, 8 + 16 + 6 + 8 + 12);
        for i in 0..n {
            for j in 0..n {
                let d: f32 = (0..n).map(|k| w[i * cols + cols - n + k] * w[j * cols + cols - n + k]).sum();
                assert!((d - if i == j { 1.0 } else { 0.0 }).abs() < 1e-5);
            }
        }
        assert!(p1.slice("lstm1.b").unwrap()[8..16].iter().all(|&v| v == 1.0));
    }

    #[test]
    fn zero_params_give_uniform_policy() {
        let s = small_spec(Variant::Nav2lstm, vec![Head::D2, Head::L]);
        let net = Network::build(&s).unwrap();
        let p = vec![0f32; net.num_params()];
        let (out, _) = net.forward(&p, &input(&s, 1), &RecurrentState::zeros(&s)).unwrap();
        assert!(out.policy_logits.iter().all(|&l| l == 0.0));
        assert!(softmax(&out.policy_logits).iter().all(|&p| (p - 0.125).abs() < 1e-12));
        assert_eq!(out.value, 0.0);
        assert!(out.d1.is_none() && out.reward_logits.is_none());
        assert_eq!(out.d2.as_ref().unwrap().len(), 512);
        assert!(out.loop_logit.is_some());
    }

    #[test]
    fn forward_is_pure() {
        let s = small_spec(Variant::Lstm1, vec![Head::D1]);
        let net = Network::build(&s).unwrap();
        let p = net.init_params(&mut ChaCha8Rng::seed_from_u64(1));
        let st = RecurrentState::zeros(&s);
        let a = net.forward(&p.flat, &input(&s, 2), &st).unwrap();
        let b = net.forward(&p.flat, &input(&s, 2), &st).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn prev_reward_reaches_policy_only_through_h1() {
        let s = small_spec(Variant::Nav2lstm, vec![]);
        let net = Network::build(&s).unwrap();
        let mut p = net.init_params(&mut ChaCha8Rng::seed_from_u64(3));
        let cols = 8 + 16 + 6 + 8 + 12;
        let w = p.slice_mut("lstm2.w").unwrap();
        for r in 0..48 {
            w[r * cols..r * cols + 8].fill(0.0);
        }
        let st = RecurrentState::zeros(&s);
        let mut x = input(&s, 4);
        let (a, sa) = net.forward(&p.flat, &x, &st).unwrap();
        x.prev_reward = -3.0;
        let (b, sb) = net.forward(&p.flat, &x, &st).unwrap();
        assert_ne!(sa.layers[0].h, sb.layers[0].h);
        assert_eq!(a.policy_logits, b.policy_logits);
        assert_eq!(sa.layers[1], sb.layers[1]);
    }

    #[test]
    fn state_mismatch_is_usage_error() {
        let s = small_spec(Variant::Nav2lstm, vec![]);
        let net = Network::build(&s).unwrap();
        let p = vec![0f32; net.num_params()];
        let bad = RecurrentState { layers: vec![LstmState { h: vec![0.0; 3], c: vec![0.0; 3] }] };
        assert!(matches!(net.forward(&p, &input(&s, 0), &bad), Err(NavError::Usage(_))));
    }

    #[test]
    fn sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut logits = [0.0f32; 8];
        logits[5] = 1e6;
        assert!((0..1000).all(|_| act(&logits, &mut rng) == 5));
        let mut counts = [0usize; 8];
        for _ in 0..100_000 {
            counts[act(&[0.0; 8], &mut rng) as usize] += 1;
        }
        assert!(counts.iter().all(|&c| (c as f64 / 1e5 - 0.125).abs() < 0.02));
        let seq = |seed| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            (0..50).map(|_| act(&[0.3, -1.0, 2.0, 0.0, 0.5, 0.1, -0.2, 1.0], &mut r)).collect::<Vec<_>>()
        };
        assert_eq!(seq(9), seq(9));
    }
}
