use std::collections::VecDeque;
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::hyper::{transform_reward, HyperParams};
use super::loss::{a3c_loss, aux_loss, compute_returns, reward_pred_loss, StepRecord};
use super::replay::{reward_class, ReplayBuffer, ReplayItem};
use crate::agent::{act, entropy, image_planes, ArchitectureSpec, Head, InputMode, Network, RecurrentState, StepInput};
use crate::autodiff::{clip_global_norm, write_checkpoint, ParamVector, SharedParams, SharedRmsProp, Tape};
use crate::error::{config_err, NavError, Result};
use crate::maze::{Action, Event, MazeLayout, Observation, World, WorldConfig};
use crate::targets::{check_depth_frame, DepthTarget, LoopThresholds, LoopTracker};

/// Everything needed to start a training run.
#[derive(Clone, Debug)]
pub struct TrainSetup {
    pub layout: Arc<MazeLayout>,
    pub world: WorldConfig,
    pub spec: ArchitectureSpec,
    pub hp: HyperParams,
    pub loop_thresholds: LoopThresholds,
    pub max_agent_steps: u64,
    pub seed: u64,
    /// One worker on the calling thread; curves are reproducible bit for bit.
    pub deterministic: bool,
    /// Environment steps per learning-curve window.
    pub curve_window: u64,
    pub checkpoint_every: Option<u64>,
    pub checkpoint_dir: Option<PathBuf>,
}

impl TrainSetup {
    pub fn new(layout: Arc<MazeLayout>, world: WorldConfig, spec: ArchitectureSpec, hp: HyperParams) -> Self {
        Self {
            layout,
            world,
            spec,
            hp,
            loop_thresholds: LoopThresholds::default(),
            max_agent_steps: 25_000_000,
            seed: 0,
            deterministic: false,
            curve_window: 50_000,
            checkpoint_every: None,
            checkpoint_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.hp.validate()?;
        self.spec.validate()?;
        self.loop_thresholds.validate()?;
        let r = &self.world.render;
        if r.width != self.spec.image_width || r.height != self.spec.image_height {
            return config_err(format!(
                "renderer is {}x{} but the network expects {}x{}",
                r.width, r.height, self.spec.image_width, self.spec.image_height
            ));
        }
        if self.curve_window == 0 {
            return config_err("curve window must be positive");
        }
        if self.spec.has(Head::D1) || self.spec.has(Head::D2) {
            check_depth_frame(r.height, r.width)?;
        }
        Ok(())
    }

    pub fn workers(&self) -> usize {
        if self.deterministic {
            1
        } else {
            self.hp.n_workers
        }
    }
}

/// Mean score of the episodes that finished inside one window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub agent_steps: u64,
    pub mean_episode_score: f64,
    pub episodes_in_window: usize,
    pub wall_clock_s: f64,
}

pub const CURVE_HEADER: &str = "agent_steps,mean_episode_score,episodes_in_window,wall_clock_s";

pub fn write_curve_csv<W: Write>(mut out: W, curve: &[CurvePoint]) -> Result<()> {
    writeln!(out, "{CURVE_HEADER}")?;
    for p in curve {
        writeln!(out, "{},{},{},{}", p.agent_steps, p.mean_episode_score, p.episodes_in_window, p.wall_clock_s)?;
    }
    Ok(())
}

pub fn read_curve_csv(text: &str) -> Result<Vec<CurvePoint>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(CURVE_HEADER) {
        return Err(NavError::Data("curve file lacks the expected header".into()));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            let bad = || NavError::Data(format!("curve line {}: cannot parse `{l}`", i + 2));
            if f.len() != 4 {
                return Err(bad());
            }
            Ok(CurvePoint {
                agent_steps: f[0].parse().map_err(|_| bad())?,
                mean_episode_score: f[1].parse().map_err(|_| bad())?,
                episodes_in_window: f[2].parse().map_err(|_| bad())?,
                wall_clock_s: f[3].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

struct CurveState {
    window: u64,
    action_repeat: u64,
    boundary: u64,
    scores: Vec<f64>,
    points: Vec<CurvePoint>,
    start: Instant,
    deterministic: bool,
}

impl CurveState {
    fn clock(&self) -> f64 {
        if self.deterministic {
            0.0
        } else {
            self.start.elapsed().as_secs_f64()
        }
    }

    fn flush(&mut self, env_steps: u64) {
        if !self.scores.is_empty() {
            let n = self.scores.len();
            self.points.push(CurvePoint {
                agent_steps: env_steps / self.action_repeat,
                mean_episode_score: self.scores.iter().sum::<f64>() / n as f64,
                episodes_in_window: n,
                wall_clock_s: self.clock(),
            });
            self.scores.clear();
        }
    }

    fn record(&mut self, env_step: u64, score: f64) {
        while env_step >= self.boundary {
            self.flush(self.boundary);
            self.boundary += self.window;
        }
        self.scores.push(score);
    }
}

/// Called with the curve whenever a window closes; returning true stops the run.
pub type StopFn = dyn Fn(&[CurvePoint]) -> bool + Sync;

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub curve: Vec<CurvePoint>,
    pub params: ParamVector<f32>,
    pub agent_steps: u64,
    pub env_steps: u64,
    pub episodes: u64,
    /// Mean policy entropy over the most recent acting steps of all workers.
    pub recent_entropy: f64,
    pub wall_clock_s: f64,
    pub stopped_early: bool,
}

struct Shared {
    params: SharedParams,
    opt: SharedRmsProp,
    agent_steps: AtomicU64,
    env_steps: AtomicU64,
    episodes: AtomicU64,
    stop: AtomicBool,
    stopped_early: AtomicBool,
    next_checkpoint: AtomicU64,
    curve: Mutex<CurveState>,
}

const ENTROPY_WINDOW: usize = 1000;

struct Worker<'a> {
    setup: &'a TrainSetup,
    net: &'a Network,
    world: World,
    rng: ChaCha8Rng,
    obs: Observation,
    state: RecurrentState,
    tracker: LoopTracker,
    loop_label: bool,
    score: f64,
    replay: ReplayBuffer,
    local: Vec<f32>,
    grads: Vec<f32>,
    entropies: VecDeque<f64>,
}

struct ChunkOutcome {
    agent_steps: u64,
    env_steps: u64,
    finished: Vec<(u64, f64)>,
}

fn worker_seed(seed: u64, id: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add((id as u64 + 1).wrapping_mul(0xbf58_476d_1ce4_e5b9))
}

impl<'a> Worker<'a> {
    fn new(setup: &'a TrainSetup, net: &'a Network, id: usize) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(worker_seed(setup.seed, id));
        let mut world = World::new(Arc::clone(&setup.layout), setup.world);
        let obs = world.reset(rng.random());
        let n = net.num_params();
        let mut w = Self {
            setup,
            net,
            world,
            rng,
            obs,
            state: RecurrentState::zeros(&setup.spec),
            tracker: LoopTracker::new(setup.loop_thresholds),
            loop_label: false,
            score: 0.0,
            replay: ReplayBuffer::new(setup.hp.replay_capacity),
            local: vec![0.0; n],
            grads: vec![0.0; n],
            entropies: VecDeque::with_capacity(ENTROPY_WINDOW),
        };
        w.update_loop_label()?;
        Ok(w)
    }

    fn update_loop_label(&mut self) -> Result<()> {
        let (p, _) = self.world.ground_truth_position()?;
        self.loop_label = self.tracker.push(p);
        Ok(())
    }

    fn new_episode(&mut self) -> Result<()> {
        self.obs = self.world.reset(self.rng.random());
        self.state = RecurrentState::zeros(&self.setup.spec);
        self.tracker.reset();
        self.score = 0.0;
        self.update_loop_label()
    }

    fn run_chunk(&mut self, shared: &Shared) -> Result<ChunkOutcome> {
        let (setup, net) = (self.setup, self.net);
        let spec = &setup.spec;
        let hp = &setup.hp;
        let far = setup.world.render.max_range;
        let (h, w) = (setup.world.render.height, setup.world.render.width);
        let needs_depth = spec.has(Head::D1) || spec.has(Head::D2);
        let needs_loop = spec.has(Head::L);
        let use_replay = spec.has(Head::R) && hp.beta_r != 0.0;

        shared.params.load_into(&mut self.local);
        let local = std::mem::take(&mut self.local);
        let mut tape = Tape::new(&local);
        let bound = net.bind(&mut tape)?;
        let mut sv = net.state_vars(&mut tape, &self.state)?;
        let mut records = Vec::with_capacity(hp.chunk_len);
        let mut raw_rewards = Vec::with_capacity(hp.chunk_len);
        let mut outcome = ChunkOutcome { agent_steps: 0, env_steps: 0, finished: Vec::new() };
        let mut terminal = false;

        for _ in 0..hp.chunk_len {
            let input = StepInput::from_observation(&self.obs, spec, far)?;
            let depth = if needs_depth { Some(DepthTarget::from_raw(&self.obs.depth_raw, h, w, far)?) } else { None };
            let out = net.step(&mut tape, &bound, &input, &sv, false)?;
            let logits = tape.value(out.policy).to_vec();
            if self.entropies.len() == ENTROPY_WINDOW {
                self.entropies.pop_front();
            }
            self.entropies.push_back(entropy(&logits));
            let action = act(&logits, &mut self.rng);
            let before = self.world.state().map_or(0, |s| s.env_step);
            let res = match self.world.step(Action::new(action)?) {
                Ok(r) => r,
                Err(e) => {
                    log::warn!("environment fault, restarting episode: {e}");
                    self.new_episode()?;
                    terminal = true;
                    break;
                }
            };
            let after = self.world.state().map_or(0, |s| s.env_step);
            outcome.env_steps += u64::from(after - before);
            outcome.agent_steps += 1;
            if use_replay {
                let depth_raw = if spec.input_mode == InputMode::Rgbd { self.obs.depth_raw.clone() } else { Vec::new() };
                self.replay.push(ReplayItem { rgb: self.obs.rgb.clone(), depth_raw, class: reward_class(res.reward) });
            }
            records.push(StepRecord {
                policy: out.policy,
                value: out.value,
                action,
                reward: transform_reward(res.reward, hp),
                d1: out.d1,
                d2: out.d2,
                loop_logit: out.loop_logit,
                depth,
                loop_label: needs_loop.then_some(self.loop_label),
            });
            raw_rewards.push(res.reward);
            self.score += res.reward as f64;
            sv = out.state;
            if res.events.iter().any(|e| matches!(e, Event::Goal { .. })) {
                self.tracker.reset();
            }
            self.obs = res.obs;
            if res.done {
                outcome.finished.push((outcome.env_steps, self.score));
                terminal = true;
                break;
            }
            self.update_loop_label()?;
        }

        let bootstrap = if terminal || records.is_empty() {
            0.0
        } else {
            let input = StepInput::from_observation(&self.obs, spec, far)?;
            let out = net.step(&mut tape, &bound, &input, &sv, false)?;
            tape.scalar(out.value) as f64
        };
        if !terminal {
            self.state = Network::read_state(&tape, &sv);
        }

        if !records.is_empty() {
            let rewards: Vec<f64> = records.iter().map(|r| r.reward as f64).collect();
            let returns = compute_returns(&rewards, hp.gamma, bootstrap);
            let mut terms = vec![(a3c_loss(&mut tape, &records, &returns, hp)?, 1.0f32)];
            if needs_depth || needs_loop {
                terms.push((aux_loss(&mut tape, &records, hp, spec.depth_mode)?, 1.0));
            }
            if use_replay {
                let mut batch = Vec::with_capacity(hp.replay_batch);
                for _ in 0..hp.replay_batch {
                    let Some(item) = self.replay.sample(&mut self.rng) else { break };
                    let img = image_planes(&item.rgb, &item.depth_raw, w, h, spec, far)?;
                    batch.push((img, item.class));
                }
                if let Some(rp) = reward_pred_loss(&mut tape, net, &bound, &batch)? {
                    terms.push((rp, hp.beta_r as f32));
                }
            }
            let total = tape.weighted_sum(&terms)?;
            self.grads.fill(0.0);
            tape.backward(total, &mut self.grads)?;
            clip_global_norm(&mut self.grads, hp.grad_clip as f32);
            shared.opt.apply(&shared.params, &self.grads, hp.lr as f32)?;
        }
        drop(tape);
        self.local = local;

        if terminal && self.world.done() {
            self.new_episode()?;
        }
        Ok(outcome)
    }

    fn run(&mut self, shared: &Shared, stop_fn: Option<&StopFn>) -> Result<()> {
        let setup = self.setup;
        loop {
            if shared.stop.load(Ordering::Relaxed) || shared.agent_steps.load(Ordering::Relaxed) >= setup.max_agent_steps {
                return Ok(());
            }
            let out = self.run_chunk(shared)?;
            let base = shared.env_steps.fetch_add(out.env_steps, Ordering::Relaxed);
            let done_steps = shared.agent_steps.fetch_add(out.agent_steps, Ordering::Relaxed) + out.agent_steps;
            if !out.finished.is_empty() {
                shared.episodes.fetch_add(out.finished.len() as u64, Ordering::Relaxed);
                let mut curve = shared.curve.lock().expect("curve lock poisoned");
                let before = curve.points.len();
                for &(offset, score) in &out.finished {
                    curve.record(base + offset, score);
                }
                if let Some(f) = stop_fn.filter(|_| curve.points.len() > before) {
                    if f(&curve.points) {
                        shared.stopped_early.store(true, Ordering::Relaxed);
                        shared.stop.store(true, Ordering::Relaxed);
                    }
                }
            }
            if let (Some(every), Some(dir)) = (setup.checkpoint_every, &setup.checkpoint_dir) {
                let next = shared.next_checkpoint.load(Ordering::Relaxed);
                if done_steps >= next
                    && shared
                        .next_checkpoint
                        .compare_exchange(next, next + every.max(1), Ordering::Relaxed, Ordering::Relaxed)
                        .is_ok()
                {
                    let path = dir.join(format!("checkpoint_{done_steps}.navw"));
                    let file = std::fs::File::create(&path)?;
                    write_checkpoint(std::io::BufWriter::new(file), &shared.params.snapshot())?;
                    log::info!("wrote {}", path.display());
                }
            }
        }
    }
}

/// Runs asynchronous actor-critic training until `max_agent_steps` or until
/// `stop_fn` returns true. `init` replaces the seeded initialisation.
pub fn train(setup: &TrainSetup, init: Option<ParamVector<f32>>, stop_fn: Option<&StopFn>) -> Result<TrainReport> {
    setup.validate()?;
    let net = Network::build(&setup.spec)?;
    let params = match init {
        Some(p) => {
            if *p.registry != **net.registry() {
                return config_err("initial parameters do not match the architecture");
            }
            p
        }
        None => net.init_params(&mut ChaCha8Rng::seed_from_u64(setup.seed)),
    };
    let start = Instant::now();
    let repeat = u64::from(setup.world.physics.action_repeat.max(1));
    let shared = Shared {
        params: SharedParams::new(&params),
        opt: SharedRmsProp::new(params.flat.len(), setup.hp.rmsprop),
        agent_steps: AtomicU64::new(0),
        env_steps: AtomicU64::new(0),
        episodes: AtomicU64::new(0),
        stop: AtomicBool::new(false),
        stopped_early: AtomicBool::new(false),
        next_checkpoint: AtomicU64::new(setup.checkpoint_every.unwrap_or(u64::MAX)),
        curve: Mutex::new(CurveState {
            window: setup.curve_window,
            action_repeat: repeat,
            boundary: setup.curve_window,
            scores: Vec::new(),
            points: Vec::new(),
            start,
            deterministic: setup.deterministic,
        }),
    };
    if let Some(dir) = &setup.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }
    let n = setup.workers();
    let entropies: Vec<Vec<f64>> = if n == 1 {
        let mut w = Worker::new(setup, &net, 0)?;
        w.run(&shared, stop_fn)?;
        vec![w.entropies.into_iter().collect()]
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..n)
                .map(|id| {
                    let (shared, net) = (&shared, &net);
                    s.spawn(move || -> Result<Vec<f64>> {
                        let mut w = Worker::new(setup, net, id)?;
                        let r = w.run(shared, stop_fn);
                        if r.is_err() {
                            shared.stop.store(true, Ordering::Relaxed);
                        }
                        r.map(|_| w.entropies.into_iter().collect())
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().map_err(|_| NavError::Usage("training worker panicked".into()))?)
                .collect::<Result<Vec<_>>>()
        })?
    };
    let env_steps = shared.env_steps.load(Ordering::Relaxed);
    let mut curve = shared.curve.into_inner().expect("curve lock poisoned");
    curve.flush(env_steps);
    let all: Vec<f64> = entropies.into_iter().flatten().collect();
    Ok(TrainReport {
        curve: curve.points,
        params: shared.params.snapshot(),
        agent_steps: shared.agent_steps.load(Ordering::Relaxed),
        env_steps,
        episodes: shared.episodes.load(Ordering::Relaxed),
        recent_entropy: if all.is_empty() { f64::NAN } else { all.iter().sum::<f64>() / all.len() as f64 },
        wall_clock_s: if setup.deterministic { 0.0 } else { start.elapsed().as_secs_f64() },
        stopped_early: shared.stopped_early.load(Ordering::Relaxed),
    })
}
