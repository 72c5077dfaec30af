use std::io::{BufRead, Write};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{act, entropy, Network, RecurrentState, StepInput};
use crate::error::{NavError, Result};
use crate::maze::{Action, Event, MazeKind, MazeLayout, World, WorldConfig, GOAL_REWARD, NUM_ACTIONS};
use crate::targets::{LoopThresholds, LoopTracker};

/// One agent step. Position, cell and network outputs describe the
/// observation the agent acted on; reward and events follow the action.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub env_step: u32,
    pub x: f64,
    pub y: f64,
    pub cell: usize,
    pub action: u8,
    pub reward: f32,
    /// Environment steps (from episode start) at which goals were reached.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub goals: Vec<u32>,
    #[serde(default)]
    pub fruit_reward: f32,
    pub value: f32,
    pub entropy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loop_logit: Option<f32>,
    pub loop_label: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activations: Option<Vec<f32>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMeta {
    pub episode: usize,
    pub maze: MazeKind,
    pub layout_seed: u64,
    pub episode_seed: u64,
    /// Floor-cell id of the goal.
    pub goal: usize,
    pub score: f64,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeLog {
    pub meta: EpisodeMeta,
    pub steps: Vec<StepLog>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum LogLine {
    Episode(EpisodeMeta),
    Step(StepLog),
}

impl EpisodeLog {
    pub fn goal_times(&self) -> Vec<u32> {
        self.steps.iter().flat_map(|s| s.goals.iter().copied()).collect()
    }

    /// Checks reward bookkeeping and the step budget. Each goal must
    /// account for exactly the goal reward.
    pub fn check(&self, budget: u32, action_repeat: u32) -> Result<()> {
        let bad = |msg: String| Err(NavError::Data(format!("episode {}: {msg}", self.meta.episode)));
        let max_steps = budget.div_ceil(action_repeat.max(1)) as usize;
        if self.steps.len() > max_steps {
            return bad(format!("{} steps exceed the budget of {max_steps}", self.steps.len()));
        }
        if self.meta.steps != self.steps.len() {
            return bad(format!("header says {} steps, found {}", self.meta.steps, self.steps.len()));
        }
        let mut total = 0.0f64;
        for s in &self.steps {
            let expected = s.goals.len() as f32 * GOAL_REWARD + s.fruit_reward;
            if s.reward != expected {
                return bad(format!("step {} reward {} but events give {expected}", s.step, s.reward));
            }
            total += s.reward as f64;
        }
        if (total - self.meta.score).abs() > 1e-6 {
            return bad(format!("score {} but rewards sum to {total}", self.meta.score));
        }
        Ok(())
    }

    /// Splits the trajectory at respawns; each segment is a list of positions.
    pub fn segments(&self) -> Vec<Vec<[f64; 2]>> {
        let mut out = vec![Vec::new()];
        for (i, s) in self.steps.iter().enumerate() {
            if i > 0 && !self.steps[i - 1].goals.is_empty() {
                out.push(Vec::new());
            }
            out.last_mut().expect("non-empty").push([s.x, s.y]);
        }
        out.retain(|s| !s.is_empty());
        out
    }
}

pub fn write_logs<W: Write>(mut out: W, logs: &[EpisodeLog]) -> Result<()> {
    for log in logs {
        serde_json::to_writer(&mut out, &LogLine::Episode(log.meta.clone())).map_err(std::io::Error::other)?;
        out.write_all(b"\n")?;
        for s in &log.steps {
            serde_json::to_writer(&mut out, &LogLine::Step(s.clone())).map_err(std::io::Error::other)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

pub fn read_logs<R: BufRead>(input: R) -> Result<Vec<EpisodeLog>> {
    let mut logs: Vec<EpisodeLog> = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: LogLine = serde_json::from_str(&line)
            .map_err(|e| NavError::Data(format!("log line {}: {e}", i + 1)))?;
        match rec {
            LogLine::Episode(meta) => logs.push(EpisodeLog { meta, steps: Vec::new() }),
            LogLine::Step(s) => match logs.last_mut() {
                Some(l) => l.steps.push(s),
                None => return Err(NavError::Data(format!("log line {}: step before any episode record", i + 1))),
            },
        }
    }
    Ok(logs)
}

/// Which activations to store in the logs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    /// Output of the top recurrent layer.
    Top,
    /// Convolutional encoder features.
    Encoder,
}

#[derive(Clone, Debug)]
pub struct RolloutConfig {
    pub episodes: usize,
    pub seed: u64,
    pub activations: Option<FeatureSource>,
    pub loop_thresholds: LoopThresholds,
}

impl RolloutConfig {
    pub fn new(episodes: usize, seed: u64) -> Self {
        Self { episodes, seed, activations: None, loop_thresholds: LoopThresholds::default() }
    }
}

/// Runs the agent's own stochastic policy for whole episodes.
pub fn run_episodes(
    net: &Network,
    params: &[f32],
    layout: Arc<MazeLayout>,
    world_cfg: WorldConfig,
    cfg: &RolloutConfig,
) -> Result<Vec<EpisodeLog>> {
    let spec = net.spec();
    if cfg.activations == Some(FeatureSource::Top) && !spec.recurrent() {
        return Err(NavError::Usage("a feed-forward agent has no recurrent activations".into()));
    }
    let far = world_cfg.render.max_range;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut world = World::new(Arc::clone(&layout), world_cfg);
    let mut logs = Vec::with_capacity(cfg.episodes);
    for episode in 0..cfg.episodes {
        let episode_seed: u64 = rng.random();
        let mut obs = world.reset(episode_seed);
        let goal = world
            .state()
            .and_then(|s| layout.floor_id(s.goal))
            .ok_or_else(|| NavError::Data("goal is not on a floor cell".into()))?;
        let mut state = RecurrentState::zeros(spec);
        let mut tracker = LoopTracker::new(cfg.loop_thresholds);
        let mut steps = Vec::new();
        let mut score = 0.0f64;
        while !world.done() {
            let ([x, y], cell) = world.ground_truth_position()?;
            let env_step = world.state().map_or(0, |s| s.env_step);
            let loop_label = tracker.push([x, y]);
            let input = StepInput::from_observation(&obs, spec, far)?;
            let (out, next) = net.forward(params, &input, &state)?;
            state = next;
            let action = act(&out.policy_logits, &mut rng);
            let res = world.step(Action::new(action)?)?;
            let mut goals = Vec::new();
            let mut fruit_reward = 0.0;
            for e in &res.events {
                match *e {
                    Event::Goal { env_step } => goals.push(env_step),
                    Event::Fruit { fruit, .. } => fruit_reward += fruit.reward(),
                }
            }
            if !goals.is_empty() {
                tracker.reset();
            }
            score += res.reward as f64;
            let activations = match cfg.activations {
                Some(FeatureSource::Top) => out.top.clone(),
                Some(FeatureSource::Encoder) => Some(out.features.clone()),
                None => None,
            };
            steps.push(StepLog {
                step: steps.len(),
                env_step,
                x,
                y,
                cell,
                action,
                reward: res.reward,
                goals,
                fruit_reward,
                value: out.value,
                entropy: entropy(&out.policy_logits),
                loop_logit: out.loop_logit,
                loop_label,
                activations,
            });
            obs = res.obs;
        }
        let n = steps.len();
        logs.push(EpisodeLog {
            meta: EpisodeMeta { episode, maze: layout.kind, layout_seed: layout.seed, episode_seed, goal, score, steps: n },
            steps,
        });
    }
    Ok(logs)
}

/// Episode scores of a uniformly random policy.
pub fn random_policy_scores(layout: Arc<MazeLayout>, world_cfg: WorldConfig, episodes: usize, seed: u64) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut world = World::new(layout, world_cfg);
    let mut scores = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        world.reset(rng.random());
        let mut score = 0.0f64;
        while !world.done() {
            let a = Action::new(rng.random_range(0..NUM_ACTIONS as u8))?;
            score += world.step_without_render(a)?.0 as f64;
        }
        scores.push(score);
    }
    Ok(scores)
}

/// Activation/cell pairs for decoder training.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub dim: usize,
    /// Row-major `[len, dim]`.
    pub features: Vec<f32>,
    pub labels: Vec<usize>,
    pub episodes: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn push(&mut self, features: &[f32], label: usize, episode: usize) -> Result<()> {
        if self.is_empty() && self.dim == 0 {
            self.dim = features.len();
        }
        if features.len() != self.dim {
            return Err(NavError::Data(format!("feature width {} differs from {}", features.len(), self.dim)));
        }
        self.features.extend_from_slice(features);
        self.labels.push(label);
        self.episodes.push(episode);
        Ok(())
    }

    pub fn from_logs(logs: &[EpisodeLog]) -> Result<Self> {
        let mut ds = Dataset::default();
        for log in logs {
            for s in &log.steps {
                let a = s
                    .activations
                    .as_ref()
                    .ok_or_else(|| NavError::Data(format!("episode {} has no recorded activations", log.meta.episode)))?;
                ds.push(a, s.cell, log.meta.episode)?;
            }
        }
        Ok(ds)
    }
}

/// Runs `episodes` episodes and pairs the chosen activations with cell ids.
pub fn collect_dataset(
    net: &Network,
    params: &[f32],
    layout: Arc<MazeLayout>,
    world_cfg: WorldConfig,
    episodes: usize,
    seed: u64,
    source: FeatureSource,
) -> Result<Dataset> {
    let cfg = RolloutConfig { activations: Some(source), ..RolloutConfig::new(episodes, seed) };
    Dataset::from_logs(&run_episodes(net, params, layout, world_cfg, &cfg)?)
}
