use std::f64::consts::PI;
use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layout::{plan_episode, Cell, FruitKind, MazeLayout, GOAL_REWARD};
use super::render::{Frame, RenderConfig, Sprite, SpriteKind};
use crate::error::{usage_err, NavError, Result};

pub const NUM_ACTIONS: usize = 8;

/// Environment steps per second of simulated time.
pub const ENV_STEPS_PER_SECOND: f64 = 60.0;

/// Discrete action id in `0..8`:
/// rotate left, rotate right, strafe left, strafe right, forward, backward,
/// forward + rotate left, forward + rotate right.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action(u8);

impl Action {
    pub fn new(id: u8) -> Result<Self> {
        if (id as usize) < NUM_ACTIONS {
            Ok(Self(id))
        } else {
            Err(NavError::Usage(format!("action {id} out of range 0..{NUM_ACTIONS}")))
        }
    }

    pub fn id(self) -> u8 {
        self.0
    }

    /// (forward accel sign, rightward accel sign, turn sign, turn is acceleration)
    fn controls(self) -> (f64, f64, f64, bool) {
        match self.0 {
            0 => (0.0, 0.0, -1.0, false),
            1 => (0.0, 0.0, 1.0, false),
            2 => (0.0, -1.0, 0.0, false),
            3 => (0.0, 1.0, 0.0, false),
            4 => (1.0, 0.0, 0.0, false),
            5 => (-1.0, 0.0, 0.0, false),
            6 => (1.0, 0.0, -1.0, true),
            _ => (1.0, 0.0, 1.0, true),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicsConfig {
    /// Linear acceleration per env step.
    pub accel: f64,
    /// Heading change per env step for the pure rotation actions.
    pub rotation_step: f64,
    /// Angular acceleration per env step for the moving-turn actions.
    pub angular_accel: f64,
    pub max_angular_speed: f64,
    pub damping: f64,
    pub angular_damping: f64,
    pub max_speed: f64,
    /// Half side of the agent's square footprint.
    pub radius: f64,
    pub action_repeat: u32,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        Self {
            accel: 0.05,
            rotation_step: 0.15,
            angular_accel: 0.05,
            max_angular_speed: 0.15,
            damping: 0.9,
            angular_damping: 0.9,
            max_speed: 0.2,
            radius: 0.2,
            action_repeat: 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    /// World-frame displacement of the last env step.
    pub v_lin: [f64; 2],
    pub v_ang: f64,
}

impl Pose {
    /// (forward, lateral-right, 0, yaw rate, 0, 0) in the agent frame.
    pub fn relative_velocity(&self) -> [f32; 6] {
        let (c, s) = (self.heading.cos(), self.heading.sin());
        let fwd = self.v_lin[0] * c + self.v_lin[1] * s;
        let lat = -self.v_lin[0] * s + self.v_lin[1] * c;
        [fwd as f32, lat as f32, 0.0, self.v_ang as f32, 0.0, 0.0]
    }
}

/// What the agent perceives after a reset or step.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub width: usize,
    pub height: usize,
    /// Row-major HWC bytes.
    pub rgb: Vec<u8>,
    /// Per-pixel perpendicular distance, clamped to the far plane.
    pub depth_raw: Vec<f32>,
    pub velocity: [f32; 6],
    pub prev_action: Option<u8>,
    pub prev_reward: f32,
}

impl Observation {
    pub fn prev_action_one_hot(&self) -> [f32; NUM_ACTIONS] {
        let mut v = [0.0; NUM_ACTIONS];
        if let Some(a) = self.prev_action {
            v[a as usize] = 1.0;
        }
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Event {
    Goal { env_step: u32 },
    Fruit { env_step: u32, fruit: FruitKind },
}

/// Outcome of a single environment step (one physics tick).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tick {
    pub reward: f32,
    pub event: Option<Event>,
    /// The agent was moved to a spawn cell after this tick's movement.
    pub respawned: bool,
}

#[derive(Clone, Debug)]
pub struct StepResult {
    pub obs: Observation,
    pub reward: f32,
    pub done: bool,
    pub events: Vec<Event>,
}

#[derive(Clone, Debug)]
pub struct WorldState {
    pub pose: Pose,
    pub goal: Cell,
    pub fruit: Vec<(Cell, FruitKind)>,
    pub fruit_present: Vec<bool>,
    pub spawn: Vec<Cell>,
    pub env_step: u32,
    pub budget: u32,
    pub last_action: Option<u8>,
    pub last_reward: f32,
    pub episode_seed: u64,
    rng: ChaCha8Rng,
}

impl WorldState {
    pub fn done(&self) -> bool {
        self.env_step >= self.budget
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub render: RenderConfig,
    pub physics: PhysicsConfig,
    /// Overrides the kind's episode length when set.
    pub budget: Option<u32>,
}

/// One environment instance: a layout plus the mutable episode state.
#[derive(Clone, Debug)]
pub struct World {
    layout: Arc<MazeLayout>,
    cfg: WorldConfig,
    state: Option<WorldState>,
}

impl World {
    pub fn new(layout: Arc<MazeLayout>, cfg: WorldConfig) -> Self {
        Self { layout, cfg, state: None }
    }

    pub fn layout(&self) -> &Arc<MazeLayout> {
        &self.layout
    }

    pub fn config(&self) -> &WorldConfig {
        &self.cfg
    }

    pub fn state(&self) -> Option<&WorldState> {
        self.state.as_ref()
    }

    fn state_ref(&self) -> Result<&WorldState> {
        self.state.as_ref().ok_or_else(|| NavError::Usage("world has not been reset".into()))
    }

    /// Starts a new episode. All randomness of the episode derives from `episode_seed`.
    pub fn reset(&mut self, episode_seed: u64) -> Observation {
        let mut rng = ChaCha8Rng::seed_from_u64(episode_seed);
        let plan = plan_episode(&self.layout, &mut rng);
        let budget = self.cfg.budget.unwrap_or_else(|| self.layout.budget());
        let mut state = WorldState {
            pose: Pose::default(),
            goal: plan.goal,
            fruit_present: vec![true; plan.fruit.len()],
            fruit: plan.fruit,
            spawn: plan.spawn,
            env_step: 0,
            budget,
            last_action: None,
            last_reward: 0.0,
            episode_seed,
            rng,
        };
        respawn(&mut state);
        self.state = Some(state);
        self.observe().expect("state was just set")
    }

    pub fn done(&self) -> bool {
        self.state.as_ref().is_none_or(WorldState::done)
    }

    /// Applies `action` for `action_repeat` physics ticks and renders the result.
    pub fn step(&mut self, action: Action) -> Result<StepResult> {
        let (reward, events) = self.step_without_render(action)?;
        Ok(StepResult { obs: self.observe()?, reward, done: self.done(), events })
    }

    /// Like [`World::step`] but skips rendering.
    pub fn step_without_render(&mut self, action: Action) -> Result<(f32, Vec<Event>)> {
        let repeat = self.cfg.physics.action_repeat.max(1);
        let st = self.state_ref()?;
        if st.done() {
            return usage_err("step after the episode finished; call reset");
        }
        let mut reward = 0.0;
        let mut events = Vec::new();
        for _ in 0..repeat {
            let t = self.tick(action)?;
            reward += t.reward;
            events.extend(t.event);
            if self.done() {
                break;
            }
        }
        let st = self.state.as_mut().expect("checked above");
        st.last_action = Some(action.id());
        st.last_reward = reward;
        Ok((reward, events))
    }

    /// One physics tick: integrate, collide, collect rewards.
    pub fn tick(&mut self, action: Action) -> Result<Tick> {
        let layout = Arc::clone(&self.layout);
        let phys = self.cfg.physics;
        let st = self.state.as_mut().ok_or_else(|| NavError::Usage("world has not been reset".into()))?;
        if st.done() {
            return usage_err("step after the episode finished; call reset");
        }
        integrate(&layout, &phys, &mut st.pose, action);
        st.env_step += 1;
        let mut tick = Tick { reward: 0.0, event: None, respawned: false };
        let Some(cell) = Cell::containing(st.pose.x, st.pose.y) else {
            return Ok(tick);
        };
        if cell == st.goal {
            tick.reward = GOAL_REWARD;
            tick.event = Some(Event::Goal { env_step: st.env_step });
            tick.respawned = true;
            respawn(st);
        } else if let Some(i) = st.fruit.iter().zip(&st.fruit_present).position(|((c, _), &p)| p && *c == cell) {
            st.fruit_present[i] = false;
            let kind = st.fruit[i].1;
            tick.reward = kind.reward();
            tick.event = Some(Event::Fruit { env_step: st.env_step, fruit: kind });
        }
        Ok(tick)
    }

    pub fn render(&self) -> Result<Frame> {
        let st = self.state_ref()?;
        let mut sprites = vec![Sprite::at_cell(st.goal, SpriteKind::Goal)];
        for ((c, k), &present) in st.fruit.iter().zip(&st.fruit_present) {
            if present {
                let kind = if *k == FruitKind::Apple { SpriteKind::Apple } else { SpriteKind::Strawberry };
                sprites.push(Sprite::at_cell(*c, kind));
            }
        }
        Ok(self.cfg.render.render(&self.layout, st.pose.x, st.pose.y, st.pose.heading, &sprites))
    }

    pub fn observe(&self) -> Result<Observation> {
        let frame = self.render()?;
        let st = self.state_ref()?;
        Ok(Observation {
            width: frame.width,
            height: frame.height,
            rgb: frame.rgb,
            depth_raw: frame.depth,
            velocity: st.pose.relative_velocity(),
            prev_action: st.last_action,
            prev_reward: st.last_reward,
        })
    }

    pub fn velocity(&self) -> Result<[f32; 6]> {
        Ok(self.state_ref()?.pose.relative_velocity())
    }

    /// Continuous position and the row-major floor-cell id containing it.
    pub fn ground_truth_position(&self) -> Result<([f64; 2], usize)> {
        let st = self.state_ref()?;
        let p = [st.pose.x, st.pose.y];
        let id = Cell::containing(p[0], p[1])
            .and_then(|c| self.layout.floor_id(c))
            .ok_or_else(|| NavError::Data(format!("agent at ({:.3}, {:.3}) is not on a floor cell", p[0], p[1])))?;
        Ok((p, id))
    }
}

fn respawn(st: &mut WorldState) {
    let cell = *st.spawn.choose(&mut st.rng).expect("episode plans always have spawn cells");
    let [x, y] = cell.center();
    let heading = st.rng.random_range(-PI..PI);
    st.pose = Pose { x, y, heading, v_lin: [0.0, 0.0], v_ang: 0.0 };
}

fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

/// Advances `pose` by one tick. Afterwards `pose.v_lin` is exactly the
/// displacement that was applied, including any sliding along walls.
pub fn integrate(layout: &MazeLayout, phys: &PhysicsConfig, pose: &mut Pose, action: Action) {
    let (fwd, side, turn, turn_is_accel) = action.controls();
    pose.v_ang = if turn != 0.0 && !turn_is_accel {
        turn * phys.rotation_step
    } else if turn_is_accel {
        (pose.v_ang * phys.angular_damping + turn * phys.angular_accel)
            .clamp(-phys.max_angular_speed, phys.max_angular_speed)
    } else {
        pose.v_ang * phys.angular_damping
    };
    pose.heading = wrap_angle(pose.heading + pose.v_ang);
    let (c, s) = (pose.heading.cos(), pose.heading.sin());
    let ax = phys.accel * (fwd * c - side * s);
    let ay = phys.accel * (fwd * s + side * c);
    let mut vx = pose.v_lin[0] * phys.damping + ax;
    let mut vy = pose.v_lin[1] * phys.damping + ay;
    let speed = vx.hypot(vy);
    if speed > phys.max_speed {
        vx *= phys.max_speed / speed;
        vy *= phys.max_speed / speed;
    }
    let (x0, y0) = (pose.x, pose.y);
    let r = phys.radius;
    let x1 = slide_axis(layout, x0, vx, r, (y0 - r, y0 + r), false);
    let y1 = slide_axis(layout, y0, vy, r, (x1 - r, x1 + r), true);
    pose.x = x1;
    pose.y = y1;
    pose.v_lin = [x1 - x0, y1 - y0];
}

/// Moves coordinate `p` by `d` along one axis, stopping the box of half-size
/// `r` at the first wall. `span` is the box extent on the other axis.
fn slide_axis(layout: &MazeLayout, p: f64, d: f64, r: f64, span: (f64, f64), is_y: bool) -> f64 {
    if d == 0.0 {
        return p;
    }
    let n = p + d;
    let (lo, hi) = (span.0.floor() as i64, span.1.ceil() as i64 - 1);
    let blocked = |line: i64| {
        (lo..=hi).any(|o| if is_y { layout.is_wall_at(line, o) } else { layout.is_wall_at(o, line) })
    };
    if d > 0.0 {
        let edge = (n + r).ceil() as i64 - 1;
        if blocked(edge) {
            return (edge as f64 - r).max(p);
        }
    } else {
        let edge = (n - r).floor() as i64;
        if blocked(edge) {
            return (edge as f64 + 1.0 + r).min(p);
        }
    }
    n
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maze::{generate_layout, MazeKind};

    fn world(kind: MazeKind) -> World {
        let cfg = WorldConfig { render: RenderConfig { width: 16, height: 16, max_range: 20.0 }, ..Default::default() };
        World::new(Arc::new(generate_layout(kind, 7)), cfg)
    }

    #[test]
    fn action_range() {
        assert!(Action::new(7).is_ok());
        assert!(matches!(Action::new(8), Err(NavError::Usage(_))));
    }

    #[test]
    fn reset_is_deterministic() {
        let mut w = world(MazeKind::RandomSmall);
        let a = w.reset(11);
        let sa = w.state().unwrap().clone();
        let b = w.reset(11);
        let sb = w.state().unwrap();
        assert_eq!(a, b);
        assert_eq!(sa.pose, sb.pose);
        assert_eq!(sa.goal, sb.goal);
        assert_eq!(a.prev_action, None);
        assert_eq!(a.prev_reward, 0.0);
        assert_eq!(a.velocity, [0.0; 6]);
    }

    #[test]
    fn step_before_reset_and_after_done_are_errors() {
        let mut w = world(MazeKind::Mini);
        assert!(w.step(Action::new(4).unwrap()).is_err());
        w.reset(0);
        let mut steps = 0;
        while !w.done() {
            w.step_without_render(Action::new(0).unwrap()).unwrap();
            steps += 1;
        }
        assert_eq!(steps, 900 / 4);
        assert_eq!(w.state().unwrap().env_step, 900);
        assert!(matches!(w.step(Action::new(0).unwrap()), Err(NavError::Usage(_))));
    }

    #[test]
    fn small_maze_episode_ends_at_3600() {
        let mut w = world(MazeKind::StaticSmall);
        w.reset(1);
        let mut n = 0;
        let mut last = false;
        while !last {
            last = w.step_without_render(Action::new((n % 8) as u8).unwrap()).is_ok() && w.done();
            n += 1;
        }
        assert_eq!(w.state().unwrap().env_step, 3600);
    }

    #[test]
    fn wall_stops_and_slides() {
        let layout = Arc::new(generate_layout(MazeKind::Mini, 0));
        let phys = PhysicsConfig::default();
        let mut pose = Pose { x: 3.5, y: 3.5, heading: 0.0, ..Default::default() };
        for _ in 0..100 {
            integrate(&layout, &phys, &mut pose, Action::new(4).unwrap());
        }
        assert!((pose.x - (6.0 - phys.radius)).abs() < 1e-12);
        assert!((pose.y - 3.5).abs() < 1e-12);
        assert_eq!(pose.v_lin[0], 0.0);
        // heading 45 degrees into the east wall slides along it
        pose.heading = 0.3;
        let y_before = pose.y;
        for _ in 0..5 {
            integrate(&layout, &phys, &mut pose, Action::new(4).unwrap());
        }
        assert!(pose.y > y_before);
        assert!((pose.x - (6.0 - phys.radius)).abs() < 1e-12);
    }

    #[test]
    fn relative_velocity_frames() {
        let p = Pose { heading: 0.7, v_lin: [0.1 * 0.7f64.cos(), 0.1 * 0.7f64.sin()], ..Default::default() };
        let v = p.relative_velocity();
        assert!((v[0] - 0.1).abs() < 1e-7 && v[1].abs() < 1e-7);
        assert_eq!(Pose::default().relative_velocity(), [0.0; 6]);
        // rightward motion is positive lateral
        let q = Pose { heading: 0.0, v_lin: [0.0, 0.1], ..Default::default() };
        assert!(q.relative_velocity()[1] > 0.0);
    }

    #[test]
    fn wrap_angle_range() {
        for a in [-10.0, -PI, 0.0, PI, 3.5, 100.0] {
            let w = wrap_angle(a);
            assert!(w > -PI && w <= PI);
            assert!(((a - w) / (2.0 * PI)).fract().abs() < 1e-9 || ((a - w) / (2.0 * PI)).fract().abs() > 1.0 - 1e-9);
        }
    }
}
