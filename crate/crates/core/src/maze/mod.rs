//! Grid mazes viewed from the first person.
//!
//! A [`MazeLayout`] holds walls, textures and reward placements. A [`World`]
//! owns one episode on a layout: it moves a square-footprint agent with
//! damped continuous dynamics, hands out fruit and goal rewards, respawns the
//! agent after each goal and renders RGB plus a depth buffer with a column
//! raycaster.

mod layout;
mod render;
mod world;

pub use layout::{
    generate_layout, plan_episode, Cell, EpisodePlan, FruitKind, MazeKind, MazeLayout, APPLE_DENSITY, GOAL_REWARD,
    NUM_BASE_TEXTURES, NUM_DECALS,
};
pub use render::{cast_ray, wall_color, Frame, RayHit, RenderConfig, Sprite, SpriteKind};
pub use world::{
    integrate, Action, Event, Observation, PhysicsConfig, Pose, StepResult, Tick, World, WorldConfig, WorldState,
    ENV_STEPS_PER_SECOND, NUM_ACTIONS,
};
