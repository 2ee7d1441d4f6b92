//! Core algorithms for cooperative object transport in a deterministic 2.5D
//! world: physics, task generation, observations, rewards, a minimal neural
//! substrate, adversarial-style training, PPO, and multi-agent fine-tuning.

pub mod error;
pub mod geom;
pub mod rng;
pub mod amp;
pub mod checkpoint;
pub mod config;
pub mod harness;
pub mod marl;
pub mod nn;
pub mod obs;
pub mod plot;
pub mod report;
pub mod rewards;
pub mod rl;
pub mod rollout;
pub mod sim;
pub mod task;
pub mod trainer;

pub use error::{Error, Result};
pub use geom::{vec2, Pose, Vec2};
pub use sim::{
    AgentAction, AgentBody, ObjectBody, PhysicsParams, TerminationFlags, TerminationKind,
    WorldState,
};
