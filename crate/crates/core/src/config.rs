//! Run configuration: one TOML file holds every tunable — physics, task
//! ranges, rewards, learner, network sizes, style-training settings, and
//! ablation switches. Unknown keys are rejected and all values are
//! range-checked at load; the SHA-256 of the canonical serialization is
//! embedded in every artifact the run produces.

use crate::error::{Error, Result};
use crate::rewards::RewardWeights;
use crate::rl::PpoConfig;
use crate::sim::PhysicsParams;
use crate::task::{AblationFlags, TaskMode};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

/// Top-level run settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub envs: usize,
    pub workers: usize,
    /// Control steps collected per environment between updates.
    pub horizon: usize,
    /// Training budget in environment steps (summed over envs, per agent-set).
    pub total_env_steps: u64,
    /// Checkpoint every this many updates (and always at the end).
    pub checkpoint_interval: u64,
    /// Learning-curve sampling stride, in updates.
    pub curve_interval: u64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 0,
            envs: 256,
            workers: 1,
            horizon: 32,
            total_env_steps: 5_000_000,
            checkpoint_interval: 50,
            curve_interval: 4,
        }
    }
}

/// Task family selection plus optional range overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSection {
    /// One of: single, single_weight, two_agent, four_agent.
    pub mode: String,
    pub mass_range: Option<[f64; 2]>,
    pub scale_range: Option<[f64; 2]>,
    pub distance_range: Option<[f64; 2]>,
    pub boundary_mode: Option<bool>,
}

impl Default for TaskSection {
    fn default() -> Self {
        Self {
            mode: "single".to_string(),
            mass_range: None,
            scale_range: None,
            distance_range: None,
            boundary_mode: None,
        }
    }
}

impl TaskSection {
    pub fn to_task_mode(&self) -> Result<TaskMode> {
        let mut mode = match self.mode.as_str() {
            "single" => TaskMode::single(),
            "single_weight" => TaskMode::single_weight_augmented(),
            "two_agent" => TaskMode::two_agent(),
            "four_agent" => TaskMode::four_agent(),
            other => {
                return Err(Error::config(
                    "task.mode",
                    format!("unknown mode {other:?}; expected single, single_weight, two_agent, or four_agent"),
                ))
            }
        };
        if let Some(r) = self.mass_range {
            mode.mass_range = (r[0], r[1]);
        }
        if let Some(r) = self.scale_range {
            mode.scale_range = (r[0], r[1]);
        }
        if let Some(r) = self.distance_range {
            mode.distance_range = (r[0], r[1]);
        }
        if let Some(b) = self.boundary_mode {
            mode.boundary_mode = b;
        }
        mode.validate()?;
        Ok(mode)
    }
}

/// Network architecture. Hidden layers only; input and output widths come
/// from the observation layout and the action space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetSection {
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub disc_hidden: Vec<usize>,
    pub init_log_std: f64,
    pub init_gain: f64,
}

impl Default for NetSection {
    fn default() -> Self {
        Self {
            actor_hidden: vec![128, 64],
            critic_hidden: vec![128, 64],
            disc_hidden: vec![128, 64],
            init_log_std: -1.0,
            init_gain: 1.0,
        }
    }
}

/// Style-training settings: demonstration generation and discriminator
/// training cadence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AmpSection {
    /// Demonstration episodes generated by the scripted controller.
    pub demo_episodes: usize,
    /// Ring-buffer capacity for policy-side transitions.
    pub agent_buffer_capacity: usize,
    /// Discriminator updates per learner update.
    pub disc_updates_per_iter: usize,
    /// Gradient-penalty weight.
    pub w_gp: f64,
    pub disc_lr: f64,
}

impl Default for AmpSection {
    fn default() -> Self {
        Self {
            demo_episodes: 50,
            agent_buffer_capacity: 65_536,
            disc_updates_per_iter: 2,
            w_gp: 5.0,
            disc_lr: 2e-5,
        }
    }
}

/// The whole run configuration.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub physics: PhysicsParams,
    pub task: TaskSection,
    pub rewards: RewardWeights,
    pub ppo: PpoConfig,
    pub net: NetSection,
    pub amp: AmpSection,
    pub ablation: AblationFlags,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)
            .map_err(|e| Error::config("config", e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.run;
        if r.envs == 0 {
            return Err(Error::config("run.envs", "must be at least 1"));
        }
        if r.workers == 0 {
            return Err(Error::config("run.workers", "must be at least 1"));
        }
        if r.horizon == 0 {
            return Err(Error::config("run.horizon", "must be at least 1"));
        }
        if r.total_env_steps == 0 {
            return Err(Error::config("run.total_env_steps", "must be positive"));
        }
        if r.checkpoint_interval == 0 || r.curve_interval == 0 {
            return Err(Error::config(
                "run.checkpoint_interval",
                "intervals must be positive",
            ));
        }
        self.physics.validate()?;
        self.task.to_task_mode()?;
        self.rewards.validate()?;
        self.ppo.validate()?;
        for (path, sizes) in [
            ("net.actor_hidden", &self.net.actor_hidden),
            ("net.critic_hidden", &self.net.critic_hidden),
            ("net.disc_hidden", &self.net.disc_hidden),
        ] {
            if sizes.is_empty() || sizes.iter().any(|&n| n == 0) {
                return Err(Error::config(path, "hidden layers must be nonempty and nonzero"));
            }
        }
        if !self.net.init_log_std.is_finite() || !self.net.init_gain.is_finite()
            || self.net.init_gain <= 0.0
        {
            return Err(Error::config("net.init_gain", "must be finite and positive"));
        }
        let a = &self.amp;
        if a.demo_episodes == 0 {
            return Err(Error::config("amp.demo_episodes", "must be at least 1"));
        }
        if a.agent_buffer_capacity == 0 {
            return Err(Error::config("amp.agent_buffer_capacity", "must be at least 1"));
        }
        if !(a.w_gp.is_finite() && a.w_gp >= 0.0) {
            return Err(Error::config("amp.w_gp", "must be finite and >= 0"));
        }
        if !(a.disc_lr.is_finite() && a.disc_lr > 0.0) {
            return Err(Error::config("amp.disc_lr", "must be finite and positive"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON serialization, as lowercase hex. Stamped
    /// into checkpoints and CSV headers so artifacts can be traced to their
    /// exact configuration.
    pub fn hash(&self) -> String {
        let canon = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&canon);
        let mut out = String::with_capacity(64);
        for b in digest {
            out.push_str(&format!("{b:02x}"));
        }
        out
    }
}
