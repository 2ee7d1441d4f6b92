//! Task reward terms: approach (walk), grasp (held), and delivery
//! (carry + face). The style reward produced by the discriminator is
//! combined with the task reward downstream via [`combined_reward`].

use crate::geom::Vec2;
use crate::sim::{AgentBody, ObjectBody, PhysicsParams, WorldState};
use crate::task::{face_point, spawn_ends, stand_face_indices, EpisodeConfig};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// All reward coefficients. Defaults are the working values; everything is
/// overridable from the run config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    /// Task-vs-style split in the final reward.
    pub w_g: f64,
    pub w_s: f64,
    /// Task components; must sum to 1.
    pub w_walk: f64,
    pub w_held: f64,
    pub w_target: f64,
    /// Split of the target component; must sum to 1.
    pub w_carry: f64,
    pub w_face: f64,
    /// Desired approach speed, m/s.
    pub target_speed: f64,
    /// Inside this stand-point radius the walk term saturates at 1.
    pub walk_radius: f64,
    /// Walk sub-weights (position, velocity, facing); must sum to 1.
    pub walk_pos_w: f64,
    pub walk_vel_w: f64,
    pub walk_face_w: f64,
    /// Exponential falloff coefficients.
    pub walk_pos_coef: f64,
    pub walk_vel_coef: f64,
    pub held_coef: f64,
    pub near_coef: f64,
    pub far_coef: f64,
    /// Distance below which the far term is replaced by a constant bonus.
    pub carry_branch_dist: f64,
    /// Below this speed the facing-direction reward is defined as 0.
    pub face_speed_eps: f64,
    /// Desired carry height for the held term's vertical shortfall.
    pub carry_height_target: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            w_g: 0.5,
            w_s: 0.5,
            w_walk: 0.2,
            w_held: 0.4,
            w_target: 0.4,
            w_carry: 0.5,
            w_face: 0.5,
            target_speed: 1.5,
            walk_radius: 0.2,
            walk_pos_w: 0.4,
            walk_vel_w: 0.4,
            walk_face_w: 0.2,
            walk_pos_coef: 0.5,
            walk_vel_coef: 2.0,
            held_coef: 5.0,
            near_coef: 10.0,
            far_coef: 0.5,
            carry_branch_dist: 0.1,
            face_speed_eps: 0.05,
            carry_height_target: 0.8,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.w_g,
            self.w_s,
            self.w_walk,
            self.w_held,
            self.w_target,
            self.w_carry,
            self.w_face,
            self.target_speed,
            self.walk_radius,
            self.walk_pos_w,
            self.walk_vel_w,
            self.walk_face_w,
            self.walk_pos_coef,
            self.walk_vel_coef,
            self.held_coef,
            self.near_coef,
            self.far_coef,
            self.carry_branch_dist,
            self.face_speed_eps,
            self.carry_height_target,
        ];
        if all.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::config("rewards", "coefficients must be finite and >= 0"));
        }
        let sums = [
            ("rewards.w_walk+w_held+w_target", self.w_walk + self.w_held + self.w_target),
            ("rewards.w_carry+w_face", self.w_carry + self.w_face),
            (
                "rewards.walk_pos_w+walk_vel_w+walk_face_w",
                self.walk_pos_w + self.walk_vel_w + self.walk_face_w,
            ),
        ];
        for (path, s) in sums {
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::config(path, "weights must sum to 1"));
            }
        }
        Ok(())
    }
}

/// Approach reward: pulls the agent to the stand point at the target speed
/// while facing the object. Saturates at 1 inside `walk_radius`.
pub fn r_walk(
    agent: &AgentBody,
    stand_point: Vec2,
    object: &ObjectBody,
    w: &RewardWeights,
) -> f64 {
    let d = agent.position.dist(stand_point);
    if d <= w.walk_radius {
        return 1.0;
    }
    let pos = (-w.walk_pos_coef * d * d).exp();
    let proj = agent.facing().dot(agent.linear_velocity);
    let dv = w.target_speed - proj;
    let vel = (-w.walk_vel_coef * dv * dv).exp();
    let face = match (object.position - agent.position).try_normalize(1e-9) {
        Some(dir) => {
            let c = agent.facing().dot(dir);
            c * c
        }
        None => 0.0,
    };
    w.walk_pos_w * pos + w.walk_vel_w * vel + w.walk_face_w * face
}

/// Grasp reward: exponential in the hand-to-held-point distance. Once the
/// grip is engaged the distance also carries the vertical shortfall to the
/// desired carry height, so holding the object on the ground is not enough.
pub fn r_held(
    agent: &AgentBody,
    held_point: Vec2,
    object: &ObjectBody,
    w: &RewardWeights,
) -> f64 {
    let mut d_sq = agent.hand_position().dist(held_point).powi(2);
    if agent.grip_engaged {
        let dz = w.carry_height_target - object.height_z;
        d_sq += dz * dz;
    }
    (-w.held_coef * d_sq).exp()
}

/// Bidirectional locomotion reward: alignment of facing and movement
/// direction, sign-flipped when the destination lies behind the agent, so
/// walking backward toward it scores +1. Zero when (nearly) standing still.
pub fn r_face(agent: &AgentBody, destination: Vec2, w: &RewardWeights) -> f64 {
    r_face_directional(agent, destination, w, true)
}

/// `r_face` with the backward branch optional: with `allow_reverse` off the
/// sign flip is removed, so backing toward the destination earns nothing.
pub fn r_face_directional(
    agent: &AgentBody,
    destination: Vec2,
    w: &RewardWeights,
    allow_reverse: bool,
) -> f64 {
    let v = agent.linear_velocity;
    if v.norm() < w.face_speed_eps {
        return 0.0;
    }
    let v_face = v * (1.0 / v.norm());
    let x_face = agent.facing();
    let aligned = x_face.dot(v_face);
    if !allow_reverse || x_face.dot(destination - agent.position) >= 0.0 {
        aligned
    } else {
        -aligned
    }
}

/// Delivery reward: near/far position terms plus yaw alignment. The near
/// term and the branch distance include the lift height (the target sits on
/// the ground), the far term is planar.
pub fn r_carry(object: &ObjectBody, target_position: Vec2, target_yaw: f64, w: &RewardWeights) -> f64 {
    let d_planar = object.position.dist(target_position);
    let d_sq = d_planar * d_planar + object.height_z * object.height_z;
    let near = (-w.near_coef * d_sq).exp();
    let dir = {
        let c = (object.yaw - target_yaw).cos();
        c * c
    };
    if d_sq.sqrt() > w.carry_branch_dist {
        let far = (-w.far_coef * d_planar * d_planar).exp();
        0.5 * near + 0.25 * far + 0.25 * dir
    } else {
        0.5 * near + 0.25 * dir + 0.25
    }
}

/// Weighted combination of the four components into the task reward.
pub fn combine_task(walk: f64, held: f64, carry: f64, face: f64, w: &RewardWeights) -> f64 {
    w.w_walk * walk + w.w_held * held + w.w_target * (w.w_carry * carry + w.w_face * face)
}

/// Final scalar handed to the learner.
pub fn combined_reward(task: f64, style: f64, w: &RewardWeights) -> f64 {
    w.w_g * task + w.w_s * style
}

/// Episode-fixed pieces of the task reward: which end and which stand face
/// each agent is scored against. Both follow the object as it moves. The
/// ablation switches substitute the object center for the stand point and
/// drop the backward branch of the locomotion reward.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskRewardContext {
    pub ends: Vec<usize>,
    pub stand_faces: Vec<usize>,
    pub use_stand_point: bool,
    pub allow_reverse: bool,
}

impl TaskRewardContext {
    pub fn new(episode: &EpisodeConfig, params: &PhysicsParams) -> Self {
        let ends = spawn_ends(episode, params);
        let faces = stand_face_indices(episode, params);
        // Single agent: the sampled face. Multi-agent: the face of the
        // assigned end, so walk and held targets agree.
        let stand_faces = if episode.n_agents == 1 {
            vec![faces[0]]
        } else {
            ends.clone()
        };
        Self {
            ends,
            stand_faces,
            use_stand_point: true,
            allow_reverse: true,
        }
    }

    pub fn with_ablations(mut self, no_stand_point: bool, no_reverse_walk: bool) -> Self {
        self.use_stand_point = !no_stand_point;
        self.allow_reverse = !no_reverse_walk;
        self
    }

    /// The four task components for one agent, in (walk, held, carry, face)
    /// order; `per_agent` is their weighted combination.
    pub fn components(
        &self,
        state: &WorldState,
        agent_index: usize,
        w: &RewardWeights,
        params: &PhysicsParams,
    ) -> [f64; 4] {
        let agent = &state.agents[agent_index];
        let object = &state.object;
        let stand = if self.use_stand_point {
            face_point(object, self.stand_faces[agent_index], params)
        } else {
            object.position
        };
        let held = object.held_point_world(self.ends[agent_index], params.grip_inset);
        [
            r_walk(agent, stand, object, w),
            r_held(agent, held, object, w),
            r_carry(object, state.target_position, state.target_yaw, w),
            r_face_directional(agent, state.target_position, w, self.allow_reverse),
        ]
    }

    /// Task reward seen from one agent's assignments.
    pub fn per_agent(
        &self,
        state: &WorldState,
        agent_index: usize,
        w: &RewardWeights,
        params: &PhysicsParams,
    ) -> f64 {
        let [walk, grasp, carry, face] = self.components(state, agent_index, w, params);
        combine_task(walk, grasp, carry, face, w)
    }

    /// Shared multi-agent reward: the mean of the per-agent task rewards,
    /// given identically to every agent.
    pub fn shared(&self, state: &WorldState, w: &RewardWeights, params: &PhysicsParams) -> f64 {
        let n = state.agents.len();
        (0..n).map(|i| self.per_agent(state, i, w, params)).sum::<f64>() / n as f64
    }
}

/// One agent's task reward for an episode; convenience wrapper that derives
/// the episode-fixed assignments on the fly.
pub fn total_task_reward(
    state: &WorldState,
    agent_index: usize,
    episode: &EpisodeConfig,
    w: &RewardWeights,
    params: &PhysicsParams,
) -> f64 {
    TaskRewardContext::new(episode, params).per_agent(state, agent_index, w, params)
}
