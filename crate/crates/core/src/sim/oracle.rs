//! Scripted expert controller.
//!
//! A finite-state machine that solves the carry task with hand-tuned servo
//! laws. It provides demonstration transitions for the discriminator and a
//! solvability certificate for the environment. Single-agent episodes pick
//! the nearest object end, which naturally yields both push (forward walk)
//! and pull (backward walk) carries; `allow_reverse = false` forces the push
//! end so no backward-walking demonstrations are produced.

use crate::geom::{vec2, wrap_angle, Vec2};
use crate::sim::{AgentAction, AgentBody, PhysicsParams, WorldState};
use crate::task::assign_ends;
use serde::{Deserialize, Serialize};

/// Controller stages, in episode order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OracleStage {
    /// First call: choose an end assignment, then behave as Approach.
    Start,
    Approach,
    Grip,
    Lift,
    Carry,
    Place,
    Retreat,
    Done,
}

/// Per-agent controller memory carried between control steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OraclePhase {
    pub stage: OracleStage,
    /// Assigned held-point index (fixed after Start).
    pub end: usize,
}

impl Default for OraclePhase {
    fn default() -> Self {
        Self {
            stage: OracleStage::Start,
            end: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleOptions {
    /// Permit pull-style carries (agent walks backward). When false the
    /// single-agent oracle always picks the end behind the object so the
    /// carry is a forward push.
    pub allow_reverse: bool,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            allow_reverse: true,
        }
    }
}

// Servo tuning. Forces are normalized to the actuation caps before clamping.
const APPROACH_SPEED: f64 = 2.4;
const CARRY_SPEED: f64 = 2.3;
const RETREAT_SPEED: f64 = 1.0;
const BRAKE_ACCEL: f64 = 2.5;
const STOP_DIST: f64 = 0.05;
const VEL_GAIN: f64 = 450.0;
const HEADING_KP: f64 = 3.0;
const HEADING_KD: f64 = 0.65;

/// Velocity servo in the agent frame with drag feed-forward.
fn servo_velocity(agent: &AgentBody, v_des: Vec2, params: &PhysicsParams) -> (f64, f64) {
    let f_world = (v_des - agent.linear_velocity) * VEL_GAIN + v_des * params.linear_drag;
    let dir = agent.facing();
    let lat = vec2(-dir.y, dir.x);
    (
        f_world.dot(dir) / params.max_force,
        f_world.dot(lat) / params.max_force,
    )
}

/// PD heading servo toward a desired heading angle.
fn servo_heading(agent: &AgentBody, desired: f64) -> f64 {
    let err = wrap_angle(desired - agent.heading);
    HEADING_KP * err - HEADING_KD * agent.angular_velocity
}

/// Trapezoidal speed profile: full speed far out, sqrt-braking near the goal.
fn speed_profile(dist: f64, v_max: f64) -> f64 {
    let d = (dist - STOP_DIST).max(0.0);
    v_max.min((2.0 * BRAKE_ACCEL * d).sqrt())
}

/// Where agents should stand to grip end `e`: on the long axis, just beyond
/// the short end face.
pub fn stand_point_for_end(state: &WorldState, end: usize, params: &PhysicsParams) -> Vec2 {
    let sign = if end == 0 { 1.0 } else { -1.0 };
    let offset = state.object.half_extents[0] + params.stand_offset;
    state.object.position + vec2(sign * offset, 0.0).rotated(state.object.yaw)
}

/// The push end: carrying from it means walking forward toward the target.
fn push_end(state: &WorldState) -> usize {
    let to_target = state.target_position - state.object.position;
    let axis = vec2(1.0, 0.0).rotated(state.object.yaw);
    if axis.dot(to_target) >= 0.0 {
        1
    } else {
        0
    }
}

fn all_grips_engaged(state: &WorldState) -> bool {
    state.agents.iter().all(|a| a.grip_engaged)
}

/// One control decision for one agent. Pure: returns the action and the
/// updated phase memory.
pub fn scripted_oracle_action(
    state: &WorldState,
    agent_index: usize,
    phase: OraclePhase,
    params: &PhysicsParams,
    opts: &OracleOptions,
) -> (AgentAction, OraclePhase) {
    let mut phase = phase;
    if phase.stage == OracleStage::Start {
        phase.end = if state.agents.len() == 1 && !opts.allow_reverse {
            push_end(state)
        } else {
            assign_ends(state, params)[agent_index]
        };
        phase.stage = OracleStage::Approach;
    }

    let agent = &state.agents[agent_index];
    let held = state.object.held_point_world(phase.end, params.grip_inset);
    let bearing_to_held = (held - agent.position).angle();

    let (action, next_stage) = match phase.stage {
        OracleStage::Start => unreachable!("resolved above"),
        OracleStage::Approach => {
            // Far: walk to the stand point. Near: creep to the pose where
            // the hand rests exactly on the held point, so the grip engages
            // with near-zero stretch and the object is not yanked.
            let stand = stand_point_for_end(state, phase.end, params);
            let outward = (held - state.object.position)
                .try_normalize(1e-9)
                .unwrap_or(vec2(1.0, 0.0));
            let grip_pose = held + outward * params.hand_offset;
            let far = agent.position.dist(stand) > 0.35;
            let goal = if far { stand } else { grip_pose };
            let to_goal = goal - agent.position;
            let dist = to_goal.norm();
            let v_max = if far { APPROACH_SPEED } else { 0.4 };
            let v_des =
                to_goal.try_normalize(1e-9).unwrap_or(Vec2::ZERO) * speed_profile(dist, v_max);
            let heading_des = if far && dist > 0.5 {
                to_goal.angle()
            } else {
                bearing_to_held
            };
            let (ff, fl) = servo_velocity(agent, v_des, params);
            let act = AgentAction {
                force_forward: ff,
                force_lateral: fl,
                torque: servo_heading(agent, heading_des),
                grip: -1.0,
                lift: 0.0,
            };
            let hand_gap = agent.hand_position().dist(held);
            let arrived = hand_gap < 0.06 && agent.linear_velocity.norm() < 0.15;
            (act, if arrived { OracleStage::Grip } else { OracleStage::Approach })
        }
        OracleStage::Grip => {
            let (ff, fl) = servo_velocity(agent, Vec2::ZERO, params);
            let act = AgentAction {
                force_forward: ff,
                force_lateral: fl,
                torque: servo_heading(agent, bearing_to_held),
                grip: 1.0,
                lift: 0.0,
            };
            // Wait for the grip to engage and any engagement transient to
            // settle before lifting, so the object leaves the ground at rest.
            let next = if agent.grip_engaged && state.object.planar_speed() < 0.15 {
                OracleStage::Lift
            } else {
                OracleStage::Grip
            };
            (act, next)
        }
        OracleStage::Lift => {
            let ready = all_grips_engaged(state);
            let (ff, fl) = servo_velocity(agent, Vec2::ZERO, params);
            let act = AgentAction {
                force_forward: ff,
                force_lateral: fl,
                torque: servo_heading(agent, bearing_to_held),
                grip: 1.0,
                lift: if ready { 1.0 } else { 0.0 },
            };
            let airborne = state.object.height_z >= params.ket_height + 0.05;
            (act, if airborne { OracleStage::Carry } else { OracleStage::Lift })
        }
        OracleStage::Carry => {
            let to_target = state.target_position - state.object.position;
            let dist = to_target.norm();
            let v_des = to_target.try_normalize(1e-9).unwrap_or(Vec2::ZERO)
                * speed_profile(dist, CARRY_SPEED);
            // Facing the held point yields pull carries (walking backward)
            // whenever the agent took the target-side end. With reverse
            // walking disallowed, face the direction of travel instead so
            // the gait stays a forward walk even if the load swings.
            let heading_des = if opts.allow_reverse || dist < 0.3 {
                bearing_to_held
            } else {
                to_target.angle()
            };
            let (ff, fl) = servo_velocity(agent, v_des, params);
            let act = AgentAction {
                force_forward: ff,
                force_lateral: fl,
                torque: servo_heading(agent, heading_des),
                grip: 1.0,
                lift: 1.0,
            };
            let there = dist < 0.12 && state.object.planar_speed() < 0.08;
            (act, if there { OracleStage::Place } else { OracleStage::Carry })
        }
        OracleStage::Place => {
            let (ff, fl) = servo_velocity(agent, Vec2::ZERO, params);
            let landed =
                state.object.height_z == 0.0 && state.object.planar_speed() < 0.08;
            let act = AgentAction {
                force_forward: ff,
                force_lateral: fl,
                torque: servo_heading(agent, bearing_to_held),
                grip: if landed { -1.0 } else { 1.0 },
                lift: 0.0,
            };
            (act, if landed { OracleStage::Retreat } else { OracleStage::Place })
        }
        OracleStage::Retreat => {
            let away = agent.position - state.object.position;
            let dist = away.norm();
            let v_des = away.try_normalize(1e-9).unwrap_or(vec2(1.0, 0.0)) * RETREAT_SPEED;
            let (ff, fl) = servo_velocity(agent, v_des, params);
            let act = AgentAction {
                force_forward: ff,
                force_lateral: fl,
                torque: 0.0,
                grip: -1.0,
                lift: 0.0,
            };
            (act, if dist > 1.2 { OracleStage::Done } else { OracleStage::Retreat })
        }
        OracleStage::Done => (
            AgentAction {
                grip: -1.0,
                ..Default::default()
            },
            OracleStage::Done,
        ),
    };

    phase.stage = next_stage;
    (action.clamped(), phase)
}

/// Convenience driver: all agents under oracle control.
#[derive(Debug, Clone)]
pub struct OracleRunner {
    pub phases: Vec<OraclePhase>,
    pub opts: OracleOptions,
}

impl OracleRunner {
    pub fn new(n_agents: usize, opts: OracleOptions) -> Self {
        Self {
            phases: vec![OraclePhase::default(); n_agents],
            opts,
        }
    }

    /// Decide actions for every agent and advance the phase memories.
    pub fn act(&mut self, state: &WorldState, params: &PhysicsParams) -> Vec<AgentAction> {
        let mut actions = Vec::with_capacity(self.phases.len());
        for (i, phase) in self.phases.iter_mut().enumerate() {
            let (action, next) = scripted_oracle_action(state, i, *phase, params, &self.opts);
            *phase = next;
            actions.push(action);
        }
        actions
    }

    pub fn stage(&self, agent_index: usize) -> OracleStage {
        self.phases[agent_index].stage
    }
}
