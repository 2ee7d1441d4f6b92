//! Deterministic 2.5D rigid-body world.
//!
//! Agents are actuated discs with planar `(x, y, yaw)` dynamics; the object
//! is a yaw-only box with an additional scalar lift-height channel. Grips are
//! critically damped spring-dampers between an agent's hand point and one of
//! the object's held points. Integration is semi-implicit Euler at 60 Hz with
//! the control policy acting at 30 Hz (two substeps per control step).

pub mod oracle;

use crate::error::{Error, Result};
use crate::geom::{heading_dir, vec2, wrap_angle, Vec2};
use serde::{Deserialize, Serialize};

pub const GRAVITY: f64 = 9.81;

/// Fixed physical constants of the world. All tunable via the run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicsParams {
    /// Control steps per second; each control step runs `substeps` physics steps.
    pub control_hz: f64,
    pub substeps: u32,
    pub agent_mass: f64,
    pub agent_radius: f64,
    /// Distance from agent center to its hand point, along the heading.
    pub hand_offset: f64,
    /// Max planar actuation force per axis, newtons.
    pub max_force: f64,
    pub max_torque: f64,
    /// Linear velocity drag on agents, N*s/m.
    pub linear_drag: f64,
    pub angular_drag: f64,
    /// Grip spring stiffness, N/m. Damping is critical: 2*sqrt(k*m_eff).
    pub grip_stiffness: f64,
    /// Relative-rotation damping of an engaged grip, N*m*s. A hand clamped
    /// on the object end resists relative spin; without this the carried
    /// object has an undamped whirl mode about the held point.
    pub grip_rot_damping: f64,
    /// Hand must be within this distance of a held point to engage.
    pub grip_engage_radius: f64,
    /// Grips cannot engage above this object height.
    pub grip_max_height: f64,
    /// Safety clamp on the spring-damper force magnitude.
    pub max_grip_force: f64,
    /// Per-agent max vertical force through an engaged grip, newtons.
    pub max_lift_force: f64,
    /// Coulomb friction coefficient between object and ground.
    pub friction_mu: f64,
    /// Height at which lift saturates while carried.
    pub carry_height: f64,
    /// Held points sit this far inside each short end.
    pub grip_inset: f64,
    pub ket_height: f64,
    pub ket_speed: f64,
    pub success_dist: f64,
    pub success_speed: f64,
    /// Episode length in control steps.
    pub episode_steps: u32,
    /// Stand points sit this far in front of object faces.
    pub stand_offset: f64,
}

impl Default for PhysicsParams {
    fn default() -> Self {
        Self {
            control_hz: 30.0,
            substeps: 2,
            agent_mass: 70.0,
            agent_radius: 0.3,
            hand_offset: 0.45,
            max_force: 600.0,
            max_torque: 60.0,
            linear_drag: 220.0,
            angular_drag: 8.0,
            grip_stiffness: 2000.0,
            grip_rot_damping: 30.0,
            grip_engage_radius: 0.3,
            grip_max_height: 1.2,
            max_grip_force: 2000.0,
            max_lift_force: 250.0,
            friction_mu: 0.6,
            carry_height: 0.8,
            grip_inset: 0.1,
            ket_height: 0.3,
            ket_speed: 1.0,
            success_dist: 0.2,
            success_speed: 0.1,
            episode_steps: 600,
            stand_offset: 0.5,
        }
    }
}

impl PhysicsParams {
    pub fn control_dt(&self) -> f64 {
        1.0 / self.control_hz
    }

    pub fn sim_dt(&self) -> f64 {
        self.control_dt() / self.substeps as f64
    }

    pub fn validate(&self) -> Result<()> {
        let checks: &[(&str, bool)] = &[
            ("physics.control_hz", self.control_hz > 0.0),
            ("physics.substeps", self.substeps >= 1),
            ("physics.agent_mass", self.agent_mass > 0.0),
            ("physics.agent_radius", self.agent_radius > 0.0),
            ("physics.grip_stiffness", self.grip_stiffness > 0.0),
            ("physics.max_lift_force", self.max_lift_force > 0.0),
            ("physics.friction_mu", self.friction_mu >= 0.0),
            ("physics.carry_height", self.carry_height > 0.0),
            ("physics.episode_steps", self.episode_steps > 0),
        ];
        for (path, ok) in checks {
            if !ok {
                return Err(Error::config(*path, "out of range"));
            }
        }
        Ok(())
    }
}

/// Actuated disc standing in for a character: planar body plus a hand point
/// at `hand_offset` along the heading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentBody {
    pub position: Vec2,
    /// Normalized to (-pi, pi].
    pub heading: f64,
    pub linear_velocity: Vec2,
    pub angular_velocity: f64,
    pub mass: f64,
    pub radius: f64,
    pub hand_offset: f64,
    pub grip_engaged: bool,
    pub gripped_held_point: Option<usize>,
}

impl AgentBody {
    pub fn at_pose(position: Vec2, heading: f64, params: &PhysicsParams) -> Self {
        Self {
            position,
            heading: wrap_angle(heading),
            linear_velocity: Vec2::ZERO,
            angular_velocity: 0.0,
            mass: params.agent_mass,
            radius: params.agent_radius,
            hand_offset: params.hand_offset,
            grip_engaged: false,
            gripped_held_point: None,
        }
    }

    pub fn facing(&self) -> Vec2 {
        heading_dir(self.heading)
    }

    /// World-space hand point (planar).
    pub fn hand_position(&self) -> Vec2 {
        self.position + self.facing() * self.hand_offset
    }

    /// Hand height channel: tracks the carried object while gripping, rests
    /// at zero otherwise.
    pub fn hand_height(&self, object: &ObjectBody) -> f64 {
        if self.grip_engaged {
            object.height_z
        } else {
            0.0
        }
    }

    /// Planar velocity of the hand point (includes the omega-cross-r term).
    pub fn hand_velocity(&self) -> Vec2 {
        let r = self.facing() * self.hand_offset;
        self.linear_velocity + vec2(-self.angular_velocity * r.y, self.angular_velocity * r.x)
    }

    fn moment_of_inertia(&self) -> f64 {
        0.5 * self.mass * self.radius * self.radius
    }

    pub fn check_invariants(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.mass > 0.0) {
            return Err(Error::contract("agent radius and mass must be positive"));
        }
        if self.grip_engaged && self.gripped_held_point.is_none() {
            return Err(Error::contract("engaged grip without a held point"));
        }
        Ok(())
    }
}

/// The transported box: planar pose plus a scalar lift-height channel.
/// Pitch and roll are frozen; only yaw rotates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectBody {
    pub position: Vec2,
    pub yaw: f64,
    pub height_z: f64,
    pub linear_velocity: Vec2,
    pub vertical_velocity: f64,
    pub angular_velocity: f64,
    pub mass: f64,
    /// (length/2, width/2, height/2), local x along the long axis.
    pub half_extents: [f64; 3],
}

impl ObjectBody {
    pub fn length(&self) -> f64 {
        2.0 * self.half_extents[0]
    }

    pub fn width(&self) -> f64 {
        2.0 * self.half_extents[1]
    }

    /// Held points in the body frame: geometric centers of the two short
    /// ends, inset by `grip_inset`. Index 0 is the +x end.
    pub fn held_points_local(&self, grip_inset: f64) -> [Vec2; 2] {
        let hx = self.half_extents[0] - grip_inset;
        [vec2(hx, 0.0), vec2(-hx, 0.0)]
    }

    pub fn held_point_world(&self, index: usize, grip_inset: f64) -> Vec2 {
        let local = self.held_points_local(grip_inset)[index];
        self.position + local.rotated(self.yaw)
    }

    /// Planar velocity of a point rigidly attached to the object.
    pub fn point_velocity(&self, world_point: Vec2) -> Vec2 {
        let r = world_point - self.position;
        self.linear_velocity + vec2(-self.angular_velocity * r.y, self.angular_velocity * r.x)
    }

    /// Yaw moment of inertia of the box.
    pub fn moment_of_inertia(&self) -> f64 {
        let l = self.length();
        let w = self.width();
        self.mass * (l * l + w * w) / 12.0
    }

    /// Box corners in the body frame, counterclockwise.
    pub fn corners_local(&self) -> [Vec2; 4] {
        let (hx, hy) = (self.half_extents[0], self.half_extents[1]);
        [
            vec2(hx, hy),
            vec2(-hx, hy),
            vec2(-hx, -hy),
            vec2(hx, -hy),
        ]
    }

    pub fn planar_speed(&self) -> f64 {
        self.linear_velocity.norm()
    }

    pub fn check_invariants(&self) -> Result<()> {
        if !(self.mass > 0.0) || self.half_extents.iter().any(|h| *h <= 0.0) {
            return Err(Error::contract("object mass and extents must be positive"));
        }
        if self.height_z < 0.0 {
            return Err(Error::contract("object below ground"));
        }
        Ok(())
    }
}

/// Normalized control command for one agent.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AgentAction {
    /// Thrust along the heading, [-1, 1].
    pub force_forward: f64,
    /// Thrust perpendicular to the heading, [-1, 1].
    pub force_lateral: f64,
    /// Yaw torque, [-1, 1].
    pub torque: f64,
    /// Grip engages while > 0, releases at <= 0. Range [-1, 1].
    pub grip: f64,
    /// Vertical grip force fraction, [0, 1].
    pub lift: f64,
}

impl AgentAction {
    pub fn clamped(self) -> Self {
        Self {
            force_forward: self.force_forward.clamp(-1.0, 1.0),
            force_lateral: self.force_lateral.clamp(-1.0, 1.0),
            torque: self.torque.clamp(-1.0, 1.0),
            grip: self.grip.clamp(-1.0, 1.0),
            lift: self.lift.clamp(0.0, 1.0),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.force_forward.is_finite()
            && self.force_lateral.is_finite()
            && self.torque.is_finite()
            && self.grip.is_finite()
            && self.lift.is_finite()
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            force_forward: v[0],
            force_lateral: v[1],
            torque: v[2],
            grip: v[3],
            lift: v[4],
        }
    }

    pub fn to_array(self) -> [f64; 5] {
        [
            self.force_forward,
            self.force_lateral,
            self.torque,
            self.grip,
            self.lift,
        ]
    }
}

pub const ACTION_DIM: usize = 5;

/// Full physical state; the simulator's single source of truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub agents: Vec<AgentBody>,
    pub object: ObjectBody,
    pub target_position: Vec2,
    pub target_yaw: f64,
    pub sim_time: f64,
    pub step_index: u32,
}

impl WorldState {
    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn object_target_distance(&self) -> f64 {
        self.object.position.dist(self.target_position)
    }

    pub fn check_invariants(&self, params: &PhysicsParams) -> Result<()> {
        if !matches!(self.agents.len(), 1 | 2 | 4) {
            return Err(Error::contract("agent count must be 1, 2 or 4"));
        }
        let expected = self.step_index as f64 * params.control_dt();
        if (self.sim_time - expected).abs() > 1e-9 {
            return Err(Error::contract("sim_time out of sync with step_index"));
        }
        for a in &self.agents {
            a.check_invariants()?;
        }
        self.object.check_invariants()
    }
}

/// Why (or whether) the episode ended at this control step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TerminationFlags {
    /// Kicking early termination: object low and sliding fast.
    pub ket: bool,
    pub timeout: bool,
    pub success: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TerminationKind {
    /// Episode continues.
    None,
    Ket,
    Timeout,
    Success,
    /// Non-finite state detected; episode quarantined.
    Fault,
}

impl TerminationFlags {
    pub fn any(&self) -> bool {
        self.ket || self.timeout || self.success
    }

    pub fn kind(&self) -> TerminationKind {
        if self.success {
            TerminationKind::Success
        } else if self.ket {
            TerminationKind::Ket
        } else if self.timeout {
            TerminationKind::Timeout
        } else {
            TerminationKind::None
        }
    }
}

/// Advance the world by one control step (`substeps` physics substeps).
///
/// Grip engagement is resolved once per control step from the clamped
/// actions; forces are integrated semi-implicitly at the substep rate.
pub fn step(
    state: &WorldState,
    actions: &[AgentAction],
    params: &PhysicsParams,
) -> Result<(WorldState, TerminationFlags)> {
    if actions.len() != state.agents.len() {
        return Err(Error::contract(format!(
            "expected {} actions, got {}",
            state.agents.len(),
            actions.len()
        )));
    }
    if actions.iter().any(|a| !a.is_finite()) {
        return Err(Error::contract("non-finite action component"));
    }

    let mut next = state.clone();
    let acts: Vec<AgentAction> = actions.iter().map(|a| a.clamped()).collect();

    resolve_grips(&mut next, &acts, params);
    let dt = params.sim_dt();
    for _ in 0..params.substeps {
        substep(&mut next, &acts, params, dt);
    }

    next.step_index = state.step_index + 1;
    next.sim_time = next.step_index as f64 * params.control_dt();

    let flags = check_termination(&next, params);
    Ok((next, flags))
}

/// Engage/release grips according to the grip action and proximity rule.
fn resolve_grips(state: &mut WorldState, actions: &[AgentAction], params: &PhysicsParams) {
    for (agent, act) in state.agents.iter_mut().zip(actions) {
        if act.grip <= 0.0 {
            agent.grip_engaged = false;
            agent.gripped_held_point = None;
            continue;
        }
        if agent.grip_engaged {
            continue;
        }
        if state.object.height_z >= params.grip_max_height {
            continue;
        }
        let hand = agent.hand_position();
        let mut best: Option<(usize, f64)> = None;
        for (i, local) in state
            .object
            .held_points_local(params.grip_inset)
            .iter()
            .enumerate()
        {
            let world = state.object.position + local.rotated(state.object.yaw);
            let d = hand.dist(world);
            if d < params.grip_engage_radius && best.map_or(true, |(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        if let Some((idx, _)) = best {
            agent.grip_engaged = true;
            agent.gripped_held_point = Some(idx);
        }
    }
}

/// One semi-implicit Euler substep: accumulate forces at current state,
/// integrate velocities, then positions.
fn substep(state: &mut WorldState, actions: &[AgentAction], params: &PhysicsParams, dt: f64) {
    let object = &state.object;
    let n = state.agents.len();

    // Per-agent planar force and torque; object force, torque, lift.
    let mut agent_force = vec![Vec2::ZERO; n];
    let mut agent_torque = vec![0.0f64; n];
    let mut obj_force = Vec2::ZERO;
    let mut obj_torque = 0.0f64;
    let mut lift_force = 0.0f64;

    for (i, (agent, act)) in state.agents.iter().zip(actions).enumerate() {
        // Actuation in the agent frame.
        let dir = agent.facing();
        let lateral = vec2(-dir.y, dir.x);
        agent_force[i] +=
            dir * (act.force_forward * params.max_force) + lateral * (act.force_lateral * params.max_force);
        agent_torque[i] += act.torque * params.max_torque;

        // Drag.
        agent_force[i] -= agent.linear_velocity * params.linear_drag;
        agent_torque[i] -= agent.angular_velocity * params.angular_drag;

        // Grip spring-damper.
        if let (true, Some(idx)) = (agent.grip_engaged, agent.gripped_held_point) {
            let held_world = object.held_point_world(idx, params.grip_inset);
            let hand = agent.hand_position();
            let stretch = held_world - hand;
            let rel_vel = object.point_velocity(held_world) - agent.hand_velocity();
            // Critical damping against the constraint-space effective mass,
            // which includes both bodies' rotational inertia seen through
            // the attachment arms. The cap keeps the explicit damper stable
            // (monotonically dissipative) at any configured substep rate.
            let r_a = hand - agent.position;
            let r_o = held_world - object.position;
            let inv_m_eff = 1.0 / agent.mass
                + r_a.norm_sq() / agent.moment_of_inertia()
                + 1.0 / object.mass
                + r_o.norm_sq() / object.moment_of_inertia();
            let m_eff = 1.0 / inv_m_eff;
            let critical = 2.0 * (params.grip_stiffness * m_eff).sqrt();
            let damping = critical.min(0.8 * m_eff / dt);
            let force = (stretch * params.grip_stiffness + rel_vel * damping)
                .clamp_norm(params.max_grip_force);
            // Equal and opposite forces applied at the attachment points
            // (hand and held point), each with its moment arm, so the grip
            // is a passive constraint: it transmits but never creates energy.
            agent_force[i] += force;
            agent_torque[i] += (hand - agent.position).cross(force);
            let r = held_world - object.position;
            obj_force -= force;
            obj_torque -= r.cross(force);

            // Relative-rotation damper (also a passive pair), capped for
            // discrete stability like the translational damper.
            let inv_i = 1.0 / agent.moment_of_inertia() + 1.0 / object.moment_of_inertia();
            let c_rot = params.grip_rot_damping.min(0.8 / (dt * inv_i));
            let rot_torque = c_rot * (object.angular_velocity - agent.angular_velocity);
            agent_torque[i] += rot_torque;
            obj_torque -= rot_torque;

            lift_force += act.lift * params.max_lift_force;
        }
    }

    // Ground friction on the object (Coulomb, only while on the ground).
    let on_ground = object.height_z <= 0.0;
    let friction_decel = if on_ground {
        params.friction_mu * GRAVITY
    } else {
        0.0
    };

    // Integrate agents.
    for (i, agent) in state.agents.iter_mut().enumerate() {
        agent.linear_velocity += agent_force[i] * (dt / agent.mass);
        agent.angular_velocity += agent_torque[i] * (dt / agent.moment_of_inertia());
        agent.position += agent.linear_velocity * dt;
        agent.heading = wrap_angle(agent.heading + agent.angular_velocity * dt);
    }

    // Integrate the object: planar.
    let object = &mut state.object;
    object.linear_velocity += obj_force * (dt / object.mass);
    if friction_decel > 0.0 {
        let speed = object.linear_velocity.norm();
        let dv = friction_decel * dt;
        if speed <= dv {
            object.linear_velocity = Vec2::ZERO;
        } else {
            object.linear_velocity -= object.linear_velocity * (dv / speed);
        }
    }
    object.angular_velocity += obj_torque * (dt / object.moment_of_inertia());
    if friction_decel > 0.0 {
        // Rotational Coulomb friction about the radius of gyration.
        let r_gyr = (object.moment_of_inertia() / object.mass).sqrt();
        let dw = friction_decel * dt / r_gyr.max(1e-6);
        if object.angular_velocity.abs() <= dw {
            object.angular_velocity = 0.0;
        } else {
            object.angular_velocity -= dw * object.angular_velocity.signum();
        }
    }
    object.position += object.linear_velocity * dt;
    object.yaw = wrap_angle(object.yaw + object.angular_velocity * dt);

    // Vertical channel: rises only when total lift beats weight.
    let weight = object.mass * GRAVITY;
    let net_up = lift_force - weight;
    if object.height_z > 0.0 || net_up > 0.0 {
        object.vertical_velocity += net_up / object.mass * dt;
        object.height_z += object.vertical_velocity * dt;
        if object.height_z <= 0.0 {
            object.height_z = 0.0;
            object.vertical_velocity = 0.0;
        }
        if object.height_z >= params.carry_height {
            object.height_z = params.carry_height;
            object.vertical_velocity = object.vertical_velocity.min(0.0);
        }
    } else {
        object.vertical_velocity = 0.0;
    }
}

/// Episode termination logic. KET and success use strict inequalities.
pub fn check_termination(state: &WorldState, params: &PhysicsParams) -> TerminationFlags {
    let speed = state.object.planar_speed();
    let ket = state.object.height_z < params.ket_height && speed > params.ket_speed;
    let timeout = state.step_index >= params.episode_steps;
    let success =
        state.object_target_distance() < params.success_dist && speed < params.success_speed;
    TerminationFlags {
        ket,
        timeout,
        success,
    }
}

/// Total planar kinetic energy plus grip spring potential; used by the
/// passivity tests.
pub fn mechanical_energy(state: &WorldState, params: &PhysicsParams) -> f64 {
    let mut e = kinetic_energy(state);
    for a in &state.agents {
        if let (true, Some(idx)) = (a.grip_engaged, a.gripped_held_point) {
            let stretch = state
                .object
                .held_point_world(idx, params.grip_inset)
                .dist(a.hand_position());
            e += 0.5 * params.grip_stiffness * stretch * stretch;
        }
    }
    e
}

/// Planar kinetic energy of agents plus object (translational + rotational).
pub fn kinetic_energy(state: &WorldState) -> f64 {
    let mut e = 0.0;
    for a in &state.agents {
        e += 0.5 * a.mass * a.linear_velocity.norm_sq();
        e += 0.5 * a.moment_of_inertia() * a.angular_velocity * a.angular_velocity;
    }
    let o = &state.object;
    e += 0.5 * o.mass * o.linear_velocity.norm_sq();
    e += 0.5 * o.moment_of_inertia() * o.angular_velocity * o.angular_velocity;
    e
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{seeded_rng, uniform_in};
    use rand::Rng;

    fn free_object(mass: f64, half_extents: [f64; 3]) -> ObjectBody {
        ObjectBody {
            position: Vec2::ZERO,
            yaw: 0.0,
            height_z: 0.0,
            linear_velocity: Vec2::ZERO,
            vertical_velocity: 0.0,
            angular_velocity: 0.0,
            mass,
            half_extents,
        }
    }

    fn world(n_agents: usize, mass: f64) -> WorldState {
        let params = PhysicsParams::default();
        let object = free_object(mass, [0.5, 0.25, 0.25]);
        let mut agents = Vec::new();
        for i in 0..n_agents {
            // Agent i stands past held point i, facing the object center, so
            // its hand lands exactly on the held point.
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            let heading = if sign > 0.0 { std::f64::consts::PI } else { 0.0 };
            let held = object.held_point_world(i % 2, params.grip_inset);
            let position = held - heading_dir(heading) * params.hand_offset;
            agents.push(AgentBody::at_pose(position, heading, &params));
        }
        WorldState {
            agents,
            object,
            target_position: vec2(4.0, 0.0),
            target_yaw: 0.0,
            sim_time: 0.0,
            step_index: 0,
        }
    }

    fn zero_actions(n: usize) -> Vec<AgentAction> {
        vec![AgentAction::default(); n]
    }

    fn grip_lift_action(lift: f64) -> AgentAction {
        AgentAction {
            grip: 1.0,
            lift,
            ..Default::default()
        }
    }

    #[test]
    fn equilibrium_step_leaves_bodies_unchanged() {
        let w0 = world(1, 10.0);
        let params = PhysicsParams::default();
        let (w1, flags) = step(&w0, &zero_actions(1), &params).unwrap();
        assert_eq!(w0.agents, w1.agents);
        assert_eq!(w0.object, w1.object);
        assert!((w1.sim_time - w0.sim_time - 1.0 / 30.0).abs() < 1e-12);
        assert_eq!(w1.step_index, 1);
        assert!(!flags.any());
    }

    #[test]
    fn lift_above_weight_raises_object() {
        // 250 N of lift against a 10 kg (98.1 N) object.
        let w0 = world(1, 10.0);
        let params = PhysicsParams::default();
        let (w1, _) = step(&w0, &[grip_lift_action(1.0)], &params).unwrap();
        assert!(w1.agents[0].grip_engaged);
        assert!(w1.object.height_z > 0.0, "height should strictly increase");
    }

    #[test]
    fn insufficient_lift_leaves_height_exactly_zero() {
        // One agent (250 N) cannot lift a 30 kg (294.3 N) object.
        let w0 = world(1, 30.0);
        let params = PhysicsParams::default();
        let mut w = w0;
        for _ in 0..30 {
            let (next, _) = step(&w, &[grip_lift_action(1.0)], &params).unwrap();
            w = next;
        }
        assert!(w.agents[0].grip_engaged);
        assert_eq!(w.object.height_z, 0.0);
        assert_eq!(w.object.vertical_velocity, 0.0);
    }

    #[test]
    fn two_agents_lift_what_one_cannot() {
        // Two grips at 250 N each: 500 N beats 294.3 N.
        let w0 = world(2, 30.0);
        let params = PhysicsParams::default();
        let actions = vec![grip_lift_action(1.0); 2];
        let (w1, _) = step(&w0, &actions, &params).unwrap();
        assert!(w1.agents.iter().all(|a| a.grip_engaged));
        assert!(w1.object.height_z > 0.0);
    }

    #[test]
    fn carried_object_saturates_at_carry_height() {
        let mut w = world(1, 10.0);
        let params = PhysicsParams::default();
        for _ in 0..120 {
            let (next, _) = step(&w, &[grip_lift_action(1.0)], &params).unwrap();
            w = next;
        }
        assert!((w.object.height_z - params.carry_height).abs() < 1e-12);
    }

    #[test]
    fn ket_fires_when_low_and_fast() {
        let mut w = world(1, 10.0);
        w.object.linear_velocity = vec2(1.5, 0.0);
        let params = PhysicsParams::default();
        let flags = check_termination(&w, &params);
        assert!(flags.ket);
        assert_eq!(flags.kind(), TerminationKind::Ket);
    }

    #[test]
    fn ket_requires_low_height() {
        let mut w = world(1, 10.0);
        w.object.height_z = 0.5;
        w.object.linear_velocity = vec2(1.5, 0.0);
        assert!(!check_termination(&w, &PhysicsParams::default()).ket);
    }

    #[test]
    fn ket_boundaries_are_strict() {
        let params = PhysicsParams::default();
        // Exactly at the height threshold: no KET.
        let mut w = world(1, 10.0);
        w.object.height_z = 0.3;
        w.object.linear_velocity = vec2(1.5, 0.0);
        assert!(!check_termination(&w, &params).ket);
        // Exactly at the speed threshold: no KET.
        w.object.height_z = 0.0;
        w.object.linear_velocity = vec2(1.0, 0.0);
        assert!(!check_termination(&w, &params).ket);
        // Just inside both: fires.
        w.object.linear_velocity = vec2(1.0 + 1e-9, 0.0);
        assert!(check_termination(&w, &params).ket);
    }

    #[test]
    fn timeout_at_episode_length() {
        let params = PhysicsParams::default();
        let mut w = world(1, 10.0);
        w.step_index = 599;
        assert!(!check_termination(&w, &params).timeout);
        w.step_index = 600;
        let flags = check_termination(&w, &params);
        assert!(flags.timeout);
        assert_eq!(flags.kind(), TerminationKind::Timeout);
    }

    #[test]
    fn success_requires_proximity_and_rest() {
        let params = PhysicsParams::default();
        let mut w = world(1, 10.0);
        w.object.position = w.target_position + vec2(0.1, 0.0);
        assert!(check_termination(&w, &params).success);
        // Both thresholds are strict.
        w.object.position = w.target_position + vec2(0.2, 0.0);
        assert!(!check_termination(&w, &params).success);
        w.object.position = w.target_position + vec2(0.1, 0.0);
        w.object.linear_velocity = vec2(0.1, 0.0);
        assert!(!check_termination(&w, &params).success);
    }

    #[test]
    fn grip_engages_only_within_radius_and_below_max_height() {
        let params = PhysicsParams::default();
        let mut w = world(1, 10.0);
        // In range: engages on held point 0.
        let (w1, _) = step(&w, &[grip_lift_action(0.0)], &params).unwrap();
        assert_eq!(w1.agents[0].gripped_held_point, Some(0));
        // Too far: no engagement.
        w.agents[0].position += vec2(1.0, 0.0);
        let (w2, _) = step(&w, &[grip_lift_action(0.0)], &params).unwrap();
        assert!(!w2.agents[0].grip_engaged);
        // Too high: no engagement.
        let mut w3 = world(1, 10.0);
        w3.object.height_z = params.grip_max_height;
        let (w4, _) = step(&w3, &[grip_lift_action(0.0)], &params).unwrap();
        assert!(!w4.agents[0].grip_engaged);
    }

    #[test]
    fn grip_releases_on_nonpositive_command() {
        let params = PhysicsParams::default();
        let w = world(1, 10.0);
        let (w1, _) = step(&w, &[grip_lift_action(0.0)], &params).unwrap();
        assert!(w1.agents[0].grip_engaged);
        let (w2, _) = step(&w1, &zero_actions(1), &params).unwrap();
        assert!(!w2.agents[0].grip_engaged);
        assert_eq!(w2.agents[0].gripped_held_point, None);
    }

    #[test]
    fn action_count_mismatch_is_a_contract_error() {
        let w = world(2, 30.0);
        let err = step(&w, &zero_actions(1), &PhysicsParams::default()).unwrap_err();
        assert!(err.to_string().contains("actions"));
    }

    #[test]
    fn non_finite_action_is_a_contract_error() {
        let w = world(1, 10.0);
        let mut a = AgentAction::default();
        a.torque = f64::NAN;
        assert!(step(&w, &[a], &PhysicsParams::default()).is_err());
    }

    #[test]
    fn free_object_momentum_is_conserved_without_friction() {
        let mut params = PhysicsParams::default();
        params.friction_mu = 0.0;
        let mut w = world(1, 10.0);
        // Move the agent far away so nothing can couple to the object.
        w.agents[0].position = vec2(50.0, 50.0);
        w.object.linear_velocity = vec2(1.2, -0.7);
        w.object.angular_velocity = 0.4;
        let p0 = w.object.linear_velocity * w.object.mass;
        for _ in 0..200 {
            let (next, _) = step(&w, &zero_actions(1), &params).unwrap();
            w = next;
            let p = w.object.linear_velocity * w.object.mass;
            assert!((p - p0).norm() <= 1e-6 * p0.norm().max(1.0));
        }
    }

    #[test]
    fn grip_passivity_no_net_kinetic_energy_injection() {
        // From a zero-stretch grip (no stored spring energy), kinetic energy
        // can slosh through the spring but must never exceed its initial
        // value: the grip transmits, it does not create. One substep per
        // control step so the bound is checked at substep granularity.
        let mut params = PhysicsParams::default();
        params.substeps = 1;
        let mut rng = seeded_rng(0x5eed_0001);
        for _ in 0..50 {
            let mut w = world(2, 30.0);
            // Engage both grips with hands exactly on held points (zero
            // stretch), then give everything random velocities.
            let (mut engaged, _) = step(&w, &[grip_lift_action(0.0); 2], &params).unwrap();
            for a in &mut engaged.agents {
                assert!(a.grip_engaged);
                a.linear_velocity = vec2(
                    uniform_in(&mut rng, -1.0, 1.0),
                    uniform_in(&mut rng, -1.0, 1.0),
                );
                a.angular_velocity = uniform_in(&mut rng, -1.0, 1.0);
            }
            engaged.object.linear_velocity = vec2(
                uniform_in(&mut rng, -1.0, 1.0),
                uniform_in(&mut rng, -1.0, 1.0),
            );
            engaged.object.angular_velocity = uniform_in(&mut rng, -1.0, 1.0);
            // Stretch is still zero: positions were untouched.
            w = engaged;
            let ke0 = kinetic_energy(&w);
            let hold = [grip_lift_action(0.0); 2];
            for _ in 0..60 {
                let (next, _) = step(&w, &hold, &params).unwrap();
                let ke = kinetic_energy(&next);
                assert!(ke <= ke0 + 1e-6, "kinetic energy exceeded initial: {ke0} -> {ke}");
                w = next;
            }
        }
    }

    #[test]
    fn grip_total_mechanical_energy_never_increases() {
        // Stronger form: with nonzero initial stretch, kinetic + spring
        // potential energy is still non-increasing under zero actuation.
        let mut params = PhysicsParams::default();
        params.substeps = 1;
        let mut rng = seeded_rng(0x5eed_0002);
        for _ in 0..50 {
            let mut w = world(1, 10.0);
            let (mut engaged, _) = step(&w, &[grip_lift_action(0.0)], &params).unwrap();
            assert!(engaged.agents[0].grip_engaged);
            // Displace the agent to stretch the spring, keep velocities random.
            engaged.agents[0].position += vec2(
                uniform_in(&mut rng, -0.2, 0.2),
                uniform_in(&mut rng, -0.2, 0.2),
            );
            engaged.agents[0].linear_velocity = vec2(
                uniform_in(&mut rng, -0.5, 0.5),
                uniform_in(&mut rng, -0.5, 0.5),
            );
            w = engaged;
            let mut e = mechanical_energy(&w, &params);
            for _ in 0..60 {
                let (next, _) = step(&w, &[grip_lift_action(0.0)], &params).unwrap();
                let e_next = mechanical_energy(&next, &params);
                assert!(e_next <= e + 1e-6, "energy rose: {e} -> {e_next}");
                e = e_next;
                w = next;
            }
        }
    }

    #[test]
    fn height_never_negative_under_random_actions() {
        let params = PhysicsParams::default();
        let mut rng = seeded_rng(0x5eed_0003);
        let mut w = world(2, 20.0);
        for _ in 0..600 {
            let actions: Vec<AgentAction> = (0..2)
                .map(|_| AgentAction {
                    force_forward: uniform_in(&mut rng, -1.0, 1.0),
                    force_lateral: uniform_in(&mut rng, -1.0, 1.0),
                    torque: uniform_in(&mut rng, -1.0, 1.0),
                    grip: uniform_in(&mut rng, -1.0, 1.0),
                    lift: rng.gen::<f64>(),
                })
                .collect();
            let (next, _) = step(&w, &actions, &params).unwrap();
            assert!(next.object.height_z >= 0.0);
            assert!(next.object.height_z <= params.carry_height + 1e-12);
            w = next;
        }
    }

    #[test]
    fn trajectories_are_bit_identical_across_reruns() {
        let params = PhysicsParams::default();
        let make_actions = || {
            let mut rng = seeded_rng(0x5eed_0004);
            (0..100)
                .map(|_| {
                    vec![
                        AgentAction {
                            force_forward: uniform_in(&mut rng, -1.0, 1.0),
                            force_lateral: uniform_in(&mut rng, -1.0, 1.0),
                            torque: uniform_in(&mut rng, -1.0, 1.0),
                            grip: uniform_in(&mut rng, -1.0, 1.0),
                            lift: rng.gen::<f64>(),
                        };
                        2
                    ]
                })
                .collect::<Vec<_>>()
        };
        let run = |actions: &[Vec<AgentAction>]| {
            let mut w = world(2, 20.0);
            let mut states = Vec::new();
            for acts in actions {
                let (next, _) = step(&w, acts, &params).unwrap();
                states.push(next.clone());
                w = next;
            }
            states
        };
        let a = make_actions();
        let b = make_actions();
        assert_eq!(run(&a), run(&b));
    }

    #[test]
    fn held_points_sit_inside_short_ends() {
        let params = PhysicsParams::default();
        let o = free_object(10.0, [0.5, 0.25, 0.25]);
        let pts = o.held_points_local(params.grip_inset);
        assert_eq!(pts[0], vec2(0.4, 0.0));
        assert_eq!(pts[1], vec2(-0.4, 0.0));
    }

    #[test]
    fn world_invariants_reject_bad_agent_counts() {
        let params = PhysicsParams::default();
        let mut w = world(2, 20.0);
        assert!(w.check_invariants(&params).is_ok());
        w.agents.push(w.agents[0].clone());
        assert!(w.check_invariants(&params).is_err());
    }
}
