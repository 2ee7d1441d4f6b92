//! Per-agent observation assembly.
//!
//! Everything a policy sees is egocentric: agent state, target feature, and
//! an object-dynamics block built from the object's bounding box and twist.
//! In multi-agent mode each agent observes only the sub-box at its assigned
//! end of the object, so the layout (and therefore the trained network) is
//! identical to the single-agent case; what the other agent does reaches the
//! policy only through the motion of that sub-box.

use crate::geom::{vec2, Vec2};
use crate::rng::standard_normal;
use crate::sim::{AgentAction, AgentBody, ObjectBody, PhysicsParams, WorldState, ACTION_DIM};
use crate::task::{assign_ends, reset_world, EpisodeConfig};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Observation layout tag embedded in checkpoints; bump on any change to the
/// vector layout below.
pub const OBS_LAYOUT_VERSION: &str = "obs-v1";

/// Fraction of the object length covered by each end sub-box.
pub const END_FRACTION: f64 = 0.3;

/// Dimensions of the fixed blocks.
pub const SELF_STATE_DIM: usize = 9;
pub const TARGET_FEATURE_DIM: usize = 5;
pub const OBJECT_DYNAMICS_DIM: usize = 15;
pub const BASE_OBS_DIM: usize = SELF_STATE_DIM + TARGET_FEATURE_DIM + OBJECT_DYNAMICS_DIM;

/// Which part of the object an agent observes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SegmentSelector {
    /// The full bounding box.
    Whole,
    /// The sub-box of length `END_FRACTION * length` at end 0 (+x) or 1 (−x).
    End(usize),
}

/// Object-dynamics feature: bounding-box vertices, height, facing and twist,
/// all expressed in the viewing agent's local frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectDynamics {
    /// Planar bbox vertices, counterclockwise starting from the vertex with
    /// the smallest local angle (ties broken by smaller distance).
    pub bbox_vertices: [Vec2; 4],
    pub height_z: f64,
    /// (cos, sin) of the object yaw relative to the viewer heading.
    pub facing: Vec2,
    /// Segment-center velocity in the viewer frame: (vx, vy, vz).
    pub linear_velocity: [f64; 3],
    pub angular_velocity: f64,
}

impl ObjectDynamics {
    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        for v in self.bbox_vertices {
            out.push(v.x);
            out.push(v.y);
        }
        out.push(self.height_z);
        out.push(self.facing.x);
        out.push(self.facing.y);
        out.extend_from_slice(&self.linear_velocity);
        out.push(self.angular_velocity);
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(OBJECT_DYNAMICS_DIM);
        self.flatten_into(&mut out);
        out
    }
}

/// One agent's policy input.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentObservation {
    /// [height placeholder, heading cos/sin (local: 1,0), local velocity xy,
    /// angular velocity, hand (forward offset, height), grip flag]
    pub self_state: [f64; SELF_STATE_DIM],
    /// [target position local xy, target yaw cos/sin relative, distance]
    pub target_feature: [f64; TARGET_FEATURE_DIM],
    pub object_dynamics: ObjectDynamics,
    /// Normalized object mass, present in weight-augmented mode only.
    pub mass_feature: Option<f64>,
}

impl AgentObservation {
    pub fn dim(&self) -> usize {
        BASE_OBS_DIM + usize::from(self.mass_feature.is_some())
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        out.extend_from_slice(&self.self_state);
        out.extend_from_slice(&self.target_feature);
        self.object_dynamics.flatten_into(&mut out);
        if let Some(m) = self.mass_feature {
            out.push(m);
        }
        out
    }
}

/// Observation regime for a run: segment choice per agent plus the optional
/// mass channel. Fixed at episode reset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsMode {
    /// `None`: every agent sees the whole object. `Some(ends)`: agent `i`
    /// sees the sub-box at `ends[i]`.
    pub ends: Option<Vec<usize>>,
    pub weight_augmented: bool,
    /// Dynamics-ablation snapshot: when set, the dynamics block is computed
    /// from this body (the episode-start object with zeroed velocities)
    /// instead of the live object.
    pub frozen_object: Option<ObjectBody>,
}

impl ObsMode {
    pub fn single(weight_augmented: bool) -> Self {
        Self {
            ends: None,
            weight_augmented,
            frozen_object: None,
        }
    }

    pub fn multi(ends: Vec<usize>) -> Self {
        Self {
            ends: Some(ends),
            weight_augmented: false,
            frozen_object: None,
        }
    }

    /// Segment regime for an episode: whole object for one agent, assigned
    /// ends (nearest-end rule on spawn positions) otherwise.
    pub fn for_episode(episode: &EpisodeConfig, params: &PhysicsParams) -> Self {
        if episode.n_agents == 1 {
            Self::single(episode.weight_augmented)
        } else {
            let spawn = reset_world(episode, params);
            Self::multi(assign_ends(&spawn, params))
        }
    }

    /// Freeze the dynamics block to the object's pose at episode start.
    pub fn freeze_dynamics(mut self, object_at_reset: &ObjectBody) -> Self {
        let mut snapshot = object_at_reset.clone();
        snapshot.linear_velocity = Vec2::ZERO;
        snapshot.vertical_velocity = 0.0;
        snapshot.angular_velocity = 0.0;
        self.frozen_object = Some(snapshot);
        self
    }

    pub fn segment_for(&self, agent_index: usize) -> SegmentSelector {
        match &self.ends {
            None => SegmentSelector::Whole,
            Some(ends) => SegmentSelector::End(ends[agent_index]),
        }
    }

    pub fn obs_dim(&self) -> usize {
        BASE_OBS_DIM + usize::from(self.weight_augmented)
    }
}

/// Center and half extents of a segment in the object's body frame.
fn segment_box(object: &ObjectBody, segment: SegmentSelector) -> (Vec2, [f64; 2]) {
    let (hx, hy) = (object.half_extents[0], object.half_extents[1]);
    match segment {
        SegmentSelector::Whole => (Vec2::ZERO, [hx, hy]),
        SegmentSelector::End(k) => {
            let sub_hx = END_FRACTION * hx;
            let sign = if k == 0 { 1.0 } else { -1.0 };
            (vec2(sign * (hx - sub_hx), 0.0), [sub_hx, hy])
        }
    }
}

/// Object-dynamics block for one viewer and segment. The segment is rigidly
/// attached to the object, so its linear velocity is the object twist
/// evaluated at the segment center.
pub fn object_dynamics(
    object: &ObjectBody,
    viewer: &AgentBody,
    segment: SegmentSelector,
) -> ObjectDynamics {
    let (center_local, [shx, shy]) = segment_box(object, segment);
    let center_world = object.position + center_local.rotated(object.yaw);

    let to_viewer = |p: Vec2| (p - viewer.position).rotated(-viewer.heading);
    let corners = [
        vec2(shx, shy),
        vec2(-shx, shy),
        vec2(-shx, -shy),
        vec2(shx, -shy),
    ];
    let mut verts = [Vec2::ZERO; 4];
    for (out, c) in verts.iter_mut().zip(corners) {
        *out = to_viewer(object.position + (center_local + c).rotated(object.yaw));
    }
    // Canonical ordering: rotation+translation preserve the counterclockwise
    // winding, so it suffices to rotate the cycle to start at the vertex with
    // the smallest local angle.
    let key = |v: Vec2| (v.angle(), v.norm_sq());
    let start = (0..4)
        .min_by(|&a, &b| key(verts[a]).partial_cmp(&key(verts[b])).unwrap())
        .unwrap();
    let bbox_vertices = std::array::from_fn(|i| verts[(start + i) % 4]);

    let v_center = object.point_velocity(center_world);
    let v_local = v_center.rotated(-viewer.heading);
    let yaw_rel = object.yaw - viewer.heading;

    ObjectDynamics {
        bbox_vertices,
        height_z: object.height_z,
        facing: vec2(yaw_rel.cos(), yaw_rel.sin()),
        linear_velocity: [v_local.x, v_local.y, object.vertical_velocity],
        angular_velocity: object.angular_velocity,
    }
}

/// Assemble one agent's observation, optionally corrupted by additive
/// i.i.d. Gaussian noise on every channel.
/// Egocentric agent-state block; also the discriminator's feature vector.
pub fn self_state(state: &WorldState, agent_index: usize) -> [f64; SELF_STATE_DIM] {
    let agent = &state.agents[agent_index];
    let v_local = agent.linear_velocity.rotated(-agent.heading);
    [
        0.0,
        1.0,
        0.0,
        v_local.x,
        v_local.y,
        agent.angular_velocity,
        agent.hand_offset,
        agent.hand_height(&state.object),
        f64::from(agent.grip_engaged),
    ]
}

pub fn assemble_observation(
    state: &WorldState,
    agent_index: usize,
    mode: &ObsMode,
    noise_std: f64,
    rng: &mut ChaCha8Rng,
) -> AgentObservation {
    let agent = &state.agents[agent_index];
    let self_state = self_state(state, agent_index);

    let to_target = (state.target_position - agent.position).rotated(-agent.heading);
    let yaw_rel = state.target_yaw - agent.heading;
    let target_feature = [
        to_target.x,
        to_target.y,
        yaw_rel.cos(),
        yaw_rel.sin(),
        to_target.norm(),
    ];

    let dynamics_source = mode.frozen_object.as_ref().unwrap_or(&state.object);
    let dynamics = object_dynamics(dynamics_source, agent, mode.segment_for(agent_index));
    let mass_feature = mode
        .weight_augmented
        .then(|| state.object.mass / 40.0);

    let mut obs = AgentObservation {
        self_state,
        target_feature,
        object_dynamics: dynamics,
        mass_feature,
    };
    if noise_std > 0.0 {
        let noisy = |x: &mut f64, rng: &mut ChaCha8Rng| *x += noise_std * standard_normal(rng);
        for x in &mut obs.self_state {
            noisy(x, rng);
        }
        for x in &mut obs.target_feature {
            noisy(x, rng);
        }
        let d = &mut obs.object_dynamics;
        for v in &mut d.bbox_vertices {
            noisy(&mut v.x, rng);
            noisy(&mut v.y, rng);
        }
        noisy(&mut d.height_z, rng);
        noisy(&mut d.facing.x, rng);
        noisy(&mut d.facing.y, rng);
        for x in &mut d.linear_velocity {
            noisy(x, rng);
        }
        noisy(&mut d.angular_velocity, rng);
        if let Some(m) = &mut obs.mass_feature {
            noisy(m, rng);
        }
    }
    obs
}

/// World-frame state shared by the centralized critic, plus every agent's
/// previous action. Each agent's critic input is its own observation, this
/// shared block, and the OTHER agents' previous actions.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalState {
    pub shared: Vec<f64>,
    pub prev_actions: Vec<[f64; ACTION_DIM]>,
}

pub const AGENT_BLOCK_DIM: usize = 9;
pub const OBJECT_BLOCK_DIM: usize = 12;
pub const TARGET_BLOCK_DIM: usize = 4;

pub fn global_state_dim(n_agents: usize) -> usize {
    n_agents * AGENT_BLOCK_DIM + OBJECT_BLOCK_DIM + TARGET_BLOCK_DIM
}

pub fn critic_input_dim(n_agents: usize, obs_dim: usize) -> usize {
    obs_dim + global_state_dim(n_agents) + (n_agents - 1) * ACTION_DIM
}

pub fn assemble_global_state(state: &WorldState, actions_prev: &[AgentAction]) -> GlobalState {
    assert_eq!(actions_prev.len(), state.agents.len());
    let mut shared = Vec::with_capacity(global_state_dim(state.agents.len()));
    for a in &state.agents {
        shared.extend_from_slice(&[
            a.position.x,
            a.position.y,
            a.heading.cos(),
            a.heading.sin(),
            a.linear_velocity.x,
            a.linear_velocity.y,
            a.angular_velocity,
            a.hand_height(&state.object),
            f64::from(a.grip_engaged),
        ]);
    }
    let o = &state.object;
    shared.extend_from_slice(&[
        o.position.x,
        o.position.y,
        o.yaw.cos(),
        o.yaw.sin(),
        o.height_z,
        o.linear_velocity.x,
        o.linear_velocity.y,
        o.vertical_velocity,
        o.angular_velocity,
        o.half_extents[0],
        o.half_extents[1],
        o.half_extents[2],
    ]);
    shared.extend_from_slice(&[
        state.target_position.x,
        state.target_position.y,
        state.target_yaw.cos(),
        state.target_yaw.sin(),
    ]);
    GlobalState {
        shared,
        prev_actions: actions_prev.iter().map(|a| a.to_array()).collect(),
    }
}

impl GlobalState {
    /// Critic input for one agent: own observation, shared world block, then
    /// the other agents' previous actions in ascending index order.
    pub fn critic_input(&self, agent_index: usize, own_obs: &[f64]) -> Vec<f64> {
        let n = self.prev_actions.len();
        let mut out = Vec::with_capacity(own_obs.len() + self.shared.len() + (n - 1) * ACTION_DIM);
        out.extend_from_slice(own_obs);
        out.extend_from_slice(&self.shared);
        for (j, a) in self.prev_actions.iter().enumerate() {
            if j != agent_index {
                out.extend_from_slice(a);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;
    use crate::sim::{step, TerminationFlags};
    use crate::task::{sample_episode, TaskMode};
    use rand::Rng;

    fn agent_at(position: Vec2, heading: f64, params: &PhysicsParams) -> AgentBody {
        AgentBody::at_pose(position, heading, params)
    }

    fn resting_object(position: Vec2, yaw: f64, half: [f64; 3]) -> ObjectBody {
        ObjectBody {
            position,
            yaw,
            height_z: 0.0,
            linear_velocity: Vec2::ZERO,
            vertical_velocity: 0.0,
            angular_velocity: 0.0,
            mass: 10.0,
            half_extents: half,
        }
    }

    #[test]
    fn static_geometry_matches_hand_computed_vertices() {
        let params = PhysicsParams::default();
        let viewer = agent_at(Vec2::ZERO, 0.0, &params);
        let object = resting_object(vec2(2.0, 0.0), 0.0, [0.5, 0.25, 0.25]);
        let d = object_dynamics(&object, &viewer, SegmentSelector::Whole);
        let expect = [
            vec2(1.5, -0.25),
            vec2(2.5, -0.25),
            vec2(2.5, 0.25),
            vec2(1.5, 0.25),
        ];
        for (v, e) in d.bbox_vertices.iter().zip(expect) {
            assert!(v.dist(e) < 1e-12, "{v:?} vs {e:?}");
        }
        assert_eq!(d.linear_velocity, [0.0; 3]);
        assert_eq!(d.angular_velocity, 0.0);
        assert!(d.facing.dist(vec2(1.0, 0.0)) < 1e-12);
        assert!((d.facing.norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn end_segment_velocity_matches_finite_difference_of_its_center() {
        let params = PhysicsParams::default();
        let viewer = agent_at(vec2(-1.0, 0.4), 0.3, &params);
        let mut object = resting_object(vec2(2.0, 1.0), 0.7, [1.0, 0.25, 0.25]);
        object.linear_velocity = vec2(0.4, -0.2);
        object.angular_velocity = 0.9;

        let d = object_dynamics(&object, &viewer, SegmentSelector::End(0));
        // Finite-difference the sub-box center over one substep.
        let dt = params.sim_dt();
        let center_local = vec2(object.half_extents[0] * (1.0 - END_FRACTION), 0.0);
        let c0 = object.position + center_local.rotated(object.yaw);
        let c1 = (object.position + object.linear_velocity * dt)
            + center_local.rotated(object.yaw + object.angular_velocity * dt);
        let fd_world = (c1 - c0) * (1.0 / dt);
        let fd_local = fd_world.rotated(-viewer.heading);
        let got = vec2(d.linear_velocity[0], d.linear_velocity[1]);
        assert!(
            got.dist(fd_local) < 1e-2,
            "twist {got:?} vs finite difference {fd_local:?}"
        );
        // And the omega-cross-r term is actually present.
        let without_spin = object.linear_velocity.rotated(-viewer.heading);
        assert!(got.dist(without_spin) > 0.1);
    }

    #[test]
    fn end_segments_mirror_across_the_lateral_axis_from_the_center() {
        let params = PhysicsParams::default();
        let object = resting_object(vec2(3.0, -1.0), 1.1, [1.2, 0.3, 0.25]);
        // Viewer at the object center, aligned with it: viewer frame = body frame.
        let viewer = agent_at(object.position, object.yaw, &params);
        let d0 = object_dynamics(&object, &viewer, SegmentSelector::End(0));
        let d1 = object_dynamics(&object, &viewer, SegmentSelector::End(1));
        for v in d0.bbox_vertices {
            let mirrored = vec2(-v.x, v.y);
            assert!(
                d1.bbox_vertices.iter().any(|u| u.dist(mirrored) < 1e-9),
                "no mirror of {v:?}"
            );
        }
    }

    #[test]
    fn end_sub_boxes_stay_inside_the_full_bounding_box() {
        let params = PhysicsParams::default();
        let mut rng = seeded_rng(5);
        for _ in 0..100 {
            let half = [
                rng.gen_range(0.5..1.5),
                rng.gen_range(0.1..0.5),
                rng.gen_range(0.1..0.5),
            ];
            let object = resting_object(
                vec2(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)),
                rng.gen_range(-3.0..3.0),
                half,
            );
            // Viewer frame = body frame, so containment reads directly.
            let viewer = agent_at(object.position, object.yaw, &params);
            for end in 0..2 {
                let d = object_dynamics(&object, &viewer, SegmentSelector::End(end));
                for v in d.bbox_vertices {
                    assert!(v.x.abs() <= half[0] + 1e-9 && v.y.abs() <= half[1] + 1e-9);
                }
            }
        }
    }

    fn random_world(seed: u64) -> (WorldState, ObsMode) {
        let params = PhysicsParams::default();
        let mode = if seed % 2 == 0 {
            TaskMode::single()
        } else {
            TaskMode::two_agent()
        };
        let e = sample_episode(&mode, seed).unwrap();
        let mut w = reset_world(&e, &params);
        let mut rng = seeded_rng(seed ^ 0xFEED);
        for a in &mut w.agents {
            a.linear_velocity = vec2(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            a.angular_velocity = rng.gen_range(-3.0..3.0);
        }
        w.object.linear_velocity = vec2(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        w.object.angular_velocity = rng.gen_range(-2.0..2.0);
        w.object.height_z = rng.gen_range(0.0..0.8);
        w.object.vertical_velocity = rng.gen_range(-1.0..1.0);
        let obs_mode = ObsMode::for_episode(&e, &params);
        (w, obs_mode)
    }

    #[test]
    fn observations_are_invariant_under_rigid_world_transforms() {
        let mut rng = seeded_rng(17);
        for seed in 0..200u64 {
            let (w, mode) = random_world(seed);
            let theta: f64 = rng.gen_range(-3.0..3.0);
            let shift = vec2(rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0));
            let mut t = w.clone();
            for a in &mut t.agents {
                a.position = a.position.rotated(theta) + shift;
                a.heading += theta;
                a.linear_velocity = a.linear_velocity.rotated(theta);
            }
            t.object.position = t.object.position.rotated(theta) + shift;
            t.object.yaw += theta;
            t.object.linear_velocity = t.object.linear_velocity.rotated(theta);
            t.target_position = t.target_position.rotated(theta) + shift;
            t.target_yaw += theta;
            for i in 0..w.agents.len() {
                let mut r1 = seeded_rng(0);
                let mut r2 = seeded_rng(0);
                let a = assemble_observation(&w, i, &mode, 0.0, &mut r1).flatten();
                let b = assemble_observation(&t, i, &mode, 0.0, &mut r2).flatten();
                for (x, y) in a.iter().zip(&b) {
                    assert!((x - y).abs() < 1e-5, "frame leak: {x} vs {y}");
                }
            }
        }
    }

    #[test]
    fn zero_noise_is_deterministic_and_agents_see_different_blocks() {
        let (w, mode) = random_world(1);
        let mut r1 = seeded_rng(9);
        let mut r2 = seeded_rng(10);
        let a = assemble_observation(&w, 0, &mode, 0.0, &mut r1);
        let b = assemble_observation(&w, 0, &mode, 0.0, &mut r2);
        assert_eq!(a, b);
        let other = assemble_observation(&w, 1, &mode, 0.0, &mut r1);
        assert_ne!(
            a.object_dynamics, other.object_dynamics,
            "two agents should see different ends and frames"
        );
    }

    #[test]
    fn noise_empirical_std_matches_requested_level() {
        let (w, mode) = random_world(2);
        let mut rng = seeded_rng(21);
        let clean = assemble_observation(&w, 0, &mode, 0.0, &mut rng).flatten();
        let mut sum_sq = 0.0;
        let mut count = 0usize;
        for _ in 0..10_000 {
            let noisy = assemble_observation(&w, 0, &mode, 2.0, &mut rng).flatten();
            for (n, c) in noisy.iter().zip(&clean) {
                sum_sq += (n - c) * (n - c);
                count += 1;
            }
        }
        let std = (sum_sq / count as f64).sqrt();
        assert!((std - 2.0).abs() / 2.0 < 0.05, "empirical std {std}");
    }

    #[test]
    fn weight_augmentation_appends_normalized_mass() {
        let params = PhysicsParams::default();
        let e = sample_episode(&TaskMode::single_weight_augmented(), 3).unwrap();
        let w = reset_world(&e, &params);
        let mode = ObsMode::for_episode(&e, &params);
        assert_eq!(mode.obs_dim(), 30);
        let mut rng = seeded_rng(0);
        let obs = assemble_observation(&w, 0, &mode, 0.0, &mut rng);
        assert_eq!(obs.mass_feature, Some(w.object.mass / 40.0));
        assert_eq!(obs.flatten().len(), 30);
        let plain = ObsMode::single(false);
        assert_eq!(plain.obs_dim(), 29);
    }

    /// Both agents gripped at their ends with zero spring stretch, at rest.
    fn gripped_pair(params: &PhysicsParams) -> WorldState {
        let object = resting_object(Vec2::ZERO, 0.0, [1.0, 0.25, 0.25]);
        let mut agents = Vec::new();
        for end in 0..2usize {
            let held = object.held_point_world(end, params.grip_inset);
            let heading = if end == 0 { std::f64::consts::PI } else { 0.0 };
            let pos = held - crate::geom::heading_dir(heading) * params.hand_offset;
            let mut a = agent_at(pos, heading, params);
            a.grip_engaged = true;
            a.gripped_held_point = Some(end);
            agents.push(a);
        }
        WorldState {
            agents,
            object,
            target_position: vec2(5.0, 0.0),
            target_yaw: 0.0,
            sim_time: 0.0,
            step_index: 0,
        }
    }

    #[test]
    fn partner_forces_reach_the_other_agent_through_object_dynamics() {
        let mut params = PhysicsParams::default();
        params.friction_mu = 0.0;
        let w = gripped_pair(&params);
        let mode = ObsMode::multi(vec![0, 1]);
        let hold = AgentAction {
            grip: 1.0,
            ..Default::default()
        };
        let pull = AgentAction {
            force_forward: 1.0,
            grip: 1.0,
            ..Default::default()
        };
        let mut rng = seeded_rng(0);
        let before = assemble_observation(&w, 1, &mode, 0.0, &mut rng);

        let linf = |a: &ObjectDynamics, b: &ObjectDynamics| {
            a.flatten()
                .iter()
                .zip(b.flatten())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max)
        };

        // Agent 0 idle: agent 1's view is unchanged (up to rounding dust from
        // the exactly-pi spawn heading).
        let (quiet, flags) = step(&w, &[hold, hold], &params).unwrap();
        assert_eq!(flags, TerminationFlags::default());
        let after_quiet = assemble_observation(&quiet, 1, &mode, 0.0, &mut rng);
        assert!(linf(&before.object_dynamics, &after_quiet.object_dynamics) < 1e-12);

        // Agent 0 pulls its end: agent 1's object-dynamics block changes.
        let (active, _) = step(&w, &[pull, hold], &params).unwrap();
        let after_active = assemble_observation(&active, 1, &mode, 0.0, &mut rng);
        assert!(
            linf(&before.object_dynamics, &after_active.object_dynamics) > 1e-4,
            "partner force invisible to the other agent"
        );
    }

    #[test]
    fn global_state_layout_and_previous_action_routing() {
        let params = PhysicsParams::default();
        let e = sample_episode(&TaskMode::two_agent(), 6).unwrap();
        let w = reset_world(&e, &params);
        let zero = vec![AgentAction::default(), AgentAction::default()];
        let g0 = assemble_global_state(&w, &zero);
        assert_eq!(g0.shared.len(), global_state_dim(2));
        assert_eq!(global_state_dim(2), 34);
        assert!(g0.prev_actions.iter().flatten().all(|x| *x == 0.0));

        let mode = ObsMode::for_episode(&e, &params);
        let mut rng = seeded_rng(0);
        let obs = assemble_observation(&w, 0, &mode, 0.0, &mut rng).flatten();
        assert_eq!(critic_input_dim(2, obs.len()), 68);
        assert_eq!(g0.critic_input(0, &obs).len(), 68);

        // Agent i's "others" block carries agent j's action.
        let a0 = AgentAction {
            torque: 0.25,
            ..Default::default()
        };
        let a1 = AgentAction {
            torque: -0.75,
            ..Default::default()
        };
        let g = assemble_global_state(&w, &[a0, a1]);
        let view0 = g.critic_input(0, &obs);
        let view1 = g.critic_input(1, &obs);
        let tail0 = &view0[view0.len() - ACTION_DIM..];
        let tail1 = &view1[view1.len() - ACTION_DIM..];
        assert_eq!(tail0[2], -0.75);
        assert_eq!(tail1[2], 0.25);
    }
}
