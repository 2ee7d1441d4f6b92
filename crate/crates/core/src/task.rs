//! Episode generation and evaluation bookkeeping: randomized object mass,
//! scale and poses, stand-point geometry, per-agent end assignment, and the
//! success/precision metrics.

use crate::error::{Error, Result};
use crate::geom::{vec2, Pose, Vec2};
use crate::rng::{seeded_rng, uniform_in};
use crate::sim::{AgentBody, ObjectBody, PhysicsParams, TerminationFlags, WorldState};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Training-recipe ablation switches. Each removes one ingredient: the
/// stand-point walk target, the object-dynamics observation block, the
/// reverse-walk capability (demos and reward branch), or the transfer
/// initialization (training the team from scratch).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationFlags {
    pub no_stand_point: bool,
    pub no_dynamics_obs: bool,
    pub no_reverse_walk: bool,
    pub from_scratch: bool,
}

/// Task family: agent count plus randomization ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskMode {
    pub n_agents: usize,
    /// Object mass range, kg (uniform).
    pub mass_range: (f64, f64),
    /// Uniform scalar applied to all object dimensions.
    pub scale_range: (f64, f64),
    /// Range for both agent-object and object-target planar distances, m.
    pub distance_range: (f64, f64),
    /// Fixed elongated scale (1.5, 1.0, 1.5): length and height scaled up,
    /// width kept at base.
    pub boundary_mode: bool,
    /// Append normalized object mass to observations.
    pub weight_augmented: bool,
}

impl TaskMode {
    pub fn single() -> Self {
        Self {
            n_agents: 1,
            mass_range: (2.0, 13.0),
            scale_range: (0.5, 1.5),
            distance_range: (1.0, 20.0),
            boundary_mode: false,
            weight_augmented: false,
        }
    }

    /// Single agent with the extended mass range and mass visible in the
    /// observation.
    pub fn single_weight_augmented() -> Self {
        Self {
            mass_range: (2.0, 26.0),
            weight_augmented: true,
            ..Self::single()
        }
    }

    pub fn two_agent() -> Self {
        Self {
            n_agents: 2,
            mass_range: (15.0, 40.0),
            scale_range: (0.5, 1.5),
            distance_range: (2.0, 20.0),
            boundary_mode: false,
            weight_augmented: false,
        }
    }

    pub fn four_agent() -> Self {
        Self {
            n_agents: 4,
            ..Self::two_agent()
        }
    }

    /// Unscaled object half extents: a long box for multi-agent modes, a
    /// hand-sized one for the single agent.
    pub fn base_half_extents(&self) -> [f64; 3] {
        if self.n_agents == 1 {
            [0.5, 0.25, 0.25]
        } else {
            [1.0, 0.25, 0.25]
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.n_agents, 1 | 2 | 4) {
            return Err(Error::config("task.n_agents", "must be 1, 2 or 4"));
        }
        let ranges = [
            ("task.mass_range", self.mass_range),
            ("task.scale_range", self.scale_range),
            ("task.distance_range", self.distance_range),
        ];
        for (path, (lo, hi)) in ranges {
            if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && hi >= lo) {
                return Err(Error::config(path, "empty or inverted range"));
            }
        }
        Ok(())
    }
}

/// Everything needed to reconstruct one episode deterministically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub n_agents: usize,
    pub object_mass: f64,
    pub object_scale: [f64; 3],
    pub agent_spawns: Vec<Pose>,
    pub object_spawn: Pose,
    pub target_pose: Pose,
    pub stand_points: Vec<Vec2>,
    pub seed: u64,
    pub weight_augmented: bool,
    pub base_half_extents: [f64; 3],
}

impl EpisodeConfig {
    pub fn half_extents(&self) -> [f64; 3] {
        [
            self.base_half_extents[0] * self.object_scale[0],
            self.base_half_extents[1] * self.object_scale[1],
            self.base_half_extents[2] * self.object_scale[2],
        ]
    }
}

/// Draw one episode. Pure function of (mode, seed).
pub fn sample_episode(mode: &TaskMode, seed: u64) -> Result<EpisodeConfig> {
    mode.validate()?;
    let mut rng = seeded_rng(seed);
    let object_mass = uniform_in(&mut rng, mode.mass_range.0, mode.mass_range.1);
    let object_scale = if mode.boundary_mode {
        [1.5, 1.0, 1.5]
    } else {
        let s = uniform_in(&mut rng, mode.scale_range.0, mode.scale_range.1);
        [s, s, s]
    };

    let object_spawn = Pose {
        position: Vec2::ZERO,
        yaw: uniform_in(&mut rng, 0.0, std::f64::consts::TAU),
    };

    let (dlo, dhi) = mode.distance_range;
    let target_dir = uniform_in(&mut rng, 0.0, std::f64::consts::TAU);
    let target_dist = uniform_in(&mut rng, dlo, dhi);
    let target_pose = Pose {
        position: object_spawn.position + vec2(target_dir.cos(), target_dir.sin()) * target_dist,
        yaw: uniform_in(&mut rng, 0.0, std::f64::consts::TAU),
    };

    let mut agent_spawns = Vec::with_capacity(mode.n_agents);
    for _ in 0..mode.n_agents {
        let dir = uniform_in(&mut rng, 0.0, std::f64::consts::TAU);
        let dist = uniform_in(&mut rng, dlo, dhi);
        agent_spawns.push(Pose {
            position: object_spawn.position + vec2(dir.cos(), dir.sin()) * dist,
            yaw: uniform_in(&mut rng, -std::f64::consts::PI, std::f64::consts::PI),
        });
    }

    let base = mode.base_half_extents();
    let object = ObjectBody {
        position: object_spawn.position,
        yaw: object_spawn.yaw,
        height_z: 0.0,
        linear_velocity: Vec2::ZERO,
        vertical_velocity: 0.0,
        angular_velocity: 0.0,
        mass: object_mass,
        half_extents: [
            base[0] * object_scale[0],
            base[1] * object_scale[1],
            base[2] * object_scale[2],
        ],
    };
    let stand_points = compute_stand_points(&object, mode.n_agents, &mut rng);

    Ok(EpisodeConfig {
        n_agents: mode.n_agents,
        object_mass,
        object_scale,
        agent_spawns,
        object_spawn,
        target_pose,
        stand_points,
        seed,
        weight_augmented: mode.weight_augmented,
        base_half_extents: base,
    })
}

/// Points just in front of object faces where approaching agents should
/// stand. Single agent: one face chosen uniformly at random. Multi-agent:
/// the two short-end faces (agents must take the ends, not the long sides).
pub fn compute_stand_points<R: Rng>(
    object: &ObjectBody,
    n_agents: usize,
    rng: &mut R,
) -> Vec<Vec2> {
    let d = PhysicsParams::default().stand_offset;
    let (hx, hy) = (object.half_extents[0], object.half_extents[1]);
    let faces = [
        vec2(hx + d, 0.0),
        vec2(-(hx + d), 0.0),
        vec2(0.0, hy + d),
        vec2(0.0, -(hy + d)),
    ];
    let world = |p: Vec2| object.position + p.rotated(object.yaw);
    match n_agents {
        1 => {
            let pick = rng.gen_range(0..4usize);
            vec![world(faces[pick])]
        }
        _ => vec![world(faces[0]), world(faces[1])],
    }
}

/// Greedy nearest-end assignment, evaluated at reset; ties break to the
/// lower agent index. With more agents than ends, ends are shared evenly.
pub fn assign_ends(state: &WorldState, params: &PhysicsParams) -> Vec<usize> {
    let positions: Vec<Vec2> = state.agents.iter().map(|a| a.position).collect();
    assign_ends_by_position(&positions, &state.object, params)
}

/// Reset-time end assignment, straight from the episode's spawn poses.
pub fn spawn_ends(config: &EpisodeConfig, params: &PhysicsParams) -> Vec<usize> {
    let positions: Vec<Vec2> = config.agent_spawns.iter().map(|p| p.position).collect();
    let object = ObjectBody {
        position: config.object_spawn.position,
        yaw: config.object_spawn.yaw,
        height_z: 0.0,
        linear_velocity: Vec2::ZERO,
        vertical_velocity: 0.0,
        angular_velocity: 0.0,
        mass: config.object_mass,
        half_extents: config.half_extents(),
    };
    assign_ends_by_position(&positions, &object, params)
}

pub fn assign_ends_by_position(
    positions: &[Vec2],
    object: &ObjectBody,
    params: &PhysicsParams,
) -> Vec<usize> {
    let n = positions.len();
    let held: Vec<Vec2> = (0..2)
        .map(|e| object.held_point_world(e, params.grip_inset))
        .collect();
    if n == 1 {
        let d0 = positions[0].dist(held[0]);
        let d1 = positions[0].dist(held[1]);
        return vec![if d1 < d0 { 1 } else { 0 }];
    }
    let mut capacity = [(n + 1) / 2, n / 2];
    let mut out = vec![0usize; n];
    // Strongest preference claims first, so a contested end goes to the
    // agent that is relatively closer to it; equal preferences resolve in
    // agent-index order.
    let gap = |i: usize| {
        let d0 = positions[i].dist(held[0]);
        let d1 = positions[i].dist(held[1]);
        (d0 - d1).abs()
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| gap(b).partial_cmp(&gap(a)).unwrap().then(a.cmp(&b)));
    for i in order {
        let d0 = positions[i].dist(held[0]);
        let d1 = positions[i].dist(held[1]);
        let prefer = if d1 < d0 { 1 } else { 0 };
        let end = if capacity[prefer] > 0 {
            prefer
        } else {
            1 - prefer
        };
        capacity[end] -= 1;
        out[i] = end;
    }
    out
}

/// Stand point in front of face `k` of the object at its CURRENT pose.
/// Faces: 0 = +x end, 1 = −x end, 2 = +y side, 3 = −y side.
pub fn face_point(object: &ObjectBody, face: usize, params: &PhysicsParams) -> Vec2 {
    let d = params.stand_offset;
    let (hx, hy) = (object.half_extents[0], object.half_extents[1]);
    let local = match face {
        0 => vec2(hx + d, 0.0),
        1 => vec2(-(hx + d), 0.0),
        2 => vec2(0.0, hy + d),
        _ => vec2(0.0, -(hy + d)),
    };
    object.position + local.rotated(object.yaw)
}

/// Recover which face each stored stand point was sampled from, by matching
/// against the face points at the spawn pose. Stand points move with the
/// object during the episode; the face choice is what stays fixed.
pub fn stand_face_indices(config: &EpisodeConfig, params: &PhysicsParams) -> Vec<usize> {
    let object = ObjectBody {
        position: config.object_spawn.position,
        yaw: config.object_spawn.yaw,
        height_z: 0.0,
        linear_velocity: Vec2::ZERO,
        vertical_velocity: 0.0,
        angular_velocity: 0.0,
        mass: config.object_mass,
        half_extents: config.half_extents(),
    };
    config
        .stand_points
        .iter()
        .map(|p| {
            (0..4)
                .min_by(|&a, &b| {
                    let da = p.dist(face_point(&object, a, params));
                    let db = p.dist(face_point(&object, b, params));
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap()
        })
        .collect()
}

/// Instantiate the world for an episode.
pub fn reset_world(config: &EpisodeConfig, params: &PhysicsParams) -> WorldState {
    let agents = config
        .agent_spawns
        .iter()
        .map(|p| AgentBody::at_pose(p.position, p.yaw, params))
        .collect();
    let object = ObjectBody {
        position: config.object_spawn.position,
        yaw: config.object_spawn.yaw,
        height_z: 0.0,
        linear_velocity: Vec2::ZERO,
        vertical_velocity: 0.0,
        angular_velocity: 0.0,
        mass: config.object_mass,
        half_extents: config.half_extents(),
    };
    WorldState {
        agents,
        object,
        target_position: config.target_pose.position,
        target_yaw: config.target_pose.yaw,
        sim_time: 0.0,
        step_index: 0,
    }
}

/// Per-seed evaluation tallies.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SeedStats {
    pub episodes: u64,
    pub successes: u64,
    pub precision_sum: f64,
}

impl SeedStats {
    pub fn success_rate(&self) -> f64 {
        if self.episodes == 0 {
            0.0
        } else {
            self.successes as f64 / self.episodes as f64
        }
    }

    /// Mean final distance over successful episodes only.
    pub fn precision(&self) -> Option<f64> {
        if self.successes == 0 {
            None
        } else {
            Some(self.precision_sum / self.successes as f64)
        }
    }
}

/// Success-rate and precision accumulator with a per-seed breakdown.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunMetrics {
    pub total: SeedStats,
    pub per_seed: BTreeMap<u64, SeedStats>,
}

impl RunMetrics {
    pub fn record_episode(
        &mut self,
        seed: u64,
        final_state: &WorldState,
        flags: TerminationFlags,
    ) {
        let entry = self.per_seed.entry(seed).or_default();
        entry.episodes += 1;
        self.total.episodes += 1;
        if flags.success {
            let d = final_state.object_target_distance();
            entry.successes += 1;
            entry.precision_sum += d;
            self.total.successes += 1;
            self.total.precision_sum += d;
        }
    }

    /// Associative merge for combining worker-local accumulators.
    pub fn merge(&mut self, other: &RunMetrics) {
        self.total.episodes += other.total.episodes;
        self.total.successes += other.total.successes;
        self.total.precision_sum += other.total.precision_sum;
        for (seed, s) in &other.per_seed {
            let entry = self.per_seed.entry(*seed).or_default();
            entry.episodes += s.episodes;
            entry.successes += s.successes;
            entry.precision_sum += s.precision_sum;
        }
    }
}
