//! Vectorized experience collection. A pool of independent worlds advances
//! under a frozen policy/critic/discriminator snapshot and emits per-agent
//! transition batches plus the style-transition pairs the discriminator
//! trains on.
//!
//! Every environment owns a random stream derived purely from
//! `(master_seed, env_index)`, and workers partition the pool into static
//! contiguous blocks, so results are bit-identical for any worker count.

use crate::amp::{style_reward, DemoPhase, TransitionPair};
use crate::error::{Error, Result};
use crate::marl::CentralizedCritic;
use crate::nn::{GaussianPolicy, MlpNet};
use crate::obs::{assemble_global_state, assemble_observation, self_state, ObsMode};
use crate::rewards::{combine_task, combined_reward, RewardWeights, TaskRewardContext};
use crate::rl::TransitionBatch;
use crate::rng::env_rng;
use crate::sim::{step, AgentAction, PhysicsParams, TerminationKind, WorldState, ACTION_DIM};
use crate::task::{sample_episode, reset_world, AblationFlags, EpisodeConfig, TaskMode};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::time::Instant;

/// Collection settings. `noise_std` is the absolute standard deviation of
/// the additive observation noise (zero during training).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutConfig {
    pub horizon: usize,
    pub workers: usize,
    pub noise_std: f64,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            horizon: 32,
            workers: 1,
            noise_std: 0.0,
        }
    }
}

/// One environment: a world, its episode definition, and a private random
/// stream that drives episode sampling, observation noise, and action
/// sampling for this slot only.
#[derive(Debug, Clone)]
pub struct EnvSlot {
    pub world: WorldState,
    pub episode: EpisodeConfig,
    pub rng: ChaCha8Rng,
    pub quarantined: bool,
    obs_mode: ObsMode,
    reward_ctx: TaskRewardContext,
    prev_actions: Vec<AgentAction>,
}

impl EnvSlot {
    fn fresh_episode(
        &mut self,
        mode: &TaskMode,
        params: &PhysicsParams,
        flags: &AblationFlags,
    ) -> Result<()> {
        let seed = self.rng.gen::<u64>();
        self.episode = sample_episode(mode, seed)?;
        self.world = reset_world(&self.episode, params);
        self.obs_mode = ObsMode::for_episode(&self.episode, params);
        if flags.no_dynamics_obs {
            self.obs_mode = self.obs_mode.clone().freeze_dynamics(&self.world.object);
        }
        self.reward_ctx = TaskRewardContext::new(&self.episode, params)
            .with_ablations(flags.no_stand_point, flags.no_reverse_walk);
        self.prev_actions = vec![AgentAction::default(); self.episode.n_agents];
        Ok(())
    }
}

/// Serializable image of one environment slot. The slot's random stream is
/// always `env_rng(master_seed, index)` advanced to some word position, so
/// the position alone (split into two words) pins it down exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSnapshot {
    pub episode: EpisodeConfig,
    pub world: WorldState,
    pub rng_word_pos: [u64; 2],
    pub prev_actions: Vec<[f64; ACTION_DIM]>,
}

impl EnvSlot {
    pub fn snapshot(&self) -> EnvSnapshot {
        let pos = self.rng.get_word_pos();
        EnvSnapshot {
            episode: self.episode.clone(),
            world: self.world.clone(),
            rng_word_pos: [(pos >> 64) as u64, pos as u64],
            prev_actions: self.prev_actions.iter().map(|a| a.to_array()).collect(),
        }
    }

    fn from_snapshot(
        snap: &EnvSnapshot,
        index: usize,
        mode: &TaskMode,
        params: &PhysicsParams,
        flags: &AblationFlags,
        master_seed: u64,
    ) -> Result<Self> {
        if snap.episode.n_agents != mode.n_agents {
            return Err(Error::contract(format!(
                "snapshot for env {index} has {} agents but the pool mode has {}",
                snap.episode.n_agents, mode.n_agents
            )));
        }
        if snap.prev_actions.len() != snap.episode.n_agents {
            return Err(Error::contract(format!(
                "snapshot for env {index} carries {} previous actions for {} agents",
                snap.prev_actions.len(),
                snap.episode.n_agents
            )));
        }
        let mut rng = env_rng(master_seed, index as u64);
        rng.set_word_pos(((snap.rng_word_pos[0] as u128) << 64) | snap.rng_word_pos[1] as u128);
        let mut obs_mode = ObsMode::for_episode(&snap.episode, params);
        if flags.no_dynamics_obs {
            // The frozen dynamics block shows the object at its reset pose,
            // which is a pure function of the episode definition.
            let reset = reset_world(&snap.episode, params);
            obs_mode = obs_mode.freeze_dynamics(&reset.object);
        }
        let reward_ctx = TaskRewardContext::new(&snap.episode, params)
            .with_ablations(flags.no_stand_point, flags.no_reverse_walk);
        Ok(EnvSlot {
            world: snap.world.clone(),
            episode: snap.episode.clone(),
            rng,
            quarantined: false,
            obs_mode,
            reward_ctx,
            prev_actions: snap
                .prev_actions
                .iter()
                .map(|a| AgentAction::from_slice(a))
                .collect(),
        })
    }
}

/// A fixed-size set of environments sharing one task mode.
#[derive(Debug, Clone)]
pub struct EnvPool {
    pub mode: TaskMode,
    pub params: PhysicsParams,
    pub weights: RewardWeights,
    pub flags: AblationFlags,
    pub master_seed: u64,
    pub slots: Vec<EnvSlot>,
}

impl EnvPool {
    pub fn new(
        mode: TaskMode,
        params: PhysicsParams,
        weights: RewardWeights,
        flags: AblationFlags,
        n_envs: usize,
        master_seed: u64,
    ) -> Result<Self> {
        mode.validate()?;
        params.validate()?;
        weights.validate()?;
        if n_envs == 0 {
            return Err(Error::config("rollout.envs", "must be at least 1"));
        }
        let mut slots = Vec::with_capacity(n_envs);
        for i in 0..n_envs {
            let mut rng = env_rng(master_seed, i as u64);
            let seed = rng.gen::<u64>();
            let episode = sample_episode(&mode, seed)?;
            let world = reset_world(&episode, &params);
            let mut obs_mode = ObsMode::for_episode(&episode, &params);
            if flags.no_dynamics_obs {
                obs_mode = obs_mode.freeze_dynamics(&world.object);
            }
            let reward_ctx = TaskRewardContext::new(&episode, &params)
                .with_ablations(flags.no_stand_point, flags.no_reverse_walk);
            let prev_actions = vec![AgentAction::default(); episode.n_agents];
            slots.push(EnvSlot {
                world,
                episode,
                rng,
                quarantined: false,
                obs_mode,
                reward_ctx,
                prev_actions,
            });
        }
        Ok(Self {
            mode,
            params,
            weights,
            flags,
            master_seed,
            slots,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.mode.n_agents
    }

    pub fn obs_dim(&self) -> usize {
        self.slots[0].obs_mode.obs_dim()
    }

    /// Per-env images for checkpointing, in env order.
    pub fn snapshots(&self) -> Vec<EnvSnapshot> {
        self.slots.iter().map(EnvSlot::snapshot).collect()
    }

    /// Rebuild a pool mid-training from checkpointed snapshots. The result
    /// continues exactly where `snapshots` left off.
    pub fn restore(
        mode: TaskMode,
        params: PhysicsParams,
        weights: RewardWeights,
        flags: AblationFlags,
        master_seed: u64,
        snaps: &[EnvSnapshot],
    ) -> Result<Self> {
        mode.validate()?;
        params.validate()?;
        weights.validate()?;
        if snaps.is_empty() {
            return Err(Error::contract("cannot restore a pool from zero snapshots"));
        }
        let slots = snaps
            .iter()
            .enumerate()
            .map(|(i, s)| EnvSlot::from_snapshot(s, i, &mode, &params, &flags, master_seed))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            mode,
            params,
            weights,
            flags,
            master_seed,
            slots,
        })
    }
}

/// Where and when an environment was pulled from service.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuarantineEvent {
    pub env: usize,
    pub step: usize,
}

#[derive(Debug, Clone, Default)]
pub struct CollectStats {
    /// World steps actually simulated (includes discarded episodes).
    pub steps: usize,
    /// Transitions emitted across all per-agent batches.
    pub transitions: usize,
    pub episodes_finished: usize,
    pub successes: usize,
    pub mean_task_reward: f64,
    pub mean_style_reward: f64,
    pub mean_combined_reward: f64,
    /// Mean grasp-component reward; the dynamics-observation ablation is
    /// judged on this curve.
    pub mean_held_reward: f64,
    /// Mean delivery-component reward; the reverse-walk ablation is judged
    /// on this curve.
    pub mean_carry_reward: f64,
    pub quarantine_events: Vec<QuarantineEvent>,
    pub steps_per_second: f64,
}

pub struct Collection {
    /// One batch per agent; environments quarantined during the window are
    /// absent from every batch.
    pub batches: Vec<TransitionBatch>,
    /// Agent-side style transitions for discriminator training.
    pub pairs: Vec<TransitionPair>,
    pub stats: CollectStats,
}

/// Everything one environment produced during a window, kept per-env so
/// poisoned episodes can be dropped wholesale and so the dump can be written
/// in deterministic (env, step) order regardless of worker count.
struct EnvRows {
    obs: Vec<f32>,          // horizon * n_agents * obs_dim
    critic: Vec<f32>,       // horizon * n_agents * critic_dim
    actions: Vec<f32>,      // horizon * n_agents * ACTION_DIM
    log_probs: Vec<f32>,    // horizon * n_agents
    values: Vec<f32>,       // horizon * n_agents
    next_values: Vec<f32>,  // horizon * n_agents
    rewards: Vec<f32>,      // horizon (shared across agents)
    terms: Vec<TerminationKind>,
    task_components: Vec<f64>,  // horizon * n_agents
    style_components: Vec<f64>, // horizon * n_agents
    held_components: Vec<f64>,  // horizon * n_agents
    carry_components: Vec<f64>, // horizon * n_agents
    pairs: Vec<TransitionPair>,
    steps_taken: usize,
    episodes_finished: usize,
    successes: usize,
    quarantined_at: Option<usize>,
}

fn observe_all(
    slot: &mut EnvSlot,
    critic_dim: usize,
    n_agents: usize,
    noise_std: f64,
) -> (Vec<f32>, Vec<f32>, bool) {
    let mut obs = Vec::with_capacity(n_agents * slot.obs_mode.obs_dim());
    let mut critic = Vec::with_capacity(n_agents * critic_dim);
    let mut finite = true;
    let per_agent: Vec<Vec<f64>> = (0..n_agents)
        .map(|i| {
            assemble_observation(&slot.world, i, &slot.obs_mode, noise_std, &mut slot.rng)
                .flatten()
        })
        .collect();
    let global = if critic_dim > slot.obs_mode.obs_dim() {
        Some(assemble_global_state(&slot.world, &slot.prev_actions))
    } else {
        None
    };
    for (i, o) in per_agent.iter().enumerate() {
        finite &= o.iter().all(|x| x.is_finite());
        obs.extend(o.iter().map(|x| *x as f32));
        match &global {
            Some(g) => critic.extend(g.critic_input(i, o).iter().map(|x| *x as f32)),
            None => critic.extend(o.iter().map(|x| *x as f32)),
        }
    }
    (obs, critic, finite)
}

/// Run one environment for a full window. Returns rows even when the env is
/// quarantined; the caller drops them from the batches.
#[allow(clippy::too_many_arguments)]
fn run_env_window(
    slot: &mut EnvSlot,
    policy: &GaussianPolicy<f32>,
    critic: &CentralizedCritic<f32>,
    disc: Option<&MlpNet<f32>>,
    mode: &TaskMode,
    params: &PhysicsParams,
    weights: &RewardWeights,
    ablations: &AblationFlags,
    cfg: &RolloutConfig,
) -> Result<EnvRows> {
    let n_agents = mode.n_agents;
    let obs_dim = slot.obs_mode.obs_dim();
    let critic_dim = critic.input_dim();
    let h = cfg.horizon;
    let mut rows = EnvRows {
        obs: vec![0.0; h * n_agents * obs_dim],
        critic: vec![0.0; h * n_agents * critic_dim],
        actions: vec![0.0; h * n_agents * ACTION_DIM],
        log_probs: vec![0.0; h * n_agents],
        values: vec![0.0; h * n_agents],
        next_values: vec![0.0; h * n_agents],
        rewards: vec![0.0; h],
        terms: vec![TerminationKind::None; h],
        task_components: vec![0.0; h * n_agents],
        style_components: vec![0.0; h * n_agents],
        held_components: vec![0.0; h * n_agents],
        carry_components: vec![0.0; h * n_agents],
        pairs: Vec::with_capacity(h * n_agents),
        steps_taken: 0,
        episodes_finished: 0,
        successes: 0,
        quarantined_at: None,
    };
    if slot.quarantined {
        rows.quarantined_at = Some(0);
        return Ok(rows);
    }

    let quarantine = |slot: &mut EnvSlot, rows: &mut EnvRows, t: usize| {
        slot.quarantined = true;
        rows.quarantined_at = Some(t);
    };

    let (mut cur_obs, mut cur_critic, finite) =
        observe_all(slot, critic_dim, n_agents, cfg.noise_std);
    if !finite {
        quarantine(slot, &mut rows, 0);
        return Ok(rows);
    }

    for t in 0..h {
        // Values and sampled actions for the current state.
        let mut actions = Vec::with_capacity(n_agents);
        for i in 0..n_agents {
            let o = &cur_obs[i * obs_dim..(i + 1) * obs_dim];
            let ci = &cur_critic[i * critic_dim..(i + 1) * critic_dim];
            let v = critic.value(ci)?;
            let (a, lp) = policy.sample(o, &mut slot.rng)?;
            let at = t * n_agents + i;
            rows.obs[at * obs_dim..(at + 1) * obs_dim].copy_from_slice(o);
            rows.critic[at * critic_dim..(at + 1) * critic_dim].copy_from_slice(ci);
            rows.actions[at * ACTION_DIM..(at + 1) * ACTION_DIM].copy_from_slice(&a);
            rows.log_probs[at] = lp;
            rows.values[at] = v;
            let arr: Vec<f64> = a.iter().map(|x| *x as f64).collect();
            actions.push(AgentAction::from_slice(&arr));
        }

        let before: Vec<[f64; 9]> = (0..n_agents).map(|i| self_state(&slot.world, i)).collect();
        let stepped = step(&slot.world, &actions, params);
        let (next_world, flags) = match stepped {
            Ok(x) => x,
            Err(_) => {
                quarantine(slot, &mut rows, t);
                break;
            }
        };
        rows.steps_taken += 1;

        // Rewards on the resulting state; style from the transition pair
        // under the frozen discriminator snapshot.
        let mut combined_sum = 0.0;
        let mut ok = true;
        for i in 0..n_agents {
            let comps = slot.reward_ctx.components(&next_world, i, weights, params);
            let task = combine_task(comps[0], comps[1], comps[2], comps[3], weights);
            let pair = TransitionPair::new(before[i], self_state(&next_world, i), DemoPhase::Walk);
            let style = match disc {
                Some(d) if pair.is_finite() => style_reward(d, &pair)?,
                Some(_) => f64::NAN,
                None => 0.0,
            };
            let at = t * n_agents + i;
            rows.task_components[at] = task;
            rows.style_components[at] = style;
            rows.held_components[at] = comps[1];
            rows.carry_components[at] = comps[2];
            combined_sum += combined_reward(task, style, weights);
            ok &= task.is_finite() && style.is_finite();
            rows.pairs.push(pair);
        }
        let shared = combined_sum / n_agents as f64;
        if !(ok && shared.is_finite()) {
            quarantine(slot, &mut rows, t);
            break;
        }
        rows.rewards[t] = shared as f32;
        slot.world = next_world;
        slot.prev_actions = actions;

        // Successor observation (pre-reset on terminal steps) for the
        // bootstrap value.
        let (next_obs, next_critic, finite) =
            observe_all(slot, critic_dim, n_agents, cfg.noise_std);
        if !finite {
            quarantine(slot, &mut rows, t);
            break;
        }
        for i in 0..n_agents {
            let ci = &next_critic[i * critic_dim..(i + 1) * critic_dim];
            rows.next_values[t * n_agents + i] = critic.value(ci)?;
        }

        let kind = flags.kind();
        rows.terms[t] = kind;
        if kind != TerminationKind::None {
            rows.episodes_finished += 1;
            if kind == TerminationKind::Success {
                rows.successes += 1;
            }
            slot.fresh_episode(mode, params, ablations)?;
            let (o, c, finite) = observe_all(slot, critic_dim, n_agents, cfg.noise_std);
            if !finite {
                quarantine(slot, &mut rows, t);
                break;
            }
            cur_obs = o;
            cur_critic = c;
        } else {
            cur_obs = next_obs;
            cur_critic = next_critic;
        }
    }
    Ok(rows)
}

/// Collect one window of experience from every environment in the pool.
///
/// The policy, critic, and discriminator are frozen snapshots for the whole
/// window. Batches are ordered (env index, step); an environment that
/// produced a non-finite observation or reward is quarantined for the
/// window, its partial episode is discarded, the event is recorded in the
/// stats, and the slot is re-seeded from its own stream afterwards.
pub fn collect(
    pool: &mut EnvPool,
    policy: &GaussianPolicy<f32>,
    critic: &CentralizedCritic<f32>,
    disc: Option<&MlpNet<f32>>,
    cfg: &RolloutConfig,
    mut dump: Option<&mut dyn Write>,
) -> Result<Collection> {
    let n_agents = pool.n_agents();
    let obs_dim = pool.obs_dim();
    let critic_dim = critic.input_dim();
    if policy.mean_net.input_dim() != obs_dim {
        return Err(Error::contract("policy input does not match observation layout"));
    }
    if critic.obs_dim != obs_dim || critic.n_agents != n_agents {
        return Err(Error::contract("critic layout does not match pool"));
    }
    if cfg.horizon == 0 || cfg.workers == 0 {
        return Err(Error::config("rollout", "horizon and workers must be positive"));
    }

    let start = Instant::now();
    let n_envs = pool.slots.len();
    let chunk = n_envs.div_ceil(cfg.workers.min(n_envs));
    let mode = pool.mode.clone();
    let params = pool.params.clone();
    let weights = pool.weights.clone();
    let flags = pool.flags;

    let mut all_rows: Vec<Option<EnvRows>> = Vec::with_capacity(n_envs);
    if cfg.workers <= 1 || n_envs == 1 {
        for slot in pool.slots.iter_mut() {
            all_rows.push(Some(run_env_window(
                slot, policy, critic, disc, &mode, &params, &weights, &flags, cfg,
            )?));
        }
    } else {
        let chunks: Vec<&mut [EnvSlot]> = pool.slots.chunks_mut(chunk).collect();
        let results: Vec<Result<Vec<EnvRows>>> = std::thread::scope(|scope| {
            let handles: Vec<_> = chunks
                .into_iter()
                .map(|block| {
                    let mode = &mode;
                    let weights = &weights;
                    let params = &params;
                    let flags = &flags;
                    scope.spawn(move || {
                        block
                            .iter_mut()
                            .map(|slot| {
                                run_env_window(
                                    slot, policy, critic, disc, mode, params, weights, flags, cfg,
                                )
                            })
                            .collect()
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("rollout worker panicked"))
                .collect()
        });
        for block in results {
            for rows in block? {
                all_rows.push(Some(rows));
            }
        }
    }

    // Deterministic (env, step) dump, written after collection so worker
    // scheduling cannot reorder lines.
    if let Some(out) = dump.as_mut() {
        for (env, rows) in all_rows.iter().enumerate() {
            let rows = rows.as_ref().unwrap();
            let end = rows.quarantined_at.unwrap_or(rows.steps_taken);
            for t in 0..end {
                for i in 0..n_agents {
                    let at = t * n_agents + i;
                    let fmt_vec = |v: &[f32]| {
                        v.iter()
                            .map(|x| format!("{x}"))
                            .collect::<Vec<_>>()
                            .join(" ")
                    };
                    let term = match rows.terms[t] {
                        TerminationKind::None => "none",
                        TerminationKind::Ket => "ket",
                        TerminationKind::Timeout => "timeout",
                        TerminationKind::Success => "success",
                        TerminationKind::Fault => "fault",
                    };
                    writeln!(
                        out,
                        "{t},{env},{i},{},{},{} {} {},{term}",
                        fmt_vec(&rows.obs[at * obs_dim..(at + 1) * obs_dim]),
                        fmt_vec(&rows.actions[at * ACTION_DIM..(at + 1) * ACTION_DIM]),
                        rows.task_components[at],
                        rows.style_components[at],
                        rows.rewards[t],
                    )
                    .map_err(|e| Error::contract(format!("trajectory dump failed: {e}")))?;
                }
            }
        }
    }

    // Assemble per-agent batches from the clean environments, in env order.
    let mut stats = CollectStats::default();
    let clean: Vec<usize> = (0..n_envs)
        .filter(|e| {
            let rows = all_rows[*e].as_ref().unwrap();
            if let Some(step) = rows.quarantined_at {
                stats.quarantine_events.push(QuarantineEvent { env: *e, step });
                false
            } else {
                true
            }
        })
        .collect();
    let mut batches: Vec<TransitionBatch> = (0..n_agents)
        .map(|_| TransitionBatch::new(obs_dim, critic_dim, ACTION_DIM, clean.len(), cfg.horizon))
        .collect();
    let mut pairs = Vec::new();
    let mut task_sum = 0.0;
    let mut style_sum = 0.0;
    let mut combined_sum = 0.0;
    let mut held_sum = 0.0;
    let mut carry_sum = 0.0;
    for (row_env, &env) in clean.iter().enumerate() {
        let rows = all_rows[env].take().unwrap();
        for t in 0..cfg.horizon {
            for i in 0..n_agents {
                let at = t * n_agents + i;
                let b = &mut batches[i];
                let dst = b.idx(row_env, t);
                b.observations[dst * obs_dim..(dst + 1) * obs_dim]
                    .copy_from_slice(&rows.obs[at * obs_dim..(at + 1) * obs_dim]);
                b.critic_inputs[dst * critic_dim..(dst + 1) * critic_dim]
                    .copy_from_slice(&rows.critic[at * critic_dim..(at + 1) * critic_dim]);
                b.actions[dst * ACTION_DIM..(dst + 1) * ACTION_DIM]
                    .copy_from_slice(&rows.actions[at * ACTION_DIM..(at + 1) * ACTION_DIM]);
                b.log_probs[dst] = rows.log_probs[at];
                b.values[dst] = rows.values[at];
                b.next_values[dst] = rows.next_values[at];
                b.rewards[dst] = rows.rewards[t];
                b.terminations[dst] = rows.terms[t];
                task_sum += rows.task_components[at];
                style_sum += rows.style_components[at];
                held_sum += rows.held_components[at];
                carry_sum += rows.carry_components[at];
            }
            combined_sum += rows.rewards[t] as f64;
        }
        stats.steps += rows.steps_taken;
        stats.episodes_finished += rows.episodes_finished;
        stats.successes += rows.successes;
        pairs.extend(rows.pairs);
    }
    for rows in all_rows.iter().flatten() {
        stats.steps += rows.steps_taken;
        stats.episodes_finished += rows.episodes_finished;
        stats.successes += rows.successes;
    }

    stats.transitions = clean.len() * cfg.horizon * n_agents;
    let denom = (clean.len() * cfg.horizon * n_agents).max(1) as f64;
    stats.mean_task_reward = task_sum / denom;
    stats.mean_style_reward = style_sum / denom;
    stats.mean_held_reward = held_sum / denom;
    stats.mean_carry_reward = carry_sum / denom;
    stats.mean_combined_reward = combined_sum / (clean.len() * cfg.horizon).max(1) as f64;
    let elapsed = start.elapsed().as_secs_f64();
    stats.steps_per_second = if elapsed > 0.0 {
        stats.steps as f64 / elapsed
    } else {
        0.0
    };

    // Quarantined slots sat out the window; give them a fresh episode and
    // return them to service for the next one.
    for event in &stats.quarantine_events {
        let slot = &mut pool.slots[event.env];
        slot.quarantined = false;
        slot.fresh_episode(&mode, &params, &flags)?;
    }

    Ok(Collection {
        batches,
        pairs,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::marl::{critic_dim_for, transfer_init};
    use crate::rng::seeded_rng;

    fn test_nets(obs_dim: usize) -> (GaussianPolicy<f32>, MlpNet<f32>) {
        let mut rng = seeded_rng(7);
        let mean = MlpNet::random(&[obs_dim, 16, ACTION_DIM], &mut rng, 0.3).unwrap();
        let critic = MlpNet::random(&[obs_dim, 16, 1], &mut rng, 0.3).unwrap();
        (GaussianPolicy::new(mean, -1.0), critic)
    }

    fn single_pool(n_envs: usize, seed: u64, episode_steps: u32) -> EnvPool {
        let mode = TaskMode::single();
        let mut params = PhysicsParams::default();
        params.episode_steps = episode_steps;
        EnvPool::new(mode, params, RewardWeights::default(), AblationFlags::default(), n_envs, seed).unwrap()
    }

    #[test]
    fn shapes_ordering_and_value_coherence() {
        let mut pool = single_pool(4, 11, 600);
        let (policy, critic_net) = test_nets(pool.obs_dim());
        let critic = transfer_init(&policy, &critic_net, 1).unwrap().critic;
        let cfg = RolloutConfig {
            horizon: 8,
            ..RolloutConfig::default()
        };
        let col = collect(&mut pool, &policy, &critic, None, &cfg, None).unwrap();
        assert_eq!(col.batches.len(), 1);
        let b = &col.batches[0];
        assert_eq!((b.envs, b.horizon), (4, 8));
        assert_eq!(b.n(), 32);
        assert_eq!(col.pairs.len(), 32);
        assert!(col.stats.steps_per_second > 0.0);
        b.validate().unwrap();
        // Zero noise: the stored successor value must equal the next step's
        // stored value whenever the episode continues.
        for env in 0..4 {
            for t in 0..7 {
                let i = b.idx(env, t);
                if !b.done(i) {
                    assert_eq!(b.next_values[i], b.values[b.idx(env, t + 1)]);
                }
            }
        }
    }

    #[test]
    fn worker_counts_do_not_change_results() {
        let mut got = Vec::new();
        for workers in [1usize, 2, 8] {
            let mut pool = single_pool(8, 23, 40);
            let (policy, critic_net) = test_nets(pool.obs_dim());
            let critic = transfer_init(&policy, &critic_net, 1).unwrap().critic;
            let cfg = RolloutConfig {
                horizon: 16,
                workers,
                noise_std: 0.0,
            };
            let col = collect(&mut pool, &policy, &critic, None, &cfg, None).unwrap();
            got.push(col);
        }
        for other in &got[1..] {
            assert_eq!(got[0].batches[0], other.batches[0]);
            assert_eq!(got[0].pairs.len(), other.pairs.len());
            for (a, b) in got[0].pairs.iter().zip(&other.pairs) {
                assert_eq!(a.s_t, b.s_t);
                assert_eq!(a.s_next, b.s_next);
            }
            assert_eq!(got[0].stats.steps, other.stats.steps);
        }
    }

    #[test]
    fn env_streams_depend_only_on_master_seed_and_index() {
        let mut small = single_pool(4, 31, 30);
        let mut large = single_pool(9, 31, 30);
        let (policy, critic_net) = test_nets(small.obs_dim());
        let critic = transfer_init(&policy, &critic_net, 1).unwrap().critic;
        let cfg = RolloutConfig {
            horizon: 12,
            ..RolloutConfig::default()
        };
        let a = collect(&mut small, &policy, &critic, None, &cfg, None).unwrap();
        let b = collect(&mut large, &policy, &critic, None, &cfg, None).unwrap();
        let (ba, bb) = (&a.batches[0], &b.batches[0]);
        for env in 0..4 {
            for t in 0..cfg.horizon {
                let (ia, ib) = (ba.idx(env, t), bb.idx(env, t));
                assert_eq!(ba.obs(ia), bb.obs(ib));
                assert_eq!(ba.actions[ia * 5..ia * 5 + 5], bb.actions[ib * 5..ib * 5 + 5]);
                assert_eq!(ba.rewards[ia], bb.rewards[ib]);
                assert_eq!(ba.terminations[ia], bb.terminations[ib]);
            }
        }
    }

    #[test]
    fn auto_reset_places_fresh_episodes_after_done_flags() {
        // Ten-step episodes inside a 32-step window: timeouts at window
        // steps 9, 19, 29 unless physics ends an episode first.
        let mut pool = single_pool(3, 41, 10);
        let (policy, critic_net) = test_nets(pool.obs_dim());
        let critic = transfer_init(&policy, &critic_net, 1).unwrap().critic;
        let cfg = RolloutConfig {
            horizon: 32,
            ..RolloutConfig::default()
        };
        let col = collect(&mut pool, &policy, &critic, None, &cfg, None).unwrap();
        let b = &col.batches[0];
        for env in 0..b.envs {
            let mut steps_since_done = 0u32;
            for t in 0..b.horizon {
                let i = b.idx(env, t);
                if b.done(i) {
                    // An episode never outlives its configured length.
                    assert!(steps_since_done < 10, "env {env} step {t}");
                    steps_since_done = 0;
                } else {
                    steps_since_done += 1;
                    assert!(steps_since_done < 10, "missing done flag at env {env} step {t}");
                }
            }
        }
        assert!(col.stats.episodes_finished >= 9);
    }

    #[test]
    fn poisoned_env_is_quarantined_and_discarded() {
        let mut pool = single_pool(4, 43, 600);
        pool.slots[2].world.agents[0].linear_velocity.x = f64::NAN;
        let (policy, critic_net) = test_nets(pool.obs_dim());
        let critic = transfer_init(&policy, &critic_net, 1).unwrap().critic;
        let cfg = RolloutConfig {
            horizon: 6,
            ..RolloutConfig::default()
        };
        let col = collect(&mut pool, &policy, &critic, None, &cfg, None).unwrap();
        assert_eq!(col.batches[0].envs, 3);
        col.batches[0].validate().unwrap();
        assert_eq!(
            col.stats.quarantine_events,
            vec![QuarantineEvent { env: 2, step: 0 }]
        );
        // The slot is back in service with a fresh, finite episode.
        assert!(!pool.slots[2].quarantined);
        assert!(pool.slots[2]
            .world
            .agents[0]
            .linear_velocity
            .x
            .is_finite());
        let again = collect(&mut pool, &policy, &critic, None, &cfg, None).unwrap();
        assert_eq!(again.batches[0].envs, 4);
    }

    #[test]
    fn style_rewards_come_from_the_discriminator_snapshot() {
        let mut rng = seeded_rng(53);
        let disc = MlpNet::<f32>::random(&[18, 16, 1], &mut rng, 0.4).unwrap();
        let mut pool = single_pool(2, 59, 600);
        let (policy, critic_net) = test_nets(pool.obs_dim());
        let critic = transfer_init(&policy, &critic_net, 1).unwrap().critic;
        let cfg = RolloutConfig {
            horizon: 5,
            ..RolloutConfig::default()
        };
        let mut dump = Vec::new();
        let col = collect(
            &mut pool,
            &policy,
            &critic,
            Some(&disc),
            &cfg,
            Some(&mut dump),
        )
        .unwrap();
        let text = String::from_utf8(dump).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2 * 5);
        let w = RewardWeights::default();
        for line in &lines {
            let fields: Vec<&str> = line.split(',').collect();
            assert_eq!(fields.len(), 7, "step,env,agent,obs,action,rewards,flags: {line}");
            let rewards: Vec<f64> = fields[5]
                .split(' ')
                .map(|x| x.parse().unwrap())
                .collect();
            assert_eq!(rewards.len(), 3);
            let (task, style, comb) = (rewards[0], rewards[1], rewards[2]);
            assert!(style.is_finite() && style >= 0.0);
            let expect = (w.w_g * task + w.w_s * style) as f32;
            assert!((comb as f32 - expect).abs() < 1e-5, "{line}");
        }
        assert!(col.stats.mean_style_reward > 0.0);
        // Without the discriminator the style component is exactly zero.
        let mut pool2 = single_pool(2, 59, 600);
        let col2 = collect(&mut pool2, &policy, &critic, None, &cfg, None).unwrap();
        assert_eq!(col2.stats.mean_style_reward, 0.0);
    }

    #[test]
    fn two_agent_collect_shares_rewards_and_merges() {
        let mode = TaskMode::two_agent();
        let params = PhysicsParams::default();
        let mut pool =
            EnvPool::new(mode, params, RewardWeights::default(), AblationFlags::default(), 3, 61).unwrap();
        let obs_dim = pool.obs_dim();
        let (policy, critic_net) = test_nets(obs_dim);
        let handle = transfer_init(&policy, &critic_net, 2).unwrap();
        assert_eq!(handle.critic.input_dim(), critic_dim_for(2, obs_dim));
        let cfg = RolloutConfig {
            horizon: 6,
            ..RolloutConfig::default()
        };
        let col = collect(&mut pool, &policy, &handle.critic, None, &cfg, None).unwrap();
        assert_eq!(col.batches.len(), 2);
        assert_eq!(col.batches[0].rewards, col.batches[1].rewards);
        assert_ne!(col.batches[0].observations, col.batches[1].observations);
        let merged = TransitionBatch::merge_agents(&col.batches).unwrap();
        assert_eq!(merged.n(), 2 * 3 * 6);
        assert_eq!(col.pairs.len(), 2 * 3 * 6);
    }
}
