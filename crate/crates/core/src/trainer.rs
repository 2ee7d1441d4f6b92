//! Training drivers. Phase one trains a single carrier against the combined
//! task/style reward; phase two transfers the policy to a team and fine-tunes
//! it with the centralized critic. Both phases share one update loop:
//! collect, refresh the discriminator, take a clipped-surrogate step, log.
//!
//! Every run is a pure function of its configuration: network init, demo
//! generation, environment streams, and minibatch shuffles all derive from
//! `run.seed`, and a checkpoint restores each of those streams exactly, so a
//! resumed run emits byte-identical artifacts.

use crate::amp::{
    generate_demos, train_discriminator, DemoBuffer, DemoPhase, DiscReport, TransitionPair,
    DISC_INPUT_DIM,
};
use crate::checkpoint::{BufMeta, Checkpoint, CheckpointMeta};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::marl::{critic_dim_for, mappo_update, transfer_init, CentralizedCritic, SharedPolicyHandle, CRITIC_LAYOUT_VERSION};
use crate::nn::{AdamState, GaussianPolicy, MlpNet};
use crate::obs::{BASE_OBS_DIM, OBS_LAYOUT_VERSION, SELF_STATE_DIM};
use crate::report::{num, CsvSink};
use crate::rl::{LearnerState, UpdateReport};
use crate::rollout::{collect, CollectStats, EnvPool, RolloutConfig};
use crate::sim::oracle::OracleOptions;
use crate::sim::ACTION_DIM;
use crate::task::TaskMode;
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

/// Seed-stream labels for the trainer's own random consumers. Environment
/// streams use the raw env index, so these sit far above any env count.
const STREAM_ACTOR: u64 = 0xA110_0001;
const STREAM_CRITIC: u64 = 0xA110_0002;
const STREAM_DISC: u64 = 0xA110_0003;
const STREAM_TRAINER: u64 = 0xA110_0004;
const STREAM_DEMOS: u64 = 0xA110_0005;

fn stream_rng(master: u64, label: u64) -> ChaCha8Rng {
    crate::rng::seeded_rng(crate::rng::derive_seed(master, label))
}

/// Observation width for a task mode (the mass channel exists only in the
/// weight-augmented single-agent variant).
pub fn obs_dim_for_mode(mode: &TaskMode) -> usize {
    BASE_OBS_DIM + usize::from(mode.n_agents == 1 && mode.weight_augmented)
}

/// Which training phase a state belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Single,
    Multi,
}

impl Phase {
    fn tag(self) -> &'static str {
        match self {
            Phase::Single => "single",
            Phase::Multi => "multi",
        }
    }

    fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "single" => Ok(Phase::Single),
            "multi" => Ok(Phase::Multi),
            other => Err(Error::Checkpoint(format!("unknown phase `{other}`"))),
        }
    }
}

/// Everything a run mutates: networks, optimizer moments, buffers, the env
/// pool, the trainer's random stream, and progress counters.
#[derive(Debug, Clone)]
pub struct TrainerState {
    pub cfg: RunConfig,
    pub phase: Phase,
    pub handle: SharedPolicyHandle<f32>,
    pub learner: LearnerState<f32>,
    pub disc: MlpNet<f32>,
    pub disc_adam: AdamState<f32>,
    pub demo_buf: DemoBuffer,
    pub agent_buf: DemoBuffer,
    pub pool: EnvPool,
    pub rng: ChaCha8Rng,
    pub updates_done: u64,
    pub env_steps_done: u64,
}

/// One update's worth of diagnostics.
#[derive(Debug, Clone)]
pub struct UpdateLog {
    pub update: u64,
    pub env_steps: u64,
    pub stats: CollectStats,
    pub report: UpdateReport,
    pub disc: DiscReport,
}

impl TrainerState {
    /// Phase one: fresh networks, scripted demonstrations, single-agent task.
    pub fn new_single(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let mode = cfg.task.to_task_mode()?;
        if mode.n_agents != 1 {
            return Err(Error::config(
                "task.mode",
                "phase-one training requires a single-agent task",
            ));
        }
        let (handle, disc) = fresh_networks(cfg, &mode)?;
        let demo_buf = demos_for(cfg, &mode)?;
        Self::assemble(cfg, Phase::Single, mode, handle, disc, None, demo_buf, None)
    }

    /// Phase two, transferred: load the phase-one policy, widen the critic,
    /// keep the style machinery, start a fresh team pool.
    pub fn new_multi(cfg: &RunConfig, init: &Checkpoint) -> Result<Self> {
        cfg.validate()?;
        let mode = cfg.task.to_task_mode()?;
        if mode.n_agents < 2 {
            return Err(Error::config(
                "task.mode",
                "phase-two training requires a team task",
            ));
        }
        check_layouts(init)?;
        if init.meta.phase != "single" || init.meta.n_agents != 1 {
            return Err(Error::Checkpoint(format!(
                "transfer needs a phase-one checkpoint; this one is `{}` with {} agents",
                init.meta.phase, init.meta.n_agents
            )));
        }
        let obs_dim = obs_dim_for_mode(&mode);
        if init.meta.obs_dim != obs_dim {
            return Err(Error::LayoutMismatch {
                field: "observation".into(),
                expected: format!("{obs_dim} channels for the team task"),
                found: format!("{} channels in the checkpoint", init.meta.obs_dim),
            });
        }
        let policy = policy_from(init)?;
        let single_critic = net_from(init, "critic", &init.meta.critic_sizes)?;
        let handle = transfer_init(&policy, &single_critic, mode.n_agents)?;
        let disc = net_from(init, "disc", &init.meta.disc_sizes)?;
        let disc_adam = adam_from(init, "disc_adam", disc.param_count(), cfg.amp.disc_lr, init.meta.disc_adam_step)?;
        let demo_buf = buffer_from(init, "demo", init.meta.demo_buf)?;
        Self::assemble(
            cfg,
            Phase::Multi,
            mode,
            handle,
            disc,
            Some(disc_adam),
            demo_buf,
            None,
        )
    }

    /// Phase two, from scratch: fresh networks at team width; demonstrations
    /// are still single-carrier motion.
    pub fn new_multi_scratch(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let mode = cfg.task.to_task_mode()?;
        if mode.n_agents < 2 {
            return Err(Error::config(
                "task.mode",
                "scratch team training requires a team task",
            ));
        }
        let (handle, disc) = fresh_networks(cfg, &mode)?;
        let demo_buf = demos_for(cfg, &mode)?;
        Self::assemble(cfg, Phase::Multi, mode, handle, disc, None, demo_buf, None)
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        cfg: &RunConfig,
        phase: Phase,
        mode: TaskMode,
        handle: SharedPolicyHandle<f32>,
        disc: MlpNet<f32>,
        disc_adam: Option<AdamState<f32>>,
        demo_buf: DemoBuffer,
        pool: Option<EnvPool>,
    ) -> Result<Self> {
        let learner = LearnerState::new(&handle.policy, &handle.critic.net, cfg.ppo.lr);
        let disc_adam =
            disc_adam.unwrap_or_else(|| AdamState::new(disc.param_count(), cfg.amp.disc_lr));
        let pool = match pool {
            Some(p) => p,
            None => EnvPool::new(
                mode,
                cfg.physics.clone(),
                cfg.rewards.clone(),
                cfg.ablation,
                cfg.run.envs,
                cfg.run.seed,
            )?,
        };
        Ok(Self {
            cfg: cfg.clone(),
            phase,
            handle,
            learner,
            disc,
            disc_adam,
            demo_buf,
            agent_buf: DemoBuffer::new(cfg.amp.agent_buffer_capacity),
            pool,
            rng: stream_rng(cfg.run.seed, STREAM_TRAINER),
            updates_done: 0,
            env_steps_done: 0,
        })
    }

    /// One full update: collect a window, refresh the discriminator on the
    /// new transitions, take a learner step, advance the counters.
    pub fn update_once(&mut self) -> Result<UpdateLog> {
        let rcfg = RolloutConfig {
            horizon: self.cfg.run.horizon,
            workers: self.cfg.run.workers,
            noise_std: 0.0,
        };
        let col = collect(
            &mut self.pool,
            &self.handle.policy,
            &self.handle.critic,
            Some(&self.disc),
            &rcfg,
            None,
        )?;
        for pair in col.pairs {
            self.agent_buf.push(pair);
        }

        let mut disc_report = DiscReport {
            bce: f64::NAN,
            grad_penalty: f64::NAN,
            mean_d_demo: f64::NAN,
            mean_d_agent: f64::NAN,
            skipped: true,
        };
        for _ in 0..self.cfg.amp.disc_updates_per_iter {
            let r = train_discriminator(
                &mut self.disc,
                &mut self.disc_adam,
                &self.demo_buf,
                &self.agent_buf,
                self.cfg.ppo.amp_minibatch,
                self.cfg.amp.w_gp,
                &mut self.rng,
            )?;
            if !r.skipped {
                disc_report = r;
            }
        }

        let report = mappo_update(
            &mut self.handle,
            &mut self.learner,
            &col.batches,
            &self.cfg.ppo,
            &mut self.rng,
        )?;

        self.updates_done += 1;
        self.env_steps_done += (self.cfg.run.envs * self.cfg.run.horizon) as u64;
        Ok(UpdateLog {
            update: self.updates_done,
            env_steps: self.env_steps_done,
            stats: col.stats,
            report,
            disc: disc_report,
        })
    }

    /// Freeze the full mutable state into a checkpoint.
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let pos = self.rng.get_word_pos();
        let meta = CheckpointMeta {
            phase: self.phase.tag().to_string(),
            n_agents: self.handle.n_agents(),
            obs_dim: self.pool.obs_dim(),
            critic_dim: self.handle.critic.input_dim(),
            action_dim: ACTION_DIM,
            actor_sizes: self.handle.policy.mean_net.layer_sizes().to_vec(),
            critic_sizes: self.handle.critic.net.layer_sizes().to_vec(),
            disc_sizes: self.disc.layer_sizes().to_vec(),
            policy_adam_step: self.learner.policy_adam.step,
            critic_adam_step: self.learner.critic_adam.step,
            disc_adam_step: self.disc_adam.step,
            updates_done: self.updates_done,
            env_steps_done: self.env_steps_done,
            trainer_rng_word_pos: [(pos >> 64) as u64, pos as u64],
            demo_buf: BufMeta {
                capacity: self.demo_buf.capacity(),
                len: self.demo_buf.len(),
                write: self.demo_buf.write_pos(),
            },
            agent_buf: BufMeta {
                capacity: self.agent_buf.capacity(),
                len: self.agent_buf.len(),
                write: self.agent_buf.write_pos(),
            },
            envs: self.pool.snapshots(),
        };
        let mut ck = Checkpoint::new(
            self.cfg.hash(),
            OBS_LAYOUT_VERSION.to_string(),
            CRITIC_LAYOUT_VERSION.to_string(),
            meta,
        );
        ck.push_array("actor.params", self.handle.policy.mean_net.params().to_vec())?;
        ck.push_array("actor.log_std", self.handle.policy.log_std.clone())?;
        ck.push_array("critic.params", self.handle.critic.net.params().to_vec())?;
        ck.push_array("actor_adam.m", self.learner.policy_adam.m.clone())?;
        ck.push_array("actor_adam.v", self.learner.policy_adam.v.clone())?;
        ck.push_array("critic_adam.m", self.learner.critic_adam.m.clone())?;
        ck.push_array("critic_adam.v", self.learner.critic_adam.v.clone())?;
        ck.push_array("disc.params", self.disc.params().to_vec())?;
        ck.push_array("disc_adam.m", self.disc_adam.m.clone())?;
        ck.push_array("disc_adam.v", self.disc_adam.v.clone())?;
        let (s, next, phase) = buffer_arrays(&self.demo_buf);
        ck.push_array("demo.s", s)?;
        ck.push_array("demo.next", next)?;
        ck.push_array("demo.phase", phase)?;
        let (s, next, phase) = buffer_arrays(&self.agent_buf);
        ck.push_array("agent.s", s)?;
        ck.push_array("agent.next", next)?;
        ck.push_array("agent.phase", phase)?;
        Ok(ck)
    }

    /// Resume a run in the same phase; the result continues the saved
    /// trajectory bit for bit.
    pub fn from_checkpoint(cfg: &RunConfig, ck: &Checkpoint) -> Result<Self> {
        cfg.validate()?;
        if ck.config_hash != cfg.hash() {
            return Err(Error::Checkpoint(format!(
                "checkpoint was produced under config {} but this run is {}; resume requires the same configuration",
                &ck.config_hash[..12.min(ck.config_hash.len())],
                &cfg.hash()[..12]
            )));
        }
        check_layouts(ck)?;
        let phase = Phase::from_tag(&ck.meta.phase)?;
        let mode = cfg.task.to_task_mode()?;
        if mode.n_agents != ck.meta.n_agents {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} agents but the task mode has {}",
                ck.meta.n_agents, mode.n_agents
            )));
        }
        let policy = policy_from(ck)?;
        let critic_net = net_from(ck, "critic", &ck.meta.critic_sizes)?;
        let obs_dim = obs_dim_for_mode(&mode);
        if critic_net.input_dim() != critic_dim_for(mode.n_agents, obs_dim) {
            return Err(Error::LayoutMismatch {
                field: "critic input layer".into(),
                expected: format!("{}", critic_dim_for(mode.n_agents, obs_dim)),
                found: format!("{}", critic_net.input_dim()),
            });
        }
        let critic = CentralizedCritic::new(critic_net, mode.n_agents, obs_dim)?;
        let handle = SharedPolicyHandle { policy, critic };
        let mut learner = LearnerState::new(&handle.policy, &handle.critic.net, cfg.ppo.lr);
        learner.policy_adam = adam_from(
            ck,
            "actor_adam",
            handle.policy.mean_net.param_count() + handle.policy.action_dim(),
            cfg.ppo.lr,
            ck.meta.policy_adam_step,
        )?;
        learner.critic_adam = adam_from(
            ck,
            "critic_adam",
            handle.critic.net.param_count(),
            cfg.ppo.lr,
            ck.meta.critic_adam_step,
        )?;
        let disc = net_from(ck, "disc", &ck.meta.disc_sizes)?;
        let disc_adam = adam_from(
            ck,
            "disc_adam",
            disc.param_count(),
            cfg.amp.disc_lr,
            ck.meta.disc_adam_step,
        )?;
        let demo_buf = buffer_from(ck, "demo", ck.meta.demo_buf)?;
        let agent_buf = buffer_from(ck, "agent", ck.meta.agent_buf)?;
        let pool = EnvPool::restore(
            mode,
            cfg.physics.clone(),
            cfg.rewards.clone(),
            cfg.ablation,
            cfg.run.seed,
            &ck.meta.envs,
        )?;
        let mut rng = stream_rng(cfg.run.seed, STREAM_TRAINER);
        rng.set_word_pos(
            ((ck.meta.trainer_rng_word_pos[0] as u128) << 64)
                | ck.meta.trainer_rng_word_pos[1] as u128,
        );
        Ok(Self {
            cfg: cfg.clone(),
            phase,
            handle,
            learner,
            disc,
            disc_adam,
            demo_buf,
            agent_buf,
            pool,
            rng,
            updates_done: ck.meta.updates_done,
            env_steps_done: ck.meta.env_steps_done,
        })
    }
}

fn fresh_networks(cfg: &RunConfig, mode: &TaskMode) -> Result<(SharedPolicyHandle<f32>, MlpNet<f32>)> {
    let obs_dim = obs_dim_for_mode(mode);
    let critic_dim = critic_dim_for(mode.n_agents, obs_dim);
    let mut actor_sizes = vec![obs_dim];
    actor_sizes.extend_from_slice(&cfg.net.actor_hidden);
    actor_sizes.push(ACTION_DIM);
    let mut critic_sizes = vec![critic_dim];
    critic_sizes.extend_from_slice(&cfg.net.critic_hidden);
    critic_sizes.push(1);
    let mut disc_sizes = vec![DISC_INPUT_DIM];
    disc_sizes.extend_from_slice(&cfg.net.disc_hidden);
    disc_sizes.push(1);

    let master = cfg.run.seed;
    let mean_net = MlpNet::random(
        &actor_sizes,
        &mut stream_rng(master, STREAM_ACTOR),
        cfg.net.init_gain,
    )?;
    let policy = GaussianPolicy::new(mean_net, cfg.net.init_log_std);
    let critic_net = MlpNet::random(
        &critic_sizes,
        &mut stream_rng(master, STREAM_CRITIC),
        cfg.net.init_gain,
    )?;
    let critic = CentralizedCritic::new(critic_net, mode.n_agents, obs_dim)?;
    let disc = MlpNet::random(
        &disc_sizes,
        &mut stream_rng(master, STREAM_DISC),
        cfg.net.init_gain,
    )?;
    Ok((SharedPolicyHandle { policy, critic }, disc))
}

/// Scripted demonstrations. Style is always single-carrier motion, so team
/// runs still collect their prior from the single-agent task at the same
/// physics; ranges follow the configured mode when it is single-agent.
pub fn demos_for(cfg: &RunConfig, mode: &TaskMode) -> Result<DemoBuffer> {
    let demo_mode = if mode.n_agents == 1 {
        mode.clone()
    } else {
        TaskMode::single()
    };
    let opts = OracleOptions {
        allow_reverse: !cfg.ablation.no_reverse_walk,
    };
    generate_demos(
        cfg.amp.demo_episodes,
        &demo_mode,
        &cfg.physics,
        &opts,
        crate::rng::derive_seed(cfg.run.seed, STREAM_DEMOS),
    )
}

fn check_layouts(ck: &Checkpoint) -> Result<()> {
    if ck.obs_layout != OBS_LAYOUT_VERSION {
        return Err(Error::LayoutMismatch {
            field: "observation layout".into(),
            expected: OBS_LAYOUT_VERSION.into(),
            found: ck.obs_layout.clone(),
        });
    }
    if ck.critic_layout != CRITIC_LAYOUT_VERSION {
        return Err(Error::LayoutMismatch {
            field: "critic layout".into(),
            expected: CRITIC_LAYOUT_VERSION.into(),
            found: ck.critic_layout.clone(),
        });
    }
    Ok(())
}

fn net_from(ck: &Checkpoint, name: &str, sizes: &[usize]) -> Result<MlpNet<f32>> {
    let mut net = MlpNet::new(sizes)?;
    let params = ck.array(&format!("{name}.params"))?;
    if params.len() != net.param_count() {
        return Err(Error::Checkpoint(format!(
            "array `{name}.params` holds {} values but the {sizes:?} network needs {}",
            params.len(),
            net.param_count()
        )));
    }
    net.params_mut().copy_from_slice(params);
    Ok(net)
}

fn policy_from(ck: &Checkpoint) -> Result<GaussianPolicy<f32>> {
    let mean_net = net_from(ck, "actor", &ck.meta.actor_sizes)?;
    let log_std = ck.array("actor.log_std")?;
    if log_std.len() != mean_net.output_dim() {
        return Err(Error::Checkpoint(format!(
            "array `actor.log_std` holds {} values for {} actions",
            log_std.len(),
            mean_net.output_dim()
        )));
    }
    let mut policy = GaussianPolicy::new(mean_net, 0.0);
    policy.log_std.copy_from_slice(log_std);
    policy.clamp_log_std();
    Ok(policy)
}

fn adam_from(ck: &Checkpoint, name: &str, count: usize, lr: f64, step: u64) -> Result<AdamState<f32>> {
    let m = ck.array(&format!("{name}.m"))?;
    let v = ck.array(&format!("{name}.v"))?;
    if m.len() != count || v.len() != count {
        return Err(Error::Checkpoint(format!(
            "optimizer arrays `{name}.m/.v` hold {}/{} values for {count} parameters",
            m.len(),
            v.len()
        )));
    }
    let mut adam = AdamState::new(count, lr);
    adam.m.copy_from_slice(m);
    adam.v.copy_from_slice(v);
    adam.step = step;
    Ok(adam)
}

fn buffer_arrays(buf: &DemoBuffer) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let mut s = Vec::with_capacity(buf.len() * SELF_STATE_DIM);
    let mut next = Vec::with_capacity(buf.len() * SELF_STATE_DIM);
    let mut phase = Vec::with_capacity(buf.len());
    for p in buf.iter() {
        s.extend_from_slice(&p.s_t);
        next.extend_from_slice(&p.s_next);
        phase.push(p.phase.index() as f32);
    }
    (s, next, phase)
}

fn buffer_from(ck: &Checkpoint, name: &str, meta: BufMeta) -> Result<DemoBuffer> {
    let s = ck.array(&format!("{name}.s"))?;
    let next = ck.array(&format!("{name}.next"))?;
    let phase = ck.array(&format!("{name}.phase"))?;
    if s.len() != meta.len * SELF_STATE_DIM || next.len() != s.len() || phase.len() != meta.len {
        return Err(Error::Checkpoint(format!(
            "buffer `{name}` arrays do not match its recorded length {}",
            meta.len
        )));
    }
    let mut pairs = Vec::with_capacity(meta.len);
    for i in 0..meta.len {
        let mut s_t = [0.0f32; SELF_STATE_DIM];
        let mut s_next = [0.0f32; SELF_STATE_DIM];
        s_t.copy_from_slice(&s[i * SELF_STATE_DIM..(i + 1) * SELF_STATE_DIM]);
        s_next.copy_from_slice(&next[i * SELF_STATE_DIM..(i + 1) * SELF_STATE_DIM]);
        pairs.push(TransitionPair {
            s_t,
            s_next,
            phase: DemoPhase::from_index(phase[i] as u8)?,
        });
    }
    DemoBuffer::from_parts(meta.capacity, pairs, meta.write)
}

/// Artifact paths produced by a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub curves: PathBuf,
    pub updates: u64,
    pub env_steps: u64,
}

pub const METRICS_COLUMNS: [&str; 18] = [
    "update",
    "env_steps",
    "mean_task_reward",
    "mean_style_reward",
    "mean_combined_reward",
    "mean_held_reward",
    "mean_carry_reward",
    "episodes",
    "successes",
    "policy_loss",
    "value_loss",
    "entropy",
    "clip_fraction",
    "approx_kl",
    "aborted",
    "disc_bce",
    "disc_grad_penalty",
    "steps_per_second",
];

pub const CURVE_COLUMNS: [&str; 5] = [
    "update",
    "env_steps",
    "success_rate",
    "mean_carry_reward",
    "mean_held_reward",
];

fn metrics_row(log: &UpdateLog) -> Vec<String> {
    vec![
        log.update.to_string(),
        log.env_steps.to_string(),
        num(log.stats.mean_task_reward),
        num(log.stats.mean_style_reward),
        num(log.stats.mean_combined_reward),
        num(log.stats.mean_held_reward),
        num(log.stats.mean_carry_reward),
        log.stats.episodes_finished.to_string(),
        log.stats.successes.to_string(),
        num(log.report.policy_loss),
        num(log.report.value_loss),
        num(log.report.entropy),
        num(log.report.clip_fraction),
        num(log.report.approx_kl),
        u8::from(log.report.aborted).to_string(),
        num(log.disc.bce),
        num(log.disc.grad_penalty),
        num(log.stats.steps_per_second),
    ]
}

fn curve_row(log: &UpdateLog) -> Vec<String> {
    let rate = if log.stats.episodes_finished > 0 {
        log.stats.successes as f64 / log.stats.episodes_finished as f64
    } else {
        0.0
    };
    vec![
        log.update.to_string(),
        log.env_steps.to_string(),
        num(rate),
        num(log.stats.mean_carry_reward),
        num(log.stats.mean_held_reward),
    ]
}

/// Drive a trainer to its configured step budget, writing `metrics.csv`,
/// `curves.csv`, and `checkpoint.ckpt` under `out_dir`. Optionally reports
/// each update through `on_update`.
pub fn run_training(
    state: &mut TrainerState,
    out_dir: &Path,
    mut on_update: Option<&mut dyn FnMut(&UpdateLog)>,
) -> Result<RunArtifacts> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let hash = state.cfg.hash();
    let metrics_path = out_dir.join("metrics.csv");
    let curves_path = out_dir.join("curves.csv");
    let ckpt_path = out_dir.join("checkpoint.ckpt");
    let mut metrics = CsvSink::create(&metrics_path, "metrics-v1", &hash, &METRICS_COLUMNS)?;
    let mut curves = CsvSink::create(&curves_path, "curves-v1", &hash, &CURVE_COLUMNS)?;

    while state.env_steps_done < state.cfg.run.total_env_steps {
        let log = state.update_once()?;
        metrics.row(&metrics_row(&log))?;
        if log.update % state.cfg.run.curve_interval == 0 {
            curves.row(&curve_row(&log))?;
        }
        if log.update % state.cfg.run.checkpoint_interval == 0 {
            state.to_checkpoint()?.save(&ckpt_path)?;
        }
        if let Some(cb) = on_update.as_deref_mut() {
            cb(&log);
        }
    }
    state.to_checkpoint()?.save(&ckpt_path)?;
    Ok(RunArtifacts {
        checkpoint: ckpt_path,
        metrics: metrics_path,
        curves: curves_path,
        updates: state.updates_done,
        env_steps: state.env_steps_done,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// A configuration small enough to update in milliseconds.
    fn tiny_cfg() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.run.seed = 5;
        cfg.run.envs = 4;
        cfg.run.horizon = 8;
        cfg.run.workers = 1;
        cfg.run.total_env_steps = 4 * 8 * 3;
        cfg.run.checkpoint_interval = 2;
        cfg.run.curve_interval = 1;
        cfg.net.actor_hidden = vec![16];
        cfg.net.critic_hidden = vec![16];
        cfg.net.disc_hidden = vec![16];
        cfg.ppo.ppo_minibatch = 32;
        cfg.ppo.amp_minibatch = 16;
        cfg.ppo.epochs = 2;
        cfg.amp.demo_episodes = 2;
        cfg.amp.disc_updates_per_iter = 1;
        cfg.validate().unwrap();
        cfg
    }

    #[test]
    fn single_phase_updates_and_logs() {
        let cfg = tiny_cfg();
        let mut t = TrainerState::new_single(&cfg).unwrap();
        assert!(t.demo_buf.len() > 100, "demos recorded: {}", t.demo_buf.len());
        let log = t.update_once().unwrap();
        assert_eq!(log.update, 1);
        assert_eq!(log.env_steps, 32);
        assert!(log.report.approx_kl.is_finite());
        assert!(!log.report.aborted);
        assert!(log.stats.mean_style_reward.is_finite());
        // The discriminator saw enough samples to train.
        assert!(!log.disc.skipped);
        assert!(log.disc.bce.is_finite());
    }

    #[test]
    fn resume_is_bit_exact() {
        let cfg = tiny_cfg();
        let mut a = TrainerState::new_single(&cfg).unwrap();
        for _ in 0..2 {
            a.update_once().unwrap();
        }
        let saved = a.to_checkpoint().unwrap();
        let bytes_at_save = saved.to_bytes().unwrap();

        // Branch B restarts from the serialized bytes.
        let reread = Checkpoint::from_bytes(&bytes_at_save).unwrap();
        let mut b = TrainerState::from_checkpoint(&cfg, &reread).unwrap();

        for _ in 0..2 {
            a.update_once().unwrap();
            b.update_once().unwrap();
        }
        let fa = a.to_checkpoint().unwrap().to_bytes().unwrap();
        let fb = b.to_checkpoint().unwrap().to_bytes().unwrap();
        assert_eq!(fa, fb, "resumed trajectory diverged from the original");
    }

    #[test]
    fn transfer_starts_a_team_from_a_single_checkpoint() {
        let cfg = tiny_cfg();
        let mut single = TrainerState::new_single(&cfg).unwrap();
        single.update_once().unwrap();
        let ck = single.to_checkpoint().unwrap();

        let mut cfg2 = tiny_cfg();
        cfg2.task.mode = "two_agent".into();
        let mut team = TrainerState::new_multi(&cfg2, &ck).unwrap();
        assert_eq!(team.handle.n_agents(), 2);
        assert_eq!(team.phase, Phase::Multi);
        // Actor copied verbatim; critic widened.
        assert_eq!(team.handle.policy, single.handle.policy);
        assert!(team.handle.critic.input_dim() > single.handle.critic.input_dim());
        // Style machinery carries over.
        assert_eq!(team.disc, single.disc);
        assert_eq!(team.demo_buf.len(), single.demo_buf.len());
        let log = team.update_once().unwrap();
        assert!(log.report.approx_kl.is_finite());
    }

    #[test]
    fn transfer_rejects_a_team_checkpoint_and_scratch_builds_fresh() {
        let mut cfg2 = tiny_cfg();
        cfg2.task.mode = "two_agent".into();
        let mut scratch = TrainerState::new_multi_scratch(&cfg2).unwrap();
        let ck = scratch.to_checkpoint().unwrap();
        let err = TrainerState::new_multi(&cfg2, &ck).unwrap_err();
        assert!(err.to_string().contains("phase-one"), "{err}");
        let log = scratch.update_once().unwrap();
        assert!(log.report.approx_kl.is_finite());
    }

    #[test]
    fn wrong_config_hash_is_refused_on_resume() {
        let cfg = tiny_cfg();
        let t = TrainerState::new_single(&cfg).unwrap();
        let ck = t.to_checkpoint().unwrap();
        let mut other = tiny_cfg();
        other.run.seed = 6;
        let err = TrainerState::from_checkpoint(&other, &ck).unwrap_err();
        assert!(err.to_string().contains("configuration"), "{err}");
    }

    #[test]
    fn run_training_writes_all_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_cfg();
        let mut t = TrainerState::new_single(&cfg).unwrap();
        let mut seen = 0usize;
        let mut cb = |_: &UpdateLog| seen += 1;
        let arts = run_training(&mut t, dir.path(), Some(&mut cb)).unwrap();
        assert_eq!(arts.updates, 3);
        assert_eq!(seen, 3);
        assert_eq!(arts.env_steps, 96);

        let metrics = crate::report::CsvTable::load(&arts.metrics).unwrap();
        assert_eq!(metrics.format_tag, "metrics-v1");
        assert_eq!(metrics.config_hash, cfg.hash());
        assert_eq!(metrics.rows.len(), 3);
        let curves = crate::report::CsvTable::load(&arts.curves).unwrap();
        assert_eq!(curves.rows.len(), 3);

        let ck = Checkpoint::load(&arts.checkpoint).unwrap();
        assert_eq!(ck.meta.updates_done, 3);
        let resumed = TrainerState::from_checkpoint(&cfg, &ck).unwrap();
        assert_eq!(resumed.updates_done, 3);
        assert_eq!(resumed.env_steps_done, 96);
    }
}
