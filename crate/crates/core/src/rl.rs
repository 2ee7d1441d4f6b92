//! On-policy learner core: transition batches, generalized advantage
//! estimation with termination-aware bootstrapping, and the clipped-surrogate
//! update engine shared by the single-agent and multi-agent trainers.

use crate::error::{Error, Result};
use crate::nn::{
    adam_step, gaussian_log_prob, gaussian_log_prob_grads, AdamState, GaussianPolicy, MlpNet,
};
use crate::sim::TerminationKind;
use num_traits::Float;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Learner hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lam: f64,
    pub clip: f64,
    pub lr: f64,
    pub ppo_minibatch: usize,
    pub amp_minibatch: usize,
    pub epochs: usize,
    pub entropy_coef: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lam: 0.95,
            clip: 0.2,
            lr: 2e-5,
            ppo_minibatch: 16_384,
            amp_minibatch: 4_096,
            epochs: 5,
            entropy_coef: 0.0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let checks: &[(&str, bool)] = &[
            ("ppo.gamma", self.gamma > 0.0 && self.gamma <= 1.0),
            ("ppo.lam", self.lam > 0.0 && self.lam <= 1.0),
            ("ppo.clip", self.clip > 0.0 && self.clip.is_finite()),
            ("ppo.lr", self.lr > 0.0 && self.lr.is_finite()),
            ("ppo.ppo_minibatch", self.ppo_minibatch >= 1),
            ("ppo.amp_minibatch", self.amp_minibatch >= 1),
            ("ppo.epochs", self.epochs >= 1),
            (
                "ppo.entropy_coef",
                self.entropy_coef >= 0.0 && self.entropy_coef.is_finite(),
            ),
        ];
        for (path, ok) in checks {
            if !ok {
                return Err(Error::config(*path, "out of range"));
            }
        }
        Ok(())
    }
}

/// Flat rollout storage, ordered (env index, step): index = env * horizon + t.
///
/// `critic_inputs` equals `observations` for a decentralized critic; the
/// centralized critic stores its wider per-agent view there instead.
/// `next_values` holds V of the true successor state — the value of the
/// pre-reset state on terminal steps — so timeout truncation can bootstrap.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionBatch {
    pub obs_dim: usize,
    pub critic_dim: usize,
    pub act_dim: usize,
    pub envs: usize,
    pub horizon: usize,
    pub observations: Vec<f32>,
    pub critic_inputs: Vec<f32>,
    pub actions: Vec<f32>,
    pub log_probs: Vec<f32>,
    pub rewards: Vec<f32>,
    pub values: Vec<f32>,
    pub next_values: Vec<f32>,
    pub terminations: Vec<TerminationKind>,
}

impl TransitionBatch {
    pub fn new(
        obs_dim: usize,
        critic_dim: usize,
        act_dim: usize,
        envs: usize,
        horizon: usize,
    ) -> Self {
        let n = envs * horizon;
        Self {
            obs_dim,
            critic_dim,
            act_dim,
            envs,
            horizon,
            observations: vec![0.0; n * obs_dim],
            critic_inputs: vec![0.0; n * critic_dim],
            actions: vec![0.0; n * act_dim],
            log_probs: vec![0.0; n],
            rewards: vec![0.0; n],
            values: vec![0.0; n],
            next_values: vec![0.0; n],
            terminations: vec![TerminationKind::None; n],
        }
    }

    pub fn n(&self) -> usize {
        self.envs * self.horizon
    }

    pub fn idx(&self, env: usize, t: usize) -> usize {
        env * self.horizon + t
    }

    pub fn done(&self, index: usize) -> bool {
        self.terminations[index] != TerminationKind::None
    }

    pub fn obs(&self, index: usize) -> &[f32] {
        &self.observations[index * self.obs_dim..(index + 1) * self.obs_dim]
    }

    pub fn critic_input(&self, index: usize) -> &[f32] {
        &self.critic_inputs[index * self.critic_dim..(index + 1) * self.critic_dim]
    }

    pub fn action(&self, index: usize) -> &[f32] {
        &self.actions[index * self.act_dim..(index + 1) * self.act_dim]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        let shapes_ok = self.observations.len() == n * self.obs_dim
            && self.critic_inputs.len() == n * self.critic_dim
            && self.actions.len() == n * self.act_dim
            && self.log_probs.len() == n
            && self.rewards.len() == n
            && self.values.len() == n
            && self.next_values.len() == n
            && self.terminations.len() == n;
        if !shapes_ok {
            return Err(Error::contract("transition batch shape mismatch"));
        }
        let finite = self
            .rewards
            .iter()
            .chain(&self.values)
            .chain(&self.next_values)
            .chain(&self.log_probs)
            .all(|x| x.is_finite());
        if !finite {
            return Err(Error::contract("non-finite values in transition batch"));
        }
        Ok(())
    }

    /// Stack per-agent batches into one batch of `agents * envs` virtual
    /// environments. Rewards must be identical across agents at every step
    /// (the shared-reward contract).
    pub fn merge_agents(batches: &[TransitionBatch]) -> Result<TransitionBatch> {
        let first = batches
            .first()
            .ok_or_else(|| Error::contract("no batches to merge"))?;
        let mut out = TransitionBatch::new(
            first.obs_dim,
            first.critic_dim,
            first.act_dim,
            first.envs * batches.len(),
            first.horizon,
        );
        for (a, b) in batches.iter().enumerate() {
            if (b.obs_dim, b.critic_dim, b.act_dim, b.envs, b.horizon)
                != (
                    first.obs_dim,
                    first.critic_dim,
                    first.act_dim,
                    first.envs,
                    first.horizon,
                )
            {
                return Err(Error::contract("per-agent batch shapes differ"));
            }
            for (i, (x, y)) in first.rewards.iter().zip(&b.rewards).enumerate() {
                if x != y {
                    return Err(Error::contract(format!(
                        "shared-reward violation: agents 0 and {a} disagree at index {i}"
                    )));
                }
            }
            let n = b.n();
            let at = a * n;
            out.observations[at * b.obs_dim..(at + n) * b.obs_dim]
                .copy_from_slice(&b.observations);
            out.critic_inputs[at * b.critic_dim..(at + n) * b.critic_dim]
                .copy_from_slice(&b.critic_inputs);
            out.actions[at * b.act_dim..(at + n) * b.act_dim].copy_from_slice(&b.actions);
            out.log_probs[at..at + n].copy_from_slice(&b.log_probs);
            out.rewards[at..at + n].copy_from_slice(&b.rewards);
            out.values[at..at + n].copy_from_slice(&b.values);
            out.next_values[at..at + n].copy_from_slice(&b.next_values);
            out.terminations[at..at + n].copy_from_slice(&b.terminations);
        }
        Ok(out)
    }
}

/// Generalized advantage estimation over the batch.
///
/// Termination semantics: `None` chains normally; `Timeout` ends the episode
/// but bootstraps from the value of the truncated state (the cutoff is not a
/// real terminal); `Ket` and `Success` are absorbing (no bootstrap). Returns
/// are advantages plus values.
pub fn compute_gae(batch: &TransitionBatch, gamma: f64, lam: f64) -> (Vec<f64>, Vec<f64>) {
    let n = batch.n();
    let mut adv = vec![0.0f64; n];
    let mut ret = vec![0.0f64; n];
    for env in 0..batch.envs {
        let mut gae = 0.0f64;
        for t in (0..batch.horizon).rev() {
            let i = batch.idx(env, t);
            let v = batch.values[i] as f64;
            let r = batch.rewards[i] as f64;
            let (bootstrap, done) = match batch.terminations[i] {
                TerminationKind::None => (batch.next_values[i] as f64, false),
                TerminationKind::Timeout => (batch.next_values[i] as f64, true),
                TerminationKind::Ket | TerminationKind::Success | TerminationKind::Fault => {
                    (0.0, true)
                }
            };
            let delta = r + gamma * bootstrap - v;
            gae = delta + if done { 0.0 } else { gamma * lam * gae };
            adv[i] = gae;
            ret[i] = gae + v;
        }
    }
    (adv, ret)
}

/// Scalars from one update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateReport {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    /// Set when a non-finite loss/gradient aborted the update; parameters
    /// were restored to their pre-update values.
    pub aborted: bool,
}

/// Gradients of the clipped-surrogate + entropy objective and the value
/// regression over one minibatch of indices. Exposed at crate level so the
/// finite-difference tests can check it directly.
pub(crate) struct MinibatchGrads<F: Float> {
    pub policy: Vec<F>,   // mean-net grads followed by log-std grads
    pub critic: Vec<F>,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

pub(crate) fn minibatch_grads<F: Float>(
    policy: &GaussianPolicy<F>,
    critic: &MlpNet<F>,
    batch: &TransitionBatch,
    indices: &[usize],
    advantages: &[f64],
    returns: &[f64],
    cfg: &PpoConfig,
) -> Result<MinibatchGrads<F>> {
    let mean_params = policy.mean_net.param_count();
    let act_dim = policy.action_dim();
    let mut pg = vec![F::zero(); mean_params + act_dim];
    let mut cg = vec![F::zero(); critic.param_count()];
    let inv_n = 1.0 / indices.len() as f64;
    let mut policy_loss = 0.0;
    let mut value_loss = 0.0;
    let mut clipped = 0usize;
    let mut approx_kl = 0.0;

    for &i in indices {
        let obs: Vec<F> = batch.obs(i).iter().map(|x| F::from(*x).unwrap()).collect();
        let action: Vec<F> = batch
            .action(i)
            .iter()
            .map(|x| F::from(*x).unwrap())
            .collect();
        let mean = policy.mean_net.forward(&obs)?;
        let logp_new = gaussian_log_prob(&mean, &policy.log_std, &action)
            .to_f64()
            .unwrap();
        let logp_old = batch.log_probs[i] as f64;
        let a = advantages[i];
        let rho = (logp_new - logp_old).exp();
        let surr1 = rho * a;
        let surr2 = rho.clamp(1.0 - cfg.clip, 1.0 + cfg.clip) * a;
        policy_loss -= surr1.min(surr2) * inv_n;
        approx_kl += (logp_old - logp_new) * inv_n;
        if (rho - 1.0).abs() > cfg.clip {
            clipped += 1;
        }

        // d(-min)/d logp_new: when the unclipped branch is active the
        // derivative is -A rho; when the clipped branch binds the clamp is
        // saturated and the derivative vanishes.
        let coef = if surr1 <= surr2 { -a * rho } else { 0.0 };
        if coef != 0.0 {
            let (d_mean, d_log_std) = gaussian_log_prob_grads(&mean, &policy.log_std, &action);
            let upstream: Vec<F> = d_mean
                .iter()
                .map(|g| *g * F::from(coef * inv_n).unwrap())
                .collect();
            let (g, _) = policy.mean_net.backward(&obs, &upstream)?;
            for (acc, gi) in pg[..mean_params].iter_mut().zip(&g) {
                *acc = *acc + *gi;
            }
            for (acc, gi) in pg[mean_params..].iter_mut().zip(&d_log_std) {
                *acc = *acc + *gi * F::from(coef * inv_n).unwrap();
            }
        }
        // Entropy bonus: dH/d log_std = 1 per dimension.
        if cfg.entropy_coef > 0.0 {
            let c = F::from(-cfg.entropy_coef * inv_n).unwrap();
            for acc in pg[mean_params..].iter_mut() {
                *acc = *acc + c;
            }
        }

        let ci: Vec<F> = batch
            .critic_input(i)
            .iter()
            .map(|x| F::from(*x).unwrap())
            .collect();
        let v = critic.forward(&ci)?[0].to_f64().unwrap();
        let err = v - returns[i];
        value_loss += err * err * inv_n;
        let (g, _) = critic.backward(&ci, &[F::from(2.0 * err * inv_n).unwrap()])?;
        for (acc, gi) in cg.iter_mut().zip(&g) {
            *acc = *acc + *gi;
        }
    }

    let entropy = policy.entropy().to_f64().unwrap();
    policy_loss -= cfg.entropy_coef * entropy;
    Ok(MinibatchGrads {
        policy: pg,
        critic: cg,
        policy_loss,
        value_loss,
        clip_fraction: clipped as f64 * inv_n,
        approx_kl,
    })
}

/// Optimizer state for one actor-critic pair: the policy vector is the mean
/// network parameters followed by the per-action log-std entries.
#[derive(Debug, Clone)]
pub struct LearnerState<F: Float> {
    pub policy_adam: AdamState<F>,
    pub critic_adam: AdamState<F>,
}

impl<F: Float> LearnerState<F> {
    pub fn new(policy: &GaussianPolicy<F>, critic: &MlpNet<F>, lr: f64) -> Self {
        Self {
            policy_adam: AdamState::new(policy.mean_net.param_count() + policy.action_dim(), lr),
            critic_adam: AdamState::new(critic.param_count(), lr),
        }
    }
}

/// The shared update engine: GAE, per-update advantage normalization, then
/// shuffled minibatch epochs of clipped-surrogate policy steps and value
/// regression. Both the single-agent and the multi-agent trainers call this;
/// they differ only in how the batch was assembled.
pub fn update_core<F: Float>(
    policy: &mut GaussianPolicy<F>,
    critic: &mut MlpNet<F>,
    state: &mut LearnerState<F>,
    batch: &TransitionBatch,
    cfg: &PpoConfig,
    rng: &mut ChaCha8Rng,
) -> Result<UpdateReport> {
    cfg.validate()?;
    batch.validate()?;
    if batch.obs_dim != policy.mean_net.input_dim()
        || batch.critic_dim != critic.input_dim()
        || batch.act_dim != policy.action_dim()
    {
        return Err(Error::contract("batch dimensions do not match networks"));
    }

    let (adv_raw, returns) = compute_gae(batch, cfg.gamma, cfg.lam);
    let n = adv_raw.len();
    let mean = adv_raw.iter().sum::<f64>() / n as f64;
    let var = adv_raw.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64;
    let std = var.sqrt().max(1e-8);
    let advantages: Vec<f64> = adv_raw.iter().map(|a| (a - mean) / std).collect();

    // Snapshot for restoration if the update goes non-finite.
    let policy_snapshot = (policy.mean_net.params().to_vec(), policy.log_std.clone());
    let critic_snapshot = critic.params().to_vec();
    let state_snapshot = (state.policy_adam.clone(), state.critic_adam.clone());

    let mean_params = policy.mean_net.param_count();
    let mut report = UpdateReport {
        policy_loss: 0.0,
        value_loss: 0.0,
        entropy: policy.entropy().to_f64().unwrap(),
        clip_fraction: 0.0,
        approx_kl: 0.0,
        aborted: false,
    };
    let mut minibatches = 0usize;

    let mut indices: Vec<usize> = (0..n).collect();
    'epochs: for _ in 0..cfg.epochs {
        indices.shuffle(rng);
        for chunk in indices.chunks(cfg.ppo_minibatch.min(n)) {
            let grads = minibatch_grads(policy, critic, batch, chunk, &advantages, &returns, cfg)?;
            let pg_finite = grads.policy.iter().all(|g| g.is_finite());
            let cg_finite = grads.critic.iter().all(|g| g.is_finite());
            if !(pg_finite && cg_finite && grads.policy_loss.is_finite()) {
                report.aborted = true;
                break 'epochs;
            }
            // Apply the policy step over the concatenated parameter vector.
            let mut flat: Vec<F> = policy
                .mean_net
                .params()
                .iter()
                .copied()
                .chain(policy.log_std.iter().copied())
                .collect();
            adam_step(&mut flat, &grads.policy, &mut state.policy_adam)?;
            policy
                .mean_net
                .params_mut()
                .copy_from_slice(&flat[..mean_params]);
            policy.log_std.copy_from_slice(&flat[mean_params..]);
            policy.clamp_log_std();
            adam_step(critic.params_mut(), &grads.critic, &mut state.critic_adam)?;

            report.policy_loss += grads.policy_loss;
            report.value_loss += grads.value_loss;
            report.clip_fraction += grads.clip_fraction;
            report.approx_kl += grads.approx_kl;
            minibatches += 1;
        }
    }

    if report.aborted {
        policy.mean_net.params_mut().copy_from_slice(&policy_snapshot.0);
        policy.log_std = policy_snapshot.1;
        critic.params_mut().copy_from_slice(&critic_snapshot);
        state.policy_adam = state_snapshot.0;
        state.critic_adam = state_snapshot.1;
        return Ok(report);
    }
    if minibatches > 0 {
        let inv = 1.0 / minibatches as f64;
        report.policy_loss *= inv;
        report.value_loss *= inv;
        report.clip_fraction *= inv;
        report.approx_kl *= inv;
    }
    report.entropy = policy.entropy().to_f64().unwrap();
    Ok(report)
}

/// Single-agent PPO update: the critic reads the same observation as the
/// actor.
pub fn ppo_update<F: Float>(
    policy: &mut GaussianPolicy<F>,
    critic: &mut MlpNet<F>,
    state: &mut LearnerState<F>,
    batch: &TransitionBatch,
    cfg: &PpoConfig,
    rng: &mut ChaCha8Rng,
) -> Result<UpdateReport> {
    if batch.critic_dim != batch.obs_dim {
        return Err(Error::contract(
            "single-agent batch must use the observation as the critic input",
        ));
    }
    update_core(policy, critic, state, batch, cfg, rng)
}
