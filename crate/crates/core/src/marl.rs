//! Multi-agent fine-tuning: a centralized critic over the shared global
//! state, parameter-shared actors, transfer initialization from a
//! single-agent checkpoint, and the MAPPO update built on the same engine as
//! single-agent PPO.

use crate::error::{Error, Result};
use crate::nn::{GaussianPolicy, MlpNet};
use crate::obs::critic_input_dim;
use crate::rl::{update_core, LearnerState, PpoConfig, TransitionBatch, UpdateReport};
use num_traits::Float;
use rand_chacha::ChaCha8Rng;

/// Version tag for the centralized-critic input layout. Bump when the
/// concatenation order (observation, shared state, other agents' previous
/// actions) or any block width changes.
pub const CRITIC_LAYOUT_VERSION: &str = "critic-v1";

/// Value network over the concatenated per-agent critic input. For a single
/// agent the input degenerates to the bare observation, which keeps the
/// one-agent update byte-compatible with plain PPO.
#[derive(Debug, Clone, PartialEq)]
pub struct CentralizedCritic<F: Float> {
    pub net: MlpNet<F>,
    pub n_agents: usize,
    pub obs_dim: usize,
}

/// Width of the critic input for `n_agents` actors observing `obs_dim`
/// channels each.
pub fn critic_dim_for(n_agents: usize, obs_dim: usize) -> usize {
    if n_agents == 1 {
        obs_dim
    } else {
        critic_input_dim(n_agents, obs_dim)
    }
}

impl<F: Float> CentralizedCritic<F> {
    pub fn new(net: MlpNet<F>, n_agents: usize, obs_dim: usize) -> Result<Self> {
        let want = critic_dim_for(n_agents, obs_dim);
        if net.input_dim() != want {
            return Err(Error::contract(format!(
                "critic input layer: expected {want} inputs for {n_agents} agents \
                 with {obs_dim}-channel observations, network has {}",
                net.input_dim()
            )));
        }
        if net.output_dim() != 1 {
            return Err(Error::contract(
                "critic output layer: expected a scalar value head",
            ));
        }
        Ok(Self {
            net,
            n_agents,
            obs_dim,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn value(&self, critic_input: &[F]) -> Result<F> {
        Ok(self.net.forward(critic_input)?[0])
    }
}

/// One actor and one critic shared by every agent. Execution is
/// decentralized by construction: the actor's forward pass takes only the
/// agent's own observation, so there is no access path from the policy to
/// the global state the critic sees.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedPolicyHandle<F: Float> {
    pub policy: GaussianPolicy<F>,
    pub critic: CentralizedCritic<F>,
}

impl<F: Float> SharedPolicyHandle<F> {
    pub fn n_agents(&self) -> usize {
        self.critic.n_agents
    }
}

/// Build the multi-agent handle from single-agent networks.
///
/// The actor is copied verbatim, so its outputs are bit-identical to the
/// source policy; the same copy serves any team size. The critic's first
/// layer keeps the columns that read the observation and zero-fills the
/// columns for the new global-state and previous-action blocks, so the
/// centralized value of any state equals the single-agent value of the
/// observation at initialization.
pub fn transfer_init<F: Float>(
    policy: &GaussianPolicy<F>,
    single_critic: &MlpNet<F>,
    n_agents: usize,
) -> Result<SharedPolicyHandle<F>> {
    if !matches!(n_agents, 1 | 2 | 4) {
        return Err(Error::config("n_agents", "must be 1, 2, or 4"));
    }
    let obs_dim = policy.mean_net.input_dim();
    if single_critic.input_dim() != obs_dim {
        return Err(Error::contract(format!(
            "critic input layer: single-agent critic reads {} channels but the \
             actor observes {obs_dim}",
            single_critic.input_dim()
        )));
    }
    if single_critic.output_dim() != 1 {
        return Err(Error::contract(
            "critic output layer: expected a scalar value head",
        ));
    }

    let new_in = critic_dim_for(n_agents, obs_dim);
    let mut sizes = single_critic.layer_sizes().to_vec();
    sizes[0] = new_in;
    let mut net = MlpNet::new(&sizes)?;
    {
        // First layer: copy the observation columns, leave the rest zero.
        let hidden = sizes[1];
        let src = single_critic.params();
        let dst = net.params_mut();
        for row in 0..hidden {
            for col in 0..obs_dim {
                dst[row * new_in + col] = src[row * obs_dim + col];
            }
        }
        // Everything after the first weight matrix (its biases and all deeper
        // layers) is laid out identically in both networks.
        let src_tail = hidden * obs_dim;
        let dst_tail = hidden * new_in;
        dst[dst_tail..].copy_from_slice(&src[src_tail..]);
    }
    Ok(SharedPolicyHandle {
        policy: policy.clone(),
        critic: CentralizedCritic::new(net, n_agents, obs_dim)?,
    })
}

/// One MAPPO update over the union of all agents' trajectories.
///
/// All agents share the task+style reward at every step; any disagreement is
/// a contract violation and aborts before touching parameters. The merged
/// batch trains the single shared actor with centralized advantages and
/// regresses the critic over `n_agents * envs * horizon` samples per epoch.
pub fn mappo_update<F: Float>(
    handle: &mut SharedPolicyHandle<F>,
    state: &mut LearnerState<F>,
    batches: &[TransitionBatch],
    cfg: &PpoConfig,
    rng: &mut ChaCha8Rng,
) -> Result<UpdateReport> {
    if batches.len() != handle.n_agents() {
        return Err(Error::contract(format!(
            "expected {} per-agent batches, got {}",
            handle.n_agents(),
            batches.len()
        )));
    }
    let merged = TransitionBatch::merge_agents(batches)?;
    update_core(
        &mut handle.policy,
        &mut handle.critic.net,
        state,
        &merged,
        cfg,
        rng,
    )
}
