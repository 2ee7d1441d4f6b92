//! Adversarial motion prior: a discriminator trained to tell scripted
//! demonstrations from policy behavior, whose confusion becomes the style
//! reward. Demonstrations come from the scripted controller, recorded as
//! consecutive egocentric state pairs from successful episodes.

use crate::error::{Error, Result};
use crate::nn::{adam_step, AdamState, MlpNet};
use crate::obs::{self_state, SELF_STATE_DIM};
use crate::rng::derive_seed;
use crate::sim::oracle::{OracleOptions, OracleRunner, OracleStage};
use crate::sim::{step, PhysicsParams, TerminationKind};
use crate::task::{reset_world, sample_episode, TaskMode};
use num_traits::Float;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Discriminator input: two consecutive self-state blocks.
pub const DISC_INPUT_DIM: usize = 2 * SELF_STATE_DIM;

/// Clamp floor for `1 - D` inside the style reward.
pub const STYLE_CLAMP: f64 = 1e-4;

/// Which part of a demonstration episode a pair was recorded in; used by
/// the reverse-walk ablation and buffer diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DemoPhase {
    Walk,
    PickUp,
    Carry,
    PutDown,
}

impl DemoPhase {
    /// Stable small-integer encoding used by the checkpoint format.
    pub fn index(self) -> u8 {
        match self {
            DemoPhase::Walk => 0,
            DemoPhase::PickUp => 1,
            DemoPhase::Carry => 2,
            DemoPhase::PutDown => 3,
        }
    }

    pub fn from_index(i: u8) -> Result<Self> {
        match i {
            0 => Ok(DemoPhase::Walk),
            1 => Ok(DemoPhase::PickUp),
            2 => Ok(DemoPhase::Carry),
            3 => Ok(DemoPhase::PutDown),
            _ => Err(Error::contract(format!("unknown demo phase index {i}"))),
        }
    }

    fn from_stage(stage: OracleStage) -> Self {
        match stage {
            OracleStage::Start | OracleStage::Approach => DemoPhase::Walk,
            OracleStage::Grip | OracleStage::Lift => DemoPhase::PickUp,
            OracleStage::Carry => DemoPhase::Carry,
            OracleStage::Place => DemoPhase::PutDown,
            OracleStage::Retreat | OracleStage::Done => DemoPhase::Walk,
        }
    }
}

/// One discriminator sample: state at t and t+1, plus its phase label.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionPair {
    pub s_t: [f32; SELF_STATE_DIM],
    pub s_next: [f32; SELF_STATE_DIM],
    pub phase: DemoPhase,
}

impl TransitionPair {
    pub fn new(s_t: [f64; SELF_STATE_DIM], s_next: [f64; SELF_STATE_DIM], phase: DemoPhase) -> Self {
        Self {
            s_t: s_t.map(|x| x as f32),
            s_next: s_next.map(|x| x as f32),
            phase,
        }
    }

    pub fn features<F: Float>(&self) -> Vec<F> {
        self.s_t
            .iter()
            .chain(self.s_next.iter())
            .map(|x| F::from(*x).unwrap())
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.s_t.iter().chain(self.s_next.iter()).all(|x| x.is_finite())
    }
}

/// Fixed-capacity ring of transition pairs with uniform sampling. Serves as
/// both the demonstration store and the policy's own transition buffer.
#[derive(Debug, Clone)]
pub struct DemoBuffer {
    pairs: Vec<TransitionPair>,
    capacity: usize,
    write: usize,
}

impl DemoBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            pairs: Vec::new(),
            capacity,
            write: 0,
        }
    }

    pub fn push(&mut self, pair: TransitionPair) {
        if self.pairs.len() < self.capacity {
            self.pairs.push(pair);
        } else {
            self.pairs[self.write] = pair;
            self.write = (self.write + 1) % self.capacity;
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, index: usize) -> &TransitionPair {
        &self.pairs[index]
    }

    pub fn iter(&self) -> impl Iterator<Item = &TransitionPair> {
        self.pairs.iter()
    }

    /// Uniform sample (with replacement) of `n` indices.
    pub fn sample_indices(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        (0..n).map(|_| rng.gen_range(0..self.pairs.len())).collect()
    }

    /// Ring cursor, exposed for checkpointing.
    pub fn write_pos(&self) -> usize {
        self.write
    }

    /// Rebuild a buffer from checkpointed parts. `pairs` must be in storage
    /// order (not age order); `write` is the next overwrite slot.
    pub fn from_parts(capacity: usize, pairs: Vec<TransitionPair>, write: usize) -> Result<Self> {
        if pairs.len() > capacity {
            return Err(Error::contract(format!(
                "buffer holds {} pairs but capacity is {capacity}",
                pairs.len()
            )));
        }
        if capacity > 0 && write >= capacity {
            return Err(Error::contract(format!(
                "buffer write cursor {write} out of range for capacity {capacity}"
            )));
        }
        Ok(Self {
            pairs,
            capacity,
            write,
        })
    }
}

/// Map a raw discriminator logit to the style reward
/// `-log(max(1 - sigmoid(z), 1e-4))`.
pub fn style_reward_from_logit(logit: f64) -> f64 {
    let d = 1.0 / (1.0 + (-logit).exp());
    -(1.0 - d).max(STYLE_CLAMP).ln()
}

/// Style reward of one transition under the current discriminator.
pub fn style_reward<F: Float>(disc: &MlpNet<F>, pair: &TransitionPair) -> Result<f64> {
    let logit = disc.forward(&pair.features::<F>())?[0];
    Ok(style_reward_from_logit(logit.to_f64().unwrap()))
}

/// Scalars reported by one discriminator update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscReport {
    /// Binary cross-entropy part of the loss.
    pub bce: f64,
    /// Mean squared input-gradient norm on demo samples (pre-weighting).
    pub grad_penalty: f64,
    pub mean_d_demo: f64,
    pub mean_d_agent: f64,
    /// True when buffers were too small and the update was skipped.
    pub skipped: bool,
}

/// One discriminator gradient step on `-E_demo[log D] - E_agent[log(1-D)]
/// + w_gp * E_demo[||dD/dx||^2]`, with the penalty on demonstration samples.
pub fn train_discriminator<F: Float>(
    disc: &mut MlpNet<F>,
    adam: &mut AdamState<F>,
    demo: &DemoBuffer,
    agent: &DemoBuffer,
    minibatch: usize,
    w_gp: f64,
    rng: &mut ChaCha8Rng,
) -> Result<DiscReport> {
    if demo.len() < minibatch || agent.len() < minibatch {
        return Ok(DiscReport {
            bce: f64::NAN,
            grad_penalty: f64::NAN,
            mean_d_demo: f64::NAN,
            mean_d_agent: f64::NAN,
            skipped: true,
        });
    }
    let mut grads = vec![F::zero(); disc.param_count()];
    let inv_n = 1.0 / minibatch as f64;
    let mut bce = 0.0;
    let mut gp = 0.0;
    let mut mean_d_demo = 0.0;
    let mut mean_d_agent = 0.0;

    let add = |grads: &mut [F], piece: &[F], scale: f64| {
        let s = F::from(scale).unwrap();
        for (g, p) in grads.iter_mut().zip(piece) {
            *g = *g + s * *p;
        }
    };

    for &i in &demo.sample_indices(minibatch, rng) {
        let x = demo.get(i).features::<F>();
        let z = disc.forward(&x)?[0].to_f64().unwrap();
        let d = 1.0 / (1.0 + (-z).exp());
        bce += -d.max(1e-12).ln() * inv_n;
        mean_d_demo += d * inv_n;
        // d/dz of -log(sigmoid(z)) is d - 1.
        let (g, _) = disc.backward(&x, &[F::one()])?;
        add(&mut grads, &g, (d - 1.0) * inv_n);
        if w_gp > 0.0 {
            let pen = disc.grad_penalty_backward(&x)?;
            add(&mut grads, &pen, w_gp * inv_n);
        }
        let (_, input_grad) = disc.backward(&x, &[F::one()])?;
        gp += input_grad
            .iter()
            .map(|v| v.to_f64().unwrap().powi(2))
            .sum::<f64>()
            * inv_n;
    }
    for &i in &agent.sample_indices(minibatch, rng) {
        let x = agent.get(i).features::<F>();
        let z = disc.forward(&x)?[0].to_f64().unwrap();
        let d = 1.0 / (1.0 + (-z).exp());
        bce += -(1.0 - d).max(1e-12).ln() * inv_n;
        mean_d_agent += d * inv_n;
        // d/dz of -log(1 - sigmoid(z)) is d.
        let (g, _) = disc.backward(&x, &[F::one()])?;
        add(&mut grads, &g, d * inv_n);
    }

    adam_step(disc.params_mut(), &grads, adam)?;
    Ok(DiscReport {
        bce,
        grad_penalty: gp,
        mean_d_demo,
        mean_d_agent,
        skipped: false,
    })
}

/// Run the scripted controller over `n_episodes` sampled episodes and record
/// consecutive self-state pairs from the successful ones.
///
/// Fails hard if the controller solves fewer than half the episodes: that
/// signals a misconfigured environment, and a discriminator trained on such
/// data would teach the wrong style.
pub fn generate_demos(
    n_episodes: usize,
    mode: &TaskMode,
    params: &PhysicsParams,
    opts: &OracleOptions,
    seed: u64,
) -> Result<DemoBuffer> {
    let capacity = n_episodes * params.episode_steps as usize * mode.n_agents;
    let mut buffer = DemoBuffer::new(capacity.max(1));
    let mut successes = 0usize;
    for ep in 0..n_episodes {
        let episode = sample_episode(mode, derive_seed(seed, ep as u64))?;
        let mut world = reset_world(&episode, params);
        let mut runner = OracleRunner::new(episode.n_agents, *opts);
        // (s_t, phase at t) per agent, completed once s_{t+1} is known.
        let mut episode_pairs: Vec<TransitionPair> = Vec::new();
        let mut prev: Vec<([f64; SELF_STATE_DIM], DemoPhase)> = (0..episode.n_agents)
            .map(|i| (self_state(&world, i), DemoPhase::from_stage(runner.stage(i))))
            .collect();
        loop {
            let actions = runner.act(&world, params);
            let (next, flags) = step(&world, &actions, params)?;
            for (i, (s_t, phase)) in prev.iter_mut().enumerate() {
                let s_next = self_state(&next, i);
                episode_pairs.push(TransitionPair::new(*s_t, s_next, *phase));
                *s_t = s_next;
                *phase = DemoPhase::from_stage(runner.stage(i));
            }
            world = next;
            if flags.any() {
                if flags.kind() == TerminationKind::Success {
                    successes += 1;
                    for p in episode_pairs {
                        buffer.push(p);
                    }
                }
                break;
            }
        }
    }
    let rate = successes as f64 / n_episodes.max(1) as f64;
    if rate < 0.5 {
        return Err(Error::contract(format!(
            "demonstration source solved only {successes}/{n_episodes} episodes; \
             environment or task configuration is broken"
        )));
    }
    Ok(buffer)
}
