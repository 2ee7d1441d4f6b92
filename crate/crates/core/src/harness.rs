//! Experiment harness: deterministic evaluation of a policy (or the
//! scripted controller) over seeded episode sets, noise sweeps, and the
//! ablation matrix of paired training runs. Every reported number is a pure
//! function of (spec, policy source, seed).

use crate::checkpoint::Checkpoint;
use crate::config::{RunConfig, TaskSection};
use crate::error::{Error, Result};
use crate::nn::{GaussianPolicy, MlpNet};
use crate::obs::{assemble_observation, ObsMode};
use crate::report::{num, CsvSink, CsvTable};
use crate::rng::{derive_seed, seeded_rng};
use crate::sim::oracle::{OracleOptions, OracleRunner};
use crate::sim::{step, AgentAction, PhysicsParams, ACTION_DIM};
use crate::task::{reset_world, sample_episode, AblationFlags, RunMetrics};
use crate::trainer::{obs_dim_for_mode, run_training, TrainerState};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Observation-noise standard deviation per noise level.
pub const NOISE_LEVEL_STEP: f64 = 0.05;

/// One experiment: a task (with optional range overrides), an episode count,
/// evaluation seeds, a noise level, and ablation switches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub task: TaskSection,
    pub episodes: usize,
    pub seeds: Vec<u64>,
    pub noise_level: u32,
    pub ablation: AblationFlags,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            name: "experiment".to_string(),
            task: TaskSection::default(),
            episodes: 512,
            seeds: vec![0, 1, 2, 3],
            noise_level: 0,
            ablation: AblationFlags::default(),
        }
    }
}

impl ExperimentSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: ExperimentSpec =
            toml::from_str(text).map_err(|e| Error::config("spec", e.message().to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::config("name", "must be nonempty"));
        }
        if self.episodes == 0 {
            return Err(Error::config("episodes", "must be at least 1"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "must list at least one seed"));
        }
        if self.noise_level > 10 {
            return Err(Error::config("noise_level", "levels above 10 are not meaningful"));
        }
        self.task.to_task_mode()?;
        Ok(())
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_level as f64 * NOISE_LEVEL_STEP
    }

    /// SHA-256 of the canonical JSON serialization; stamps eval artifacts
    /// produced without a full run configuration.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let canon = serde_json::to_vec(self).expect("spec serializes");
        let digest = Sha256::digest(&canon);
        let mut out = String::with_capacity(64);
        for b in digest {
            out.push_str(&format!("{b:02x}"));
        }
        out
    }
}

/// What drives the agents during evaluation.
#[derive(Debug, Clone)]
pub enum PolicySource {
    /// Trained policy acting through its mean (no action sampling).
    Policy(GaussianPolicy<f32>),
    /// The scripted controller (solvability certificate).
    Oracle,
    /// An untrained random-weight policy (null baseline).
    Random(u64),
}

impl PolicySource {
    /// Resolve the CLI's checkpoint argument: a path, or the sentinels
    /// `oracle` / `random`.
    pub fn from_arg(arg: &str) -> Result<Self> {
        match arg {
            "oracle" => Ok(PolicySource::Oracle),
            "random" => Ok(PolicySource::Random(0)),
            path => {
                let ck = Checkpoint::load(Path::new(path))?;
                Ok(PolicySource::Policy(policy_of(&ck)?))
            }
        }
    }
}

fn policy_of(ck: &Checkpoint) -> Result<GaussianPolicy<f32>> {
    let mut net = MlpNet::new(&ck.meta.actor_sizes)?;
    let params = ck.array("actor.params")?;
    if params.len() != net.param_count() {
        return Err(Error::Checkpoint(format!(
            "array `actor.params` holds {} values but the {:?} network needs {}",
            params.len(),
            ck.meta.actor_sizes,
            net.param_count()
        )));
    }
    net.params_mut().copy_from_slice(params);
    let mut policy = GaussianPolicy::new(net, 0.0);
    policy
        .log_std
        .copy_from_slice(ck.array("actor.log_std")?);
    policy.clamp_log_std();
    Ok(policy)
}

/// Evaluate a policy source over `spec.episodes` episodes per seed.
/// Deterministic: episodes derive from the seed, actions are means (or
/// scripted), and the only random consumer is the observation-noise stream.
pub fn run_eval(
    spec: &ExperimentSpec,
    source: &PolicySource,
    params: &PhysicsParams,
) -> Result<RunMetrics> {
    spec.validate()?;
    params.validate()?;
    let mode = spec.task.to_task_mode()?;
    let obs_dim = obs_dim_for_mode(&mode);
    let noise_std = spec.noise_std();

    // Resolve the actor once; layout incompatibilities are hard errors.
    let policy: Option<GaussianPolicy<f32>> = match source {
        PolicySource::Policy(p) => {
            if p.mean_net.input_dim() != obs_dim || p.action_dim() != ACTION_DIM {
                return Err(Error::LayoutMismatch {
                    field: "actor input layer".into(),
                    expected: format!("{obs_dim} observation channels"),
                    found: format!("{}", p.mean_net.input_dim()),
                });
            }
            Some(p.clone())
        }
        PolicySource::Random(seed) => {
            let net = MlpNet::random(
                &[obs_dim, 32, ACTION_DIM],
                &mut seeded_rng(derive_seed(*seed, 0xBA5E)),
                1.0,
            )?;
            Some(GaussianPolicy::new(net, -1.0))
        }
        PolicySource::Oracle => None,
    };
    let oracle_opts = OracleOptions {
        allow_reverse: !spec.ablation.no_reverse_walk,
    };

    let mut metrics = RunMetrics::default();
    for &seed in &spec.seeds {
        for ep in 0..spec.episodes {
            let ep_seed = derive_seed(seed, ep as u64);
            let episode = sample_episode(&mode, ep_seed)?;
            let mut world = reset_world(&episode, params);
            let mut obs_mode = ObsMode::for_episode(&episode, params);
            if spec.ablation.no_dynamics_obs {
                obs_mode = obs_mode.freeze_dynamics(&world.object);
            }
            let mut noise_rng = seeded_rng(derive_seed(ep_seed, 0x0153));
            let mut oracle = OracleRunner::new(episode.n_agents, oracle_opts);

            loop {
                let actions: Vec<AgentAction> = match &policy {
                    Some(p) => (0..episode.n_agents)
                        .map(|i| {
                            let obs = assemble_observation(
                                &world,
                                i,
                                &obs_mode,
                                noise_std,
                                &mut noise_rng,
                            )
                            .flatten();
                            let o32: Vec<f32> = obs.iter().map(|x| *x as f32).collect();
                            let mean = p.mean_net.forward(&o32)?;
                            let a: Vec<f64> = mean.iter().map(|x| *x as f64).collect();
                            Ok(AgentAction::from_slice(&a))
                        })
                        .collect::<Result<_>>()?,
                    None => oracle.act(&world, params),
                };
                let (next, flags) = step(&world, &actions, params)?;
                world = next;
                if flags.any() {
                    metrics.record_episode(seed, &world, flags);
                    break;
                }
            }
        }
    }
    Ok(metrics)
}

/// Success-rate table across noise levels `0..=max_level` for one source.
pub fn run_noise_sweep(
    spec: &ExperimentSpec,
    source: &PolicySource,
    params: &PhysicsParams,
    max_level: u32,
) -> Result<Vec<(u32, RunMetrics)>> {
    let mut rows = Vec::with_capacity(max_level as usize + 1);
    for level in 0..=max_level {
        let mut s = spec.clone();
        s.noise_level = level;
        rows.push((level, run_eval(&s, source, params)?));
    }
    Ok(rows)
}

/// Write the eval table: one row per seed plus an `all` aggregate.
/// Successless rows report `nan` precision.
pub fn write_eval_csv(path: &Path, config_hash: &str, metrics: &RunMetrics) -> Result<()> {
    let mut sink = CsvSink::create(
        path,
        "eval-v1",
        config_hash,
        &["seed", "episodes", "success_rate", "precision_m"],
    )?;
    for (seed, s) in &metrics.per_seed {
        sink.row(&[
            seed.to_string(),
            s.episodes.to_string(),
            num(s.success_rate()),
            num(s.precision().unwrap_or(f64::NAN)),
        ])?;
    }
    sink.row(&[
        "all".to_string(),
        metrics.total.episodes.to_string(),
        num(metrics.total.success_rate()),
        num(metrics.total.precision().unwrap_or(f64::NAN)),
    ])?;
    Ok(())
}

/// One ablation cell: a label and the flags that define it.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationCell {
    pub name: String,
    pub flags: AblationFlags,
}

/// The standard matrix: the full method plus one cell per removed factor.
pub fn standard_cells() -> Vec<AblationCell> {
    let mk = |name: &str, flags: AblationFlags| AblationCell {
        name: name.to_string(),
        flags,
    };
    vec![
        mk("base", AblationFlags::default()),
        mk(
            "no_stand_point",
            AblationFlags {
                no_stand_point: true,
                ..AblationFlags::default()
            },
        ),
        mk(
            "no_dynamics_obs",
            AblationFlags {
                no_dynamics_obs: true,
                ..AblationFlags::default()
            },
        ),
        mk(
            "no_reverse_walk",
            AblationFlags {
                no_reverse_walk: true,
                ..AblationFlags::default()
            },
        ),
        mk(
            "from_scratch",
            AblationFlags {
                from_scratch: true,
                ..AblationFlags::default()
            },
        ),
    ]
}

/// Outcome of one ablation cell, summarized from the tail of its curve file.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub name: String,
    pub env_steps: u64,
    pub success_rate: f64,
    pub mean_carry_reward: f64,
    pub mean_held_reward: f64,
    pub out_dir: PathBuf,
}

fn tail_mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let k = (values.len() / 4).max(1);
    let tail = &values[values.len() - k..];
    tail.iter().sum::<f64>() / k as f64
}

/// Run the ablation matrix: one training run per cell under the base
/// configuration, differing only in flags (and a 4x budget for
/// `from_scratch`). Cells share `run.seed`, so their environment streams are
/// paired. Team cells fine-tune from `init` unless they are from-scratch;
/// a missing `init` in that situation is a hard error. Writes per-cell run
/// directories plus `ablation.csv` under `out_dir`, and returns the table.
pub fn run_ablation_matrix(
    base: &RunConfig,
    init: Option<&Checkpoint>,
    out_dir: &Path,
    cells: &[AblationCell],
    mut on_cell: Option<&mut dyn FnMut(&CellResult)>,
) -> Result<Vec<CellResult>> {
    base.validate()?;
    let mode = base.task.to_task_mode()?;
    let mut results = Vec::with_capacity(cells.len());
    for cell in cells {
        let mut cfg = base.clone();
        cfg.ablation = cell.flags;
        if cell.flags.from_scratch {
            if mode.n_agents == 1 {
                return Err(Error::config(
                    "ablation.from_scratch",
                    "only meaningful for team tasks (phase one always trains from scratch)",
                ));
            }
            cfg.run.total_env_steps = base.run.total_env_steps.saturating_mul(4);
        }
        let mut state = if mode.n_agents == 1 {
            TrainerState::new_single(&cfg)?
        } else if cell.flags.from_scratch {
            TrainerState::new_multi_scratch(&cfg)?
        } else {
            let ck = init.ok_or_else(|| {
                Error::Checkpoint(format!(
                    "ablation cell `{}` fine-tunes a team and needs a phase-one checkpoint",
                    cell.name
                ))
            })?;
            TrainerState::new_multi(&cfg, ck)?
        };
        let cell_dir = out_dir.join(&cell.name);
        let arts = run_training(&mut state, &cell_dir, None)?;
        let curves = CsvTable::load(&arts.curves)?;
        let result = CellResult {
            name: cell.name.clone(),
            env_steps: arts.env_steps,
            success_rate: tail_mean(&curves.floats("success_rate")?),
            mean_carry_reward: tail_mean(&curves.floats("mean_carry_reward")?),
            mean_held_reward: tail_mean(&curves.floats("mean_held_reward")?),
            out_dir: cell_dir,
        };
        if let Some(cb) = on_cell.as_deref_mut() {
            cb(&result);
        }
        results.push(result);
    }

    let mut sink = CsvSink::create(
        &out_dir.join("ablation.csv"),
        "ablation-v1",
        &base.hash(),
        &[
            "cell",
            "env_steps",
            "success_rate",
            "mean_carry_reward",
            "mean_held_reward",
        ],
    )?;
    for r in &results {
        sink.row(&[
            r.name.clone(),
            r.env_steps.to_string(),
            num(r.success_rate),
            num(r.mean_carry_reward),
            num(r.mean_held_reward),
        ])?;
    }
    Ok(results)
}
