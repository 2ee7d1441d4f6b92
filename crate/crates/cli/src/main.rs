//! `tandem` — train, evaluate, and analyze cooperative object-transport
//! policies. Exit codes: 0 success, 2 malformed configuration (the message
//! names the offending key), 3 missing file, 1 anything else.

use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use tandem_core::checkpoint::Checkpoint;
use tandem_core::config::RunConfig;
use tandem_core::error::Error;
use tandem_core::harness::{
    run_ablation_matrix, run_eval, run_noise_sweep, standard_cells, write_eval_csv,
    ExperimentSpec, PolicySource,
};
use tandem_core::plot::plot_files;
use tandem_core::report::{num, CsvSink};
use tandem_core::trainer::{demos_for, run_training, TrainerState, UpdateLog};

#[derive(Parser)]
#[command(name = "tandem", version, about = "Cooperative object-transport learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Override `run.seed` from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override `run.envs` from the config.
    #[arg(long, global = true)]
    envs: Option<usize>,

    /// Override `run.workers` from the config.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Directory for run artifacts.
    #[arg(long, global = true, default_value = "runs/out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Phase one: train the single-agent carrier.
    TrainSingle {
        config: PathBuf,
        /// Continue a saved run instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Phase two: fine-tune a team, initialized from a phase-one checkpoint.
    TrainMulti {
        config: PathBuf,
        /// Phase-one checkpoint to transfer from.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Train the team from random weights instead (ablation baseline).
        #[arg(long)]
        from_scratch: bool,
        /// Continue a saved run instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Generate scripted demonstrations and write them as CSV.
    DemoGen { config: PathBuf },
    /// Evaluate a checkpoint (or the sentinels `oracle` / `random`) under an
    /// experiment spec.
    Eval {
        spec: PathBuf,
        checkpoint: String,
        /// Run noise levels 0..=4 instead of the spec's single level.
        #[arg(long)]
        noise_sweep: bool,
        /// Run configuration supplying physics parameters (defaults used
        /// otherwise).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the ablation matrix under a base training configuration.
    Ablate {
        config: PathBuf,
        /// Phase-one checkpoint for team fine-tuning cells.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Render curve CSVs to an SVG plot.
    Plot {
        curves: Vec<PathBuf>,
        /// Column for the x axis.
        #[arg(long, default_value = "env_steps")]
        x: String,
        /// Column for the y axis.
        #[arg(long, default_value = "success_rate")]
        y: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } => 2,
        Error::Io { .. } => 3,
        _ => 1,
    }
}

fn load_config(cli: &Cli, path: &Path) -> Result<RunConfig, Error> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
    }
    if let Some(envs) = cli.envs {
        cfg.run.envs = envs;
    }
    if let Some(workers) = cli.workers {
        cfg.run.workers = workers;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn progress_printer() -> impl FnMut(&UpdateLog) {
    |log: &UpdateLog| {
        println!(
            "update {:>5}  steps {:>9}  task {:.3}  style {:.3}  held {:.3}  carry {:.3}  kl {:.2e}  {:.0} steps/s",
            log.update,
            log.env_steps,
            log.stats.mean_task_reward,
            log.stats.mean_style_reward,
            log.stats.mean_held_reward,
            log.stats.mean_carry_reward,
            log.report.approx_kl,
            log.stats.steps_per_second,
        );
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match &cli.command {
        Command::TrainSingle { config, resume } => {
            let cfg = load_config(&cli, config)?;
            let mut state = match resume {
                Some(path) => TrainerState::from_checkpoint(&cfg, &Checkpoint::load(path)?)?,
                None => TrainerState::new_single(&cfg)?,
            };
            let mut cb = progress_printer();
            let arts = run_training(&mut state, &cli.out, Some(&mut cb))?;
            println!(
                "done: {} updates, {} env steps; checkpoint at {}",
                arts.updates,
                arts.env_steps,
                arts.checkpoint.display()
            );
            Ok(())
        }
        Command::TrainMulti {
            config,
            init,
            from_scratch,
            resume,
        } => {
            let cfg = load_config(&cli, config)?;
            let scratch = *from_scratch || cfg.ablation.from_scratch;
            let mut state = match (resume, init, scratch) {
                (Some(path), _, _) => {
                    TrainerState::from_checkpoint(&cfg, &Checkpoint::load(path)?)?
                }
                (None, Some(path), false) => {
                    TrainerState::new_multi(&cfg, &Checkpoint::load(path)?)?
                }
                (None, None, true) => TrainerState::new_multi_scratch(&cfg)?,
                (None, Some(_), true) => {
                    return Err(Error::config(
                        "--init",
                        "give either --init or --from-scratch, not both",
                    ))
                }
                (None, None, false) => {
                    return Err(Error::config(
                        "--init",
                        "team training needs --init <phase-one checkpoint> or --from-scratch",
                    ))
                }
            };
            let mut cb = progress_printer();
            let arts = run_training(&mut state, &cli.out, Some(&mut cb))?;
            println!(
                "done: {} updates, {} env steps; checkpoint at {}",
                arts.updates,
                arts.env_steps,
                arts.checkpoint.display()
            );
            Ok(())
        }
        Command::DemoGen { config } => {
            let cfg = load_config(&cli, config)?;
            let mode = cfg.task.to_task_mode()?;
            let demos = demos_for(&cfg, &mode)?;
            let path = cli.out.join("demos.csv");
            let mut columns: Vec<String> = vec!["index".into(), "phase".into()];
            for i in 0..9 {
                columns.push(format!("s{i}"));
            }
            for i in 0..9 {
                columns.push(format!("next{i}"));
            }
            let column_refs: Vec<&str> = columns.iter().map(String::as_str).collect();
            let mut sink = CsvSink::create(&path, "demos-v1", &cfg.hash(), &column_refs)?;
            for (i, pair) in demos.iter().enumerate() {
                let mut row = vec![i.to_string(), pair.phase.index().to_string()];
                row.extend(pair.s_t.iter().map(|x| num(*x as f64)));
                row.extend(pair.s_next.iter().map(|x| num(*x as f64)));
                sink.row(&row)?;
            }
            println!("wrote {} demonstration pairs to {}", demos.len(), path.display());
            Ok(())
        }
        Command::Eval {
            spec,
            checkpoint,
            noise_sweep,
            config,
        } => {
            let spec = ExperimentSpec::load(spec)?;
            let source = PolicySource::from_arg(checkpoint)?;
            let (params, hash) = match config {
                Some(path) => {
                    let cfg = load_config(&cli, path)?;
                    (cfg.physics.clone(), cfg.hash())
                }
                None => (Default::default(), spec.hash()),
            };
            std::fs::create_dir_all(&cli.out).map_err(|e| Error::io(&cli.out, e))?;
            if *noise_sweep {
                let rows = run_noise_sweep(&spec, &source, &params, 4)?;
                let path = cli.out.join("noise.csv");
                let mut sink = CsvSink::create(
                    &path,
                    "noise-v1",
                    &hash,
                    &["noise_level", "episodes", "success_rate", "precision_m"],
                )?;
                for (level, m) in &rows {
                    println!(
                        "noise {level}: success {:.1}% over {} episodes",
                        100.0 * m.total.success_rate(),
                        m.total.episodes
                    );
                    sink.row(&[
                        level.to_string(),
                        m.total.episodes.to_string(),
                        num(m.total.success_rate()),
                        num(m.total.precision().unwrap_or(f64::NAN)),
                    ])?;
                }
                println!("wrote {}", path.display());
            } else {
                let metrics = run_eval(&spec, &source, &params)?;
                let path = cli.out.join("eval.csv");
                write_eval_csv(&path, &hash, &metrics)?;
                println!(
                    "success {:.1}% over {} episodes ({} seeds); wrote {}",
                    100.0 * metrics.total.success_rate(),
                    metrics.total.episodes,
                    metrics.per_seed.len(),
                    path.display()
                );
            }
            Ok(())
        }
        Command::Ablate { config, init } => {
            let cfg = load_config(&cli, config)?;
            let init_ck = match init {
                Some(path) => Some(Checkpoint::load(path)?),
                None => None,
            };
            let mut cb = |r: &tandem_core::harness::CellResult| {
                println!(
                    "cell {:<16} steps {:>9}  success {:.1}%  carry {:.3}  held {:.3}",
                    r.name,
                    r.env_steps,
                    100.0 * r.success_rate,
                    r.mean_carry_reward,
                    r.mean_held_reward
                );
            };
            run_ablation_matrix(&cfg, init_ck.as_ref(), &cli.out, &standard_cells(), Some(&mut cb))?;
            println!("wrote {}", cli.out.join("ablation.csv").display());
            Ok(())
        }
        Command::Plot { curves, x, y } => {
            if curves.is_empty() {
                return Err(Error::config("curves", "give at least one curve CSV"));
            }
            let out = cli.out.join("plot.svg");
            plot_files(curves, x, y, &out)?;
            println!("wrote {}", out.display());
            Ok(())
        }
    }
}
