//! Command-line entry points: `train`, `eval`, `plot` and `inspect`.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::dynamics::RobotVariant;
use crate::error::{Error, Result};
use crate::evaluation::{
    evaluate_multi_seed, export_trajectory, read_trajectory_csv, write_trajectory_svg,
    PolicyController,
};
use crate::scalar::Real;
use crate::trainer::Trainer;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Environment variable naming the directory under which runs are created
/// when `--out` is not given.
pub const RUN_ROOT_ENV: &str = "AREAPO_RUN_ROOT";

#[derive(Debug, Parser)]
#[command(
    name = "areapo",
    version,
    about = "Average-reward PPO for acrobot and pendubot swing-up"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a policy and write metrics, checkpoints and a run manifest.
    Train {
        /// TOML config with [plant], [env], [trainer] and [eval] sections.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        variant: RobotVariant,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Overrides trainer.total_frames.
        #[arg(long)]
        frames: Option<u64>,
        /// Overrides trainer.eval_period.
        #[arg(long)]
        eval_period: Option<u64>,
        #[arg(long, value_enum, default_value_t = Precision::F64)]
        precision: Precision,
        /// Run directory; defaults to a fresh directory under $AREAPO_RUN_ROOT (or ./runs).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on disturbed trials.
    Eval {
        checkpoint: PathBuf,
        /// Defaults to the checkpoint's variant.
        #[arg(long, value_enum)]
        variant: Option<RobotVariant>,
        /// Comma-separated trial seeds; defaults to the variant's list.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Score diverged trials as 0 (`--strict false` keeps their accumulated time).
        #[arg(long, num_args = 0..=1, default_missing_value = "true")]
        strict: Option<bool>,
        /// Run the trials without disturbances.
        #[arg(long)]
        no_disturbance: bool,
        /// Trial length in seconds.
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a trajectory CSV as an SVG plot.
    Plot {
        csv: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Torque limit drawn as reference lines.
        #[arg(long, default_value_t = 6.0)]
        torque_limit: f64,
    },
    /// Print a checkpoint summary as JSON.
    Inspect { checkpoint: PathBuf },
}

/// Records what a command ran with and what it wrote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub code_version: String,
    pub master_seed: Option<u64>,
    pub variant: RobotVariant,
    pub config: RunConfig,
    pub artifacts: Vec<PathBuf>,
    pub status: String,
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serialises");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Numerical(_) | Error::SimulationDiverged(_) => EXIT_NUMERICAL,
        _ => EXIT_USAGE,
    }
}

fn run_dir(out: Option<PathBuf>, run_id: &str) -> PathBuf {
    out.unwrap_or_else(|| {
        let root = std::env::var_os(RUN_ROOT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs"));
        root.join(run_id)
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Train {
            config,
            variant,
            seed,
            frames,
            eval_period,
            precision,
            out,
        } => {
            let mut cfg = match config {
                Some(path) => RunConfig::from_toml_file(&path)?,
                None => RunConfig::default(),
            };
            if let Some(f) = frames {
                cfg.trainer.total_frames = f;
            }
            if let Some(p) = eval_period {
                cfg.trainer.eval_period = p;
            }
            cfg.validate()?;
            match precision {
                Precision::F32 => cmd_train::<f32>(cfg, variant, seed, out),
                Precision::F64 => cmd_train::<f64>(cfg, variant, seed, out),
            }
        }
        Command::Eval {
            checkpoint,
            variant,
            seeds,
            strict,
            no_disturbance,
            duration,
            out,
        } => cmd_eval(
            &checkpoint,
            variant,
            seeds,
            strict,
            no_disturbance,
            duration,
            out,
        ),
        Command::Plot {
            csv,
            out,
            torque_limit,
        } => cmd_plot(&csv, &out, torque_limit),
        Command::Inspect { checkpoint } => cmd_inspect(&checkpoint),
    }
}

fn cmd_train<T: Real>(
    cfg: RunConfig,
    variant: RobotVariant,
    seed: u64,
    out: Option<PathBuf>,
) -> Result<()> {
    let timestamp = now();
    let run_id = format!("{variant}-seed{seed}-{timestamp}");
    let dir = run_dir(out, &run_id);
    create_dir(&dir)?;
    let mut manifest = RunManifest {
        run_id,
        command: "train".into(),
        timestamp,
        code_version: env!("CARGO_PKG_VERSION").into(),
        master_seed: Some(seed),
        variant,
        config: cfg.clone(),
        artifacts: vec![dir.join("config.toml")],
        status: "running".into(),
    };
    std::fs::write(dir.join("config.toml"), cfg.to_toml())
        .map_err(|e| Error::io(dir.join("config.toml"), e))?;
    let manifest_path = dir.join("manifest.json");
    manifest.write(&manifest_path)?;

    let mut trainer = Trainer::<T>::new(cfg, variant, seed)?;
    let result = trainer.train(Some(&dir), |row| {
        let eval = row
            .eval_score
            .map(|s| format!(" eval {s:.3}"))
            .unwrap_or_default();
        eprintln!(
            "iter {:>5} frames {:>10} reward {:>9.4} rho_r {:>9.4} rho_e {:>8.4}{eval}",
            row.iteration, row.frames, row.mean_reward, row.rho_r, row.rho_e
        );
    });

    manifest.artifacts.push(dir.join("metrics.csv"));
    manifest
        .artifacts
        .extend(list_checkpoints(&dir.join("checkpoints")));
    manifest.status = match &result {
        Ok(_) => "completed".into(),
        Err(e) => format!("failed: {e}"),
    };
    manifest.write(&manifest_path)?;
    let summary = result?;
    if let Some(best) = summary.best_score {
        println!(
            "trained {} iterations, {} frames, best eval score {best:.3}",
            summary.iterations, summary.frames
        );
    } else {
        println!(
            "trained {} iterations, {} frames",
            summary.iterations, summary.frames
        );
    }
    println!("run directory: {}", dir.display());
    Ok(())
}

fn list_checkpoints(dir: &Path) -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map(|it| it.filter_map(|e| e.ok().map(|e| e.path())).collect())
        .unwrap_or_default();
    out.sort();
    out
}

fn cmd_eval(
    checkpoint: &Path,
    variant: Option<RobotVariant>,
    seeds: Vec<u64>,
    strict: Option<bool>,
    no_disturbance: bool,
    duration: Option<f64>,
    out: Option<PathBuf>,
) -> Result<()> {
    let ckpt = Checkpoint::<f64>::load(checkpoint)?;
    let variant = variant.unwrap_or(ckpt.variant);
    let mut cfg = ckpt.config.clone();
    if let Some(s) = strict {
        cfg.eval.strict = s;
    }
    if no_disturbance {
        cfg.eval.disturbance.enabled = false;
    }
    if let Some(d) = duration {
        cfg.eval.duration = d;
    }
    if !seeds.is_empty() {
        cfg.eval.seeds = seeds;
    }
    cfg.validate()?;
    let seeds = cfg.eval.seeds_for(variant);

    let stem = checkpoint
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "checkpoint".into());
    let controller = PolicyController::new(ckpt.model.policy.clone(), stem.clone());
    let (report, trials) = evaluate_multi_seed(
        &controller,
        variant,
        &cfg.plant,
        &cfg.env,
        &cfg.eval,
        &seeds,
        cfg.to_json(),
    )?;
    print!("{}", report.table());

    if let Some(dir) = out {
        create_dir(&dir)?;
        let mut artifacts = vec![dir.join("report.json"), dir.join("report.csv")];
        report.write_json(&artifacts[0])?;
        report.write_csv(&artifacts[1])?;
        for t in &trials {
            let name = format!("trial_{}", t.seed);
            export_trajectory(t, &dir, &name, cfg.plant.torque_limit)?;
            artifacts.push(dir.join(format!("{name}.csv")));
            artifacts.push(dir.join(format!("{name}.svg")));
            artifacts.push(dir.join(format!("{name}_disturbances.csv")));
        }
        let manifest = RunManifest {
            run_id: format!("eval-{stem}-{variant}"),
            command: "eval".into(),
            timestamp: now(),
            code_version: env!("CARGO_PKG_VERSION").into(),
            master_seed: Some(ckpt.master_seed),
            variant,
            config: cfg,
            artifacts,
            status: "completed".into(),
        };
        manifest.write(&dir.join("manifest.json"))?;
    }
    Ok(())
}

fn cmd_plot(csv: &Path, out: &Path, torque_limit: f64) -> Result<()> {
    let points = read_trajectory_csv(csv)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_trajectory_svg(&points, torque_limit, out)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_inspect(checkpoint: &Path) -> Result<()> {
    let ckpt = Checkpoint::<f64>::load(checkpoint)?;
    let summary = serde_json::json!({
        "format_version": ckpt.format_version,
        "scalar": ckpt.scalar,
        "variant": ckpt.variant,
        "master_seed": ckpt.master_seed,
        "iteration": ckpt.iteration,
        "frames": ckpt.frames,
        "eval_score": ckpt.eval_score,
        "rho_r": ckpt.gain.rho_r,
        "rho_e": ckpt.gain.rho_e,
        "log_std": ckpt.model.policy.log_std,
        "policy_widths": ckpt.model.policy.mlp.widths(),
        "critic_widths": ckpt.model.critic.widths(),
        "num_params": ckpt.model.num_params(),
        "adam_steps": ckpt.adam.step,
    });
    println!(
        "{}",
        serde_json::to_string_pretty(&summary).expect("summary serialises")
    );
    Ok(())
}
