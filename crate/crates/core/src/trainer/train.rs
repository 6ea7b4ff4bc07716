use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::buffer::RolloutBuffer;
use super::gae::{compute_dual_gae, update_gain, GainEstimate};
use super::ppo::{ppo_update, UpdateStats};
use super::rollout::collect_rollouts;
use crate::checkpoint::{Checkpoint, CHECKPOINT_FORMAT_VERSION};
use crate::config::RunConfig;
use crate::dynamics::RobotVariant;
use crate::environment::{Env, EnvConfig, EpisodeMode};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_multi_seed, EvalReport, PolicyController};
use crate::networks::{ActorCritic, AdamState};
use crate::scalar::Real;

/// rng stream reserved for network initialisation.
const INIT_STREAM: u64 = 0;
/// rng stream for minibatch shuffling.
const SHUFFLE_STREAM: u64 = 1;
/// Env `i` draws from stream `ENV_STREAM_BASE + i`.
const ENV_STREAM_BASE: u64 = 2;

pub const METRICS_HEADER: &str =
    "iteration,frames,rho_r,rho_e,mean_reward,mean_entropy,policy_loss,value_loss,grad_norm,eval_score";

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// One line of the metrics log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iteration: u64,
    pub frames: u64,
    pub rho_r: f64,
    pub rho_e: f64,
    pub mean_reward: f64,
    pub mean_entropy: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub grad_norm: f64,
    pub eval_score: Option<f64>,
}

impl MetricsRow {
    pub fn to_csv_line(&self) -> String {
        let eval = self.eval_score.map(|s| s.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.iteration,
            self.frames,
            self.rho_r,
            self.rho_e,
            self.mean_reward,
            self.mean_entropy,
            self.policy_loss,
            self.value_loss,
            self.grad_norm,
            eval
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationStats {
    pub row: MetricsRow,
    pub update: UpdateStats,
    pub diverged_steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub iterations: u64,
    pub frames: u64,
    pub rows: Vec<MetricsRow>,
    pub best_score: Option<f64>,
    pub best_checkpoint: Option<PathBuf>,
    pub last_checkpoint: Option<PathBuf>,
}

/// Full training state. Given the config, variant and master seed, every
/// iteration is reproducible bit for bit.
#[derive(Debug, Clone)]
pub struct Trainer<T> {
    pub config: RunConfig,
    pub variant: RobotVariant,
    pub master_seed: u64,
    pub model: ActorCritic<T>,
    pub adam: AdamState<T>,
    pub gain: GainEstimate<T>,
    pub iteration: u64,
    pub frames: u64,
    envs: Vec<Env<T>>,
    shuffle_rng: ChaCha8Rng,
    failed_in_a_row: usize,
}

impl<T: Real> Trainer<T> {
    pub fn new(config: RunConfig, variant: RobotVariant, master_seed: u64) -> Result<Self> {
        config.validate()?;
        let tc = &config.trainer;
        let model = ActorCritic::new(
            &tc.policy_hidden,
            &tc.critic_hidden,
            tc.log_std_init,
            &mut stream(master_seed, INIT_STREAM),
        );
        let adam = AdamState::for_model(&model);
        let mut trainer = Self {
            envs: Vec::new(),
            shuffle_rng: stream(master_seed, SHUFFLE_STREAM),
            model,
            adam,
            gain: GainEstimate::default(),
            iteration: 0,
            frames: 0,
            failed_in_a_row: 0,
            config,
            variant,
            master_seed,
        };
        trainer.envs = trainer.make_envs();
        Ok(trainer)
    }

    /// Restores a trainer from a checkpoint. The env and shuffle streams are
    /// re-seeded from the master seed and the iteration count, so a resumed
    /// run is reproducible but not identical to an uninterrupted one.
    pub fn from_checkpoint(ckpt: Checkpoint<T>) -> Result<Self> {
        ckpt.validate()?;
        let reseed = ckpt
            .master_seed
            .wrapping_add(ckpt.iteration.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut trainer = Self {
            envs: Vec::new(),
            shuffle_rng: stream(reseed, SHUFFLE_STREAM),
            model: ckpt.model,
            adam: ckpt.adam,
            gain: ckpt.gain,
            iteration: ckpt.iteration,
            frames: ckpt.frames,
            failed_in_a_row: 0,
            config: ckpt.config,
            variant: ckpt.variant,
            master_seed: ckpt.master_seed,
        };
        trainer.envs = trainer.make_envs_seeded(reseed);
        Ok(trainer)
    }

    fn make_envs(&self) -> Vec<Env<T>> {
        self.make_envs_seeded(self.master_seed)
    }

    fn make_envs_seeded(&self, seed: u64) -> Vec<Env<T>> {
        let cfg = self.train_env_config();
        let params = self.config.plant.cast::<T>();
        (0..self.config.trainer.n_envs as u64)
            .map(|i| {
                Env::new(
                    cfg.clone(),
                    params,
                    self.variant,
                    stream(seed, ENV_STREAM_BASE + i),
                )
            })
            .collect()
    }

    /// Environment settings used for rollouts: train mode, trainer truncation rate.
    pub fn train_env_config(&self) -> EnvConfig<T> {
        let mut cfg = self.config.env.clone().with_mode(EpisodeMode::Train);
        cfg.p_trunc = self.config.trainer.p_trunc;
        cfg.cast::<T>()
    }

    /// Collect, estimate advantages, update the gains and run PPO. An
    /// aborted update keeps the previous parameters and gains but still
    /// counts the frames.
    pub fn iterate(&mut self) -> Result<IterationStats> {
        let tc = self.config.trainer.clone();
        let buffer: RolloutBuffer<T> =
            collect_rollouts(&mut self.envs, &self.model, tc.n_rollout_steps);
        let advantages = compute_dual_gae(&buffer, &self.gain, &tc);
        let next_gain = update_gain(&self.gain, &advantages, &tc);
        let update = ppo_update(
            &buffer,
            &advantages,
            &mut self.model,
            &mut self.adam,
            &tc,
            &mut self.shuffle_rng,
        )?;
        if update.aborted {
            self.failed_in_a_row += 1;
        } else {
            self.failed_in_a_row = 0;
            self.gain = next_gain;
        }
        self.iteration += 1;
        self.frames += tc.frames_per_iteration();
        Ok(IterationStats {
            row: MetricsRow {
                iteration: self.iteration,
                frames: self.frames,
                rho_r: self.gain.rho_r.as_f64(),
                rho_e: self.gain.rho_e.as_f64(),
                mean_reward: buffer.mean_reward().as_f64(),
                mean_entropy: buffer.mean_entropy().as_f64(),
                policy_loss: update.policy_loss,
                value_loss: update.value_loss,
                grad_norm: update.grad_norm,
                eval_score: None,
            },
            update,
            diverged_steps: buffer.diverged_steps,
        })
    }

    /// Consecutive aborted iterations so far.
    pub fn failed_in_a_row(&self) -> usize {
        self.failed_in_a_row
    }

    pub fn controller(&self) -> PolicyController<T> {
        PolicyController::new(
            self.model.policy.clone(),
            format!("{}-iter{}", self.variant, self.iteration),
        )
    }

    /// Deterministic-policy evaluation on the configured seeds.
    pub fn evaluate(&self) -> Result<EvalReport> {
        let eval = &self.config.eval;
        let seeds = eval.seeds_for(self.variant);
        let (report, _) = evaluate_multi_seed(
            &self.controller(),
            self.variant,
            &self.config.plant.cast::<T>(),
            &self.config.env.cast::<T>(),
            eval,
            &seeds,
            self.config.to_json(),
        )?;
        Ok(report)
    }

    pub fn checkpoint(&self, eval_score: Option<f64>) -> Checkpoint<T> {
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            scalar: T::NAME.to_string(),
            variant: self.variant,
            master_seed: self.master_seed,
            iteration: self.iteration,
            frames: self.frames,
            gain: self.gain,
            model: self.model.clone(),
            adam: self.adam.clone(),
            eval_score,
            config: self.config.clone(),
        }
    }

    /// Trains until `total_frames` is reached. With an output directory the
    /// metrics go to `metrics.csv`, and every evaluation writes
    /// `checkpoints/iter_NNNNNN.json`, `best.json` and `last.json`.
    ///
    /// `on_row` sees every metrics row as it is produced.
    pub fn train(
        &mut self,
        out_dir: Option<&Path>,
        mut on_row: impl FnMut(&MetricsRow),
    ) -> Result<TrainSummary> {
        let tc = self.config.trainer.clone();
        let mut metrics = match out_dir {
            Some(dir) => {
                let ckpt_dir = dir.join("checkpoints");
                std::fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
                let path = dir.join("metrics.csv");
                let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
                let mut w = BufWriter::new(file);
                writeln!(w, "{METRICS_HEADER}").map_err(|e| Error::io(&path, e))?;
                Some((w, path))
            }
            None => None,
        };
        let mut summary = TrainSummary {
            iterations: 0,
            frames: self.frames,
            rows: Vec::new(),
            best_score: None,
            best_checkpoint: None,
            last_checkpoint: None,
        };
        let mut last_good = self.checkpoint(None);

        while self.frames < tc.total_frames {
            let before = self.frames;
            let mut stats = self.iterate()?;
            if stats.update.aborted {
                if self.failed_in_a_row > tc.max_failed_iterations {
                    if let Some(dir) = out_dir {
                        let path = dir.join("checkpoints").join("last_good.json");
                        last_good.save(&path)?;
                    }
                    return Err(Error::Numerical(format!(
                        "{} consecutive iterations hit non-finite losses (iteration {})",
                        self.failed_in_a_row, self.iteration
                    )));
                }
            } else {
                last_good = self.checkpoint(None);
            }

            let crossed =
                tc.eval_period > 0 && before / tc.eval_period != self.frames / tc.eval_period;
            let finished = self.frames >= tc.total_frames;
            if crossed || finished {
                let report = self.evaluate()?;
                let score = report.average_score;
                stats.row.eval_score = Some(score);
                if let Some(dir) = out_dir {
                    let ckpt = self.checkpoint(Some(score));
                    let ckpt_dir = dir.join("checkpoints");
                    ckpt.save(&ckpt_dir.join(format!("iter_{:06}.json", self.iteration)))?;
                    let last = ckpt_dir.join("last.json");
                    ckpt.save(&last)?;
                    summary.last_checkpoint = Some(last);
                    if summary.best_score.is_none_or(|b| score > b) {
                        let best = ckpt_dir.join("best.json");
                        ckpt.save(&best)?;
                        summary.best_checkpoint = Some(best);
                    }
                }
                if summary.best_score.is_none_or(|b| score > b) {
                    summary.best_score = Some(score);
                }
            }

            if let Some((w, path)) = metrics.as_mut() {
                writeln!(w, "{}", stats.row.to_csv_line()).map_err(|e| Error::io(&*path, e))?;
                w.flush().map_err(|e| Error::io(&*path, e))?;
            }
            on_row(&stats.row);
            summary.rows.push(stats.row);
            summary.iterations += 1;
            summary.frames = self.frames;
        }
        Ok(summary)
    }
}
