//! Versioned JSON checkpoints of the full training state.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dynamics::RobotVariant;
use crate::error::{Error, Result};
use crate::networks::{ActorCritic, AdamState};
use crate::scalar::Real;
use crate::trainer::GainEstimate;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint<T> {
    pub format_version: u32,
    /// `f32` or `f64`; informational, values load into either.
    pub scalar: String,
    pub variant: RobotVariant,
    pub master_seed: u64,
    pub iteration: u64,
    pub frames: u64,
    pub gain: GainEstimate<T>,
    pub model: ActorCritic<T>,
    pub adam: AdamState<T>,
    pub eval_score: Option<f64>,
    pub config: RunConfig,
}

impl<T: Real> Checkpoint<T> {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)
            .map_err(|e| Error::Checkpoint(format!("serialising: {e}")))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Loads and validates a checkpoint: format version, layer chaining and
    /// widths against the stored config, optimizer size.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Self =
            serde_json::from_str(text).map_err(|e| Error::Checkpoint(format!("parsing: {e}")))?;
        ckpt.validate()?;
        Ok(ckpt)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {} is not supported (expected {CHECKPOINT_FORMAT_VERSION})",
                self.format_version
            )));
        }
        self.model.validate()?;
        let expect = |hidden: &[usize], out: usize| {
            let mut w = vec![crate::networks::OBS_DIM];
            w.extend_from_slice(hidden);
            w.push(out);
            w
        };
        let policy = self.model.policy.mlp.widths();
        let want = expect(&self.config.trainer.policy_hidden, 1);
        if policy != want {
            return Err(Error::ShapeMismatch(format!(
                "policy layer widths {policy:?} do not match configured {want:?}"
            )));
        }
        let critic = self.model.critic.widths();
        let want = expect(&self.config.trainer.critic_hidden, 2);
        if critic != want {
            return Err(Error::ShapeMismatch(format!(
                "critic layer widths {critic:?} do not match configured {want:?}"
            )));
        }
        let n = self.model.num_params();
        if self.adam.m.len() != n || self.adam.v.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "optimizer state sized for {} parameters, model has {n}",
                self.adam.m.len()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> Checkpoint<f64> {
        let mut config = RunConfig::default();
        config.trainer.policy_hidden = vec![4, 4];
        config.trainer.critic_hidden = vec![6];
        let model = ActorCritic::new(&[4, 4], &[6], 0.5, &mut ChaCha8Rng::seed_from_u64(0));
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            scalar: f64::NAME.into(),
            variant: RobotVariant::Pendubot,
            master_seed: 1,
            iteration: 3,
            frames: 300,
            gain: GainEstimate {
                rho_r: -0.25,
                rho_e: 0.1,
            },
            adam: AdamState::for_model(&model),
            model,
            eval_score: Some(0.5),
            config,
        }
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        let c = small();
        c.save(&path).unwrap();
        assert_eq!(Checkpoint::<f64>::load(&path).unwrap(), c);
        // f64 checkpoint loads into the f32 trainer types as well
        assert!(Checkpoint::<f32>::load(&path).is_ok());
    }

    #[test]
    fn mismatched_widths_are_rejected() {
        let mut c = small();
        c.config.trainer.critic_hidden = vec![8];
        let err = Checkpoint::<f64>::from_json(&serde_json::to_string(&c).unwrap()).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch(_)), "{err}");
        assert!(err.to_string().contains("critic"));
    }

    #[test]
    fn broken_layer_chain_is_rejected() {
        let mut c = small();
        c.model.policy.mlp.layers[1].weight = ndarray::Array2::zeros((3, 4));
        let err = Checkpoint::<f64>::from_json(&serde_json::to_string(&c).unwrap()).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch(_)), "{err}");
    }

    #[test]
    fn wrong_version_is_rejected() {
        let mut c = small();
        c.format_version = 99;
        assert!(Checkpoint::<f64>::from_json(&serde_json::to_string(&c).unwrap()).is_err());
    }
}
