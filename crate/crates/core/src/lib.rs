//! Entropy-regularised average-reward PPO for swing-up and stabilisation of
//! the acrobot and pendubot.
//!
//! The numeric core is generic over [`Real`] (`f32` or `f64`); the `*64`
//! aliases below fix it to `f64`, which the command-line tool uses.

mod error;
mod scalar;

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dynamics;
pub mod environment;
pub mod evaluation;
pub mod networks;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Real;

pub use checkpoint::Checkpoint;
pub use config::RunConfig;
pub use dynamics::{PlantParams, PlantState, RobotVariant};
pub use environment::{Env, EnvConfig, Observation};
pub use evaluation::{EvalConfig, EvalReport};
pub use networks::{ActorCritic, Policy};
pub use trainer::{Trainer, TrainerConfig};

pub type PlantParams64 = PlantParams<f64>;
pub type PlantState64 = PlantState<f64>;
pub type EnvConfig64 = EnvConfig<f64>;
pub type Env64 = Env<f64>;
pub type ActorCritic64 = ActorCritic<f64>;
pub type Policy64 = Policy<f64>;
pub type Trainer64 = Trainer<f64>;
pub type Checkpoint64 = Checkpoint<f64>;
