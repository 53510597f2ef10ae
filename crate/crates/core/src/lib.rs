//! Safe reinforcement learning for lithium-ion fast charging: a TD3 agent
//! whose actions are projected through Gaussian-process surrogates of the
//! cell's temperature and voltage, plus the simulator, baselines and
//! experiment harness around it.

pub mod battery;
pub mod checks;
pub mod config;
pub mod error;
pub mod gp;
pub mod harness;
pub mod linalg;
pub mod mlp;
pub mod protocols;
pub mod rng;
pub mod safety;
pub mod td3;
pub mod types;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
