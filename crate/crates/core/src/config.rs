//! Experiment configuration.
//!
//! Every field has a default, so `{}` parses to the fixed-condition study
//! (25 °C ambient, 45 °C / 4.3 V limits, 10 s sampling). The drifting-ambient
//! study is available as [`ExperimentConfig::varying_condition`].

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::battery::{AmbientSchedule, BatteryParams};
use crate::error::{Error, Result};
use crate::protocols::CccvParams;
use crate::safety::SurrogateTarget;
use crate::types::Normalization;

/// TD3 hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub batch_size: usize,
    pub gamma: f64,
    /// Target mixing weight: `target <- (1 - tau) * target + tau * online`.
    pub tau: f64,
    /// Initial exploration-noise variance, C-rate².
    pub noise_variance: f64,
    /// Linear decrement of the exploration std per episode.
    pub noise_decay: f64,
    pub noise_floor: f64,
    pub policy_delay: usize,
    pub replay_capacity: usize,
    pub hidden: Vec<usize>,
    /// Scale applied to the initial weights of the actor's output layer.
    pub actor_output_scale: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            actor_lr: 5e-4,
            critic_lr: 5e-3,
            batch_size: 64,
            gamma: 0.99,
            tau: 0.006,
            noise_variance: 0.3,
            noise_decay: 0.025,
            noise_floor: 0.01,
            policy_delay: 2,
            replay_capacity: 100_000,
            hidden: vec![128, 128],
            actor_output_scale: 1e-2,
        }
    }
}

/// Gaussian-process settings shared by the static and dynamic surrogates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GpConfig {
    pub length_scale: f64,
    pub signal_var: f64,
    pub noise_var: f64,
    /// Fit (signal_var, length_scale) of the static GPs by marginal likelihood.
    pub optimize: bool,
    pub restarts: usize,
    /// Cap on static-GP training rows.
    pub n_max: usize,
    /// Residual rows needed before a dynamic GP contributes.
    pub dynamic_min_points: usize,
    /// Whether the static GPs regress the next value or its one-step change.
    pub target: SurrogateTarget,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            length_scale: 1.0,
            signal_var: 1.0,
            noise_var: 1e-5,
            optimize: true,
            restarts: 3,
            n_max: 512,
            dynamic_min_points: 3,
            target: SurrogateTarget::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub agent: AgentConfig,
    pub gp: GpConfig,
    /// Action bounds, C-rate.
    pub action_min: f64,
    pub action_max: f64,
    /// Sampling time, seconds.
    pub dt: f64,
    pub temp_max: f64,
    pub volt_max: f64,
    pub soc_start: f64,
    pub soc_target: f64,
    /// Random-action episodes collected before the static GPs are fitted.
    pub warmup_episodes: usize,
    /// Confidence multiplier on the posterior std in the constraint bound.
    pub kappa: f64,
    /// First 1-based step of an adaptive-safe episode at which projection runs.
    pub projection_start_step: usize,
    pub projection_grid: usize,
    pub projection_tol: f64,
    pub max_steps: usize,
    pub episodes: usize,
    /// Voltage-violation penalty weight.
    pub lambda_v: f64,
    /// Temperature-violation penalty weight.
    pub lambda_t: f64,
    pub battery: BatteryParams,
    pub ambient: AmbientSchedule,
    pub cccv: CccvParams,
    pub normalization: Normalization,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            agent: AgentConfig::default(),
            gp: GpConfig::default(),
            action_min: 0.05,
            action_max: 4.5,
            dt: 10.0,
            temp_max: 45.0,
            volt_max: 4.3,
            soc_start: 0.10,
            soc_target: 0.80,
            warmup_episodes: 5,
            kappa: 3.0,
            projection_start_step: 1,
            projection_grid: 256,
            projection_tol: 1e-4,
            max_steps: 300,
            episodes: 150,
            lambda_v: 15.0,
            lambda_t: 20.0,
            battery: BatteryParams::default(),
            ambient: AmbientSchedule::default(),
            cccv: CccvParams::default(),
            normalization: Normalization::default(),
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn fixed_condition() -> Self {
        Self::default()
    }

    /// Ambient ramps 10 → 36 °C by 0.145 °C per episode from episode 100,
    /// with resistance growth switched on at the same point.
    pub fn varying_condition() -> Self {
        let base = Self::default();
        Self {
            agent: AgentConfig { actor_lr: 5e-5, critic_lr: 5e-4, ..base.agent.clone() },
            dt: 15.0,
            volt_max: 4.4,
            episodes: 300,
            max_steps: 120,
            battery: BatteryParams { aging_alpha: 0.075, ..base.battery.clone() },
            ambient: AmbientSchedule {
                base_temp: 10.0,
                drift_start_episode: 100,
                drift_increment: 0.145,
                drift_cap: 36.0,
                aging_enabled: true,
            },
            cccv: CccvParams::varying_condition(),
            ..base
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.action_min > 0.0 && self.action_max > self.action_min) {
            return fail(format!("need 0 < action_min < action_max, got [{}, {}]", self.action_min, self.action_max));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return fail(format!("dt must be positive, got {}", self.dt));
        }
        if !(0.0..=1.0).contains(&self.soc_start) || !(0.0..=1.0).contains(&self.soc_target) {
            return fail("soc_start and soc_target must lie in [0, 1]".into());
        }
        if self.soc_target <= self.soc_start {
            return fail(format!("soc_target {} must exceed soc_start {}", self.soc_target, self.soc_start));
        }
        if self.episodes == 0 || self.max_steps == 0 {
            return fail("episodes and max_steps must be positive".into());
        }
        if self.warmup_episodes > self.episodes {
            return fail(format!(
                "warmup_episodes ({}) exceeds total episodes ({})",
                self.warmup_episodes, self.episodes
            ));
        }
        if !(self.kappa > 0.0) {
            return fail(format!("kappa must be > 0, got {}", self.kappa));
        }
        if self.projection_grid < 2 || !(self.projection_tol > 0.0) {
            return fail("projection_grid must be >= 2 and projection_tol > 0".into());
        }
        if self.projection_start_step == 0 {
            return fail("projection_start_step is 1-based and must be >= 1".into());
        }
        let a = &self.agent;
        if a.batch_size == 0 || a.policy_delay == 0 || a.replay_capacity < a.batch_size {
            return fail("agent: batch_size, policy_delay must be >= 1 and replay_capacity >= batch_size".into());
        }
        if !(0.0..=1.0).contains(&a.gamma) || !(0.0..=1.0).contains(&a.tau) {
            return fail("agent: gamma and tau must lie in [0, 1]".into());
        }
        if !(a.actor_lr > 0.0 && a.critic_lr > 0.0) || a.noise_variance < 0.0 || a.noise_decay < 0.0 {
            return fail("agent: learning rates must be > 0 and noise settings >= 0".into());
        }
        if a.hidden.is_empty() || a.hidden.contains(&0) {
            return fail("agent.hidden must list positive layer widths".into());
        }
        let g = &self.gp;
        if !(g.length_scale > 0.0 && g.signal_var > 0.0 && g.noise_var > 0.0) {
            return fail("gp: kernel parameters must be > 0".into());
        }
        if g.n_max < 2 || g.dynamic_min_points == 0 {
            return fail("gp: n_max must be >= 2 and dynamic_min_points >= 1".into());
        }
        self.battery.validate().map_err(Error::Config)?;
        self.normalization.validate().map_err(Error::Config)?;
        self.cccv.validate(self.action_min, self.action_max).map_err(Error::Config)?;
        Ok(())
    }

    /// Exploration std after `episode` completed episodes.
    pub fn noise_std(&self, episode: usize) -> f64 {
        let a = &self.agent;
        (a.noise_variance.sqrt() - a.noise_decay * episode as f64).max(a.noise_floor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_fixed_study() {
        let cfg = ExperimentConfig::from_json_str("{}").unwrap();
        assert_eq!(cfg, ExperimentConfig::fixed_condition());
        assert_eq!((cfg.action_min, cfg.action_max), (0.05, 4.5));
        assert_eq!((cfg.dt, cfg.temp_max, cfg.volt_max), (10.0, 45.0, 4.3));
        assert_eq!((cfg.soc_start, cfg.soc_target), (0.10, 0.80));
        assert_eq!(cfg.warmup_episodes, 5);
        assert_eq!((cfg.lambda_v, cfg.lambda_t), (15.0, 20.0));
        assert_eq!(cfg.agent.batch_size, 64);
        assert_eq!(cfg.agent.gamma, 0.99);
        assert_eq!(cfg.agent.tau, 0.006);
        assert_eq!(cfg.gp.length_scale, 1.0);
        assert_eq!(cfg.gp.noise_var, 1e-5);
    }

    #[test]
    fn varying_preset_values() {
        let cfg = ExperimentConfig::varying_condition();
        cfg.validate().unwrap();
        assert_eq!((cfg.temp_max, cfg.volt_max, cfg.dt), (45.0, 4.4, 15.0));
        assert_eq!(cfg.ambient.base_temp, 10.0);
        assert_eq!(cfg.ambient.drift_increment, 0.145);
        assert_eq!(cfg.ambient.drift_cap, 36.0);
        assert_eq!(cfg.ambient.drift_start_episode, 100);
        assert_eq!((cfg.agent.actor_lr, cfg.agent.critic_lr), (5e-5, 5e-4));
    }

    #[test]
    fn json_round_trip() {
        for cfg in [ExperimentConfig::fixed_condition(), ExperimentConfig::varying_condition()] {
            let back = ExperimentConfig::from_json_str(&cfg.to_json()).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn partial_override() {
        let cfg = ExperimentConfig::from_json_str(r#"{"seed": 9, "agent": {"batch_size": 32}}"#).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.agent.batch_size, 32);
        assert_eq!(cfg.agent.gamma, 0.99);
    }

    #[test]
    fn rejects_warmup_beyond_episodes() {
        let err = ExperimentConfig::from_json_str(r#"{"episodes": 3, "warmup_episodes": 5}"#).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn noise_schedule() {
        let cfg = ExperimentConfig::default();
        assert!((cfg.noise_std(0) - 0.3f64.sqrt()).abs() < 1e-15);
        assert!((cfg.noise_std(4) - (0.3f64.sqrt() - 0.1)).abs() < 1e-15);
        assert_eq!(cfg.noise_std(100), 0.01);
        let mut prev = f64::INFINITY;
        for e in 0..60 {
            let s = cfg.noise_std(e);
            assert!(s <= prev);
            prev = s;
        }
    }
}
