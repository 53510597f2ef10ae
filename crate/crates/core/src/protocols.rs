//! Non-learning baselines and fixed-policy evaluation.

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::harness::{run_episode, Controller, EpisodeLog, Environment, SafetyMode};
use crate::rng::Rng;
use crate::safety::StaticSafety;
use crate::types::AgentState;

/// Constant-current / constant-voltage charging setpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CccvParams {
    /// Current of the CC phase, C-rate.
    pub cc_rate: f64,
    /// Terminal voltage held in the CV phase, volts.
    pub cv_voltage: f64,
    /// Proportional gain of the CV loop, amperes per volt.
    pub cv_gain: f64,
    /// Lowest current the CV loop commands, C-rate.
    pub termination_current: f64,
}

impl Default for CccvParams {
    fn default() -> Self {
        Self { cc_rate: 2.0, cv_voltage: 4.25, cv_gain: 50.0, termination_current: 0.05 }
    }
}

impl CccvParams {
    /// Setpoints for the drifting-ambient study, chosen so the hot, aged
    /// cell at the end of the drift stays under 45 °C.
    pub fn varying_condition() -> Self {
        Self { cc_rate: 1.25, cv_voltage: 4.35, ..Self::default() }
    }

    pub fn validate(&self, a_min: f64, a_max: f64) -> Result<(), String> {
        if !(a_min..=a_max).contains(&self.cc_rate) {
            return Err(format!("cccv.cc_rate {} outside [{a_min}, {a_max}]", self.cc_rate));
        }
        if !(self.cv_voltage > 0.0 && self.cv_gain >= 0.0 && self.termination_current >= 0.0) {
            return Err("cccv: cv_voltage must be > 0, cv_gain and termination_current >= 0".into());
        }
        Ok(())
    }
}

/// CC phase below `cv_voltage`, proportional voltage hold above it.
pub fn cccv_action(voltage: f64, p: &CccvParams, capacity_q: f64, a_min: f64) -> f64 {
    if voltage < p.cv_voltage {
        return p.cc_rate;
    }
    let floor = a_min.max(p.termination_current).min(p.cc_rate);
    (p.cc_rate - p.cv_gain * (voltage - p.cv_voltage) / capacity_q).clamp(floor, p.cc_rate)
}

/// Summary of one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode: usize,
    /// Steps taken; equals `max_steps` when the target was not reached.
    pub steps: usize,
    pub finished: bool,
    pub charge_minutes: f64,
    pub max_t: f64,
    pub max_v: f64,
    pub violation_steps_t: usize,
    pub violation_steps_v: usize,
    pub cumulative_reward: f64,
}

impl EpisodeMetrics {
    pub fn steps_to_target(&self) -> Option<usize> {
        self.finished.then_some(self.steps)
    }

    pub fn violated(&self) -> bool {
        self.violation_steps_t + self.violation_steps_v > 0
    }
}

struct FixedPolicy<'a> {
    policy: &'a mut dyn FnMut(&AgentState) -> f64,
}

impl Controller for FixedPolicy<'_> {
    fn act(&mut self, s: &AgentState, _rng: &mut Rng) -> f64 {
        (self.policy)(s)
    }
}

/// Rolls out `episodes` episodes of a fixed policy, optionally filtered by
/// the static safety layer. Ambient and aging follow the config schedule.
pub fn evaluate(
    cfg: &ExperimentConfig,
    policy: &mut dyn FnMut(&AgentState) -> f64,
    safety: Option<&StaticSafety>,
    episodes: usize,
) -> Result<Vec<EpisodeLog>> {
    let mut env = Environment::new(cfg);
    let mut rng = Rng::new(cfg.seed);
    let mut controller = FixedPolicy { policy };
    let mut logs = Vec::with_capacity(episodes);
    for e in 0..episodes {
        env.begin_episode(e);
        let mode = match safety {
            Some(s) => SafetyMode::Static(s),
            None => SafetyMode::Off,
        };
        logs.push(run_episode(cfg, &mut env, &mut controller, mode, &mut rng, None)?);
    }
    Ok(logs)
}

/// CCCV under the config's setpoints.
pub fn evaluate_cccv(cfg: &ExperimentConfig, episodes: usize) -> Result<Vec<EpisodeLog>> {
    let p = cfg.cccv.clone();
    let (q, a_min) = (cfg.battery.capacity_q, cfg.action_min);
    evaluate(cfg, &mut |s: &AgentState| cccv_action(s.voltage, &p, q, a_min), None, episodes)
}
