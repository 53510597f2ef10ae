//! First-order Thevenin cell with a lumped thermal node and sqrt-throughput
//! resistance growth.
//!
//! The RC branch is integrated exactly over one sampling interval; the thermal
//! node uses forward Euler. Currents are given in C-rate and converted to
//! amperes through the cell capacity.

use serde::{Deserialize, Serialize};

use crate::types::BatteryState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BatteryParams {
    /// Nominal capacity, ampere-hours.
    pub capacity_q: f64,
    /// Series resistance of a fresh cell, ohms.
    pub r0_initial: f64,
    pub r1: f64,
    pub c1: f64,
    /// Open-circuit voltage knots as (soc, volts), strictly increasing.
    pub ocv_knots: Vec<(f64, f64)>,
    /// Joules per degree Celsius.
    pub thermal_mass: f64,
    /// Watts per degree Celsius to ambient.
    pub heat_transfer: f64,
    /// Ohm growth per sqrt(ampere-hour), relative to `r0_initial`.
    pub aging_alpha: f64,
    pub coulombic_eff: f64,
}

impl Default for BatteryParams {
    fn default() -> Self {
        Self {
            capacity_q: 5.0,
            r0_initial: 0.01,
            r1: 0.015,
            c1: 2000.0,
            ocv_knots: vec![
                (0.0, 3.00),
                (0.1, 3.35),
                (0.2, 3.45),
                (0.4, 3.50),
                (0.6, 3.70),
                (0.8, 3.95),
                (0.9, 4.05),
                (1.0, 4.20),
            ],
            thermal_mass: 100.0,
            heat_transfer: 0.2,
            aging_alpha: 0.0,
            coulombic_eff: 1.0,
        }
    }
}

impl BatteryParams {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("capacity_q", self.capacity_q),
            ("r0_initial", self.r0_initial),
            ("r1", self.r1),
            ("c1", self.c1),
            ("thermal_mass", self.thermal_mass),
            ("heat_transfer", self.heat_transfer),
            ("coulombic_eff", self.coulombic_eff),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("battery.{name} must be finite and > 0, got {v}"));
            }
        }
        if !(self.aging_alpha.is_finite() && self.aging_alpha >= 0.0) {
            return Err(format!("battery.aging_alpha must be >= 0, got {}", self.aging_alpha));
        }
        let k = &self.ocv_knots;
        if k.len() < 2 {
            return Err("battery.ocv_knots needs at least two knots".into());
        }
        if k[0].0 != 0.0 || k[k.len() - 1].0 != 1.0 {
            return Err("battery.ocv_knots must start at soc=0 and end at soc=1".into());
        }
        for w in k.windows(2) {
            if !(w[1].0 > w[0].0 && w[1].1 > w[0].1) {
                return Err("battery.ocv_knots must be strictly increasing in soc and volts".into());
            }
        }
        Ok(())
    }

    /// RC-branch decay factor over one sampling interval.
    pub fn rc_decay(&self, dt: f64) -> f64 {
        (-dt / (self.r1 * self.c1)).exp()
    }
}

/// Ambient temperature and aging schedule across episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AmbientSchedule {
    pub base_temp: f64,
    pub drift_start_episode: usize,
    pub drift_increment: f64,
    pub drift_cap: f64,
    /// When set, series resistance grows with throughput accumulated from
    /// `drift_start_episode` onwards.
    pub aging_enabled: bool,
}

impl Default for AmbientSchedule {
    fn default() -> Self {
        Self {
            base_temp: 25.0,
            drift_start_episode: usize::MAX,
            drift_increment: 0.0,
            drift_cap: 25.0,
            aging_enabled: false,
        }
    }
}

impl AmbientSchedule {
    /// Ambient temperature for a zero-based episode index.
    pub fn ambient(&self, episode: usize) -> f64 {
        if episode < self.drift_start_episode {
            return self.base_temp;
        }
        let drifted = self.base_temp + (episode - self.drift_start_episode) as f64 * self.drift_increment;
        drifted.min(self.drift_cap)
    }

    pub fn aging_active(&self, episode: usize) -> bool {
        self.aging_enabled && episode >= self.drift_start_episode
    }
}

/// Piecewise-linear open-circuit voltage; soc outside [0, 1] is clamped.
pub fn ocv(soc: f64, params: &BatteryParams) -> f64 {
    let s = soc.clamp(0.0, 1.0);
    let knots = &params.ocv_knots;
    for w in knots.windows(2) {
        let (s0, v0) = w[0];
        let (s1, v1) = w[1];
        if s <= s1 {
            if s == s1 {
                return v1;
            }
            return v0 + (v1 - v0) * (s - s0) / (s1 - s0);
        }
    }
    knots[knots.len() - 1].1
}

/// Advances the cell by one sampling interval under a constant charging
/// current given in C-rate.
///
/// Panics on non-finite inputs or a negative current: both indicate a bug in
/// the caller, never a recoverable condition.
pub fn step(state: &BatteryState, current: f64, dt: f64, ambient: f64, params: &BatteryParams) -> BatteryState {
    assert!(
        current.is_finite() && dt.is_finite() && ambient.is_finite(),
        "non-finite battery step input: current={current} dt={dt} ambient={ambient}"
    );
    assert!(current >= 0.0, "charging current must be non-negative, got {current}");
    assert!(dt > 0.0, "dt must be positive, got {dt}");

    let amps = current * params.capacity_q;
    let soc = (state.soc + params.coulombic_eff * amps * dt / (3600.0 * params.capacity_q)).clamp(0.0, 1.0);
    let decay = params.rc_decay(dt);
    let rc_voltage = state.rc_voltage * decay + params.r1 * (1.0 - decay) * amps;
    let voltage = ocv(soc, params) + state.r0 * amps + rc_voltage;
    let heat = amps * amps * state.r0 + rc_voltage * rc_voltage / params.r1;
    let temperature =
        state.temperature + (dt / params.thermal_mass) * (heat - params.heat_transfer * (state.temperature - ambient));

    BatteryState {
        soc,
        voltage,
        temperature,
        rc_voltage,
        throughput_ah: state.throughput_ah + amps * dt / 3600.0,
        r0: state.r0,
    }
}

/// Series resistance after `throughput_ah` of aging charge.
pub fn apply_aging(params: &BatteryParams, throughput_ah: f64) -> f64 {
    params.r0_initial * (1.0 + params.aging_alpha * throughput_ah.max(0.0).sqrt())
}

/// Fresh episode start. Aging (`throughput_ah`, `r0`) carries over from
/// `previous`; pass `None` for a new cell.
pub fn reset(params: &BatteryParams, soc_start: f64, ambient: f64, previous: Option<&BatteryState>) -> BatteryState {
    let (throughput_ah, r0) = previous.map_or((0.0, params.r0_initial), |p| (p.throughput_ah, p.r0));
    BatteryState {
        soc: soc_start,
        voltage: ocv(soc_start, params),
        temperature: ambient,
        rc_voltage: 0.0,
        throughput_ah,
        r0,
    }
}
