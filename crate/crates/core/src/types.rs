use serde::{Deserialize, Serialize};

/// Full simulator state of the cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryState {
    pub soc: f64,
    /// Terminal voltage, volts.
    pub voltage: f64,
    /// Cell temperature, degrees Celsius.
    pub temperature: f64,
    /// RC-branch polarization, volts.
    pub rc_voltage: f64,
    /// Cumulative charge throughput, ampere-hours.
    pub throughput_ah: f64,
    /// Series resistance currently in effect, ohms.
    pub r0: f64,
}

/// What the agent observes: the measurable part of the cell plus the
/// previously applied current (C-rate).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub soc: f64,
    pub voltage: f64,
    pub temperature: f64,
    pub prev_action: f64,
}

impl AgentState {
    pub fn observe(battery: &BatteryState, prev_action: f64) -> Self {
        Self { soc: battery.soc, voltage: battery.voltage, temperature: battery.temperature, prev_action }
    }
}

/// Fixed min/max ranges that map observations onto [-1, 1] for the networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Normalization {
    pub soc: (f64, f64),
    pub voltage: (f64, f64),
    pub temperature: (f64, f64),
    pub action: (f64, f64),
}

impl Default for Normalization {
    fn default() -> Self {
        Self { soc: (0.0, 1.0), voltage: (3.0, 4.6), temperature: (10.0, 50.0), action: (0.05, 4.5) }
    }
}

fn to_unit(x: f64, (lo, hi): (f64, f64)) -> f64 {
    2.0 * (x - lo) / (hi - lo) - 1.0
}

fn from_unit(u: f64, (lo, hi): (f64, f64)) -> f64 {
    lo + 0.5 * (u + 1.0) * (hi - lo)
}

impl Normalization {
    pub fn state(&self, s: &AgentState) -> [f64; 4] {
        [
            to_unit(s.soc, self.soc),
            to_unit(s.voltage, self.voltage),
            to_unit(s.temperature, self.temperature),
            to_unit(s.prev_action, self.action),
        ]
    }

    pub fn denormalize_state(&self, u: &[f64; 4]) -> AgentState {
        AgentState {
            soc: from_unit(u[0], self.soc),
            voltage: from_unit(u[1], self.voltage),
            temperature: from_unit(u[2], self.temperature),
            prev_action: from_unit(u[3], self.action),
        }
    }

    pub fn action(&self, a: f64) -> f64 {
        to_unit(a, self.action)
    }

    pub fn denormalize_action(&self, u: f64) -> f64 {
        from_unit(u, self.action)
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, (lo, hi)) in
            [("soc", self.soc), ("voltage", self.voltage), ("temperature", self.temperature), ("action", self.action)]
        {
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(format!("normalization.{name} needs finite lo < hi, got ({lo}, {hi})"));
            }
        }
        Ok(())
    }
}

/// One replay-buffer entry; `action` is the current actually executed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: AgentState,
    pub action: f64,
    pub reward: f64,
    pub next_state: AgentState,
    pub done: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn normalization_round_trip(
            soc in 0.0f64..1.0,
            v in 3.0f64..4.6,
            t in 10.0f64..50.0,
            a in 0.05f64..4.5,
        ) {
            let n = Normalization::default();
            let s = AgentState { soc, voltage: v, temperature: t, prev_action: a };
            let back = n.denormalize_state(&n.state(&s));
            prop_assert!((back.soc - soc).abs() < 1e-12);
            prop_assert!((back.voltage - v).abs() < 1e-12);
            prop_assert!((back.temperature - t).abs() < 1e-12);
            prop_assert!((back.prev_action - a).abs() < 1e-12);
            for u in n.state(&s) {
                prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&u));
            }
        }
    }
}
