//! Episode loop, training procedures for the three modes, and run output.

use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::battery::{self, BatteryParams};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::gp::PosteriorScratch;
use crate::protocols::EpisodeMetrics;
use crate::rng::Rng;
use crate::safety::{
    adaptive_posterior, project, uub, Constraint, DynamicSafety, ProjectionResult, ProjectionSettings, SafetyData,
    StaticSafety, StaticSafetySnapshot,
};
use crate::td3::{ReplayBuffer, Td3Agent, Td3Checkpoint};
use crate::types::{AgentState, BatteryState, Transition};

/// `-1 - lambda_v [V - V_max]+ - lambda_t [T - T_max]+`.
pub fn reward(v: f64, t: f64, v_max: f64, t_max: f64, lambda_v: f64, lambda_t: f64) -> f64 {
    -1.0 - lambda_v * (v - v_max).max(0.0) - lambda_t * (t - t_max).max(0.0)
}

/// Training variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// TD3 without a safety layer.
    Plain,
    /// Projection through GPs frozen after warmup.
    StaticSafe,
    /// Static GPs corrected by per-episode residual GPs.
    AdaptiveSafe,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Plain => "plain",
            Mode::StaticSafe => "static-safe",
            Mode::AdaptiveSafe => "adaptive-safe",
        }
    }
}

/// The simulated cell across episodes: ambient schedule, aging, and the
/// state of the running episode.
#[derive(Debug, Clone)]
pub struct Environment {
    pub params: BatteryParams,
    pub state: BatteryState,
    pub ambient: f64,
    pub episode: usize,
    schedule: crate::battery::AmbientSchedule,
    soc_start: f64,
    dt: f64,
    aging_baseline: Option<f64>,
}

impl Environment {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        let ambient = cfg.ambient.ambient(0);
        Self {
            params: cfg.battery.clone(),
            state: battery::reset(&cfg.battery, cfg.soc_start, ambient, None),
            ambient,
            episode: 0,
            schedule: cfg.ambient.clone(),
            soc_start: cfg.soc_start,
            dt: cfg.dt,
            aging_baseline: None,
        }
    }

    /// Resets the cell for zero-based episode `e`. Resistance grows with the
    /// charge passed since aging switched on.
    pub fn begin_episode(&mut self, e: usize) {
        self.episode = e;
        self.ambient = self.schedule.ambient(e);
        let mut s = battery::reset(&self.params, self.soc_start, self.ambient, Some(&self.state));
        if self.schedule.aging_active(e) {
            let base = *self.aging_baseline.get_or_insert(s.throughput_ah);
            s.r0 = battery::apply_aging(&self.params, s.throughput_ah - base);
        }
        self.state = s;
    }

    pub fn step(&mut self, current: f64) -> &BatteryState {
        self.state = battery::step(&self.state, current, self.dt, self.ambient, &self.params);
        &self.state
    }
}

/// Chooses raw actions and learns from executed transitions.
pub trait Controller {
    fn act(&mut self, s: &AgentState, rng: &mut Rng) -> f64;

    fn observe(&mut self, _tr: &Transition, _rng: &mut Rng) -> Result<()> {
        Ok(())
    }
}

/// Which safety layer filters the raw actions of an episode.
pub enum SafetyMode<'a> {
    Off,
    Static(&'a StaticSafety),
    /// Projection starts at the given 1-based step; residuals are recorded
    /// at every step.
    Adaptive(&'a StaticSafety, &'a mut DynamicSafety, usize),
}

/// Called after every adaptive step, once the residual GPs are refreshed.
pub type StepObserver<'a> = &'a mut dyn FnMut(&StaticSafety, &DynamicSafety);

/// One executed step. State columns are the values after the step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub t: usize,
    pub soc: f64,
    pub voltage: f64,
    pub temperature: f64,
    pub ambient: f64,
    pub raw_action: f64,
    pub executed_action: f64,
    pub was_projected: bool,
    pub feasible: bool,
    pub uub_t: Option<f64>,
    pub uub_v: Option<f64>,
    /// Temperature mean predicted by the active surrogate for this step.
    pub pred_t: Option<f64>,
    /// Same prediction from the static GP alone.
    pub pred_t_static: Option<f64>,
    pub pred_v: Option<f64>,
    pub reward: f64,
    pub rl_us: u64,
    pub gp_us: u64,
    pub projection_us: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub rows: Vec<StepRow>,
    pub metrics: EpisodeMetrics,
}

impl EpisodeLog {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Executed action and the safety-layer columns of one step.
struct Filtered {
    action: f64,
    was_projected: bool,
    feasible: bool,
    uub_t: Option<f64>,
    uub_v: Option<f64>,
    pred_t: Option<f64>,
    pred_t_static: Option<f64>,
    pred_v: Option<f64>,
}

impl Filtered {
    fn passthrough(raw: f64) -> Self {
        Self {
            action: raw,
            was_projected: false,
            feasible: true,
            uub_t: None,
            uub_v: None,
            pred_t: None,
            pred_t_static: None,
            pred_v: None,
        }
    }

    fn from_projection(p: &ProjectionResult, static_mean_t: f64) -> Self {
        Self {
            action: p.action,
            was_projected: p.was_projected,
            feasible: p.feasible,
            uub_t: Some(p.uub_t),
            uub_v: Some(p.uub_v),
            pred_t: Some(p.mean_t),
            pred_t_static: Some(static_mean_t),
            pred_v: Some(p.mean_v),
        }
    }
}

fn micros(start: Instant) -> u64 {
    start.elapsed().as_micros() as u64
}

/// Runs one episode from the environment's current reset state until
/// `soc >= soc_target` or `max_steps`.
pub fn run_episode(
    cfg: &ExperimentConfig,
    env: &mut Environment,
    controller: &mut dyn Controller,
    mut mode: SafetyMode<'_>,
    rng: &mut Rng,
    mut observer: Option<StepObserver<'_>>,
) -> Result<EpisodeLog> {
    let settings = ProjectionSettings::from_config(cfg);
    let mut scratch = PosteriorScratch::default();
    let mut rows = Vec::new();
    let mut prev_action = 0.0;
    if let SafetyMode::Adaptive(_, d, _) = &mut mode {
        d.reset_episode();
    }
    for t in 1..=cfg.max_steps {
        let s = AgentState::observe(&env.state, prev_action);
        let clock = Instant::now();
        let raw = controller.act(&s, rng);
        let mut rl_us = micros(clock);

        let clock = Instant::now();
        let (z_t, z_v) = (s.temperature, s.voltage);
        let f = match &mode {
            SafetyMode::Off => Filtered::passthrough(raw),
            SafetyMode::Static(stat) => {
                let p = project(raw, z_t, z_v, prev_action, Some(stat), None, &settings, &mut scratch)?;
                Filtered::from_projection(&p, p.mean_t)
            }
            SafetyMode::Adaptive(stat, d, start) if t >= *start => {
                let p = project(raw, z_t, z_v, prev_action, Some(stat), Some(d), &settings, &mut scratch)?;
                let static_mean = stat.temp.mean(&[z_t, prev_action, p.action], &mut scratch);
                Filtered::from_projection(&p, static_mean)
            }
            SafetyMode::Adaptive(stat, d, _) => {
                // before projection starts: raw action, predictions logged only
                let x_t = [z_t, prev_action, raw];
                let (mt, vt) = adaptive_posterior(&stat.temp, d.model(Constraint::Temperature), &x_t, &mut scratch);
                let (mv, vv) =
                    adaptive_posterior(&stat.volt, d.model(Constraint::Voltage), &[z_v, prev_action, raw], &mut scratch);
                let (ut, uv) = (uub(mt, vt, stat.kappa), uub(mv, vv, stat.kappa));
                Filtered {
                    feasible: ut <= stat.temp_max && uv <= stat.volt_max,
                    uub_t: Some(ut),
                    uub_v: Some(uv),
                    pred_t: Some(mt),
                    pred_t_static: Some(stat.temp.mean(&x_t, &mut scratch)),
                    pred_v: Some(mv),
                    ..Filtered::passthrough(raw)
                }
            }
        };
        let projection_us = micros(clock);
        let action = f.action;

        let next = env.step(action).clone();
        let r = reward(next.voltage, next.temperature, cfg.volt_max, cfg.temp_max, cfg.lambda_v, cfg.lambda_t);
        let done = next.soc >= cfg.soc_target;
        let tr = Transition { state: s, action, reward: r, next_state: AgentState::observe(&next, action), done };
        let clock = Instant::now();
        controller.observe(&tr, rng)?;
        rl_us += micros(clock);

        let mut gp_us = 0;
        if let SafetyMode::Adaptive(stat, d, _) = &mut mode {
            let clock = Instant::now();
            let x_t = [z_t, prev_action, action];
            let x_v = [z_v, prev_action, action];
            let mt = stat.temp.mean(&x_t, &mut scratch);
            let mv = stat.volt.mean(&x_v, &mut scratch);
            d.record_residual(Constraint::Temperature, &x_t, next.temperature, mt)?;
            d.record_residual(Constraint::Voltage, &x_v, next.voltage, mv)?;
            if let Some(obs) = observer.as_mut() {
                obs(stat, d);
            }
            gp_us = micros(clock);
        }

        rows.push(StepRow {
            t,
            soc: next.soc,
            voltage: next.voltage,
            temperature: next.temperature,
            ambient: env.ambient,
            raw_action: raw,
            executed_action: action,
            was_projected: f.was_projected,
            feasible: f.feasible,
            uub_t: f.uub_t,
            uub_v: f.uub_v,
            pred_t: f.pred_t,
            pred_t_static: f.pred_t_static,
            pred_v: f.pred_v,
            reward: r,
            rl_us,
            gp_us,
            projection_us,
        });
        prev_action = action;
        if done {
            break;
        }
    }
    let metrics = metrics_from_rows(cfg, env.episode, &rows);
    Ok(EpisodeLog { rows, metrics })
}

fn metrics_from_rows(cfg: &ExperimentConfig, episode: usize, rows: &[StepRow]) -> EpisodeMetrics {
    let steps = rows.len();
    let finished = rows.last().is_some_and(|r| r.soc >= cfg.soc_target);
    EpisodeMetrics {
        episode,
        steps,
        finished,
        charge_minutes: steps as f64 * cfg.dt / 60.0,
        max_t: rows.iter().map(|r| r.temperature).fold(f64::NEG_INFINITY, f64::max),
        max_v: rows.iter().map(|r| r.voltage).fold(f64::NEG_INFINITY, f64::max),
        violation_steps_t: rows.iter().filter(|r| r.temperature > cfg.temp_max).count(),
        violation_steps_v: rows.iter().filter(|r| r.voltage > cfg.volt_max).count(),
        cumulative_reward: rows.iter().map(|r| r.reward).sum(),
    }
}

struct Learner<'a> {
    agent: &'a mut Td3Agent,
    buffer: &'a mut ReplayBuffer,
    data: Option<&'a mut SafetyData>,
    batch_size: usize,
    random: Option<(f64, f64)>,
}

impl Controller for Learner<'_> {
    fn act(&mut self, s: &AgentState, rng: &mut Rng) -> f64 {
        match self.random {
            Some((lo, hi)) => rng.uniform_range(lo, hi),
            None => self.agent.select_action(s, rng, true),
        }
    }

    fn observe(&mut self, tr: &Transition, rng: &mut Rng) -> Result<()> {
        self.buffer.push(*tr);
        if let Some(data) = self.data.as_deref_mut() {
            let (s, n) = (&tr.state, &tr.next_state);
            data.push(s.temperature, s.voltage, s.prev_action, tr.action, n.temperature, n.voltage);
        }
        if self.buffer.len() >= self.batch_size {
            self.agent.train_step(self.buffer, self.batch_size, rng)?;
        }
        Ok(())
    }
}

/// Everything a training run produces.
pub struct TrainOutput {
    pub mode: Mode,
    pub agent: Td3Agent,
    pub safety: Option<StaticSafety>,
    pub logs: Vec<EpisodeLog>,
}

/// Random-action warmup for `warmup_episodes`, then noisy actor actions,
/// filtered according to `mode`. The agent learns from every step.
pub fn train(cfg: &ExperimentConfig, mode: Mode, mut observer: Option<StepObserver<'_>>) -> Result<TrainOutput> {
    cfg.validate()?;
    let mut root = Rng::new(cfg.seed);
    let mut init_rng = root.fork();
    let mut step_rng = root.fork();
    let mut gp_rng = root.fork();

    let mut agent = Td3Agent::new(&cfg.agent, cfg.action_min, cfg.action_max, cfg.normalization.clone(), &mut init_rng);
    let mut buffer = ReplayBuffer::new(cfg.agent.replay_capacity);
    let mut env = Environment::new(cfg);
    let mut data = SafetyData::default();
    let mut safety: Option<StaticSafety> = None;
    let mut dynamic: Option<DynamicSafety> = None;
    let mut logs = Vec::with_capacity(cfg.episodes);
    let collect = mode != Mode::Plain;

    for e in 0..cfg.episodes {
        env.begin_episode(e);
        let warmup = e < cfg.warmup_episodes;
        if !warmup && collect && safety.is_none() {
            let stat = StaticSafety::fit(&data, cfg, &mut gp_rng)?;
            if mode == Mode::AdaptiveSafe {
                dynamic = Some(DynamicSafety::new(&stat, &cfg.gp));
            }
            safety = Some(stat);
        }
        agent.noise_std = cfg.noise_std(e);
        let mut learner = Learner {
            agent: &mut agent,
            buffer: &mut buffer,
            data: (warmup && collect).then_some(&mut data),
            batch_size: cfg.agent.batch_size,
            random: warmup.then_some((cfg.action_min, cfg.action_max)),
        };
        let safety_mode = match (warmup, mode, safety.as_ref(), dynamic.as_mut()) {
            (true, ..) | (_, Mode::Plain, ..) => SafetyMode::Off,
            (false, Mode::StaticSafe, Some(s), _) => SafetyMode::Static(s),
            (false, Mode::AdaptiveSafe, Some(s), Some(d)) => SafetyMode::Adaptive(s, d, cfg.projection_start_step),
            _ => unreachable!("safety layer is fitted before the first post-warmup episode"),
        };
        let obs = observer.as_mut().map(|o| &mut **o as &mut dyn FnMut(&StaticSafety, &DynamicSafety));
        logs.push(run_episode(cfg, &mut env, &mut learner, safety_mode, &mut step_rng, obs)?);
    }
    // an all-warmup run still fits the surrogates it collected data for
    if collect && safety.is_none() {
        safety = Some(StaticSafety::fit(&data, cfg, &mut gp_rng)?);
    }
    Ok(TrainOutput { mode, agent, safety, logs })
}

/// Agent, optional static GPs and the config they were trained under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunCheckpoint {
    pub mode: Mode,
    pub config: ExperimentConfig,
    pub agent: Td3Checkpoint,
    pub safety: Option<StaticSafetySnapshot>,
}

impl RunCheckpoint {
    pub fn from_output(cfg: &ExperimentConfig, out: &TrainOutput) -> Self {
        Self {
            mode: out.mode,
            config: cfg.clone(),
            agent: out.agent.to_checkpoint(),
            safety: out.safety.as_ref().map(StaticSafety::snapshot),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Serialize)]
struct SummaryRow {
    episode: usize,
    reward: f64,
    steps: usize,
    #[serde(rename = "max_T")]
    max_t: f64,
    #[serde(rename = "max_V")]
    max_v: f64,
    #[serde(rename = "violations_T")]
    violations_t: usize,
    #[serde(rename = "violations_V")]
    violations_v: usize,
}

pub fn write_summary(path: &Path, logs: &[EpisodeLog]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for log in logs {
        let m = &log.metrics;
        w.serialize(SummaryRow {
            episode: m.episode,
            reward: m.cumulative_reward,
            steps: m.steps,
            max_t: m.max_t,
            max_v: m.max_v,
            violations_t: m.violation_steps_t,
            violations_v: m.violation_steps_v,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Writes `summary.csv` and one `episodes/episode_NNNN.csv` per episode.
pub fn write_logs(dir: &Path, logs: &[EpisodeLog]) -> Result<()> {
    let episodes = dir.join("episodes");
    fs::create_dir_all(&episodes).map_err(|e| Error::io(&episodes, e))?;
    for log in logs {
        log.write_csv(&episodes.join(format!("episode_{:04}.csv", log.metrics.episode)))?;
    }
    write_summary(&dir.join("summary.csv"), logs)
}

/// Mean and extremes over a set of episodes, for one-line reports.
pub fn describe(logs: &[EpisodeLog]) -> String {
    if logs.is_empty() {
        return "no episodes".into();
    }
    let n = logs.len() as f64;
    let last = &logs[logs.len() - 1].metrics;
    let violating = logs.iter().filter(|l| l.metrics.violated()).count();
    let mean_steps = logs.iter().map(|l| l.metrics.steps as f64).sum::<f64>() / n;
    format!(
        "episodes={} mean_steps={:.1} last_steps={} last_finished={} last_max_T={:.2} last_max_V={:.3} episodes_with_violations={}",
        logs.len(),
        mean_steps,
        last.steps,
        last.finished,
        last.max_t,
        last.max_v,
        violating
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::AgentConfig;

    fn tiny(episodes: usize) -> ExperimentConfig {
        ExperimentConfig {
            episodes,
            warmup_episodes: 2.min(episodes),
            max_steps: 40,
            agent: AgentConfig { hidden: vec![16, 16], batch_size: 16, ..AgentConfig::default() },
            gp: crate::config::GpConfig { n_max: 64, restarts: 1, ..Default::default() },
            ..ExperimentConfig::fixed_condition()
        }
    }

    #[test]
    fn reward_examples() {
        assert_eq!(reward(4.0, 30.0, 4.3, 45.0, 15.0, 20.0), -1.0);
        assert!((reward(4.4, 30.0, 4.3, 45.0, 15.0, 20.0) + 2.5).abs() < 1e-12);
        assert!((reward(4.0, 45.5, 4.3, 45.0, 15.0, 20.0) + 11.0).abs() < 1e-12);
    }

    #[test]
    fn plain_mode_never_touches_safety() {
        let out = train(&tiny(4), Mode::Plain, None).unwrap();
        assert!(out.safety.is_none());
        for log in &out.logs {
            for r in &log.rows {
                assert!(r.uub_t.is_none() && r.pred_t.is_none() && !r.was_projected);
                assert_eq!(r.gp_us, 0);
            }
        }
    }

    #[test]
    fn log_invariants() {
        let cfg = tiny(4);
        let out = train(&cfg, Mode::AdaptiveSafe, None).unwrap();
        for log in &out.logs {
            let m = &log.metrics;
            assert_eq!(m.steps, log.rows.len());
            let total: f64 = log.rows.iter().map(|r| r.reward).sum();
            assert!((m.cumulative_reward - total).abs() < 1e-12);
            for (i, r) in log.rows.iter().enumerate() {
                assert_eq!(r.t, i + 1);
                if !r.was_projected {
                    assert_eq!(r.executed_action, r.raw_action);
                }
                assert!((cfg.action_min..=cfg.action_max).contains(&r.executed_action));
            }
            // ends iff target reached or step limit
            let last = log.rows.last().unwrap();
            assert!(last.soc >= cfg.soc_target || log.rows.len() == cfg.max_steps);
            assert!(log.rows[..log.rows.len() - 1].iter().all(|r| r.soc < cfg.soc_target));
        }
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = tiny(3);
        let a = train(&cfg, Mode::StaticSafe, None).unwrap();
        let b = train(&cfg, Mode::StaticSafe, None).unwrap();
        let strip = |logs: &[EpisodeLog]| -> Vec<Vec<(f64, f64, f64)>> {
            logs.iter().map(|l| l.rows.iter().map(|r| (r.executed_action, r.temperature, r.reward)).collect()).collect()
        };
        assert_eq!(strip(&a.logs), strip(&b.logs));
        assert_eq!(a.agent.to_checkpoint(), b.agent.to_checkpoint());
    }

    #[test]
    fn all_warmup_run_still_fits_surrogates() {
        let cfg = ExperimentConfig { warmup_episodes: 2, ..tiny(2) };
        let out = train(&cfg, Mode::StaticSafe, None).unwrap();
        assert!(out.safety.is_some());
        assert_eq!(out.logs.len(), 2);
    }

    #[test]
    fn late_projection_start_disables_projection() {
        let cfg = ExperimentConfig { projection_start_step: 41, ..tiny(4) };
        let out = train(&cfg, Mode::AdaptiveSafe, None).unwrap();
        assert!(out.logs.iter().flat_map(|l| &l.rows).all(|r| !r.was_projected));
    }

    #[test]
    fn aging_grows_resistance_after_drift_start() {
        let mut cfg = ExperimentConfig::varying_condition();
        cfg.ambient.drift_start_episode = 1;
        let mut env = Environment::new(&cfg);
        env.begin_episode(0);
        for _ in 0..50 {
            env.step(2.0);
        }
        env.begin_episode(1);
        assert_eq!(env.state.r0, cfg.battery.r0_initial);
        for _ in 0..50 {
            env.step(2.0);
        }
        env.begin_episode(2);
        assert!(env.state.r0 > cfg.battery.r0_initial);
        assert_eq!(env.state.temperature, cfg.ambient.ambient(2));
    }

    #[test]
    fn output_files() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(2);
        let out = train(&cfg, Mode::Plain, None).unwrap();
        write_logs(dir.path(), &out.logs).unwrap();
        let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert!(summary.starts_with("episode,reward,steps,max_T,max_V,violations_T,violations_V\n"));
        assert_eq!(summary.lines().count(), 3);
        assert!(dir.path().join("episodes/episode_0001.csv").exists());
        let ck = RunCheckpoint::from_output(&cfg, &out);
        let path = dir.path().join("checkpoint.json");
        ck.save(&path).unwrap();
        assert_eq!(RunCheckpoint::load(&path).unwrap(), ck);
    }
}
