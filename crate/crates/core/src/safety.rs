//! GP safety layer: static surrogates of the next temperature and voltage,
//! per-episode residual GPs, and projection of the agent's action onto the
//! set where both upper uncertainty bounds stay under their limits.

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, GpConfig};
use crate::error::{Error, Result};
use crate::gp::{thin, GpModel, GpSnapshot, InputScaling, KernelParams, OptimizeOptions, PosteriorScratch};
use crate::rng::Rng;

/// The two constrained quantities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constraint {
    Temperature,
    Voltage,
}

/// How a surrogate's GP target relates to the next value of the variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurrogateTarget {
    /// The GP predicts `z_{t+1}` directly.
    Absolute,
    /// The GP predicts `z_{t+1} - z_t`; the current value is added back.
    #[default]
    Increment,
}

/// GP input for a constraint surrogate: `[z_t, a_{t-1}, a_t]`.
pub type SurrogateInput = [f64; 3];

/// `mean + kappa * sqrt(var)`.
pub fn uub(mean: f64, var: f64, kappa: f64) -> f64 {
    mean + kappa * var.max(0.0).sqrt()
}

/// Static surrogate of one variable's next value.
#[derive(Debug, Clone)]
pub struct ConstraintGp {
    pub gp: GpModel,
    pub target: SurrogateTarget,
}

impl ConstraintGp {
    fn offset(&self, x: &SurrogateInput) -> f64 {
        match self.target {
            SurrogateTarget::Absolute => 0.0,
            SurrogateTarget::Increment => x[0],
        }
    }

    /// Predicted mean of `z_{t+1}`.
    pub fn mean(&self, x: &SurrogateInput, scratch: &mut PosteriorScratch) -> f64 {
        self.offset(x) + self.gp.mean(x, scratch)
    }

    /// Predicted mean and variance of `z_{t+1}`.
    pub fn posterior(&self, x: &SurrogateInput, scratch: &mut PosteriorScratch) -> (f64, f64) {
        let (m, v) = self.gp.posterior_with(x, scratch);
        (self.offset(x) + m, v)
    }
}

/// Training rows collected from warmup episodes, one set per constraint.
#[derive(Debug, Clone, Default)]
pub struct SafetyData {
    pub temp_x: Vec<SurrogateInput>,
    pub temp_next: Vec<f64>,
    pub volt_x: Vec<SurrogateInput>,
    pub volt_next: Vec<f64>,
}

impl SafetyData {
    pub fn push(&mut self, t: f64, v: f64, a_prev: f64, a: f64, t_next: f64, v_next: f64) {
        self.temp_x.push([t, a_prev, a]);
        self.temp_next.push(t_next);
        self.volt_x.push([v, a_prev, a]);
        self.volt_next.push(v_next);
    }

    pub fn len(&self) -> usize {
        self.temp_next.len()
    }

    pub fn is_empty(&self) -> bool {
        self.temp_next.is_empty()
    }
}

/// Frozen surrogates plus the limits they guard.
#[derive(Debug, Clone)]
pub struct StaticSafety {
    pub temp: ConstraintGp,
    pub volt: ConstraintGp,
    pub temp_max: f64,
    pub volt_max: f64,
    pub kappa: f64,
}

fn fit_one(
    x: &[SurrogateInput],
    next: &[f64],
    target: SurrogateTarget,
    g: &GpConfig,
    rng: &mut Rng,
) -> Result<ConstraintGp> {
    let (xs, ys) = thin(x, next, g.n_max, rng);
    let rows: Vec<Vec<f64>> = xs.iter().map(|r| r.to_vec()).collect();
    let y: Vec<f64> = match target {
        SurrogateTarget::Absolute => ys,
        SurrogateTarget::Increment => xs.iter().zip(&ys).map(|(r, y)| y - r[0]).collect(),
    };
    let kernel = KernelParams { signal_var: g.signal_var, length_scale: g.length_scale, noise_var: g.noise_var };
    let gp = if g.optimize {
        let opts = OptimizeOptions { restarts: g.restarts, ..OptimizeOptions::default() };
        GpModel::fit_optimized(&rows, &y, kernel, &opts, rng)?.0
    } else {
        GpModel::fit(&rows, &y, kernel)?
    };
    Ok(ConstraintGp { gp, target })
}

impl StaticSafety {
    pub fn fit(data: &SafetyData, cfg: &ExperimentConfig, rng: &mut Rng) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::SafetyNotReady("no warmup data to fit the static GPs"));
        }
        let g = &cfg.gp;
        Ok(Self {
            temp: fit_one(&data.temp_x, &data.temp_next, g.target, g, rng)?,
            volt: fit_one(&data.volt_x, &data.volt_next, g.target, g, rng)?,
            temp_max: cfg.temp_max,
            volt_max: cfg.volt_max,
            kappa: cfg.kappa,
        })
    }

    pub fn surrogate(&self, c: Constraint) -> &ConstraintGp {
        match c {
            Constraint::Temperature => &self.temp,
            Constraint::Voltage => &self.volt,
        }
    }

    pub fn snapshot(&self) -> StaticSafetySnapshot {
        StaticSafetySnapshot {
            temp: self.temp.gp.snapshot(),
            volt: self.volt.gp.snapshot(),
            target: self.temp.target,
            temp_max: self.temp_max,
            volt_max: self.volt_max,
            kappa: self.kappa,
        }
    }

    pub fn from_snapshot(s: &StaticSafetySnapshot) -> Result<Self> {
        Ok(Self {
            temp: ConstraintGp { gp: GpModel::from_snapshot(&s.temp)?, target: s.target },
            volt: ConstraintGp { gp: GpModel::from_snapshot(&s.volt)?, target: s.target },
            temp_max: s.temp_max,
            volt_max: s.volt_max,
            kappa: s.kappa,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticSafetySnapshot {
    pub temp: GpSnapshot,
    pub volt: GpSnapshot,
    pub target: SurrogateTarget,
    pub temp_max: f64,
    pub volt_max: f64,
    pub kappa: f64,
}

/// Residual GPs fitted online within one episode.
#[derive(Debug, Clone)]
pub struct DynamicSafety {
    kernel: KernelParams,
    min_points: usize,
    temp: ResidualGp,
    volt: ResidualGp,
}

#[derive(Debug, Clone)]
struct ResidualGp {
    scaling: crate::gp::Scaling,
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    gp: Option<GpModel>,
}

impl ResidualGp {
    fn clear(&mut self) {
        self.x.clear();
        self.y.clear();
        self.gp = None;
    }
}

impl DynamicSafety {
    /// Residual GPs share the static surrogates' input standardization so
    /// the fixed kernel length scale has the same meaning for both.
    pub fn new(stat: &StaticSafety, g: &GpConfig) -> Self {
        let res = |c: &ConstraintGp| ResidualGp {
            scaling: c.gp.input_scaling().clone(),
            x: Vec::new(),
            y: Vec::new(),
            gp: None,
        };
        Self {
            kernel: KernelParams { signal_var: g.signal_var, length_scale: g.length_scale, noise_var: g.noise_var },
            min_points: g.dynamic_min_points,
            temp: res(&stat.temp),
            volt: res(&stat.volt),
        }
    }

    fn slot(&self, c: Constraint) -> &ResidualGp {
        match c {
            Constraint::Temperature => &self.temp,
            Constraint::Voltage => &self.volt,
        }
    }

    /// Stores `z_true - static_mean` and refits once `min_points` residuals
    /// are available.
    pub fn record_residual(&mut self, c: Constraint, x: &SurrogateInput, z_true: f64, static_mean: f64) -> Result<()> {
        let min_points = self.min_points;
        let kernel = self.kernel;
        let slot = match c {
            Constraint::Temperature => &mut self.temp,
            Constraint::Voltage => &mut self.volt,
        };
        let r = z_true - static_mean;
        slot.x.push(x.to_vec());
        slot.y.push(r);
        if slot.y.len() < min_points {
            return Ok(());
        }
        match &mut slot.gp {
            Some(gp) => gp.push(x, r)?,
            None => {
                slot.gp = Some(GpModel::fit_scaled(&slot.x, &slot.y, kernel, InputScaling::Fixed(slot.scaling.clone()))?)
            }
        }
        Ok(())
    }

    pub fn reset_episode(&mut self) {
        self.temp.clear();
        self.volt.clear();
    }

    pub fn buffer_len(&self, c: Constraint) -> usize {
        self.slot(c).y.len()
    }

    pub fn is_active(&self, c: Constraint) -> bool {
        self.slot(c).gp.is_some()
    }

    pub fn model(&self, c: Constraint) -> Option<&GpModel> {
        self.slot(c).gp.as_ref()
    }

    /// Residual posterior mean, 0 while inactive.
    pub fn mean(&self, c: Constraint, x: &SurrogateInput, scratch: &mut PosteriorScratch) -> f64 {
        self.slot(c).gp.as_ref().map_or(0.0, |gp| gp.mean(x, scratch))
    }
}

/// Static posterior of the next value, with the residual mean added when a
/// dynamic GP is supplied and active. The variance is always the static one.
pub fn adaptive_posterior(
    stat: &ConstraintGp,
    dynamic: Option<&GpModel>,
    x: &SurrogateInput,
    scratch: &mut PosteriorScratch,
) -> (f64, f64) {
    let (m, v) = stat.posterior(x, scratch);
    let dm = dynamic.map_or(0.0, |gp| gp.mean(x, scratch));
    (m + dm, v)
}

/// Solver settings for [`project`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionSettings {
    pub a_min: f64,
    pub a_max: f64,
    pub grid: usize,
    pub tol: f64,
}

impl ProjectionSettings {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        Self { a_min: cfg.action_min, a_max: cfg.action_max, grid: cfg.projection_grid, tol: cfg.projection_tol }
    }
}

/// Outcome of one projection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionResult {
    pub action: f64,
    pub was_projected: bool,
    pub feasible: bool,
    pub uub_t: f64,
    pub uub_v: f64,
    /// Posterior means of the next temperature and voltage at `action`.
    pub mean_t: f64,
    pub mean_v: f64,
}

/// Scalar outcome of [`solve_projection`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarProjection {
    pub action: f64,
    pub was_projected: bool,
    pub feasible: bool,
}

/// Closest point to `a_raw` in `{a in [a_min, a_max] : feasible(a)}`.
///
/// Grid points are visited in order of distance from `a_raw` (the lower one
/// first on ties) and the first feasible one is refined by bisection toward
/// `a_raw` until the bracket is shorter than `tol`.
pub fn solve_projection(a_raw: f64, s: &ProjectionSettings, mut feasible: impl FnMut(f64) -> bool) -> ScalarProjection {
    let a_raw = a_raw.clamp(s.a_min, s.a_max);
    if feasible(a_raw) {
        return ScalarProjection { action: a_raw, was_projected: false, feasible: true };
    }
    let g = s.grid;
    let h = (s.a_max - s.a_min) / (g - 1) as f64;
    let point = |i: usize| if i == g - 1 { s.a_max } else { s.a_min + h * i as f64 };
    // grid index just below a_raw, then walk outward
    let below = (((a_raw - s.a_min) / h).floor() as usize).min(g - 1);
    let (mut lo, mut hi) = (below as isize, below as isize + 1);
    let mut found = None;
    while lo >= 0 || (hi as usize) < g {
        let dl = if lo >= 0 { a_raw - point(lo as usize) } else { f64::INFINITY };
        let dh = if (hi as usize) < g { point(hi as usize) - a_raw } else { f64::INFINITY };
        let i = if dl <= dh {
            lo -= 1;
            (lo + 1) as usize
        } else {
            hi += 1;
            (hi - 1) as usize
        };
        if feasible(point(i)) {
            found = Some(i);
            break;
        }
    }
    let Some(i) = found else {
        return ScalarProjection { action: s.a_min, was_projected: true, feasible: false };
    };
    let good = point(i);
    // neighbour on the a_raw side; a_raw itself if it sits in between
    let bad = if good < a_raw {
        if i + 1 < g && point(i + 1) < a_raw {
            point(i + 1)
        } else {
            a_raw
        }
    } else if i > 0 && point(i - 1) > a_raw {
        point(i - 1)
    } else {
        a_raw
    };
    let (mut good, mut bad) = (good, bad);
    while (bad - good).abs() >= s.tol {
        let mid = 0.5 * (good + bad);
        if feasible(mid) {
            good = mid;
        } else {
            bad = mid;
        }
    }
    ScalarProjection { action: good, was_projected: true, feasible: true }
}

/// Projects `a_raw` using the static surrogates, or the adaptive ones when
/// `dynamic` is given. `z_t`/`z_v` are the current temperature and voltage.
#[allow(clippy::too_many_arguments)]
pub fn project(
    a_raw: f64,
    z_t: f64,
    z_v: f64,
    a_prev: f64,
    stat: Option<&StaticSafety>,
    dynamic: Option<&DynamicSafety>,
    settings: &ProjectionSettings,
    scratch: &mut PosteriorScratch,
) -> Result<ProjectionResult> {
    let stat = stat.ok_or(Error::SafetyNotReady("static GPs are not fitted"))?;
    let dyn_t = dynamic.and_then(|d| d.model(Constraint::Temperature));
    let dyn_v = dynamic.and_then(|d| d.model(Constraint::Voltage));
    let kappa = stat.kappa;

    let mut dyn_scratch = PosteriorScratch::default();
    let mut check = |a: f64, surrogate: &ConstraintGp, dynamic: Option<&GpModel>, z: f64, bound: f64| -> bool {
        let x = [z, a_prev, a];
        let residual = dynamic.map_or(0.0, |gp| gp.mean(&x, &mut dyn_scratch));
        let mean = surrogate.mean(&x, scratch) + residual;
        // the bound can only fail harder once the std term is added
        if mean > bound {
            return false;
        }
        uub(mean, surrogate.gp.variance_after_mean(scratch), kappa) <= bound
    };
    let sol = solve_projection(a_raw, settings, |a| {
        check(a, &stat.temp, dyn_t, z_t, stat.temp_max) && check(a, &stat.volt, dyn_v, z_v, stat.volt_max)
    });
    let (mean_t, var_t) = adaptive_posterior(&stat.temp, dyn_t, &[z_t, a_prev, sol.action], scratch);
    let (mean_v, var_v) = adaptive_posterior(&stat.volt, dyn_v, &[z_v, a_prev, sol.action], scratch);
    Ok(ProjectionResult {
        action: sol.action,
        was_projected: sol.was_projected,
        feasible: sol.feasible,
        uub_t: uub(mean_t, var_t, kappa),
        uub_v: uub(mean_v, var_v, kappa),
        mean_t,
        mean_v,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings() -> ProjectionSettings {
        ProjectionSettings { a_min: 0.05, a_max: 4.5, grid: 256, tol: 1e-4 }
    }

    fn dense_oracle(a_raw: f64, s: &ProjectionSettings, feasible: impl Fn(f64) -> bool) -> Option<f64> {
        let n = 1_000_000;
        let mut best: Option<f64> = None;
        for i in 0..n {
            let a = s.a_min + (s.a_max - s.a_min) * i as f64 / (n - 1) as f64;
            if feasible(a) && best.is_none_or(|b| (a - a_raw).abs() < (b - a_raw).abs()) {
                best = Some(a);
            }
        }
        best
    }

    #[test]
    fn uub_arithmetic() {
        assert_eq!(uub(44.0, 0.25, 3.0), 45.5);
        assert_eq!(uub(44.0, 0.25, 0.0), 44.0);
        assert_eq!(uub(44.0, 0.0, 3.0), 44.0);
    }

    #[test]
    fn feasible_raw_is_untouched() {
        let r = solve_projection(1.234_567, &settings(), |_| true);
        assert_eq!(r.action, 1.234_567);
        assert!(!r.was_projected && r.feasible);
    }

    #[test]
    fn nothing_feasible_falls_back_to_minimum() {
        let r = solve_projection(3.0, &settings(), |_| false);
        assert_eq!(r.action, 0.05);
        assert!(!r.feasible);
    }

    #[test]
    fn linear_bound_projects_to_boundary() {
        let s = settings();
        let feas = |a: f64| 40.0 + 2.0 * a <= 45.0;
        let r = solve_projection(4.0, &s, feas);
        assert!((r.action - 2.5).abs() < 1e-3);
        let oracle = dense_oracle(4.0, &s, feas).unwrap();
        assert!((r.action - oracle).abs() < 2e-4);
        assert!(r.action <= 4.0 && feas(r.action));
    }

    #[test]
    fn lower_bound_constraint_projects_upward() {
        let s = settings();
        let feas = |a: f64| a >= 3.3;
        let r = solve_projection(0.5, &s, feas);
        assert!((r.action - 3.3).abs() < 1e-4 && feas(r.action));
    }

    #[test]
    fn raw_between_feasible_grid_point_and_neighbour() {
        let s = settings();
        // feasible set ends between two grid points, a_raw just beyond it
        let edge = 2.0003;
        let feas = |a: f64| a <= edge;
        let r = solve_projection(2.0005, &s, feas);
        assert!((r.action - edge).abs() < 1e-4 && feas(r.action));
    }

    fn synthetic_gp(rng: &mut Rng) -> GpModel {
        let n = 6 + rng.below(10);
        let x: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.uniform_range(0.05, 4.5)]).collect();
        let y: Vec<f64> = x.iter().map(|r| 40.0 + 1.5 * r[0] + rng.normal()).collect();
        let k = KernelParams { signal_var: 1.0, length_scale: rng.uniform_range(0.4, 1.5), noise_var: 1e-3 };
        GpModel::fit(&x, &y, k).unwrap()
    }

    #[test]
    fn matches_dense_grid_on_synthetic_gps() {
        let s = settings();
        let mut rng = Rng::new(17);
        let mut scratch = PosteriorScratch::default();
        let mut feasible_cases = 0;
        for _ in 0..20 {
            let gp = synthetic_gp(&mut rng);
            let bound = rng.uniform_range(40.0, 47.0);
            let a_raw = rng.uniform_range(0.05, 4.5);
            let feas = |a: f64| {
                let (m, v) = gp.posterior(&[a]);
                uub(m, v, 3.0) <= bound
            };
            let r = solve_projection(a_raw, &s, |a| {
                let (m, v) = gp.posterior_with(&[a], &mut scratch);
                uub(m, v, 3.0) <= bound
            });
            let oracle = dense_oracle(a_raw, &s, feas);
            assert_eq!(r.feasible, oracle.is_some());
            if let Some(o) = oracle {
                feasible_cases += 1;
                assert!((r.action - o).abs() <= 2e-4, "{} vs {o}", r.action);
                assert!(feas(r.action));
            }
        }
        assert!(feasible_cases > 5);
    }

    fn toy_static(target_t: f64) -> StaticSafety {
        // next temperature rises with current, voltage flat
        let mut data = SafetyData::default();
        for i in 0..40 {
            let a = 0.05 + 4.45 * i as f64 / 39.0;
            for t in [25.0, 35.0, 45.0] {
                data.push(t, 4.0, a, a, t + target_t * a - 0.5, 4.0);
            }
        }
        let cfg = ExperimentConfig {
            gp: GpConfig { optimize: false, ..GpConfig::default() },
            ..ExperimentConfig::default()
        };
        StaticSafety::fit(&data, &cfg, &mut Rng::new(0)).unwrap()
    }

    #[test]
    fn unfitted_layer_is_an_error() {
        let err = project(1.0, 30.0, 4.0, 1.0, None, None, &settings(), &mut PosteriorScratch::default());
        assert!(matches!(err, Err(Error::SafetyNotReady(_))));
    }

    #[test]
    fn projection_respects_uub_when_feasible() {
        let stat = toy_static(1.0);
        let mut scratch = PosteriorScratch::default();
        for &(t, a) in &[(30.0, 4.5), (43.0, 4.0), (44.0, 3.0), (40.0, 0.5)] {
            let r = project(a, t, 4.0, 1.0, Some(&stat), None, &settings(), &mut scratch).unwrap();
            assert!((settings().a_min..=settings().a_max).contains(&r.action));
            if r.feasible {
                assert!(r.uub_t <= stat.temp_max + 1e-6);
                assert!(r.uub_v <= stat.volt_max + 1e-6);
            }
            if !r.was_projected {
                assert_eq!(r.action, a);
            }
        }
    }

    #[test]
    fn residual_activation_and_reset() {
        let stat = toy_static(1.0);
        let mut d = DynamicSafety::new(&stat, &GpConfig::default());
        let x = [40.0, 1.0, 1.0];
        d.record_residual(Constraint::Temperature, &x, 41.0, 41.0).unwrap();
        assert_eq!(d.buffer_len(Constraint::Temperature), 1);
        assert!(!d.is_active(Constraint::Temperature));
        let mut scratch = PosteriorScratch::default();
        assert_eq!(d.mean(Constraint::Temperature, &x, &mut scratch), 0.0);
        for i in 0..49 {
            let xi = [40.0 + 0.01 * i as f64, 1.0, 1.0 + 0.01 * i as f64];
            d.record_residual(Constraint::Temperature, &xi, 42.0, 41.0).unwrap();
        }
        assert!(d.is_active(Constraint::Temperature));
        assert_eq!(d.buffer_len(Constraint::Temperature), 50);
        d.reset_episode();
        d.reset_episode();
        assert_eq!(d.buffer_len(Constraint::Temperature), 0);
        assert!(!d.is_active(Constraint::Temperature));
        let (m0, v0) = stat.temp.posterior(&x, &mut scratch);
        let (m1, v1) = adaptive_posterior(&stat.temp, d.model(Constraint::Temperature), &x, &mut scratch);
        assert_eq!((m0, v0), (m1, v1));
    }

    #[test]
    fn constant_residual_is_recovered() {
        let stat = toy_static(1.0);
        let mut d = DynamicSafety::new(&stat, &GpConfig::default());
        for i in 0..10 {
            let x = [35.0 + i as f64, 1.0 + 0.1 * i as f64, 1.0 + 0.1 * i as f64];
            d.record_residual(Constraint::Temperature, &x, 1.0, 0.0).unwrap();
        }
        let mut scratch = PosteriorScratch::default();
        let m = d.mean(Constraint::Temperature, &[38.5, 1.4, 1.45], &mut scratch);
        assert!((m - 1.0).abs() < 0.05, "{m}");
    }

    #[test]
    fn zero_residuals_leave_static_mean() {
        let stat = toy_static(1.0);
        let mut d = DynamicSafety::new(&stat, &GpConfig::default());
        for i in 0..5 {
            let x = [35.0 + i as f64, 2.0, 2.0];
            d.record_residual(Constraint::Temperature, &x, 7.0, 7.0).unwrap();
        }
        let mut scratch = PosteriorScratch::default();
        let x = [36.5, 2.0, 2.0];
        let (ms, _) = stat.temp.posterior(&x, &mut scratch);
        let (ma, _) = adaptive_posterior(&stat.temp, d.model(Constraint::Temperature), &x, &mut scratch);
        assert!((ma - ms).abs() <= 3.0 * 1e-5f64.sqrt());
    }

    #[test]
    fn composition_arithmetic() {
        let stat = toy_static(1.0);
        let mut d = DynamicSafety::new(&stat, &GpConfig::default());
        for i in 0..8 {
            let x = [38.0 + 0.5 * i as f64, 1.5, 1.5 + 0.2 * i as f64];
            d.record_residual(Constraint::Temperature, &x, 2.5 + 0.1 * i as f64, 0.0).unwrap();
        }
        let mut scratch = PosteriorScratch::default();
        let x = [39.0, 1.5, 1.8];
        let (ms, vs) = stat.temp.posterior(&x, &mut scratch);
        let dm = d.mean(Constraint::Temperature, &x, &mut scratch);
        let (ma, va) = adaptive_posterior(&stat.temp, d.model(Constraint::Temperature), &x, &mut scratch);
        assert_eq!(va, vs);
        assert!(((ma - ms) - dm).abs() < 1e-10);
    }

    #[test]
    fn snapshot_round_trip() {
        let stat = toy_static(1.0);
        let json = serde_json::to_string(&stat.snapshot()).unwrap();
        let back = StaticSafety::from_snapshot(&serde_json::from_str(&json).unwrap()).unwrap();
        let mut s = PosteriorScratch::default();
        let x = [40.0, 1.0, 2.0];
        assert_eq!(back.temp.posterior(&x, &mut s), stat.temp.posterior(&x, &mut s));
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn monotone_threshold_projection(edge in 0.0f64..5.0, a_raw in 0.05f64..4.5) {
            let s = ProjectionSettings { a_min: 0.05, a_max: 4.5, grid: 256, tol: 1e-4 };
            let r = solve_projection(a_raw, &s, |a| a <= edge);
            prop_assert!(r.action >= s.a_min && r.action <= s.a_max);
            if a_raw <= edge {
                prop_assert_eq!(r.action, a_raw);
                prop_assert!(!r.was_projected);
            } else if edge < s.a_min {
                prop_assert!(!r.feasible);
                prop_assert_eq!(r.action, s.a_min);
            } else {
                prop_assert!(r.feasible && r.action <= edge && r.action <= a_raw);
                prop_assert!(edge - r.action < 1e-4 + 1e-12);
            }
        }
    }
}
