//! Self-checks against brute-force references: GP inference vs an explicit
//! matrix inverse, network gradients vs central differences, and action
//! projection vs an exhaustive fine grid.

use std::fmt;
use std::time::{Duration, Instant};

use ndarray::Array2;

use crate::config::{ExperimentConfig, GpConfig};
use crate::gp::{GpModel, KernelParams, PosteriorScratch};
use crate::mlp::{Network, OutputActivation};
use crate::rng::Rng;
use crate::safety::{project, uub, ConstraintGp, ProjectionSettings, SafetyData, StaticSafety};

/// Outcome of one suite.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: &'static str,
    pub passed: bool,
    pub cases: usize,
    /// Largest error seen, in the suite's own metric.
    pub max_error: f64,
    pub tolerance: f64,
    pub elapsed: Duration,
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: cases={} max_error={:.3e} tol={:.1e} time={:.2}s",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.cases,
            self.max_error,
            self.tolerance,
            self.elapsed.as_secs_f64()
        )
    }
}

/// Posterior mean, variance and LML from an explicit Gauss-Jordan inverse of
/// the kernel matrix, with the same standardization as [`GpModel`].
pub fn dense_gp_oracle(x: &[Vec<f64>], y: &[f64], k: &KernelParams, q: &[f64]) -> (f64, f64, f64) {
    let n = x.len();
    let d = x[0].len();
    let guard = |s: f64| if s > 1e-12 { s } else { 1.0 };
    let mut mean = vec![0.0; d];
    let mut std = vec![0.0; d];
    for j in 0..d {
        mean[j] = x.iter().map(|r| r[j]).sum::<f64>() / n as f64;
        std[j] = guard((x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n as f64).sqrt());
    }
    let z = |r: &[f64]| -> Vec<f64> { (0..d).map(|j| (r[j] - mean[j]) / std[j]).collect() };
    let ym = y.iter().sum::<f64>() / n as f64;
    let ys = guard((y.iter().map(|v| (v - ym).powi(2)).sum::<f64>() / n as f64).sqrt());
    let t: Vec<f64> = y.iter().map(|v| (v - ym) / ys).collect();
    let xs: Vec<Vec<f64>> = x.iter().map(|r| z(r)).collect();
    let kf = |a: &[f64], b: &[f64]| {
        let s: f64 = a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum();
        k.signal_var * (-s / (2.0 * k.length_scale.powi(2))).exp()
    };

    let mut a = vec![vec![0.0; 2 * n]; n];
    for i in 0..n {
        for j in 0..n {
            a[i][j] = kf(&xs[i], &xs[j]) + if i == j { k.noise_var } else { 0.0 };
        }
        a[i][n + i] = 1.0;
    }
    let mut log_det = 0.0;
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(p, c);
        let piv = a[c][c];
        log_det += piv.abs().ln();
        for v in a[c].iter_mut() {
            *v /= piv;
        }
        for r in 0..n {
            if r != c {
                let f = a[r][c];
                if f != 0.0 {
                    for cc in 0..2 * n {
                        a[r][cc] -= f * a[c][cc];
                    }
                }
            }
        }
    }
    let inv: Vec<&[f64]> = a.iter().map(|r| &r[n..]).collect();
    let qs = z(q);
    let ks: Vec<f64> = xs.iter().map(|r| kf(r, &qs)).collect();
    let w: Vec<f64> = (0..n).map(|i| (0..n).map(|j| inv[i][j] * t[j]).sum()).collect();
    let m: f64 = ks.iter().zip(&w).map(|(a, b)| a * b).sum();
    let quad: f64 = (0..n).map(|i| (0..n).map(|j| ks[i] * inv[i][j] * ks[j]).sum::<f64>()).sum();
    let fit: f64 = t.iter().zip(&w).map(|(a, b)| a * b).sum();
    let lml = -0.5 * fit - 0.5 * log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    (ym + ys * m, ys * ys * (k.signal_var - quad).max(0.0), lml)
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

/// GP posterior and LML against [`dense_gp_oracle`] on random datasets with
/// `n <= 20`, `d <= 3`.
pub fn gp_oracle_suite(seed: u64, datasets: usize) -> CheckReport {
    let clock = Instant::now();
    let mut rng = Rng::new(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..datasets {
        let n = 1 + rng.below(20);
        let d = 1 + rng.below(3);
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.uniform_range(-3.0, 3.0)).collect()).collect();
        let y: Vec<f64> = x.iter().map(|r| r.iter().map(|v| v.sin()).sum::<f64>() + 0.1 * rng.normal()).collect();
        let k = KernelParams {
            signal_var: rng.uniform_range(0.5, 2.0),
            length_scale: rng.uniform_range(0.5, 2.0),
            noise_var: rng.uniform_range(1e-3, 1e-1),
        };
        let model = match GpModel::fit(&x, &y, k) {
            Ok(m) => m,
            Err(_) => {
                worst = f64::INFINITY;
                continue;
            }
        };
        let q: Vec<f64> = (0..d).map(|_| rng.uniform_range(-3.0, 3.0)).collect();
        let (mean, var) = model.posterior(&q);
        let (om, ov, olml) = dense_gp_oracle(&x, &y, &k, &q);
        worst = worst.max(rel_err(mean, om)).max(rel_err(var, ov)).max(rel_err(model.log_marginal_likelihood(), olml));
    }
    let tol = 1e-8;
    CheckReport {
        name: "gp-oracle",
        passed: worst < tol,
        cases: datasets,
        max_error: worst,
        tolerance: tol,
        elapsed: clock.elapsed(),
    }
}

/// Largest relative error between analytic and central-difference
/// gradients of `sum(output * upstream)` over every weight, bias and input
/// of `net`. Coordinates whose perturbation flips a ReLU are skipped, as the
/// difference quotient is meaningless across a kink.
pub fn network_gradient_error(net: &Network, batch: usize, rng: &mut Rng) -> (f64, usize) {
    let d = net.input_dim();
    let x = Array2::from_shape_fn((batch, d), |_| rng.uniform_range(-1.0, 1.0));
    let up = Array2::from_shape_fn((batch, net.output_dim()), |_| rng.uniform_range(-1.0, 1.0));
    let objective = |n: &Network, x: &Array2<f64>| (n.forward_batch(x.view()) * &up).sum();
    let pattern = |n: &Network, x: &Array2<f64>| -> Vec<bool> {
        let c = n.forward_cached(x.clone());
        c.inputs().iter().skip(1).flat_map(|a| a.iter().map(|&v| v > 0.0).collect::<Vec<_>>()).collect()
    };
    let cache = net.forward_cached(x.clone());
    let grads = net.backward(&cache, &up);
    let base_pattern = pattern(net, &x);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut compare = |analytic: f64, plus: (f64, Vec<bool>), minus: (f64, Vec<bool>)| {
        if plus.1 != base_pattern || minus.1 != base_pattern {
            return;
        }
        let fd = (plus.0 - minus.0) / (2.0 * h);
        worst = worst.max((analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-4));
        checked += 1;
    };
    let mut probe = net.clone();
    for l in 0..net.weights().len() {
        for idx in 0..net.weights()[l].len() {
            let (r, c) = (idx / net.weights()[l].ncols(), idx % net.weights()[l].ncols());
            let orig = probe.weights()[l][[r, c]];
            probe.weights_mut()[l][[r, c]] = orig + h;
            let plus = (objective(&probe, &x), pattern(&probe, &x));
            probe.weights_mut()[l][[r, c]] = orig - h;
            let minus = (objective(&probe, &x), pattern(&probe, &x));
            probe.weights_mut()[l][[r, c]] = orig;
            compare(grads.weights[l][[r, c]], plus, minus);
        }
        for j in 0..net.biases()[l].len() {
            let orig = probe.biases()[l][j];
            probe.biases_mut()[l][j] = orig + h;
            let plus = (objective(&probe, &x), pattern(&probe, &x));
            probe.biases_mut()[l][j] = orig - h;
            let minus = (objective(&probe, &x), pattern(&probe, &x));
            probe.biases_mut()[l][j] = orig;
            compare(grads.biases[l][j], plus, minus);
        }
    }
    for i in 0..batch {
        for j in 0..d {
            let mut xp = x.clone();
            xp[[i, j]] += h;
            let mut xm = x.clone();
            xm[[i, j]] -= h;
            compare(grads.input[[i, j]], (objective(net, &xp), pattern(net, &xp)), (objective(net, &xm), pattern(net, &xm)));
        }
    }
    (worst, checked)
}

/// Gradient check on the actor (4-128-128-1, tanh) and critic
/// (5-128-128-1, linear) shapes.
pub fn mlp_gradient_suite(seed: u64) -> CheckReport {
    let clock = Instant::now();
    let mut rng = Rng::new(seed);
    let actor = Network::new(&[4, 128, 128, 1], OutputActivation::Tanh, 1.0, &mut rng);
    let critic = Network::new(&[5, 128, 128, 1], OutputActivation::Identity, 1.0, &mut rng);
    let (ea, na) = network_gradient_error(&actor, 2, &mut rng);
    let (ec, nc) = network_gradient_error(&critic, 2, &mut rng);
    let worst = ea.max(ec);
    let tol = 1e-4;
    CheckReport {
        name: "mlp-gradients",
        passed: worst < tol && na > 17_000 && nc > 17_000,
        cases: na + nc,
        max_error: worst,
        tolerance: tol,
        elapsed: clock.elapsed(),
    }
}

/// A random static safety layer over synthetic cell-like dynamics plus a
/// random query, for projection checks.
pub struct ProjectionInstance {
    pub safety: StaticSafety,
    pub z_t: f64,
    pub z_v: f64,
    pub a_prev: f64,
    pub a_raw: f64,
}

pub fn random_projection_instance(rng: &mut Rng, settings: &ProjectionSettings) -> ProjectionInstance {
    let heat = rng.uniform_range(0.2, 1.2);
    let sag = rng.uniform_range(0.02, 0.12);
    let mut data = SafetyData::default();
    for _ in 0..30 {
        let t = rng.uniform_range(25.0, 46.0);
        let v = rng.uniform_range(3.5, 4.3);
        let a_prev = rng.uniform_range(settings.a_min, settings.a_max);
        let a = rng.uniform_range(settings.a_min, settings.a_max);
        let t_next = t + heat * a * a * 0.3 - 0.05 * (t - 25.0) + 0.05 * rng.normal();
        let v_next = v + sag * (a - a_prev) + 0.01 + 0.003 * rng.normal();
        data.push(t, v, a_prev, a, t_next, v_next);
    }
    let cfg = ExperimentConfig {
        gp: GpConfig { optimize: false, length_scale: rng.uniform_range(0.7, 2.0), ..GpConfig::default() },
        ..ExperimentConfig::default()
    };
    let safety = StaticSafety::fit(&data, &cfg, rng).expect("synthetic data is well conditioned");
    ProjectionInstance {
        safety,
        z_t: rng.uniform_range(30.0, 45.0),
        z_v: rng.uniform_range(3.7, 4.3),
        a_prev: rng.uniform_range(settings.a_min, settings.a_max),
        a_raw: rng.uniform_range(settings.a_min, settings.a_max),
    }
}

/// Nearest feasible point of a uniform `points`-grid, scanning outward from
/// `a_raw`; `None` if no grid point is feasible.
pub fn dense_projection_oracle(inst: &ProjectionInstance, settings: &ProjectionSettings, points: usize) -> Option<f64> {
    let s = &inst.safety;
    let mut scratch = PosteriorScratch::default();
    // the bound is never below the mean, so a mean over the limit settles it
    let mut below_limit = |c: &ConstraintGp, x: [f64; 3], limit: f64| {
        let m = c.mean(&x, &mut scratch);
        m <= limit && uub(m, c.gp.variance_after_mean(&mut scratch), s.kappa) <= limit
    };
    let mut feasible = |a: f64| {
        below_limit(&s.temp, [inst.z_t, inst.a_prev, a], s.temp_max)
            && below_limit(&s.volt, [inst.z_v, inst.a_prev, a], s.volt_max)
    };
    let h = (settings.a_max - settings.a_min) / (points - 1) as f64;
    let point = |i: usize| settings.a_min + h * i as f64;
    let below = (((inst.a_raw - settings.a_min) / h).floor() as usize).min(points - 1);
    let (mut lo, mut hi) = (below as isize, below + 1);
    while lo >= 0 || hi < points {
        let dl = if lo >= 0 { inst.a_raw - point(lo as usize) } else { f64::INFINITY };
        let dh = if hi < points { point(hi) - inst.a_raw } else { f64::INFINITY };
        let a = if dl <= dh {
            lo -= 1;
            point((lo + 1) as usize)
        } else {
            hi += 1;
            point(hi - 1)
        };
        if feasible(a) {
            return Some(a);
        }
    }
    None
}

/// Projection against a 10⁶-point grid on random instances: distance within
/// `2e-4` C-rate and identical feasibility verdicts.
pub fn projection_suite(seed: u64, instances: usize) -> CheckReport {
    let clock = Instant::now();
    let settings = ProjectionSettings::from_config(&ExperimentConfig::default());
    let mut rng = Rng::new(seed);
    let mut scratch = PosteriorScratch::default();
    let mut worst: f64 = 0.0;
    let mut flags_agree = true;
    for _ in 0..instances {
        let inst = random_projection_instance(&mut rng, &settings);
        let r = project(inst.a_raw, inst.z_t, inst.z_v, inst.a_prev, Some(&inst.safety), None, &settings, &mut scratch)
            .expect("fitted layer");
        let oracle = dense_projection_oracle(&inst, &settings, 1_000_000);
        match oracle {
            Some(o) if r.feasible => worst = worst.max((r.action - o).abs()),
            None if !r.feasible => {}
            _ => flags_agree = false,
        }
    }
    let tol = 2e-4;
    CheckReport {
        name: "projection-optimality",
        passed: flags_agree && worst <= tol,
        cases: instances,
        max_error: if flags_agree { worst } else { f64::INFINITY },
        tolerance: tol,
        elapsed: clock.elapsed(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_on_two_points() {
        let x = vec![vec![0.0], vec![1.0]];
        let (m, v, _) = dense_gp_oracle(&x, &[0.0, 1.0], &KernelParams::default(), &[0.5]);
        assert!((m - 0.5).abs() < 1e-9);
        assert!(v > 0.0 && v < 0.25);
    }

    #[test]
    fn small_gradient_check() {
        let mut rng = Rng::new(1);
        let net = Network::new(&[3, 8, 8, 2], OutputActivation::Tanh, 1.0, &mut rng);
        let (err, n) = network_gradient_error(&net, 3, &mut rng);
        assert!(err < 1e-4, "{err}");
        assert!(n > 100);
    }

    #[test]
    fn projection_instances_mix_outcomes() {
        let settings = ProjectionSettings::from_config(&ExperimentConfig::default());
        let mut rng = Rng::new(2);
        let mut projected = 0;
        for _ in 0..10 {
            let inst = random_projection_instance(&mut rng, &settings);
            let mut s = PosteriorScratch::default();
            let r = project(inst.a_raw, inst.z_t, inst.z_v, inst.a_prev, Some(&inst.safety), None, &settings, &mut s).unwrap();
            projected += r.was_projected as usize;
        }
        assert!(projected > 0 && projected < 10, "{projected}");
    }
}
