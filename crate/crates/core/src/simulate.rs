//! Monte Carlo for the feedback-controlled wealth process and the dual
//! process, with the Dynkin identity as an optimality certificate.
//!
//! Every path owns a ChaCha8 stream selected by its index, so a run is
//! bit-identical under any thread count. Reductions run over per-path
//! results collected in path order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::closedform::{aggregator, dual_coefficient};
use crate::dualsolver::{DualSolution, Region, SolverError};
use crate::policy::{consumption_rule, PolicyError, PolicyTable};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("initial state {value} is outside [{lo}, {hi}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    /// Plain Euler on the state.
    EulerMaruyama,
    /// Euler plus the Ito correction `alpha alpha' sigma^2 (dB^2 - dt)/2`
    /// for the wealth process; strong order one.
    Milstein,
    /// Euler on `ln Z`; keeps the dual process positive.
    LogEulerOnZ,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub x0: f64,
    pub horizon: f64,
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub scheme: Scheme,
    /// Keep every `record_every`-th step in a [`PathBundle`].
    pub record_every: usize,
    /// Reflection level above the floor, relative to `a/r`.
    pub eps_floor: f64,
    /// Discretisation budget of the Dynkin test, relative to `|J(x0)|` per unit `dt`.
    pub dt_budget: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            x0: f64::NAN,
            horizon: 5.0,
            dt: 1e-3,
            n_paths: 10_000,
            seed: 0,
            scheme: Scheme::EulerMaruyama,
            record_every: 100,
            eps_floor: 1e-9,
            dt_budget: 10.0,
        }
    }
}

impl SimConfig {
    pub fn check(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive");
        }
        if !(self.horizon >= self.dt && self.horizon.is_finite()) {
            return bad("horizon must be at least dt");
        }
        if self.n_paths == 0 {
            return bad("need at least one path");
        }
        if self.record_every == 0 {
            return bad("record_every must be positive");
        }
        if !(self.eps_floor > 0.0) || !(self.dt_budget >= 0.0) {
            return bad("eps_floor must be positive and dt_budget nonnegative");
        }
        Ok(())
    }

    /// Number of steps and the step that divides the horizon exactly.
    pub fn steps(&self) -> (usize, f64) {
        let n = (self.horizon / self.dt).round().max(1.0) as usize;
        (n, self.horizon / n as f64)
    }
}

/// Controls driving the wealth process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Control {
    /// Feedback from the policy table.
    Optimal,
    /// Constant consumption rate and risky dollar amount.
    Fixed { c: f64, alpha: f64 },
}

/// Recorded paths and floor diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathBundle {
    pub times: Vec<f64>,
    /// Wealth per path at the recorded times; `a w(Z)` for dual runs.
    pub x: Vec<Vec<f64>>,
    pub z: Option<Vec<Vec<f64>>>,
    /// Comparison process with the nonlinear drift dropped.
    pub zbar: Option<Vec<Vec<f64>>>,
    pub c: Vec<Vec<f64>>,
    pub alpha: Vec<Vec<f64>>,
    /// Steps where the scheme pushed wealth to or below `a/r`.
    pub floor_violations: u64,
    /// Smallest `X - a/r` over all paths and steps, after reflection.
    pub min_excess: f64,
    /// Smallest consumption over all steps.
    pub min_consumption: f64,
}

/// One row of the cross-sectional summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SummaryRow {
    pub t: f64,
    pub x_mean: f64,
    pub x_q05: f64,
    pub x_q50: f64,
    pub x_q95: f64,
    pub c_mean: f64,
    pub alpha_mean: f64,
}

impl PathBundle {
    pub fn n_paths(&self) -> usize {
        self.x.len()
    }

    pub fn summary(&self) -> Vec<SummaryRow> {
        (0..self.times.len())
            .map(|k| {
                let col = |v: &Vec<Vec<f64>>| v.iter().map(|p| p[k]).collect::<Vec<f64>>();
                let mut xs = col(&self.x);
                let x_mean = mean(&xs);
                xs.sort_by(f64::total_cmp);
                SummaryRow {
                    t: self.times[k],
                    x_mean,
                    x_q05: quantile(&xs, 0.05),
                    x_q50: quantile(&xs, 0.5),
                    x_q95: quantile(&xs, 0.95),
                    c_mean: mean(&col(&self.c)),
                    alpha_mean: mean(&col(&self.alpha)),
                }
            })
            .collect()
    }
}

/// Pairwise summation; the result depends only on the order of `v`.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 16 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

fn mean(v: &[f64]) -> f64 {
    pairwise_sum(v) / v.len() as f64
}

/// Mean and standard error.
fn mean_se(v: &[f64]) -> (f64, f64) {
    let m = mean(v);
    if v.len() < 2 {
        return (m, 0.0);
    }
    let dev: Vec<f64> = v.iter().map(|x| (x - m) * (x - m)).collect();
    let var = pairwise_sum(&dev) / (v.len() - 1) as f64;
    (m, (var / v.len() as f64).sqrt())
}

// linear interpolation between order statistics of sorted data
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let j = (i + 1).min(sorted.len() - 1);
    sorted[i] + (pos - i as f64) * (sorted[j] - sorted[i])
}

fn stream(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

fn check_x0(table: &PolicyTable, x0: f64) -> Result<(), SimError> {
    if !(x0 > table.floor_wealth && x0 <= table.x_max()) {
        return Err(SimError::OutOfRange { value: x0, lo: table.floor_wealth, hi: table.x_max() });
    }
    Ok(())
}

/// State handed to path observers after each step.
#[derive(Debug, Clone, Copy)]
struct WealthStep {
    x: f64,
    c: f64,
    alpha: f64,
    dalpha: f64,
    j: f64,
}

#[derive(Debug, Clone, Copy)]
struct PathStats {
    violations: u64,
    min_excess: f64,
    min_c: f64,
}

/// Euler-Maruyama (or Milstein) for
/// `dX = [rX + alpha (mu - r) - c] dt + alpha sigma dB`.
/// `visit` sees step 0 (the initial state) and every later step with
/// the controls in force at that state.
fn wealth_path(
    table: &PolicyTable,
    cfg: &SimConfig,
    control: Control,
    path: usize,
    mut visit: impl FnMut(usize, &WealthStep),
) -> PathStats {
    let p = &table.params;
    let (n, dt) = cfg.steps();
    let sq = dt.sqrt();
    let floor = table.floor_wealth;
    let reflect = floor * (1.0 + cfg.eps_floor);
    let mut rng = stream(cfg.seed, path);
    let mut x = cfg.x0;
    let mut stats = PathStats { violations: 0, min_excess: x - floor, min_c: f64::INFINITY };
    let controls = |x: f64| -> WealthStep {
        match control {
            Control::Optimal => {
                let fb = table.feedback(x);
                WealthStep { x, c: fb.c, alpha: fb.alpha, dalpha: fb.dalpha, j: fb.j }
            }
            Control::Fixed { c, alpha } => WealthStep { x, c, alpha, dalpha: 0.0, j: table.feedback(x).j },
        }
    };
    let mut st = controls(x);
    for k in 0..=n {
        stats.min_c = stats.min_c.min(st.c);
        visit(k, &st);
        if k == n {
            break;
        }
        let xi: f64 = StandardNormal.sample(&mut rng);
        let drift = p.r * x + st.alpha * (p.mu - p.r) - st.c;
        let vol = st.alpha * p.sigma;
        x += drift * dt + vol * sq * xi;
        if cfg.scheme == Scheme::Milstein {
            x += 0.5 * vol * st.dalpha * p.sigma * dt * (xi * xi - 1.0);
        }
        if !(x > floor) {
            stats.violations += 1;
            x = reflect;
        }
        stats.min_excess = stats.min_excess.min(x - floor);
        st = controls(x);
    }
    stats
}

fn record_times(cfg: &SimConfig) -> Vec<usize> {
    let (n, _) = cfg.steps();
    let mut ks: Vec<usize> = (0..=n).step_by(cfg.record_every).collect();
    if *ks.last().unwrap() != n {
        ks.push(n);
    }
    ks
}

/// Wealth paths under the optimal feedback controls.
pub fn simulate_wealth(table: &PolicyTable, cfg: &SimConfig) -> Result<PathBundle, SimError> {
    simulate_wealth_with(table, cfg, Control::Optimal)
}

pub fn simulate_wealth_with(table: &PolicyTable, cfg: &SimConfig, control: Control) -> Result<PathBundle, SimError> {
    cfg.check()?;
    check_x0(table, cfg.x0)?;
    let (_, dt) = cfg.steps();
    let keep = record_times(cfg);
    let per_path: Vec<_> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|i| {
            let (mut x, mut c, mut al) = (Vec::new(), Vec::new(), Vec::new());
            let mut next = 0;
            let stats = wealth_path(table, cfg, control, i, |k, st| {
                if next < keep.len() && keep[next] == k {
                    x.push(st.x);
                    c.push(st.c);
                    al.push(st.alpha);
                    next += 1;
                }
            });
            (x, c, al, stats)
        })
        .collect();
    let mut bundle = PathBundle {
        times: keep.iter().map(|&k| k as f64 * dt).collect(),
        x: Vec::with_capacity(cfg.n_paths),
        z: None,
        zbar: None,
        c: Vec::with_capacity(cfg.n_paths),
        alpha: Vec::with_capacity(cfg.n_paths),
        floor_violations: 0,
        min_excess: f64::INFINITY,
        min_consumption: f64::INFINITY,
    };
    for (x, c, al, st) in per_path {
        bundle.x.push(x);
        bundle.c.push(c);
        bundle.alpha.push(al);
        bundle.floor_violations += st.violations;
        bundle.min_excess = bundle.min_excess.min(st.min_excess);
        bundle.min_consumption = bundle.min_consumption.min(st.min_c);
    }
    Ok(bundle)
}

// ---------------------------------------------------------------------------
// dual process

/// `H(z) = u(z)` beyond the solved range from the two asymptotes.
fn big_h(sol: &DualSolution, z: f64) -> Result<(f64, Region), SimError> {
    if z > sol.z_max() {
        let u0 = sol.u[sol.u.len() - 1];
        return Ok((u0, Region::Constrained));
    }
    if z < sol.z_min() {
        let e = 1.0 - 1.0 / sol.params.risk_aversion;
        return Ok((dual_coefficient(&sol.params, &sol.consts) * (e * z.ln()).exp(), Region::Unconstrained));
    }
    let pt = sol.at(z)?;
    Ok((pt.u, pt.region))
}

/// Drift of `dZ / Z`.
pub fn dual_drift(sol: &DualSolution, z: f64) -> Result<f64, SimError> {
    let p = &sol.params;
    let k = &sol.consts;
    let (u, _) = big_h(sol, z)?;
    let lu = u.ln();
    let lz = z.ln();
    // Z >= H^rho on the constrained side
    let bracket = if lz >= k.rho * lu {
        ((k.rho - 1.0) * lu).exp()
    } else {
        ((1.0 - 1.0 / p.eic) * lz + (k.rho / p.eic - 1.0) * lu).exp()
    };
    Ok(p.delta * k.nu - p.r - k.rho * k.nu * bracket)
}

/// Market price of risk `(mu - r)/sigma`.
fn theta(sol: &DualSolution) -> f64 {
    (sol.params.mu - sol.params.r) / sol.params.sigma
}

fn dual_step(scheme: Scheme, z: f64, b: f64, th: f64, dt: f64, dw: f64) -> f64 {
    match scheme {
        Scheme::LogEulerOnZ => z * ((b - 0.5 * th * th) * dt - th * dw).exp(),
        Scheme::EulerMaruyama | Scheme::Milstein => z * (1.0 + b * dt - th * dw),
    }
}

/// Dual paths from `z0`, together with the comparison process that drops
/// the nonlinear drift term. Wealth, consumption and investment are read
/// off the dual solution along each path.
pub fn simulate_dual(sol: &DualSolution, z0: f64, cfg: &SimConfig) -> Result<PathBundle, SimError> {
    cfg.check()?;
    if !(z0 >= sol.z_min() && z0 <= sol.z_max()) {
        return Err(SimError::OutOfRange { value: z0, lo: sol.z_min(), hi: sol.z_max() });
    }
    let p = sol.params;
    let (n, dt) = cfg.steps();
    let sq = dt.sqrt();
    let th = theta(sol);
    let b_bar = p.delta * sol.consts.nu - p.r;
    let keep = record_times(cfg);
    let per_path: Result<Vec<_>, SimError> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(cfg.seed, i);
            let (mut z, mut zb) = (z0, z0);
            let mut rec = (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
            let mut next = 0;
            let mut min_c = f64::INFINITY;
            for k in 0..=n {
                if next < keep.len() && keep[next] == k {
                    let (x, c, al) = wealth_from_dual(sol, z)?;
                    min_c = min_c.min(c);
                    rec.0.push(z);
                    rec.1.push(zb);
                    rec.2.push(x);
                    rec.3.push(c);
                    rec.4.push(al);
                    next += 1;
                }
                if k == n {
                    break;
                }
                let xi: f64 = StandardNormal.sample(&mut rng);
                let b = dual_drift(sol, z)?;
                z = dual_step(cfg.scheme, z, b, th, dt, sq * xi);
                zb = dual_step(cfg.scheme, zb, b_bar, th, dt, sq * xi);
            }
            Ok((rec, min_c))
        })
        .collect();
    let mut bundle = PathBundle {
        times: keep.iter().map(|&k| k as f64 * dt).collect(),
        x: Vec::new(),
        z: Some(Vec::new()),
        zbar: Some(Vec::new()),
        c: Vec::new(),
        alpha: Vec::new(),
        floor_violations: 0,
        min_excess: f64::INFINITY,
        min_consumption: f64::INFINITY,
    };
    let floor = p.floor_wealth();
    for ((z, zb, x, c, al), min_c) in per_path? {
        bundle.min_excess = x.iter().fold(bundle.min_excess, |m, v| m.min(v - floor));
        bundle.min_consumption = bundle.min_consumption.min(min_c);
        bundle.z.as_mut().unwrap().push(z);
        bundle.zbar.as_mut().unwrap().push(zb);
        bundle.x.push(x);
        bundle.c.push(c);
        bundle.alpha.push(al);
    }
    Ok(bundle)
}

/// `(x, c, alpha)` at the dual state `z`, with the asymptotes outside the
/// solved range.
fn wealth_from_dual(sol: &DualSolution, z: f64) -> Result<(f64, f64, f64), SimError> {
    let p = &sol.params;
    let k = &sol.consts;
    let (u, region) = big_h(sol, z)?;
    let c = consumption_rule(z, u, region, p, k);
    let (w, hpp) = if z > sol.z_max() {
        (1.0 / p.r, 0.0)
    } else if z < sol.z_min() {
        let cc = dual_coefficient(p, k);
        let w = cc * (-z.ln() / p.risk_aversion).exp();
        (w, w / (p.risk_aversion * z))
    } else {
        let pt = sol.at(z)?;
        (pt.w, pt.hpp)
    };
    let alpha = p.a * z * hpp * (p.mu - p.r) / (p.sigma * p.sigma);
    Ok((p.a * w, c, alpha))
}

/// `E[exp(-delta nu t) Zbar_t^{1-1/R}] = z0^{1-1/R} exp(-eta nu S t / R)`.
pub fn comparison_moment(sol: &DualSolution, z0: f64, t: f64) -> f64 {
    let p = &sol.params;
    let k = &sol.consts;
    let e = 1.0 - 1.0 / p.risk_aversion;
    (e * z0.ln() - k.eta * k.nu * p.eic * t / p.risk_aversion).exp()
}

// ---------------------------------------------------------------------------
// certificates

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynkinReport {
    pub estimate: f64,
    pub target: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub dt: f64,
    pub horizon: f64,
    /// `k SE + dt_budget dt |target|` with `k = 3`.
    pub tolerance: f64,
    pub pass: bool,
}

/// Monte Carlo estimate of
/// `E[int_0^T e^{-delta nu s} f(c_s, J(X_s)) ds + e^{-delta nu T} J(X_T)]`
/// at each horizon in `horizons`, all from the same paths, against `J(x0)`.
/// The running integral uses the left-point rule on the simulation grid.
pub fn dynkin_check_at(
    table: &PolicyTable,
    cfg: &SimConfig,
    control: Control,
    horizons: &[f64],
    target: f64,
) -> Result<Vec<DynkinReport>, SimError> {
    cfg.check()?;
    check_x0(table, cfg.x0)?;
    let t_max = horizons.iter().fold(0.0f64, |m, &h| m.max(h));
    let run = SimConfig { horizon: t_max.max(cfg.dt), ..*cfg };
    run.check()?;
    let (_, dt) = run.steps();
    let stops: Vec<usize> = horizons.iter().map(|h| (h / dt).round() as usize).collect();
    let p = table.params;
    let k = table.consts;
    let dnu = p.delta * k.nu;
    let per_path: Vec<Vec<f64>> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|i| {
            let mut out = vec![f64::NAN; stops.len()];
            let mut integral = 0.0;
            wealth_path(table, &run, control, i, |step, st| {
                let t = step as f64 * dt;
                let disc = (-dnu * t).exp();
                for (o, &s) in out.iter_mut().zip(&stops) {
                    if s == step {
                        *o = integral + disc * st.j;
                    }
                }
                let f = aggregator(st.c, st.j, &p, &k).unwrap_or(f64::NAN);
                integral += disc * f * dt;
            });
            out
        })
        .collect();
    Ok(horizons
        .iter()
        .enumerate()
        .map(|(h, &horizon)| {
            let col: Vec<f64> = per_path.iter().map(|v| v[h]).collect();
            let (estimate, std_error) = mean_se(&col);
            let tolerance = 3.0 * std_error + cfg.dt_budget * dt * target.abs();
            DynkinReport {
                estimate,
                target,
                std_error,
                n_paths: cfg.n_paths,
                dt,
                horizon,
                tolerance,
                pass: (estimate - target).abs() <= tolerance,
            }
        })
        .collect())
}

/// Dynkin identity at the configured horizon under the optimal controls.
pub fn dynkin_check(table: &PolicyTable, cfg: &SimConfig) -> Result<DynkinReport, SimError> {
    check_x0(table, cfg.x0)?;
    let target = table.feedback(cfg.x0).j;
    Ok(dynkin_check_at(table, cfg, Control::Optimal, &[cfg.horizon], target)?[0])
}

/// Same identity for the floor strategy `c = a`, `alpha = 0` started just
/// above `a/r`, against the closed-form floor value.
pub fn dynkin_floor_check(table: &PolicyTable, cfg: &SimConfig, eps: f64) -> Result<DynkinReport, SimError> {
    let run = SimConfig { x0: table.floor_wealth * (1.0 + eps), ..*cfg };
    let control = Control::Fixed { c: table.params.a, alpha: 0.0 };
    Ok(dynkin_check_at(table, &run, control, &[cfg.horizon], table.floor_value)?[0])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyPoint {
    pub dt: f64,
    /// Mean over paths of `sup_t |X_t - a w(Z_t)|`.
    pub sup_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub points: Vec<ConsistencyPoint>,
    /// Least-squares slope of `ln sup_gap` against `ln dt`.
    pub order: f64,
    /// Largest gap between consumption read from the two paths at `t = 0`.
    pub initial_gap: f64,
}

/// Drives a wealth path and a dual path started at `z(x0)` with the same
/// Brownian increments and measures how far `X` drifts from `a w(Z)`. The
/// wealth path uses the configured scheme (Milstein unless plain Euler is
/// asked for); the dual path is always log-Euler.
pub fn duality_consistency(
    sol: &DualSolution,
    table: &PolicyTable,
    cfg: &SimConfig,
    dts: &[f64],
) -> Result<ConsistencyReport, SimError> {
    check_x0(table, cfg.x0)?;
    let z0 = crate::policy::dual_of_wealth(sol, cfg.x0)?;
    let th = theta(sol);
    let (x_init, _, _) = wealth_from_dual(sol, z0)?;
    let initial_gap = (x_init - cfg.x0).abs();
    let mut points = Vec::with_capacity(dts.len());
    for &dt in dts {
        let scheme = if cfg.scheme == Scheme::EulerMaruyama { Scheme::EulerMaruyama } else { Scheme::Milstein };
        let run = SimConfig { dt, scheme, ..*cfg };
        run.check()?;
        let (n, h) = run.steps();
        let sq = h.sqrt();
        let gaps: Result<Vec<f64>, SimError> = (0..cfg.n_paths)
            .into_par_iter()
            .map(|i| {
                let mut zs = Vec::with_capacity(n + 1);
                let mut rng = stream(cfg.seed, i);
                let mut z = z0;
                zs.push(z);
                for _ in 0..n {
                    let xi: f64 = StandardNormal.sample(&mut rng);
                    let b = dual_drift(sol, z)?;
                    z = dual_step(Scheme::LogEulerOnZ, z, b, th, h, sq * xi);
                    zs.push(z);
                }
                let mut worst = 0.0f64;
                let mut err = None;
                // the dual is driven by -dB, the wealth path by dB
                wealth_path(table, &run, Control::Optimal, i, |k, st| match wealth_from_dual(sol, zs[k]) {
                    Ok((x, _, _)) => worst = worst.max((st.x - x).abs()),
                    Err(e) => err = Some(e),
                });
                match err {
                    Some(e) => Err(e),
                    None => Ok(worst),
                }
            })
            .collect();
        points.push(ConsistencyPoint { dt: h, sup_gap: mean(&gaps?) });
    }
    let order = slope(
        &points.iter().map(|q| q.dt.ln()).collect::<Vec<_>>(),
        &points.iter().map(|q| q.sup_gap.ln()).collect::<Vec<_>>(),
    );
    Ok(ConsistencyReport { points, order, initial_gap })
}

fn slope(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransversalityPoint {
    pub t: f64,
    /// `E[e^{-delta nu t} J(X_t)]`.
    pub mean: f64,
    pub std_error: f64,
}

/// `E[e^{-delta nu t} J(X_t)]` along the optimal wealth process at each `t`.
pub fn transversality_probe(
    table: &PolicyTable,
    cfg: &SimConfig,
    t_list: &[f64],
) -> Result<Vec<TransversalityPoint>, SimError> {
    cfg.check()?;
    check_x0(table, cfg.x0)?;
    let t_max = t_list.iter().fold(cfg.dt, |m, &t| m.max(t));
    let run = SimConfig { horizon: t_max, ..*cfg };
    let (_, dt) = run.steps();
    let stops: Vec<usize> = t_list.iter().map(|t| (t / dt).round() as usize).collect();
    let dnu = table.params.delta * table.consts.nu;
    let per_path: Vec<Vec<f64>> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|i| {
            let mut out = vec![f64::NAN; stops.len()];
            wealth_path(table, &run, Control::Optimal, i, |step, st| {
                for (o, &s) in out.iter_mut().zip(&stops) {
                    if s == step {
                        *o = (-dnu * step as f64 * dt).exp() * st.j;
                    }
                }
            });
            out
        })
        .collect();
    Ok(t_list
        .iter()
        .enumerate()
        .map(|(h, &t)| {
            let col: Vec<f64> = per_path.iter().map(|v| v[h]).collect();
            let (mean, std_error) = mean_se(&col);
            TransversalityPoint { t, mean, std_error }
        })
        .collect())
}

/// Decay rate `eta nu S / R` of the comparison envelope.
pub fn envelope_rate(table: &PolicyTable) -> f64 {
    let p = &table.params;
    table.consts.eta * table.consts.nu * p.eic / p.risk_aversion
}
