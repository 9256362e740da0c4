//! Wealth-space policy read off the dual solution through `x = a w(z)`:
//! value function, optimal consumption and investment, critical wealth.

use thiserror::Error;

use crate::closedform::{aggregator, pow, value_at_floor, ClosedFormError};
use crate::dualsolver::{fd_weights, DualPoint, DualSolution, Region, SolverError};
use crate::interp::{hermite, interval, pchip_slopes};
use crate::params::{DerivedConstants, ModelParams};

/// Relative offset of the first table row above the floor wealth `a/r`.
/// `J'` is unbounded at the floor itself.
pub const EPS_FLOOR: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("wealth {x} is at or below the floor annuity value {floor}")]
    BelowFloor { x: f64, floor: f64 },
    #[error("wealth {x} is outside the solved range [{lo}, {hi}]")]
    OutOfRange { x: f64, lo: f64, hi: f64 },
    #[error("a policy table needs at least two wealth nodes, got {0}")]
    TooFewNodes(usize),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    ClosedForm(#[from] ClosedFormError),
}

/// Value, derivatives and controls at one wealth level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyPoint {
    pub x: f64,
    /// `x - a/r`, kept to full relative precision.
    pub excess: f64,
    pub z: f64,
    pub j: f64,
    pub jp: f64,
    pub jpp: f64,
    pub c: f64,
    pub pi: f64,
    pub alpha: f64,
    pub region: Region,
}

/// `c* = a max{1, z^{-1/S} u^{rho/S}}`, pinned to `a` off the unconstrained region.
pub fn consumption_rule(z: f64, u: f64, region: Region, p: &ModelParams, k: &DerivedConstants) -> f64 {
    match region {
        Region::Unconstrained => {
            let ratio = ((k.rho * u.ln() - z.ln()) / p.eic).exp();
            p.a * ratio.max(1.0)
        }
        _ => p.a,
    }
}

fn point_from_dual(sol: &DualSolution, pt: &DualPoint) -> PolicyPoint {
    let p = &sol.params;
    let big_r = p.risk_aversion;
    let one_r = 1.0 - big_r;
    let excess = p.a * pt.excess;
    let x = p.floor_wealth() + excess;
    let pi = (p.mu - p.r) / (p.sigma * p.sigma) * pt.z * pt.hpp / pt.w;
    PolicyPoint {
        x,
        excess,
        z: pt.z,
        j: pow(p.a, one_r) * pt.u / one_r,
        jp: pow(p.a, -big_r) * pt.z,
        jpp: -pow(p.a, -1.0 - big_r) / pt.hpp,
        c: consumption_rule(pt.z, pt.u, pt.region, p, &sol.consts),
        pi,
        alpha: x * pi,
        region: pt.region,
    }
}

fn wealth_range(sol: &DualSolution) -> (f64, f64) {
    let floor = sol.params.floor_wealth();
    let a = sol.params.a;
    (floor + a * sol.node_excess(sol.grid.len() - 1), floor + a * sol.node_excess(0))
}

/// `x = a w(z)`.
pub fn to_wealth(sol: &DualSolution, z: f64) -> Result<f64, PolicyError> {
    Ok(sol.params.a * sol.at(z)?.w)
}

/// Inverse of [`to_wealth`].
pub fn dual_of_wealth(sol: &DualSolution, x: f64) -> Result<f64, PolicyError> {
    let floor = sol.params.floor_wealth();
    if !(x > floor) {
        return Err(PolicyError::BelowFloor { x, floor });
    }
    dual_of_excess(sol, x - floor)
}

fn dual_of_excess(sol: &DualSolution, excess: f64) -> Result<f64, PolicyError> {
    sol.z_of_excess(excess / sol.params.a).map_err(|_| {
        let (lo, hi) = wealth_range(sol);
        PolicyError::OutOfRange { x: sol.params.floor_wealth() + excess, lo, hi }
    })
}

/// Full policy at the dual point `z`.
pub fn evaluate_dual(sol: &DualSolution, z: f64) -> Result<PolicyPoint, PolicyError> {
    Ok(point_from_dual(sol, &sol.at(z)?))
}

/// Full policy at wealth `x`.
pub fn evaluate(sol: &DualSolution, x: f64) -> Result<PolicyPoint, PolicyError> {
    let z = dual_of_wealth(sol, x)?;
    let mut pt = evaluate_dual(sol, z)?;
    pt.x = x;
    pt.excess = x - sol.params.floor_wealth();
    pt.alpha = x * pt.pi;
    Ok(pt)
}

/// `J(x) = a^{1-R} u(z(x)) / (1-R)`.
pub fn value(sol: &DualSolution, x: f64) -> Result<f64, PolicyError> {
    Ok(evaluate(sol, x)?.j)
}

pub fn consumption(sol: &DualSolution, x: f64) -> Result<f64, PolicyError> {
    Ok(evaluate(sol, x)?.c)
}

/// Optimal risky fraction `pi*(x)`.
pub fn investment(sol: &DualSolution, x: f64) -> Result<f64, PolicyError> {
    Ok(evaluate(sol, x)?.pi)
}

/// `x_hat = a w(z_hat)`.
pub fn critical_wealth(sol: &DualSolution) -> f64 {
    sol.params.floor_wealth() + sol.params.a * sol.node_excess(sol.boundary_index())
}

/// Scaled residual of the primal HJB equation at given controls. The drift
/// is written in terms of `x - a/r` so that nothing cancels at the floor.
#[allow(clippy::too_many_arguments)]
pub fn hjb_residual(
    excess: f64,
    j: f64,
    jp: f64,
    jpp: f64,
    c: f64,
    alpha: f64,
    p: &ModelParams,
    k: &DerivedConstants,
) -> f64 {
    let Ok(f) = aggregator(c, j, p, k) else {
        return f64::INFINITY;
    };
    let discount = p.delta * k.nu * j;
    let carry = jp * p.r * excess;
    let risk = jp * alpha * (p.mu - p.r);
    let spend = jp * (c - p.a);
    let vol = 0.5 * alpha * alpha * p.sigma * p.sigma * jpp;
    let scale = [discount, f, carry, risk, spend, vol].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    (f + carry + risk - spend + vol - discount) / scale
}

/// Wealth-space table with interpolated feedback controls.
#[derive(Debug, Clone)]
pub struct PolicyTable {
    pub params: ModelParams,
    pub consts: DerivedConstants,
    pub x: Vec<f64>,
    /// `x - a/r` per row.
    pub excess: Vec<f64>,
    /// Dual variable of each row.
    pub z: Vec<f64>,
    pub j: Vec<f64>,
    pub jp: Vec<f64>,
    pub jpp: Vec<f64>,
    pub c_star: Vec<f64>,
    pub pi_star: Vec<f64>,
    pub alpha_star: Vec<f64>,
    pub region: Vec<Region>,
    pub xhat: f64,
    pub floor_wealth: f64,
    pub floor_value: f64,
    lookup: Lookup,
}

/// Controls and value at an arbitrary wealth level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Feedback {
    pub c: f64,
    pub alpha: f64,
    /// `d alpha / dx` of the interpolant.
    pub dalpha: f64,
    pub j: f64,
}

// interpolation in s = ln(x - a/r)
#[derive(Debug, Clone)]
struct Lookup {
    s: Vec<f64>,
    c: Vec<f64>,
    dc: Vec<f64>,
    la: Vec<f64>,
    dla: Vec<f64>,
    j: Vec<f64>,
    dj: Vec<f64>,
}

impl Lookup {
    fn new(excess: &[f64], c: &[f64], alpha: &[f64], j: &[f64], jp: &[f64]) -> Self {
        let s: Vec<f64> = excess.iter().map(|e| e.ln()).collect();
        let la: Vec<f64> = alpha.iter().map(|v| v.ln()).collect();
        Self {
            dc: pchip_slopes(&s, c),
            dla: pchip_slopes(&s, &la),
            dj: jp.iter().zip(excess).map(|(d, e)| d * e).collect(),
            s,
            c: c.to_vec(),
            la,
            j: j.to_vec(),
        }
    }
}

impl PolicyTable {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Row carrying the critical wealth.
    pub fn xhat_index(&self) -> usize {
        self.region.iter().position(|r| *r == Region::Boundary).unwrap_or(0)
    }

    pub fn x_max(&self) -> f64 {
        self.x[self.x.len() - 1]
    }

    /// Interpolated controls and value. Below the first row the value is
    /// joined to the floor value by a power law matching `J'`; above the last
    /// row everything follows the homothetic unconstrained scaling.
    pub fn feedback(&self, x: f64) -> Feedback {
        self.feedback_excess(x - self.floor_wealth)
    }

    /// [`PolicyTable::feedback`] addressed by `x - a/r`.
    pub fn feedback_excess(&self, e: f64) -> Feedback {
        let l = &self.lookup;
        let a = self.params.a;
        if !(e > 0.0) {
            return Feedback { c: a, alpha: 0.0, dalpha: 0.0, j: self.floor_value };
        }
        let s = e.ln();
        let n = l.s.len();
        if s < l.s[0] {
            let ratio = e / self.excess[0];
            let gap = l.j[0] - self.floor_value;
            let gamma = l.dj[0] / gap;
            let alpha = (l.la[0] + l.dla[0] * ratio.ln()).exp();
            return Feedback {
                c: a,
                alpha,
                dalpha: alpha * l.dla[0] / e,
                j: self.floor_value + gap * ratio.powf(gamma),
            };
        }
        if s > l.s[n - 1] {
            let ratio = (self.floor_wealth + e) / self.x[n - 1];
            return Feedback {
                c: l.c[n - 1] * ratio,
                alpha: self.alpha_star[n - 1] * ratio,
                dalpha: self.alpha_star[n - 1] / self.x[n - 1],
                j: l.j[n - 1] * ratio.powf(1.0 - self.params.risk_aversion),
            };
        }
        let i = interval(&l.s, s);
        let (s0, s1) = (l.s[i], l.s[i + 1]);
        let (c, _) = hermite(s0, s1, l.c[i], l.c[i + 1], l.dc[i], l.dc[i + 1], s);
        let (la, dla) = hermite(s0, s1, l.la[i], l.la[i + 1], l.dla[i], l.dla[i + 1], s);
        let (j, _) = hermite(s0, s1, l.j[i], l.j[i + 1], l.dj[i], l.dj[i + 1], s);
        let alpha = la.exp();
        Feedback { c: c.max(a), alpha, dalpha: alpha * dla / e, j }
    }
}

/// Samples the policy on a grid geometric in `x - a/r`, from `EPS_FLOOR a/r`
/// up to the image of `z_min`, with the critical wealth as an extra row.
pub fn build_table(sol: &DualSolution, n_x: usize) -> Result<PolicyTable, PolicyError> {
    if n_x < 2 {
        return Err(PolicyError::TooFewNodes(n_x));
    }
    let p = &sol.params;
    let a = p.a;
    let floor = p.floor_wealth();
    let (lo, hi) = wealth_range(sol);
    let e_lo = EPS_FLOOR * floor;
    let e_hi = hi - floor;
    if !(floor + e_lo > lo) {
        return Err(PolicyError::OutOfRange { x: floor + e_lo, lo, hi });
    }
    let e_hat = a * sol.node_excess(sol.boundary_index());
    let (s_lo, s_hi) = (e_lo.ln(), e_hi.ln());
    let ds = (s_hi - s_lo) / (n_x - 1) as f64;
    let mut rows: Vec<(f64, Option<f64>)> = (0..n_x)
        .map(|k| match k {
            0 => (e_lo, None),
            _ if k == n_x - 1 => (e_hi, Some(sol.z_min())),
            _ => ((s_lo + k as f64 * ds).exp(), None),
        })
        .collect();
    let s_hat = e_hat.ln();
    if !(s_hat > s_lo && s_hat < s_hi) {
        return Err(PolicyError::OutOfRange { x: floor + e_hat, lo: floor + e_lo, hi });
    }
    let near = (((s_hat - s_lo) / ds).round() as usize).min(n_x - 1);
    let zhat_row = (e_hat, Some(sol.zhat));
    if near != 0 && near != n_x - 1 && (rows[near].0.ln() - s_hat).abs() <= 0.25 * ds {
        rows[near] = zhat_row;
    } else {
        let at = rows.partition_point(|r| r.0 < e_hat);
        rows.insert(at, zhat_row);
    }
    let ihat = rows.iter().position(|r| r.0 == e_hat).expect("inserted above");

    let m = rows.len();
    let mut t = PolicyTable {
        params: *p,
        consts: sol.consts,
        x: Vec::with_capacity(m),
        excess: Vec::with_capacity(m),
        z: Vec::with_capacity(m),
        j: Vec::with_capacity(m),
        jp: Vec::with_capacity(m),
        jpp: Vec::with_capacity(m),
        c_star: Vec::with_capacity(m),
        pi_star: Vec::with_capacity(m),
        alpha_star: Vec::with_capacity(m),
        region: Vec::with_capacity(m),
        xhat: floor + e_hat,
        floor_wealth: floor,
        floor_value: value_at_floor(p, &sol.consts)?.value,
        lookup: Lookup::new(&[1.0, 2.0], &[0.0; 2], &[1.0; 2], &[0.0; 2], &[0.0; 2]),
    };
    for (row, (e, z)) in rows.into_iter().enumerate() {
        let z = match z {
            Some(z) => z,
            None => dual_of_excess(sol, e)?,
        };
        let mut pt = evaluate_dual(sol, z)?;
        pt.excess = e;
        pt.x = floor + e;
        pt.alpha = pt.x * pt.pi;
        pt.region = match row.cmp(&ihat) {
            std::cmp::Ordering::Less => Region::Constrained,
            std::cmp::Ordering::Equal => Region::Boundary,
            std::cmp::Ordering::Greater => Region::Unconstrained,
        };
        pt.c = consumption_rule(pt.z, sol.at(z)?.u, pt.region, p, &sol.consts);
        t.x.push(pt.x);
        t.excess.push(e);
        t.z.push(pt.z);
        t.j.push(pt.j);
        t.jp.push(pt.jp);
        t.jpp.push(pt.jpp);
        t.c_star.push(pt.c);
        t.pi_star.push(pt.pi);
        t.alpha_star.push(pt.alpha);
        t.region.push(pt.region);
    }
    t.lookup = Lookup::new(&t.excess, &t.c_star, &t.alpha_star, &t.j, &t.jp);
    Ok(t)
}

fn one_sided(i: usize, lo: usize, hi: usize) -> Vec<usize> {
    let width = (hi - lo + 1).min(5);
    let start = i.saturating_sub(2).max(lo).min(hi + 1 - width);
    (start..start + width).collect()
}

fn jpp_with(excess: &[f64], jp: &[f64], i: usize, idx: &[usize]) -> f64 {
    let s: Vec<f64> = idx.iter().map(|&j| excess[j].ln()).collect();
    let w = fd_weights(excess[i].ln(), &s, 1);
    let d: f64 = idx.iter().zip(&w).map(|(&j, c)| c * jp[j]).sum();
    d / excess[i]
}

/// `J''` at every row from a fourth-order difference of the `J'` column in
/// `ln(x - a/r)`. Stencils may end on the critical-wealth row but never cross it.
pub fn jpp_profile(excess: &[f64], jp: &[f64], ihat: usize) -> Vec<f64> {
    let n = excess.len();
    (0..n)
        .map(|i| {
            let idx = if i <= ihat { one_sided(i, 0, ihat) } else { one_sided(i, ihat, n - 1) };
            jpp_with(excess, jp, i, &idx)
        })
        .collect()
}

/// `J''(x_hat-)` and `J''(x_hat+)` from sixth-order one-sided differences of `J'`.
pub fn one_sided_jpp_at_xhat(excess: &[f64], jp: &[f64], ihat: usize) -> (f64, f64) {
    let n = excess.len();
    let left = (ihat.saturating_sub(6)..=ihat).collect::<Vec<_>>();
    let right = (ihat..(ihat + 7).min(n)).collect::<Vec<_>>();
    (jpp_with(excess, jp, ihat, &left), jpp_with(excess, jp, ihat, &right))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closedform::{bounds, merton};
    use crate::dualsolver::{solve, SolverConfig};
    use crate::params::derive;
    use crate::params::fixtures::*;
    use std::sync::OnceLock;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    fn solved(p: &ModelParams) -> DualSolution {
        solve(p, &derive(p).unwrap(), &SolverConfig::default()).unwrap()
    }

    fn sol_a() -> &'static DualSolution {
        static S: OnceLock<DualSolution> = OnceLock::new();
        S.get_or_init(|| solved(&set_a()))
    }

    fn sol_b() -> &'static DualSolution {
        static S: OnceLock<DualSolution> = OnceLock::new();
        S.get_or_init(|| solved(&set_b()))
    }

    fn table(sol: &DualSolution) -> PolicyTable {
        build_table(sol, 800).unwrap()
    }

    #[test]
    fn wealth_map_endpoints_and_round_trip() {
        for sol in [sol_a(), sol_b()] {
            let p = &sol.params;
            let x_top = to_wealth(sol, sol.z_max()).unwrap();
            assert!(rel(x_top, p.floor_wealth()) < 1e-4);
            let x_bottom = to_wealth(sol, sol.z_min()).unwrap();
            assert!(x_bottom > 100.0 * p.floor_wealth());
            for i in (0..sol.grid.len()).step_by(37) {
                let z = sol.grid[i];
                let x = to_wealth(sol, z).unwrap();
                assert!(rel(x, p.a * sol.w[i]) < 1e-14);
                if x - p.floor_wealth() > 1e-12 * x {
                    let back = dual_of_wealth(sol, x).unwrap();
                    // x - a/r cancels near the floor; the excess form itself is exact to 1e-10
                    let tol = 1e-10 + 4.0 * f64::EPSILON * x / (x - p.floor_wealth());
                    assert!(rel(back, z) < tol, "i={i} z={z} back={back}");
                }
            }
        }
    }

    #[test]
    fn out_of_range_wealth_is_refused() {
        let sol = sol_a();
        let floor = sol.params.floor_wealth();
        assert!(matches!(value(sol, floor), Err(PolicyError::BelowFloor { .. })));
        assert!(matches!(value(sol, 0.5 * floor), Err(PolicyError::BelowFloor { .. })));
        let (_, hi) = wealth_range(sol);
        assert!(matches!(value(sol, 2.0 * hi), Err(PolicyError::OutOfRange { .. })));
    }

    #[test]
    fn primal_dual_identities() {
        for sol in [sol_a(), sol_b()] {
            let p = &sol.params;
            let big_r = p.risk_aversion;
            for i in (0..sol.grid.len()).step_by(53) {
                let pt = evaluate_dual(sol, sol.grid[i]).unwrap();
                assert!(rel(pt.jp, pow(p.a, -big_r) * sol.grid[i]) < 1e-14);
                assert!(rel(pt.jpp, -pow(p.a, -1.0 - big_r) / sol.node_hpp(i)) < 1e-8);
                assert!(rel(pt.j, pow(p.a, 1.0 - big_r) * sol.u[i] / (1.0 - big_r)) < 1e-12);
                assert!(pt.jp > 0.0 && pt.jpp < 0.0 && (1.0 - big_r) * pt.j > 0.0);
            }
        }
    }

    #[test]
    fn investment_formulas_agree() {
        for sol in [sol_a(), sol_b()] {
            let p = &sol.params;
            for i in (1..sol.grid.len() - 1).step_by(41) {
                let pt = evaluate_dual(sol, sol.grid[i]).unwrap();
                let primal = -(p.mu - p.r) / (p.sigma * p.sigma) * pt.jp / (pt.x * pt.jpp);
                assert!(rel(pt.pi, primal) < 1e-8, "{} vs {primal}", pt.pi);
                assert!(pt.pi > 0.0);
            }
        }
    }

    #[test]
    fn consumption_pinned_exactly_in_constrained_region() {
        for sol in [sol_a(), sol_b()] {
            let k = &sol.consts;
            for i in (0..sol.grid.len()).step_by(29) {
                let pt = evaluate_dual(sol, sol.grid[i]).unwrap();
                let binds = k.rho * sol.u[i].ln() <= sol.grid[i].ln();
                assert!(pt.c >= sol.params.a);
                if binds {
                    assert_eq!(pt.c, sol.params.a);
                } else {
                    assert!(pt.c > sol.params.a);
                }
            }
        }
    }

    #[test]
    fn unconstrained_formula_meets_floor_at_switch() {
        for sol in [sol_a(), sol_b()] {
            let i = sol.boundary_index();
            let c = consumption_rule(sol.zhat, sol.u[i], Region::Unconstrained, &sol.params, &sol.consts);
            assert!(rel(c, sol.params.a) < 1e-9, "{c}");
        }
    }

    #[test]
    fn critical_wealth_properties() {
        for sol in [sol_a(), sol_b()] {
            let xhat = critical_wealth(sol);
            let floor = sol.params.floor_wealth();
            assert!(xhat > floor);
            assert!(xhat < wealth_range(sol).1);
            assert!(rel(xhat, to_wealth(sol, sol.zhat).unwrap()) < 1e-12);
            let below = evaluate(sol, 0.5 * (floor + xhat)).unwrap();
            let above = evaluate(sol, 2.0 * xhat).unwrap();
            assert_eq!(below.region, Region::Constrained);
            assert_eq!(above.region, Region::Unconstrained);
        }
    }

    #[test]
    fn critical_wealth_is_proportional_to_floor() {
        let p = set_a();
        let s1 = sol_a();
        let s2 = solved(&p.with_floor(2.0 * p.a));
        assert!(rel(critical_wealth(&s2), 2.0 * critical_wealth(s1)) < 1e-6);
    }

    #[test]
    fn floor_limits() {
        for sol in [sol_a(), sol_b()] {
            let t = table(sol);
            // J approaches the floor value like a power of x - a/r
            let floor = sol.params.floor_wealth();
            let gaps: Vec<f64> = [1e-6, 1e-8, 1e-10, 1e-12]
                .iter()
                .map(|e| rel(value(sol, floor * (1.0 + e)).unwrap(), t.floor_value))
                .collect();
            assert!(gaps.windows(2).all(|g| g[1] < 0.5 * g[0]), "{gaps:?}");
            assert!(gaps[3] < 1e-4, "{gaps:?}");
            // alpha vanishes and J' grows without bound towards the floor
            assert!(t.alpha_star[0] < 1e-3 * t.alpha_star[t.xhat_index()]);
            // near the floor excess ~ z^{lam - 1}, lam the stable saddle root
            let (r, d, kap) = (sol.params.r, sol.params.delta, sol.consts.kappa);
            let tr = 1.0 + (r - d) / kap;
            let lam = 0.5 * (tr - (tr * tr + 4.0 * d / kap).sqrt());
            let (a, b) = (t.excess[0], t.excess[1]);
            let slope = (t.jp[0] / t.jp[1]).ln() / (a / b).ln();
            assert!(rel(slope, 1.0 / (lam - 1.0)) < 1e-3, "{slope} vs {}", 1.0 / (lam - 1.0));
            assert!(t.jp[0] > 10.0 * t.jp[t.xhat_index()]);
            assert!(t.jp.windows(2).all(|w| w[1] < w[0]));
        }
    }

    #[test]
    fn merton_limits_at_largest_wealth() {
        for sol in [sol_a(), sol_b()] {
            let m = merton(&sol.params, &sol.consts);
            let t = table(sol);
            let n = t.len() - 1;
            assert!(rel(t.c_star[n] / t.x[n], m.consumption_propensity) < 0.05);
            assert!(rel(t.pi_star[n], m.pi_ez) < 0.05);
            let jez = crate::closedform::value_unconstrained(t.x[n], &sol.params, &sol.consts).unwrap();
            assert!(rel(t.j[n], jez) < 0.05);
        }
    }

    #[test]
    fn table_invariants_and_hjb() {
        for sol in [sol_a(), sol_b()] {
            let t = table(sol);
            let p = &t.params;
            assert!(t.x.windows(2).all(|w| w[1] > w[0]));
            assert!(t.x[0] > t.floor_wealth);
            let ihat = t.xhat_index();
            assert_eq!(t.x[ihat], t.xhat);
            for i in 0..t.len() {
                assert!(t.jp[i] > 0.0 && t.jpp[i] < 0.0 && (1.0 - p.risk_aversion) * t.j[i] > 0.0);
                let b = bounds(t.x[i], p, &t.consts).unwrap();
                assert!(b.lower <= t.j[i] && t.j[i] < b.upper, "row {i}: {b:?} {} x={} R={}", t.j[i], t.x[i], p.risk_aversion);
                assert!(t.pi_star[i] > 0.0 && t.c_star[i] >= p.a);
                if i <= ihat {
                    assert_eq!(t.c_star[i], p.a);
                } else {
                    assert!(t.c_star[i] > t.c_star[i - 1]);
                }
                let r = hjb_residual(t.excess[i], t.j[i], t.jp[i], t.jpp[i], t.c_star[i], t.alpha_star[i], p, &t.consts);
                assert!(r.abs() < 1e-9, "row {i}: {r}");
            }
            let fd = jpp_profile(&t.excess, &t.jp, ihat);
            for i in 0..t.len() {
                assert!(rel(fd[i], t.jpp[i]) < 1e-5, "row {i}: {} vs {}", fd[i], t.jpp[i]);
            }
            let (l, r) = one_sided_jpp_at_xhat(&t.excess, &t.jp, ihat);
            assert!(rel(l, r) < 1e-6, "{l} {r}");
        }
    }

    #[test]
    fn minimal_table_is_valid() {
        let t = build_table(sol_a(), 2).unwrap();
        assert!(t.len() == 3);
        assert!(t.x.windows(2).all(|w| w[1] > w[0]));
        assert!(t.c_star.windows(2).all(|w| w[1] >= w[0]));
        assert!(matches!(build_table(sol_a(), 1), Err(PolicyError::TooFewNodes(1))));
    }

    #[test]
    fn feedback_matches_direct_evaluation() {
        let sol = sol_a();
        let t = table(sol);
        for k in 0..60 {
            let x = t.x[0] * (t.x_max() / t.x[0]).powf((k as f64 + 0.43) / 60.0);
            let fb = t.feedback(x);
            let pt = evaluate(sol, x).unwrap();
            assert!(rel(fb.j, pt.j) < 1e-8);
            assert!((fb.c - pt.c).abs() < 1e-5 * pt.c);
            assert!(rel(fb.alpha, pt.alpha) < 1e-5);
        }
        let below = t.feedback(t.floor_wealth * (1.0 + 1e-9));
        assert_eq!(below.c, sol.params.a);
        assert!(below.j > t.floor_value.min(t.j[0]) && below.j < t.floor_value.max(t.j[0]));
        assert!(below.alpha < t.alpha_star[0]);
    }
}
