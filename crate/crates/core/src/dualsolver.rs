//! Free-boundary solver for the dual value function `h(z)`.
//!
//! The second-order dual ODE is integrated as a first-order system in
//! `t = ln z` for the pair `p = u - delta^{-nu}` and `Q = (1-R) z (w - 1/r)`,
//! where `u = (1-R)(h - z h')` and `w = -h'`. Both vanish at the large-`z`
//! fixed point, which is a saddle; the solution leaves it along the stable
//! direction, switches branch where `u^rho = z`, and must not excite the
//! growing mode of the unconstrained branch as `z -> 0`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::closedform::{dual_coefficient, pow};
use crate::interp::hermite;
use crate::ode::{Dopri5, Outcome};
use crate::params::{derive, validate, DerivedConstants, ModelParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("solver not applicable: {0}")]
    ConditionNotApplicable(String),
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("no sign change of the shooting target over the amplitude scan")]
    NoBracket,
    #[error("iteration cap of {0} reached")]
    MaxIterExceeded(usize),
    #[error("dual positivity lost (u <= 0) at z = {z:e}")]
    PositivityLost { z: f64 },
    #[error("switch point {zhat:e} is not inside the grid [{z_min:e}, {z_max:e}]")]
    SwitchOutOfRange { zhat: f64, z_min: f64, z_max: f64 },
    #[error("solution has {0} branch switches, expected exactly one")]
    SwitchCount(usize),
    #[error("tolerance not met: {what} = {value:e} > {tol:e}")]
    ToleranceNotMet { what: &'static str, value: f64, tol: f64 },
    #[error("z = {0:e} outside the solved range")]
    OutOfRange(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Unconstrained,
    Constrained,
    Boundary,
}

impl Region {
    pub fn as_str(self) -> &'static str {
        match self {
            Region::Unconstrained => "unconstrained",
            Region::Constrained => "constrained",
            Region::Boundary => "boundary",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "unconstrained" => Some(Region::Unconstrained),
            "constrained" => Some(Region::Constrained),
            "boundary" => Some(Region::Boundary),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Shooting, falling back to collocation when no bracket is found.
    Shooting,
    Collocation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub z_min: f64,
    pub z_max: f64,
    pub n_nodes: usize,
    pub tol_residual: f64,
    pub tol_boundary: f64,
    pub tol_zhat: f64,
    pub max_iter: usize,
    pub method: Method,
    /// Relative tolerance of the adaptive integrator.
    pub rtol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            z_min: 1e-6,
            z_max: 1e8,
            n_nodes: 4000,
            tol_residual: 1e-6,
            tol_boundary: 1e-4,
            tol_zhat: 1e-9,
            max_iter: 200,
            method: Method::Shooting,
            rtol: 1e-11,
        }
    }
}

impl SolverConfig {
    pub fn check(&self) -> Result<(), SolverError> {
        let bad = |m: &str| Err(SolverError::InvalidConfig(m.to_string()));
        if !(self.z_min > 0.0 && self.z_max > self.z_min && self.z_max.is_finite()) {
            return bad("need 0 < z_min < z_max");
        }
        if self.n_nodes < 8 {
            return bad("need at least 8 nodes");
        }
        for (name, v) in [
            ("tol_residual", self.tol_residual),
            ("tol_boundary", self.tol_boundary),
            ("tol_zhat", self.tol_zhat),
            ("rtol", self.rtol),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(&format!("{name} must be positive"));
            }
        }
        if self.max_iter == 0 {
            return bad("max_iter must be positive");
        }
        Ok(())
    }
}

/// Scalars that the first-order system needs.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Model {
    pub one_r: f64,
    pub big_r: f64,
    pub s: f64,
    pub r: f64,
    pub kappa: f64,
    pub delta: f64,
    pub nu: f64,
    pub rho: f64,
    /// delta * nu
    pub dnu: f64,
    /// Constrained fixed point `delta^{-nu}`.
    pub u0: f64,
    /// Coefficient of the unconstrained dual.
    pub c: f64,
    /// Exponent `1 - 1/R`.
    pub e: f64,
    /// `c^{rho/S - 1}`, equal to the Merton propensity.
    pub eta: f64,
}

impl Model {
    pub fn new(p: &ModelParams, k: &DerivedConstants) -> Self {
        Self {
            one_r: 1.0 - p.risk_aversion,
            big_r: p.risk_aversion,
            s: p.eic,
            r: p.r,
            kappa: k.kappa,
            delta: p.delta,
            nu: k.nu,
            rho: k.rho,
            dnu: p.delta * k.nu,
            u0: pow(p.delta, -k.nu),
            c: dual_coefficient(p, k),
            e: 1.0 - 1.0 / p.risk_aversion,
            eta: pow(dual_coefficient(p, k), k.rho / p.eic - 1.0),
        }
    }

    /// `d/dt p` on the given branch; `None` if `u <= 0`.
    #[inline]
    pub fn p_t(&self, t: f64, p: f64, q: f64, branch: Region) -> Option<f64> {
        let u = self.u0 + p;
        if !(u > 0.0) {
            return None;
        }
        let num = match branch {
            Region::Constrained => {
                self.r * q + self.dnu * self.u0 * (self.rho * (p / self.u0).ln_1p()).exp_m1() - self.dnu * p
            }
            _ => {
                let src = self.nu * self.s * ((1.0 - 1.0 / self.s) * t + self.rho / self.s * u.ln()).exp();
                self.r * q + self.one_r * t.exp() + src - self.dnu * u
            }
        };
        let v = num / self.kappa;
        v.is_finite().then_some(v)
    }

    #[inline]
    pub fn field(&self, t: f64, y: &[f64; 2], branch: Region) -> Option<[f64; 2]> {
        let pt = self.p_t(t, y[0], y[1], branch)?;
        Some([pt, y[1] + pt])
    }

    /// Positive on the unconstrained side, negative on the constrained side.
    #[inline]
    pub fn switch_fn(&self, t: f64, p: f64) -> f64 {
        self.rho * (self.u0 + p).ln() - t
    }

    /// Stable eigenvalue and eigenvector `(1, v_q)` of the constrained
    /// fixed point, scaled so that the first component is `sign(1-R)`.
    pub fn saddle(&self) -> (f64, [f64; 2]) {
        let tr = 1.0 + (self.r - self.delta) / self.kappa;
        let det = -self.delta / self.kappa;
        let disc = (tr * tr - 4.0 * det).sqrt();
        // stable root without cancellation
        let lam = 2.0 * det / (tr + disc);
        let vp = self.one_r.signum();
        (lam, [vp, (self.kappa * lam + self.delta) * vp / self.r])
    }

    /// Jacobian of the scaled unconstrained system for `(u/z^e, w z^{1/R})`
    /// at its fixed point `(c, c)`.
    pub fn scaled_jacobian(&self) -> [[f64; 2]; 2] {
        let a_u = (self.nu * self.rho * self.eta - self.dnu) / self.kappa;
        let a_w = self.one_r * self.r / self.kappa;
        [
            [a_u - self.e, a_w],
            [a_u / self.one_r, 1.0 / self.big_r + a_w / self.one_r],
        ]
    }

    /// Growing mode (as `z -> 0`) of the scaled unconstrained system:
    /// eigenvalue, right eigenvector with positive first component, and
    /// the left eigenvector normalised against it.
    pub fn bad_mode(&self) -> Result<(f64, [f64; 2], [f64; 2]), SolverError> {
        let j = self.scaled_jacobian();
        let tr = j[0][0] + j[1][1];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        let disc = tr * tr - 4.0 * det;
        if !(disc > 0.0) || !(det < 0.0) {
            return Err(SolverError::ConditionNotApplicable(
                "unconstrained branch is not a saddle at small z".into(),
            ));
        }
        let sq = disc.sqrt();
        let lam = if tr >= 0.0 { 2.0 * det / (tr + sq) } else { 0.5 * (tr - sq) };
        // right eigenvector from whichever row is better conditioned
        let mut v = if j[0][1].abs() >= j[1][0].abs() {
            [j[0][1], lam - j[0][0]]
        } else {
            [lam - j[1][1], j[1][0]]
        };
        if v[0] < 0.0 {
            v = [-v[0], -v[1]];
        }
        let mut b = if j[1][0].abs() >= j[0][1].abs() {
            [j[1][0], lam - j[0][0]]
        } else {
            [lam - j[1][1], j[0][1]]
        };
        let dot = b[0] * v[0] + b[1] * v[1];
        b = [b[0] / dot, b[1] / dot];
        Ok((lam, v, b))
    }

    /// Decaying mode (as `z -> 0`) of the scaled unconstrained system:
    /// eigenvalue and eigenvector with positive first component.
    pub fn good_mode(&self) -> Result<(f64, [f64; 2]), SolverError> {
        let (lam_bad, _, _) = self.bad_mode()?;
        let j = self.scaled_jacobian();
        let lam = j[0][0] + j[1][1] - lam_bad;
        let mut v = if j[0][1].abs() >= j[1][0].abs() {
            [j[0][1], lam - j[0][0]]
        } else {
            [lam - j[1][1], j[1][0]]
        };
        if v[0] < 0.0 {
            v = [-v[0], -v[1]];
        }
        let norm = v[0].abs().max(v[1].abs());
        Ok((lam, [v[0] / norm, v[1] / norm]))
    }

    /// Unconstrained field for the relative deviations
    /// `du = u/(c z^e) - 1`, `dw = w z^{1/R}/c - 1` in `t = ln z`. The
    /// closed-form parts cancel analytically, so the system is autonomous and
    /// exact for arbitrarily small deviations.
    #[inline]
    pub fn delta_field(&self, d: &[f64; 2]) -> Option<[f64; 2]> {
        let (du, dw) = (d[0], d[1]);
        if !(du > -1.0) {
            return None;
        }
        let src = self.nu * self.s * self.eta * (self.rho / self.s * du.ln_1p()).exp_m1();
        let du_t = (self.r * self.one_r * dw + src - (self.dnu + self.kappa * self.e) * du) / self.kappa;
        let dw_t = dw / self.big_r + (self.e * du + du_t) / self.one_r;
        (du_t.is_finite() && dw_t.is_finite()).then_some([du_t, dw_t])
    }

    /// `c z^e`, the unconstrained `u`.
    #[inline]
    pub fn u_ez(&self, t: f64) -> f64 {
        self.c * (self.e * t).exp()
    }

    /// Deviations of a `(p, Q)` state from the unconstrained closed form.
    pub fn deviation_of(&self, t: f64, p: f64, q: f64) -> [f64; 2] {
        let ue = self.u_ez(t);
        let z = t.exp();
        // z w = z/r + Q/(1-R)
        [(self.u0 + p) / ue - 1.0, (z / self.r + q / self.one_r) / ue - 1.0]
    }

    /// `(p, Q)` from deviations.
    pub fn state_of(&self, t: f64, d: &[f64; 2]) -> [f64; 2] {
        let ue = self.u_ez(t);
        let z = t.exp();
        [ue * (1.0 + d[0]) - self.u0, self.one_r * (ue * (1.0 + d[1]) - z / self.r)]
    }

    pub fn h_of(&self, z: f64, p: f64, q: f64) -> f64 {
        (self.u0 + p) / self.one_r - z / self.r - q / self.one_r
    }

    pub fn w_of(&self, z: f64, q: f64) -> f64 {
        1.0 / self.r + q / (self.one_r * z)
    }
}

/// First-order right-hand side `(u', w')` in the original variables.
pub fn rhs(
    z: f64,
    u: f64,
    w: f64,
    branch: Region,
    p: &ModelParams,
    k: &DerivedConstants,
) -> Result<(f64, f64), SolverError> {
    if !(u > 0.0) {
        return Err(SolverError::PositivityLost { z });
    }
    let (big_r, s) = (p.risk_aversion, p.eic);
    let source = match branch {
        Region::Constrained => pow(u, k.rho) / (1.0 - s) - z,
        _ => s / (1.0 - s) * pow(z, (s - 1.0) / s) * pow(u, k.rho / s),
    };
    let du = (-p.delta * k.nu * u + (1.0 - big_r) * (p.r * z * w + source)) / (k.kappa * z);
    Ok((du, du / ((1.0 - big_r) * z)))
}

/// Compares `u^rho` with `z` in log space; `tol` is relative.
pub fn branch_classify(z: f64, u: f64, k: &DerivedConstants, tol: f64) -> Region {
    let gap = k.rho * u.ln() - z.ln();
    if gap.abs() <= tol {
        Region::Boundary
    } else if gap > 0.0 {
        Region::Unconstrained
    } else {
        Region::Constrained
    }
}

/// Scaled residual of the second-order dual ODE at one point.
pub fn residual(
    h: f64,
    hp: f64,
    hpp: f64,
    z: f64,
    branch: Region,
    p: &ModelParams,
    k: &DerivedConstants,
) -> Result<f64, SolverError> {
    let s = p.eic;
    let big_h = (1.0 - p.risk_aversion) * (h - z * hp);
    if !(big_h > 0.0) {
        return Err(SolverError::PositivityLost { z });
    }
    let dnu = p.delta * k.nu;
    let hr = pow(big_h, k.rho);
    let rhs = match branch {
        Region::Constrained => (z - hr) / (1.0 - s),
        _ => s / (1.0 - s) * z * (1.0 - pow(hr / z, 1.0 / s)),
    };
    let lhs = k.kappa * z * z * hpp + (dnu - p.r) * z * hp - dnu * h + s / (1.0 - s) * z;
    let scale = (dnu * h).abs().max(s / (1.0 - s).abs() * z).max(1e-300);
    Ok((lhs - rhs) / scale)
}

/// Solved dual triple on a log grid, with dense output.
#[derive(Debug, Clone)]
pub struct DualSolution {
    pub params: ModelParams,
    pub consts: DerivedConstants,
    pub config: SolverConfig,
    pub method: Method,
    pub grid: Vec<f64>,
    pub u: Vec<f64>,
    pub w: Vec<f64>,
    pub h: Vec<f64>,
    pub region: Vec<Region>,
    pub zhat: f64,
    pub residual_sup: f64,
    /// `|u(z_max)/delta^{-nu} - 1|`
    pub boundary_u_dev: f64,
    /// `|r w(z_max) - 1|`
    pub boundary_w_dev: f64,
    /// `|u(z_min)/(c z_min^{1-1/R}) - 1|`; rests on the small-z asymptote
    /// assumption and is reported, not enforced.
    pub small_z_dev: f64,
    /// Shooting amplitude at the reference point, when shooting was used.
    pub amplitude: Option<f64>,
    pub assumption_flags: Vec<String>,
    pub(crate) dense: Dense,
}

/// Hermite data in `t = ln z` on the solution nodes.
#[derive(Debug, Clone)]
pub(crate) struct Dense {
    pub model: Model,
    pub t: Vec<f64>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    /// Index of the boundary node.
    pub ihat: usize,
    /// Deviations from the unconstrained closed form at nodes `0..=ihat`,
    /// with their exact `t`-slopes.
    dl: Vec<[f64; 2]>,
    ds: Vec<[f64; 2]>,
    lp: Vec<f64>,
    sp: Vec<f64>,
    lu: Vec<f64>,
    su: Vec<f64>,
    lq: Vec<f64>,
    sq: Vec<f64>,
}

/// Point evaluation of the dense solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualPoint {
    pub z: f64,
    pub u: f64,
    pub w: f64,
    pub h: f64,
    /// `h''` from the ODE at the interpolated state.
    pub hpp: f64,
    /// `w - 1/r`, kept to full relative precision.
    pub excess: f64,
    pub region: Region,
}

struct Local {
    p: f64,
    q: f64,
    /// `dQ/dt` of the interpolant.
    qt: f64,
}

impl Dense {
    /// `delta` holds the deviations from the unconstrained closed form at the
    /// nodes below `ihat`; they are derived from `(p, q)` when absent.
    fn new(
        model: Model,
        t: Vec<f64>,
        p: Vec<f64>,
        q: Vec<f64>,
        ihat: usize,
        delta: Option<Vec<[f64; 2]>>,
    ) -> Result<Self, SolverError> {
        let n = t.len();
        let m = &model;
        let (mut lp, mut sp, mut lu, mut su, mut lq, mut sq) =
            (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let mut dl = delta.unwrap_or_else(|| (0..ihat).map(|i| m.deviation_of(t[i], p[i], q[i])).collect());
        dl.push(m.deviation_of(t[ihat], p[ihat], q[ihat]));
        let mut ds = Vec::with_capacity(ihat + 1);
        for (i, d) in dl.iter().enumerate() {
            ds.push(m.delta_field(d).ok_or(SolverError::PositivityLost { z: t[i].exp() })?);
        }
        for i in 0..n {
            let z = t[i].exp();
            let bad_sign = |v: f64| v == 0.0 || v.signum() != m.one_r.signum();
            if bad_sign(q[i]) {
                return Err(SolverError::ToleranceNotMet { what: "w > 1/r", value: z, tol: 0.0 });
            }
            lq[i] = q[i].abs().ln();
            if i < ihat {
                continue;
            }
            let branch = if i == ihat { Region::Boundary } else { Region::Constrained };
            let pt = m.p_t(t[i], p[i], q[i], branch).ok_or(SolverError::PositivityLost { z })?;
            if bad_sign(p[i]) {
                return Err(SolverError::ToleranceNotMet { what: "sign of u - delta^-nu", value: z, tol: 0.0 });
            }
            let u = m.u0 + p[i];
            lp[i] = p[i].abs().ln();
            sp[i] = pt / p[i];
            lu[i] = u.ln();
            su[i] = pt / u;
            sq[i] = (q[i] + pt) / q[i];
        }
        Ok(Self { model, t, p, q, ihat, dl, ds, lp, sp, lu, su, lq, sq })
    }

    fn interval(&self, t: f64) -> Result<usize, SolverError> {
        let n = self.t.len();
        if !(t >= self.t[0] && t <= self.t[n - 1]) {
            return Err(SolverError::OutOfRange(t.exp()));
        }
        let i = self.t.partition_point(|&x| x <= t);
        Ok(i.saturating_sub(1).min(n - 2))
    }

    fn branch_at(&self, i: usize, t: f64) -> Region {
        let th = self.t[self.ihat];
        if t == th {
            Region::Boundary
        } else if i < self.ihat {
            Region::Unconstrained
        } else {
            Region::Constrained
        }
    }

    fn delta_at(&self, i: usize, t: f64) -> ([f64; 2], [f64; 2]) {
        let (t0, t1) = (self.t[i], self.t[i + 1]);
        let (a, b) = (&self.dl[i], &self.dl[i + 1]);
        let (sa, sb) = (&self.ds[i], &self.ds[i + 1]);
        let (du, du_t) = hermite(t0, t1, a[0], b[0], sa[0], sb[0], t);
        let (dw, dw_t) = hermite(t0, t1, a[1], b[1], sa[1], sb[1], t);
        ([du, dw], [du_t, dw_t])
    }

    fn state(&self, t: f64) -> Result<Local, SolverError> {
        let i = self.interval(t)?;
        let m = &self.model;
        if i < self.ihat {
            let (d, d_t) = self.delta_at(i, t);
            let ue = m.u_ez(t);
            let z = t.exp();
            let u = ue * (1.0 + d[0]);
            let zw = ue * (1.0 + d[1]);
            return Ok(Local {
                p: u - m.u0,
                q: m.one_r * (zw - z / m.r),
                qt: m.one_r * (m.e * zw + ue * d_t[1] - z / m.r),
            });
        }
        let (t0, t1) = (self.t[i], self.t[i + 1]);
        let sgn = m.one_r.signum();
        let (lpv, _) = hermite(t0, t1, self.lp[i], self.lp[i + 1], self.sp[i], self.sp[i + 1], t);
        let mut p = sgn * lpv.exp();
        if p.abs() > 0.5 * m.u0 {
            let (luv, _) = hermite(t0, t1, self.lu[i], self.lu[i + 1], self.su[i], self.su[i + 1], t);
            p = luv.exp() - m.u0;
        }
        let (lqv, dlq) = hermite(t0, t1, self.lq[i], self.lq[i + 1], self.sq[i], self.sq[i + 1], t);
        let q = sgn * lqv.exp();
        Ok(Local { p, q, qt: q * dlq })
    }

    /// Point from a deviation state on the unconstrained branch.
    fn point_from_delta(&self, t: f64, d: &[f64; 2], region: Region) -> Result<DualPoint, SolverError> {
        let m = &self.model;
        let z = t.exp();
        let ue = m.u_ez(t);
        let d_t = m.delta_field(d).ok_or(SolverError::PositivityLost { z })?;
        let u = ue * (1.0 + d[0]);
        let zw = ue * (1.0 + d[1]);
        let p_t = m.e * u + ue * d_t[0];
        Ok(DualPoint {
            z,
            u,
            w: zw / z,
            h: u / m.one_r - zw,
            hpp: -p_t / (m.one_r * z * z),
            excess: zw / z - 1.0 / m.r,
            region,
        })
    }

    fn point_from_pq(&self, t: f64, p: f64, q: f64, region: Region) -> Result<DualPoint, SolverError> {
        let m = &self.model;
        let z = t.exp();
        let pt = m.p_t(t, p, q, region).ok_or(SolverError::PositivityLost { z })?;
        Ok(DualPoint {
            z,
            u: m.u0 + p,
            w: m.w_of(z, q),
            h: m.h_of(z, p, q),
            hpp: -pt / (m.one_r * z * z),
            excess: q / (m.one_r * z),
            region,
        })
    }

    /// Node values straight from the stored states.
    pub fn node_point(&self, i: usize) -> DualPoint {
        let t = self.t[i];
        let pt = if i < self.ihat {
            self.point_from_delta(t, &self.dl[i], Region::Unconstrained)
        } else {
            let region = if i == self.ihat { Region::Boundary } else { Region::Constrained };
            self.point_from_pq(t, self.p[i], self.q[i], region)
        };
        pt.expect("node states are valid")
    }

    pub fn point(&self, z: f64) -> Result<DualPoint, SolverError> {
        let t = z.ln();
        let i = self.interval(t)?;
        let region = self.branch_at(i, t);
        if i < self.ihat {
            let (d, _) = self.delta_at(i, t);
            let mut pt = self.point_from_delta(t, &d, region)?;
            pt.z = z;
            return Ok(pt);
        }
        let loc = self.state(t)?;
        let mut pt = self.point_from_pq(t, loc.p, loc.q, region)?;
        pt.z = z;
        Ok(pt)
    }

    /// `h''` from differentiating the interpolant of `Q`.
    pub fn hpp_interp(&self, z: f64) -> Result<f64, SolverError> {
        let loc = self.state(z.ln())?;
        Ok(-(loc.qt - loc.q) / (self.model.one_r * z * z))
    }

    /// Inverse of `z -> w(z) - 1/r`.
    pub fn z_of_excess(&self, excess: f64) -> Result<f64, SolverError> {
        let m = &self.model;
        let n = self.t.len();
        if !(excess > 0.0) {
            return Err(SolverError::OutOfRange(f64::INFINITY));
        }
        let target = (m.one_r.abs() * excess).ln();
        let phi = |i: usize| self.lq[i] - self.t[i];
        // node values from different but equivalent formulas may differ in the last bits
        let slack = 1e-13;
        if target > phi(0) && target <= phi(0) + slack {
            return Ok(self.t[0].exp());
        }
        if target < phi(n - 1) && target >= phi(n - 1) - slack {
            return Ok(self.t[n - 1].exp());
        }
        if target > phi(0) || target < phi(n - 1) {
            let edge = if target > phi(0) { self.t[0] } else { self.t[n - 1] };
            return Err(SolverError::OutOfRange(edge.exp()));
        }
        // phi is decreasing in t
        let (mut a, mut b) = (0, n);
        while a < b {
            let mid = (a + b) / 2;
            if phi(mid) >= target {
                a = mid + 1;
            } else {
                b = mid;
            }
        }
        let j = a.min(n - 1);
        let i = j.saturating_sub(1).min(n - 2);
        if phi(i) == target {
            return Ok(self.t[i].exp());
        }
        let (t0, t1) = (self.t[i], self.t[i + 1]);
        let f = |t: f64| -> Result<(f64, f64), SolverError> {
            let loc = self.state(t)?;
            Ok((loc.q.abs().ln() - t - target, loc.qt / loc.q - 1.0))
        };
        let (mut lo, mut hi) = (t0, t1);
        let mut t = t0 + (t1 - t0) * (phi(i) - target) / (phi(i) - phi(i + 1));
        for _ in 0..100 {
            let (g, dg) = f(t)?;
            if g == 0.0 {
                break;
            }
            if g > 0.0 {
                lo = t;
            } else {
                hi = t;
            }
            let mut next = t - g / dg;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - t).abs() <= 1e-15 * t.abs().max(1.0) {
                t = next;
                break;
            }
            t = next;
        }
        Ok(t.exp())
    }
}

impl DualSolution {
    pub fn z_min(&self) -> f64 {
        self.grid[0]
    }

    pub fn z_max(&self) -> f64 {
        self.grid[self.grid.len() - 1]
    }

    /// Dense evaluation inside `[z_min, z_max]`.
    pub fn at(&self, z: f64) -> Result<DualPoint, SolverError> {
        self.dense.point(z)
    }

    pub fn hpp_interp(&self, z: f64) -> Result<f64, SolverError> {
        self.dense.hpp_interp(z)
    }

    /// `z` such that `w(z) - 1/r = excess`.
    pub fn z_of_excess(&self, excess: f64) -> Result<f64, SolverError> {
        self.dense.z_of_excess(excess)
    }

    /// `w(z) - 1/r` at node `i`, without cancellation.
    pub fn node_excess(&self, i: usize) -> f64 {
        self.dense.node_point(i).excess
    }

    /// `h''` at node `i` from the ODE.
    pub fn node_hpp(&self, i: usize) -> f64 {
        self.dense.node_point(i).hpp
    }

    /// Index of the node carrying the switch point.
    pub fn boundary_index(&self) -> usize {
        self.dense.ihat
    }
}

pub fn zhat_of(sol: &DualSolution) -> Result<f64, SolverError> {
    let z = sol.zhat;
    if !(z > sol.z_min() && z < sol.z_max()) {
        return Err(SolverError::SwitchOutOfRange { zhat: z, z_min: sol.z_min(), z_max: sol.z_max() });
    }
    let i = sol.boundary_index();
    let gap = (sol.consts.rho * sol.u[i].ln() - z.ln()).abs();
    if gap > sol.config.tol_zhat {
        return Err(SolverError::ToleranceNotMet { what: "switch equation", value: gap, tol: sol.config.tol_zhat });
    }
    Ok(z)
}

/// Fornberg weights for the `m`-th derivative at `x0` on the nodes `xs`.
pub(crate) fn fd_weights(x0: f64, xs: &[f64], m: usize) -> Vec<f64> {
    let n = xs.len();
    let mut c = vec![vec![0.0f64; n]; m + 1];
    let mut c1 = 1.0;
    let mut c4 = xs[0] - x0;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - x0;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c.swap_remove(m)
}

/// Five-node stencils for `d/dt` that never straddle the switch node.
pub(crate) fn stencils(t: &[f64], ihat: usize) -> Vec<Vec<usize>> {
    let n = t.len();
    let pick = |i: usize, lo: usize, hi: usize| -> Vec<usize> {
        // lo..=hi is the admissible index range
        let width = (hi - lo + 1).min(5);
        let start = i.saturating_sub(2).max(lo).min(hi + 1 - width);
        (start..start + width).collect()
    };
    let spacing = (t[n - 1] - t[0]) / (n - 1) as f64;
    (0..n)
        .map(|i| {
            if i < ihat {
                pick(i, 0, ihat - 1)
            } else if i > ihat {
                pick(i, ihat + 1, n - 1)
            } else {
                let mut s = vec![i];
                s.extend(
                    (i + 1..n)
                        .filter(|&j| t[j] - t[i] > 0.25 * spacing)
                        .take(4),
                );
                s
            }
        })
        .collect()
}

/// Scaled ODE residual at every node of the given series. `h''` comes from a
/// one-sided fourth-order difference of `w` in `ln z`.
pub fn residual_profile(
    grid: &[f64],
    w: &[f64],
    h: &[f64],
    region: &[Region],
    p: &ModelParams,
    k: &DerivedConstants,
) -> Vec<f64> {
    let t: Vec<f64> = grid.iter().map(|z| z.ln()).collect();
    let ihat = region.iter().position(|r| *r == Region::Boundary).unwrap_or(grid.len());
    let d: Vec<f64> = w.iter().map(|w| w - 1.0 / p.r).collect();
    let st = if ihat < grid.len() {
        stencils(&t, ihat)
    } else {
        stencils(&t, 0).into_iter().enumerate().map(|(i, s)| if i == 0 { vec![0, 1, 2, 3, 4] } else { s }).collect()
    };
    (0..grid.len())
        .map(|i| {
            let idx = &st[i];
            let xs: Vec<f64> = idx.iter().map(|&j| t[j]).collect();
            let wts = fd_weights(t[i], &xs, 1);
            let d_t: f64 = idx.iter().zip(&wts).map(|(&j, c)| c * d[j]).sum();
            let z = grid[i];
            residual(h[i], -w[i], -d_t / z, z, region[i], p, k).unwrap_or(f64::INFINITY)
        })
        .collect()
}

fn sup_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| if x.is_nan() { f64::INFINITY } else { m.max(x.abs()) })
}

// ---------------------------------------------------------------------------
// shooting

enum Shot {
    /// Projection on the growing mode at `z_min` (finite) or its sign
    /// (infinite) when the trajectory ran away first.
    Target(f64),
    Recorded(Trajectory),
}

struct Trajectory {
    /// Node states, ascending in `t`.
    nodes: Vec<[f64; 2]>,
    events: Vec<(f64, [f64; 2])>,
    /// Index of the first node below the first event.
    below_event: usize,
}

struct Shooter<'a> {
    m: Model,
    ode: Dopri5,
    t_nodes: &'a [f64],
    lam: f64,
    vec: [f64; 2],
    t_ref: f64,
    bad: ([f64; 2], [f64; 2]),
}

impl Shooter<'_> {
    fn start(&self, ln_s: f64) -> (f64, [f64; 2]) {
        let t_max = *self.t_nodes.last().unwrap();
        let lim = (1e-7f64).ln();
        // amplitude at t: s exp(lam (t - t_ref)), with |p| <= 1e-7 u0 at start
        let t_need = self.t_ref + (lim - ln_s) / self.lam;
        let t0 = t_max.max(t_need);
        let amp = (ln_s + self.lam * (t0 - self.t_ref)).exp() * self.m.u0;
        (t0, [amp * self.vec[0], amp * self.vec[1]])
    }

    fn deviation(&self, t: f64, y: &[f64; 2]) -> [f64; 2] {
        let m = &self.m;
        let z = t.exp();
        let big_u = (m.u0 + y[0]) * (-m.e * t).exp();
        let big_w = m.w_of(z, y[1]) * (t / m.big_r).exp();
        [big_u / m.c - 1.0, big_w / m.c - 1.0]
    }

    fn runaway(&self, t: f64, y: &[f64; 2]) -> f64 {
        let dev = self.deviation(t, y);
        if dev[0] >= 0.0 { f64::INFINITY } else { f64::NEG_INFINITY }
    }

    fn shoot(&self, ln_s: f64, record: bool) -> Shot {
        let m = self.m;
        let n = self.t_nodes.len();
        let (mut t, mut y) = self.start(ln_s);
        let mut branch = Region::Constrained;
        let mut h = 1e-2;
        let mut nodes = if record { vec![[0.0; 2]; n] } else { Vec::new() };
        let mut events = Vec::new();
        let mut below_event = 0;
        for i in (0..n).rev() {
            let target = self.t_nodes[i];
            loop {
                let mut sys = |tt: f64, yy: &[f64; 2]| m.field(tt, yy, branch);
                let sign = if branch == Region::Constrained { 1.0 } else { -1.0 };
                let mut g = |tt: f64, yy: &[f64; 2]| sign * m.switch_fn(tt, yy[0]);
                let (out, hh) = self.ode.integrate(&mut sys, t, y, target, h, Some(&mut g));
                h = hh;
                match out {
                    Outcome::Reached { y: yy } => {
                        t = target;
                        y = yy;
                        break;
                    }
                    Outcome::Event { t: te, y: ye } => {
                        events.push((te, ye));
                        if events.len() == 1 {
                            below_event = i + 1;
                            // the leg below the switch is recomputed on the decaying manifold
                            if record {
                                return Shot::Recorded(Trajectory { nodes, events, below_event });
                            }
                        }
                        branch = if branch == Region::Constrained { Region::Unconstrained } else { Region::Constrained };
                        t = te;
                        y = ye;
                        if events.len() > 8 {
                            return Shot::Target(self.runaway(t, &y));
                        }
                    }
                    Outcome::Failed { t: tf, y: yf } => {
                        if record {
                            log::debug!("integration failed at z = {:e}", tf.exp());
                        }
                        return Shot::Target(self.runaway(tf, &yf));
                    }
                }
            }
            if record {
                nodes[i] = y;
            }
            if branch == Region::Unconstrained && !record {
                let dev = self.deviation(t, &y);
                if dev[0].abs().max(dev[1].abs()) > 10.0 {
                    return Shot::Target(self.runaway(t, &y));
                }
            }
        }
        if record {
            return Shot::Recorded(Trajectory { nodes, events, below_event });
        }
        let dev = self.deviation(t, &y);
        let b = self.bad.1;
        Shot::Target(b[0] * dev[0] + b[1] * dev[1])
    }

    fn target(&self, ln_s: f64) -> f64 {
        match self.shoot(ln_s, false) {
            Shot::Target(f) => f,
            Shot::Recorded(_) => unreachable!(),
        }
    }
}

fn log_grid(z_min: f64, z_max: f64, n: usize) -> Vec<f64> {
    let (a, b) = (z_min.ln(), z_max.ln());
    (0..n)
        .map(|i| if i == n - 1 { z_max } else if i == 0 { z_min } else { (a + (b - a) * i as f64 / (n - 1) as f64).exp() })
        .collect()
}

/// Gate shared by all solve paths.
fn applicable(p: &ModelParams) -> Result<DerivedConstants, SolverError> {
    if !(p.a > 0.0) {
        return Err(SolverError::ConditionNotApplicable(
            "the constrained dual needs a > 0; use the closed forms for a = 0".into(),
        ));
    }
    let report = validate(p);
    if !report.well_posed {
        return Err(SolverError::ConditionNotApplicable(report.describe_failures()));
    }
    if !report.region_theorem_applicable {
        return Err(SolverError::ConditionNotApplicable(format!(
            "two-region condition fails: {}",
            report.describe_failures()
        )));
    }
    derive(p).map_err(|e| SolverError::ConditionNotApplicable(e.to_string()))
}

pub fn solve(p: &ModelParams, k: &DerivedConstants, cfg: &SolverConfig) -> Result<DualSolution, SolverError> {
    cfg.check()?;
    let k_check = applicable(p)?;
    debug_assert_eq!(k_check, *k);
    match cfg.method {
        Method::Collocation => crate::dualsolver::collocation::solve(p, k, cfg),
        Method::Shooting => match shoot_solve(p, k, cfg) {
            Err(SolverError::NoBracket) => {
                log::warn!("shooting found no bracket; falling back to collocation");
                crate::dualsolver::collocation::solve(p, k, cfg)
            }
            other => other,
        },
    }
}

fn shoot_solve(p: &ModelParams, k: &DerivedConstants, cfg: &SolverConfig) -> Result<DualSolution, SolverError> {
    let m = Model::new(p, k);
    let t_nodes: Vec<f64> = log_grid(cfg.z_min, cfg.z_max, cfg.n_nodes).iter().map(|z| z.ln()).collect();
    let (lam, vec) = m.saddle();
    let (_, v_bad, b_bad) = m.bad_mode()?;
    let shooter = Shooter {
        m,
        ode: Dopri5 { rtol: cfg.rtol, ..Default::default() },
        t_nodes: &t_nodes,
        lam,
        vec,
        t_ref: m.rho * m.u0.ln(),
        bad: (v_bad, b_bad),
    };

    // scan the amplitude over decades, relative to u0
    let scan: Vec<f64> = (0..=72).map(|j| (-12.0 + 0.25 * j as f64) * std::f64::consts::LN_10).collect();
    let mut prev: Option<(f64, f64)> = None;
    let mut bracket = None;
    for &ls in &scan {
        let f = shooter.target(ls);
        if let Some((lp, fp)) = prev {
            if f.signum() != fp.signum() {
                bracket = Some(((lp, fp), (ls, f)));
                break;
            }
        }
        prev = Some((ls, f));
    }
    let Some(((mut lo, mut f_lo), (mut hi, mut f_hi))) = bracket else {
        return Err(SolverError::NoBracket);
    };
    let mut iters = 0;
    while hi - lo > 1e-15 * lo.abs().max(1.0) {
        iters += 1;
        if iters > cfg.max_iter {
            return Err(SolverError::MaxIterExceeded(cfg.max_iter));
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let f = shooter.target(mid);
        if f == 0.0 {
            lo = mid;
            hi = mid;
            f_lo = 0.0;
            f_hi = 0.0;
            break;
        }
        if f.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f;
        } else {
            hi = mid;
            f_hi = f;
        }
    }
    let mut ln_s = if f_lo.abs() <= f_hi.abs() { lo } else { hi };
    log::debug!("shooting converged after {iters} bisections, ln s = {ln_s}");
    let t_first = t_nodes[0];
    let mut traj = match shooter.shoot(ln_s, true) {
        Shot::Recorded(traj) if traj.events.len() == 1 => Some(traj),
        _ => None,
    };
    let matched = match &traj {
        Some(tr) => switch_mismatch(&m, &shooter.ode, t_first, tr.events[0].0, &tr.events[0].1)?.abs() <= SWITCH_MATCH_TOL,
        None => false,
    };
    if !matched {
        // the end-point target changed sign at a runaway, not at a root
        log::debug!("end-point shooting missed the decaying manifold; matching at the switch instead");
        ln_s = match_at_switch(&shooter, &scan, cfg.max_iter)?;
        traj = match shooter.shoot(ln_s, true) {
            Shot::Recorded(traj) if traj.events.len() == 1 => Some(traj),
            _ => None,
        };
    }
    let Some(traj) = traj else {
        return Err(SolverError::PositivityLost { z: f64::NAN });
    };
    let (t_hat, y_hat) = traj.events[0];
    let below = manifold_leg(&m, &shooter.ode, &t_nodes[..traj.below_event], t_hat, &y_hat)?;
    let mut sol = assemble(
        p,
        k,
        cfg,
        Method::Shooting,
        &t_nodes,
        &traj.nodes,
        traj.below_event,
        t_hat,
        y_hat,
        Some(below),
    )?;
    sol.amplitude = Some(ln_s.exp() * m.u0);
    finish(sol)
}

/// Largest `dw` mismatch at the switch accepted from end-point shooting.
const SWITCH_MATCH_TOL: f64 = 1e-9;

/// Root of the switch mismatch over the shooting amplitude: scans `scan` for
/// a sign change between amplitudes whose shots reach a switch, then bisects.
fn match_at_switch(shooter: &Shooter, scan: &[f64], max_iter: usize) -> Result<f64, SolverError> {
    let m = &shooter.m;
    let t_first = shooter.t_nodes[0];
    let f = |ln_s: f64| -> Option<f64> {
        match shooter.shoot(ln_s, true) {
            Shot::Recorded(tr) if !tr.events.is_empty() => {
                switch_mismatch(m, &shooter.ode, t_first, tr.events[0].0, &tr.events[0].1).ok()
            }
            _ => None,
        }
    };
    let mut prev: Option<(f64, f64)> = None;
    let mut bracket = None;
    for &ls in scan {
        let v = f(ls);
        if let (Some((lp, fp)), Some(fv)) = (prev, v) {
            if fv.signum() != fp.signum() {
                bracket = Some((lp, fp, ls));
                break;
            }
        }
        prev = v.map(|fv| (ls, fv));
    }
    let (mut lo, mut f_lo, mut hi) = bracket.ok_or(SolverError::NoBracket)?;
    for _ in 0..max_iter {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return Ok(mid);
        }
        let Some(fm) = f(mid) else { return Err(SolverError::PositivityLost { z: f64::NAN }) };
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == f_lo.signum() {
            lo = mid;
            f_lo = fm;
        } else {
            hi = mid;
        }
    }
    Err(SolverError::MaxIterExceeded(max_iter))
}

/// Point on the decaying manifold of the deviation system whose `du` equals
/// `d_hat[0]` at `t_hat`. Returns the log amplitude and the state there, or
/// `None` when the switch sits exactly on the closed form.
fn manifold_fit(m: &Model, ode: &Dopri5, t_first: f64, t_hat: f64, d_hat: &[f64; 2]) -> Result<Option<(f64, [f64; 2])>, SolverError> {
    if d_hat[0] == 0.0 {
        return Ok(None);
    }
    let (mu, v) = m.good_mode()?;
    // f is increasing in ln_a; a blown-up run counts as overshoot
    let f = |ln_a: f64| match manifold_run(m, ode, mu, v, t_first, &[], t_hat, d_hat[0].signum(), ln_a) {
        Some((_, y)) => d_hat[0].signum() * (y[0] - d_hat[0]),
        None => f64::INFINITY,
    };
    let guess = (d_hat[0].abs() / v[0]).ln();
    let (mut lo, mut hi) = (guess - 2.0, guess + 2.0);
    let mut tries = 0;
    while f(lo) > 0.0 {
        lo -= 4.0;
        tries += 1;
        if tries > 200 {
            return Err(SolverError::NoBracket);
        }
    }
    while f(hi) < 0.0 {
        hi += 4.0;
        tries += 1;
        if tries > 200 {
            return Err(SolverError::NoBracket);
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let ln_a = if f(lo).abs() <= f(hi).abs() { lo } else { hi };
    let (_, end) = manifold_run(m, ode, mu, v, t_first, &[], t_hat, d_hat[0].signum(), ln_a)
        .ok_or(SolverError::PositivityLost { z: t_hat.exp() })?;
    Ok(Some((ln_a, end)))
}

/// Integrates the good mode of amplitude `exp(ln_a + mu (t - t_hat))` from
/// where it is negligible up to `t_hat`, recording the states at `t_below`.
#[allow(clippy::too_many_arguments)]
fn manifold_run(
    m: &Model,
    ode: &Dopri5,
    mu: f64,
    v: [f64; 2],
    t_first: f64,
    t_below: &[f64],
    t_hat: f64,
    sign: f64,
    ln_a: f64,
) -> Option<(Vec<[f64; 2]>, [f64; 2])> {
    let floor = (1e-12f64).ln();
    let mut sys = |_t: f64, d: &[f64; 2]| m.delta_field(d);
    let t_start = (t_hat + (floor - ln_a) / mu).min(t_first);
    let amp = sign * (ln_a + mu * (t_start - t_hat)).exp();
    let mut y = [amp * v[0], amp * v[1]];
    let mut t = t_start;
    let mut h = 0.0;
    let mut out = Vec::with_capacity(t_below.len());
    for &target in t_below.iter().chain(std::iter::once(&t_hat)) {
        let (res, hh) = ode.integrate(&mut sys, t, y, target, h, None);
        let Outcome::Reached { y: yy } = res else { return None };
        h = hh;
        t = target;
        y = yy;
        if out.len() < t_below.len() {
            out.push(y);
        }
    }
    Some((out, y))
}

/// `dw` mismatch at the switch between the constrained leg and the decaying
/// manifold through the same `du`.
fn switch_mismatch(m: &Model, ode: &Dopri5, t_first: f64, t_hat: f64, y_hat: &[f64; 2]) -> Result<f64, SolverError> {
    let d_hat = m.deviation_of(t_hat, y_hat[0], y_hat[1]);
    Ok(match manifold_fit(m, ode, t_first, t_hat, &d_hat)? {
        Some((_, end)) => end[1] - d_hat[1],
        None => -d_hat[1],
    })
}

/// Recomputes the unconstrained leg below the switch point on the decaying
/// manifold of the deviation system, so that the small-z states carry no
/// growing-mode error. The amplitude is fixed by matching `du` at the switch.
fn manifold_leg(
    m: &Model,
    ode: &Dopri5,
    t_below: &[f64],
    t_hat: f64,
    y_hat: &[f64; 2],
) -> Result<Vec<[f64; 2]>, SolverError> {
    let d_hat = m.deviation_of(t_hat, y_hat[0], y_hat[1]);
    if t_below.is_empty() {
        return Ok(Vec::new());
    }
    let Some((ln_a, end)) = manifold_fit(m, ode, t_below[0], t_hat, &d_hat)? else {
        return Ok(vec![[0.0; 2]; t_below.len()]);
    };
    let (mu, v) = m.good_mode()?;
    let (states, _) = manifold_run(m, ode, mu, v, t_below[0], t_below, t_hat, d_hat[0].signum(), ln_a)
        .ok_or(SolverError::PositivityLost { z: t_hat.exp() })?;
    log::debug!(
        "manifold leg: du mismatch {:.2e}, dw mismatch {:.2e} at the switch",
        end[0] - d_hat[0],
        end[1] - d_hat[1]
    );
    for (t, d) in t_below.iter().zip(&states) {
        let [p, _] = m.state_of(*t, d);
        if !(m.switch_fn(*t, p) > 0.0) {
            return Err(SolverError::SwitchCount(2));
        }
    }
    Ok(states)
}

/// Builds the solution arrays, inserting the switch node. `below` holds the
/// deviation states at the nodes below the switch, when available.
#[allow(clippy::too_many_arguments)]
pub(crate) fn assemble(
    p: &ModelParams,
    k: &DerivedConstants,
    cfg: &SolverConfig,
    method: Method,
    t_nodes: &[f64],
    states: &[[f64; 2]],
    below_event: usize,
    t_hat: f64,
    y_hat: [f64; 2],
    below: Option<Vec<[f64; 2]>>,
) -> Result<DualSolution, SolverError> {
    let m = Model::new(p, k);
    let mut t = Vec::with_capacity(t_nodes.len() + 1);
    let mut ps = Vec::with_capacity(t_nodes.len() + 1);
    let mut qs = Vec::with_capacity(t_nodes.len() + 1);
    for i in 0..below_event {
        t.push(t_nodes[i]);
        let y = match &below {
            Some(d) => m.state_of(t_nodes[i], &d[i]),
            None => states[i],
        };
        ps.push(y[0]);
        qs.push(y[1]);
    }
    let mut ihat = t.len();
    let mut start = below_event;
    if below_event < t_nodes.len() && t_nodes[below_event] == t_hat {
        start += 1;
    }
    if below_event > 0 && t_nodes[below_event - 1] == t_hat {
        ihat -= 1;
        ps[ihat] = y_hat[0];
        qs[ihat] = y_hat[1];
    } else {
        t.push(t_hat);
        ps.push(y_hat[0]);
        qs.push(y_hat[1]);
    }
    for i in start..t_nodes.len() {
        t.push(t_nodes[i]);
        ps.push(states[i][0]);
        qs.push(states[i][1]);
    }
    let zhat = t_hat.exp();
    if ihat == 0 || ihat + 1 >= t.len() {
        return Err(SolverError::SwitchOutOfRange { zhat, z_min: cfg.z_min, z_max: cfg.z_max });
    }
    let delta = below.map(|mut d| {
        d.truncate(ihat);
        d
    });
    let dense = Dense::new(m, t, ps, qs, ihat, delta)?;
    let grid: Vec<f64> = dense.t.iter().map(|t| t.exp()).collect();
    let n = grid.len();
    let mut u = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut h = vec![0.0; n];
    let mut region = vec![Region::Constrained; n];
    for i in 0..n {
        let pt = dense.node_point(i);
        u[i] = pt.u;
        w[i] = pt.w;
        h[i] = pt.h;
        region[i] = pt.region;
    }
    let small_z_dev = dense.dl[0][0].abs();
    Ok(DualSolution {
        params: *p,
        consts: *k,
        config: *cfg,
        method,
        boundary_u_dev: (dense.p[n - 1] / m.u0).abs(),
        boundary_w_dev: (p.r * dense.q[n - 1] / (m.one_r * grid[n - 1])).abs(),
        small_z_dev,
        grid,
        u,
        w,
        h,
        region,
        zhat,
        residual_sup: f64::NAN,
        amplitude: None,
        assumption_flags: vec!["small_z_asymptote".to_string()],
        dense,
    })
}

/// Residual and tolerance gate shared by both methods.
pub(crate) fn finish(mut sol: DualSolution) -> Result<DualSolution, SolverError> {
    let res = residual_profile(&sol.grid, &sol.w, &sol.h, &sol.region, &sol.params, &sol.consts);
    sol.residual_sup = sup_abs(&res);
    let cfg = sol.config;
    zhat_of(&sol)?;
    for (what, value, tol) in [
        ("residual_sup", sol.residual_sup, cfg.tol_residual),
        ("boundary deviation of u at z_max", sol.boundary_u_dev, cfg.tol_boundary),
        ("boundary deviation of w at z_max", sol.boundary_w_dev, cfg.tol_boundary),
    ] {
        if !(value <= tol) {
            return Err(SolverError::ToleranceNotMet { what, value, tol });
        }
    }
    if sol.small_z_dev > cfg.tol_boundary {
        log::warn!(
            "small-z matching deviation {:.3e} exceeds {:.1e}; reported only",
            sol.small_z_dev,
            cfg.tol_boundary
        );
    }
    Ok(sol)
}

mod collocation;

#[cfg(test)]
mod tests;
