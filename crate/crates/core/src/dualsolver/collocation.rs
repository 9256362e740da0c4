//! Fourth-order finite-difference collocation of the second-order dual ODE,
//! solved by damped Newton with a banded direct solver.
//!
//! The unknown is the departure `g = h - delta^{-nu}/(1-R) + z/r` from the
//! large-`z` asymptote, so that `p = (1-R)(g - g_t)` and `Q = -(1-R) g_t`
//! are formed without cancellation.

use super::*;
use crate::closedform::dual_envelope;

// six-point end stencils reach five columns off the diagonal
const KL: usize = 5;
const KU: usize = 5;

/// Square band matrix with room for pivoting fill-in.
struct Band {
    n: usize,
    width: usize,
    data: Vec<f64>,
}

impl Band {
    fn new(n: usize) -> Self {
        let width = 2 * KL + KU + 1;
        Self { n, width, data: vec![0.0; n * width] }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + KL >= i && j + KL - i < self.width);
        i * self.width + (j + KL - i)
    }

    fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        self.data[self.idx(i, j)]
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] = v;
    }

    /// Gaussian elimination with partial pivoting; overwrites `self`.
    fn solve(mut self, mut b: Vec<f64>) -> Option<Vec<f64>> {
        let n = self.n;
        let reach = KL + KU;
        for k in 0..n {
            let last_row = (k + KL).min(n - 1);
            let last_col = (k + reach).min(n - 1);
            let piv = (k..=last_row)
                .max_by(|&a, &c| self.get(a, k).abs().total_cmp(&self.get(c, k).abs()))
                .unwrap();
            if self.get(piv, k) == 0.0 {
                return None;
            }
            if piv != k {
                for j in k..=last_col {
                    let (x, y) = (self.get(k, j), self.get(piv, j));
                    self.set(k, j, y);
                    self.set(piv, j, x);
                }
                b.swap(k, piv);
            }
            let d = self.get(k, k);
            for i in k + 1..=last_row {
                let f = self.get(i, k) / d;
                if f == 0.0 {
                    continue;
                }
                self.set(i, k, 0.0);
                for j in k + 1..=last_col {
                    let v = self.get(i, j) - f * self.get(k, j);
                    self.set(i, j, v);
                }
                b[i] -= f * b[k];
            }
        }
        for i in (0..n).rev() {
            let last_col = (i + reach).min(n - 1);
            let mut acc = b[i];
            for j in i + 1..=last_col {
                acc -= self.get(i, j) * b[j];
            }
            b[i] = acc / self.get(i, i);
        }
        b.iter().all(|x| x.is_finite()).then_some(b)
    }
}

/// Finite-difference stencil: node indices with first and second
/// derivative weights.
struct Stencil {
    idx: Vec<usize>,
    d1: Vec<f64>,
    d2: Vec<f64>,
}

fn stencil(t: &[f64], i: usize) -> Stencil {
    let n = t.len();
    // six points near the ends keep the second derivative fourth order
    let idx: Vec<usize> = if i >= 2 && i + 2 < n {
        (i - 2..=i + 2).collect()
    } else if i < 2 {
        (0..6).collect()
    } else {
        (n - 6..n).collect()
    };
    let xs: Vec<f64> = idx.iter().map(|&j| t[j]).collect();
    Stencil { d1: fd_weights(t[i], &xs, 1), d2: fd_weights(t[i], &xs, 2), idx }
}

struct Problem {
    m: Model,
    t: Vec<f64>,
    st: Vec<Stencil>,
    /// Stable-manifold slope `v_q / v_p` at the large-z end.
    ratio: f64,
    bad_left: [f64; 2],
    scale: Vec<f64>,
    /// Switch location and jump of `g_tttt` across it.
    kink: Option<(f64, f64)>,
}

impl Problem {
    fn deriv(&self, g: &[f64], i: usize) -> (f64, f64) {
        let s = &self.st[i];
        let mut g1 = 0.0;
        let mut g2 = 0.0;
        for (k, &j) in s.idx.iter().enumerate() {
            g1 += s.d1[k] * g[j];
            g2 += s.d2[k] * g[j];
        }
        let (c1, c2) = self.kink_correction(i);
        (g1 - c1, g2 - c2)
    }

    /// Stencil error on `jump (t - t_hat)_+^4 / 24`, the leading term by
    /// which the solution fails to be smooth across the switch.
    fn kink_correction(&self, i: usize) -> (f64, f64) {
        let Some((th, jump)) = self.kink else {
            return (0.0, 0.0);
        };
        let s = &self.st[i];
        let (lo, hi) = (self.t[s.idx[0]], self.t[*s.idx.last().unwrap()]);
        if !(lo < th && th < hi) {
            return (0.0, 0.0);
        }
        let kf = |x: f64| if x > th { jump * (x - th).powi(4) / 24.0 } else { 0.0 };
        let x = self.t[i] - th;
        let (e1, e2) = if x > 0.0 { (jump * x.powi(3) / 6.0, jump * x * x / 2.0) } else { (0.0, 0.0) };
        let mut d1 = 0.0;
        let mut d2 = 0.0;
        for (k, &j) in s.idx.iter().enumerate() {
            d1 += s.d1[k] * kf(self.t[j]);
            d2 += s.d2[k] * kf(self.t[j]);
        }
        (d1 - e1, d2 - e2)
    }

    /// Source term minus its fixed-point value, and its derivative in `H`.
    fn source(&self, t: f64, p: f64) -> Option<(f64, f64)> {
        let m = &self.m;
        let u = m.u0 + p;
        if !(u > 0.0) {
            return None;
        }
        let z = t.exp();
        let lu = u.ln();
        if m.rho * lu >= t {
            let base = ((1.0 - 1.0 / m.s) * t + m.rho / m.s * lu).exp();
            let val = z + m.s / (1.0 - m.s) * base - m.dnu * m.u0 / m.one_r;
            let dh = m.rho / (1.0 - m.s) * base / u;
            Some((val, dh))
        } else {
            let val = m.dnu * m.u0 / m.one_r * (m.rho * (p / m.u0).ln_1p()).exp_m1();
            let dh = m.rho / (1.0 - m.s) * (m.rho * lu).exp() / u;
            Some((val, dh))
        }
    }

    /// Residual vector and (optionally) the Jacobian.
    fn eval(&self, g: &[f64], jac: bool) -> Option<(Vec<f64>, Option<Band>)> {
        let m = &self.m;
        let n = g.len();
        let mut f = vec![0.0; n];
        let mut band = jac.then(|| Band::new(n));
        for i in 0..n {
            let (g1, g2) = self.deriv(g, i);
            let s = &self.st[i];
            // coefficients of (g, g_t, g_tt)
            let (val, cg, c1, c2) = if i == 0 {
                let z = self.t[0].exp();
                let big_u = (m.u0 + m.one_r * (g[0] - g1)) * (-m.e * self.t[0]).exp() / m.c;
                let big_w = (1.0 / m.r - g1 / z) * (self.t[0] / m.big_r).exp() / m.c;
                let (bu, bw) = (self.bad_left[0], self.bad_left[1]);
                let ku = (-m.e * self.t[0]).exp() / m.c;
                let kw = (self.t[0] / m.big_r).exp() / m.c;
                (
                    bu * (big_u - 1.0) + bw * (big_w - 1.0),
                    bu * ku * m.one_r,
                    -bu * ku * m.one_r - bw * kw / z,
                    0.0,
                )
            } else if i == n - 1 {
                ((self.ratio - 1.0) * g1 - self.ratio * g[i], -self.ratio, self.ratio - 1.0, 0.0)
            } else {
                let p = m.one_r * (g[i] - g1);
                let (src, dsrc) = self.source(self.t[i], p)?;
                let v = m.kappa * (g2 - g1) + (m.dnu - m.r) * g1 - m.dnu * g[i] + src;
                (
                    v,
                    -m.dnu + dsrc * m.one_r,
                    -m.kappa + m.dnu - m.r - dsrc * m.one_r,
                    m.kappa,
                )
            };
            let sc = self.scale[i];
            f[i] = val / sc;
            if let Some(b) = band.as_mut() {
                b.add(i, i, cg / sc);
                for (k, &j) in s.idx.iter().enumerate() {
                    b.add(i, j, (c1 * s.d1[k] + c2 * s.d2[k]) / sc);
                }
            }
        }
        f.iter().all(|x| x.is_finite()).then_some((f, band))
    }
}

fn norm(f: &[f64]) -> f64 {
    f.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl Problem {
    fn newton(&self, mut g: Vec<f64>, max_iter: usize) -> Result<Vec<f64>, SolverError> {
        let n = g.len();
        let Some((mut f, _)) = self.eval(&g, false) else {
            return Err(SolverError::PositivityLost { z: f64::NAN });
        };
        let mut fn0 = norm(&f);
        for iter in 0..max_iter {
            let Some((_, Some(jac))) = self.eval(&g, true) else {
                return Err(SolverError::PositivityLost { z: f64::NAN });
            };
            let rhs: Vec<f64> = f.iter().map(|x| -x).collect();
            let dg = jac.solve(rhs).ok_or(SolverError::ToleranceNotMet {
                what: "collocation Jacobian pivot",
                value: 0.0,
                tol: 0.0,
            })?;
            let mut lambda = 1.0;
            let mut accepted = None;
            while lambda > 1e-6 {
                let trial: Vec<f64> = g.iter().zip(&dg).map(|(a, d)| a + lambda * d).collect();
                if let Some((ft, _)) = self.eval(&trial, false) {
                    let nt = norm(&ft);
                    if nt < (1.0 - 1e-4 * lambda) * fn0 {
                        accepted = Some((trial, ft, nt));
                        break;
                    }
                }
                lambda *= 0.5;
            }
            let Some((gn, fnew, nn)) = accepted else {
                // no further decrease: accept only at rounding level
                let sup = f.iter().fold(0.0f64, |a, x| a.max(x.abs()));
                return if sup <= 1e-9 { Ok(g) } else { Err(SolverError::MaxIterExceeded(iter)) };
            };
            let step = dg
                .iter()
                .zip(&gn)
                .map(|(d, x)| (lambda * d).abs() / x.abs().max(1e-300))
                .fold(0.0, f64::max);
            g = gn;
            f = fnew;
            fn0 = nn;
            log::debug!("collocation iter {iter}: |F| = {fn0:e}, step = {step:e}");
            if step <= 1e-13 || fn0 <= 1e-15 * (n as f64).sqrt() {
                return Ok(g);
            }
        }
        Err(SolverError::MaxIterExceeded(max_iter))
    }

    fn states(&self, g: &[f64]) -> Vec<[f64; 2]> {
        let m = &self.m;
        (0..g.len())
            .map(|i| {
                let (g1, _) = self.deriv(g, i);
                [m.one_r * (g[i] - g1), -m.one_r * g1]
            })
            .collect()
    }

    /// Switch point refined by integrating the constrained branch down from
    /// the last constrained node.
    fn switch(&self, states: &[[f64; 2]], rtol: f64) -> Result<(f64, [f64; 2]), SolverError> {
        let m = self.m;
        let t = &self.t;
        let n = t.len();
        let side = |i: usize| m.switch_fn(t[i], states[i][0]) >= 0.0;
        let switches = (1..n).filter(|&i| side(i) != side(i - 1)).count();
        if switches != 1 {
            return Err(SolverError::SwitchCount(switches));
        }
        let i_top = (0..n).rev().find(|&i| side(i)).expect("one switch");
        let ode = Dopri5 { rtol, ..Default::default() };
        let mut sys = |tt: f64, yy: &[f64; 2]| m.field(tt, yy, Region::Constrained);
        let mut ev = |tt: f64, yy: &[f64; 2]| m.switch_fn(tt, yy[0]);
        let dt = t[1] - t[0];
        let (out, _) = ode.integrate(&mut sys, t[i_top + 1], states[i_top + 1], t[i_top] - dt, 0.1 * dt, Some(&mut ev));
        match out {
            Outcome::Event { t, y } => Ok((t, y)),
            _ => Err(SolverError::ToleranceNotMet { what: "switch refinement", value: t[i_top].exp(), tol: 0.0 }),
        }
    }

    /// Jump of `g_tttt` (constrained side minus unconstrained side) implied by
    /// the two branch equations at the switch state.
    fn jump(&self, t_hat: f64, y: [f64; 2]) -> f64 {
        let m = &self.m;
        let u = m.u0 + y[0];
        let pt = m.p_t(t_hat, y[0], y[1], Region::Boundary).unwrap_or(0.0);
        let a = 1.0 - m.rho * pt / u;
        t_hat.exp() / m.s * a * a / m.kappa
    }
}

pub(crate) fn solve(p: &ModelParams, k: &DerivedConstants, cfg: &SolverConfig) -> Result<DualSolution, SolverError> {
    let m = Model::new(p, k);
    let zs = log_grid(cfg.z_min, cfg.z_max, cfg.n_nodes);
    let t: Vec<f64> = zs.iter().map(|z| z.ln()).collect();
    let n = t.len();
    let (_, vec) = m.saddle();
    let (_, _, bad_left) = m.bad_mode()?;
    let g0: Vec<f64> = zs
        .iter()
        .map(|&z| {
            let env = dual_envelope(z, p, k).expect("z > 0");
            env.lower - (m.u0 / m.one_r - z / m.r)
        })
        .collect();
    // row scale of the residual definition, frozen at the initial guess
    let scale: Vec<f64> = (0..n)
        .map(|i| {
            if i == 0 || i == n - 1 {
                return 1.0;
            }
            let h = g0[i] + m.u0 / m.one_r - zs[i] / m.r;
            (m.dnu * h.abs()).max((m.s / (1.0 - m.s)).abs() * zs[i]).max(m.dnu * m.u0 / m.one_r.abs())
        })
        .collect();
    let mut prob = Problem {
        m,
        st: (0..n).map(|i| stencil(&t, i)).collect(),
        t: t.clone(),
        ratio: vec[1] / vec[0],
        bad_left,
        scale,
        kink: None,
    };
    let mut g = prob.newton(g0, cfg.max_iter)?;
    let mut states = prob.states(&g);
    let (mut t_hat, mut y_hat) = prob.switch(&states, cfg.rtol)?;
    // deferred correction for the switch kink
    for _ in 0..8 {
        prob.kink = Some((t_hat, prob.jump(t_hat, y_hat)));
        g = prob.newton(g, cfg.max_iter)?;
        states = prob.states(&g);
        let (tn, yn) = prob.switch(&states, cfg.rtol)?;
        let moved = (tn - t_hat).abs();
        (t_hat, y_hat) = (tn, yn);
        if moved <= 1e-14 * t_hat.abs().max(1.0) {
            break;
        }
    }
    let below = t.partition_point(|&x| x < t_hat);
    let sol = assemble(p, k, cfg, Method::Collocation, &t, &states, below, t_hat, y_hat, None)?;
    finish(sol)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn band_solver_matches_dense_elimination() {
        let n = 12;
        let mut band = Band::new(n);
        let mut dense = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i.saturating_sub(KL)..=(i + KU).min(n - 1) {
                // deliberately small diagonal to force pivoting
                let v = if i == j { 1e-3 } else { ((i * 7 + j * 3) % 5) as f64 - 2.0 };
                band.set(i, j, v);
                dense[i][j] = v;
            }
        }
        let x_true: Vec<f64> = (0..n).map(|i| (i as f64).sin() + 2.0).collect();
        let b: Vec<f64> = (0..n).map(|i| (0..n).map(|j| dense[i][j] * x_true[j]).sum()).collect();
        let x = band.solve(b).unwrap();
        for (a, e) in x.iter().zip(&x_true) {
            assert!((a - e).abs() < 1e-8, "{a} vs {e}");
        }
    }

    #[test]
    fn stencils_are_fourth_order() {
        let t: Vec<f64> = (0..40).map(|i| i as f64 * 0.05).collect();
        for i in [0, 1, 2, 20, 38, 39] {
            let s = stencil(&t, i);
            let f = |x: f64| (1.3 * x).sin();
            let d1: f64 = s.idx.iter().zip(&s.d1).map(|(&j, w)| w * f(t[j])).sum();
            let d2: f64 = s.idx.iter().zip(&s.d2).map(|(&j, w)| w * f(t[j])).sum();
            assert!((d1 - 1.3 * (1.3 * t[i]).cos()).abs() < 1e-6);
            assert!((d2 + 1.69 * (1.3 * t[i]).sin()).abs() < 1e-4);
        }
    }
}
