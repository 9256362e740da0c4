//! Adaptive Dormand-Prince 5(4) integrator with a single terminal event.

/// Right-hand side. Returns `None` when the state leaves the domain; the
/// step is then rejected and retried with a smaller step.
pub trait System<const N: usize> {
    fn eval(&mut self, t: f64, y: &[f64; N]) -> Option<[f64; N]>;
}

impl<const N: usize, F> System<N> for F
where
    F: FnMut(f64, &[f64; N]) -> Option<[f64; N]>,
{
    fn eval(&mut self, t: f64, y: &[f64; N]) -> Option<[f64; N]> {
        self(t, y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dopri5 {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// Smallest admissible |h| relative to max(1, |t|).
    pub h_min_rel: f64,
}

impl Default for Dopri5 {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-300,
            max_steps: 200_000,
            h_min_rel: 1e-13,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Outcome<const N: usize> {
    Reached { y: [f64; N] },
    /// The event function became nonnegative at `t`.
    Event { t: f64, y: [f64; N] },
    /// Step size underflow, step budget exhausted, or invalid initial state.
    Failed { t: f64, y: [f64; N] },
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

fn comb<const N: usize>(y: &[f64; N], h: f64, terms: &[(f64, &[f64; N])]) -> [f64; N] {
    let mut out = *y;
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (c, k) in terms {
            acc += c * k[i];
        }
        *o += h * acc;
    }
    out
}

struct Step<const N: usize> {
    y: [f64; N],
    k7: [f64; N],
    err: f64,
}

impl Dopri5 {
    fn attempt<const N: usize, S: System<N>>(
        &self,
        sys: &mut S,
        t: f64,
        y: &[f64; N],
        k1: &[f64; N],
        h: f64,
    ) -> Option<Step<N>> {
        let k2 = sys.eval(t + C2 * h, &comb(y, h, &[(A21, k1)]))?;
        let k3 = sys.eval(t + C3 * h, &comb(y, h, &[(A31, k1), (A32, &k2)]))?;
        let k4 = sys.eval(t + C4 * h, &comb(y, h, &[(A41, k1), (A42, &k2), (A43, &k3)]))?;
        let k5 = sys.eval(
            t + C5 * h,
            &comb(y, h, &[(A51, k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
        )?;
        let k6 = sys.eval(
            t + h,
            &comb(y, h, &[(A61, k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]),
        )?;
        let y5 = comb(y, h, &[(B1, k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)]);
        let k7 = sys.eval(t + h, &y5)?;
        let mut sq = 0.0;
        for i in 0..N {
            let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sc = self.atol + self.rtol * y[i].abs().max(y5[i].abs());
            sq += (e / sc) * (e / sc);
        }
        let err = (sq / N as f64).sqrt();
        if !err.is_finite() {
            return None;
        }
        Some(Step { y: y5, k7, err })
    }

    /// Integrates from `t0` to `t1` (either direction). `h0` is a step-size
    /// hint; the last accepted step size is returned alongside the outcome so
    /// that consecutive calls can chain. When `event` is given it must be
    /// negative at `t0`; the integration stops where it first reaches zero.
    pub fn integrate<const N: usize, S: System<N>>(
        &self,
        sys: &mut S,
        t0: f64,
        y0: [f64; N],
        t1: f64,
        h0: f64,
        mut event: Option<&mut dyn FnMut(f64, &[f64; N]) -> f64>,
    ) -> (Outcome<N>, f64) {
        let span = t1 - t0;
        if span == 0.0 {
            return (Outcome::Reached { y: y0 }, h0);
        }
        let dir = span.signum();
        let Some(mut k1) = sys.eval(t0, &y0) else {
            return (Outcome::Failed { t: t0, y: y0 }, h0);
        };
        let (mut t, mut y) = (t0, y0);
        let mut h = if h0 > 0.0 { h0.min(span.abs()) } else { 1e-3 * span.abs() }.max(f64::MIN_POSITIVE) * dir;
        for _ in 0..self.max_steps {
            let remaining = t1 - t;
            let last = h.abs() >= remaining.abs();
            let h_try = if last { remaining } else { h };
            let h_min = self.h_min_rel * t.abs().max(1.0);
            match self.attempt(sys, t, &y, &k1, h_try) {
                Some(step) if step.err <= 1.0 => {
                    if let Some(g) = event.as_deref_mut() {
                        if g(t + h_try, &step.y) >= 0.0 {
                            let (te, ye) = self.locate(sys, t, &y, &k1, h_try, g);
                            return (Outcome::Event { t: te, y: ye }, h.abs());
                        }
                    }
                    let grow = if step.err == 0.0 { 5.0 } else { (0.9 * step.err.powf(-0.2)).clamp(0.2, 5.0) };
                    t = if last { t1 } else { t + h_try };
                    y = step.y;
                    k1 = step.k7;
                    if last {
                        return (Outcome::Reached { y }, h.abs());
                    }
                    h *= grow;
                }
                Some(step) => {
                    let shrink = (0.9 * step.err.powf(-0.2)).clamp(0.1, 0.9);
                    h = h_try * shrink;
                }
                None => h = h_try * 0.25,
            }
            if h.abs() < h_min {
                return (Outcome::Failed { t, y }, h.abs());
            }
        }
        (Outcome::Failed { t, y }, h.abs())
    }

    /// Finds the event inside an accepted step by re-stepping from its start
    /// with shorter steps (Illinois false position on the step length).
    fn locate<const N: usize, S: System<N>>(
        &self,
        sys: &mut S,
        t: f64,
        y: &[f64; N],
        k1: &[f64; N],
        h: f64,
        g: &mut dyn FnMut(f64, &[f64; N]) -> f64,
    ) -> (f64, [f64; N]) {
        let step_to =|frac: f64, sys: &mut S| -> Option<[f64; N]> {
            if frac == 0.0 {
                return Some(*y);
            }
            self.attempt(sys, t, y, k1, h * frac).map(|s| s.y)
        };
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        let mut g_lo = g(t, y);
        let y_hi = step_to(1.0, sys).unwrap_or(*y);
        let mut g_hi = g(t + h, &y_hi);
        let mut best = (t + h, y_hi);
        let mut side = 0i8;
        for _ in 0..200 {
            if hi - lo <= 4.0 * f64::EPSILON {
                break;
            }
            let mut mid = lo + (hi - lo) * g_lo / (g_lo - g_hi);
            if !(mid > lo && mid < hi) {
                mid = 0.5 * (lo + hi);
            }
            let Some(ym) = step_to(mid, sys) else {
                hi = mid;
                continue;
            };
            let gm = g(t + h * mid, &ym);
            if gm >= 0.0 {
                best = (t + h * mid, ym);
                hi = mid;
                g_hi = gm;
                if side == 1 {
                    g_lo *= 0.5;
                }
                side = 1;
                if gm == 0.0 {
                    break;
                }
            } else {
                lo = mid;
                g_lo = gm;
                if side == -1 {
                    g_hi *= 0.5;
                }
                side = -1;
            }
        }
        best
    }
}
