//! Cubic Hermite pieces shared by the dense dual output and the wealth table.

/// Value and derivative of the cubic Hermite interpolant on `[t0, t1]`.
#[inline]
pub(crate) fn hermite(t0: f64, t1: f64, f0: f64, f1: f64, m0: f64, m1: f64, t: f64) -> (f64, f64) {
    let dt = t1 - t0;
    let s = (t - t0) / dt;
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    let v = h00 * f0 + h10 * dt * m0 + h01 * f1 + h11 * dt * m1;
    let d00 = (6.0 * s2 - 6.0 * s) / dt;
    let d10 = 3.0 * s2 - 4.0 * s + 1.0;
    let d01 = (-6.0 * s2 + 6.0 * s) / dt;
    let d11 = 3.0 * s2 - 2.0 * s;
    (v, d00 * f0 + d10 * m0 + d01 * f1 + d11 * m1)
}

/// Index `i` with `t[i] <= x < t[i+1]`, clamped to the valid intervals.
#[inline]
pub(crate) fn interval(t: &[f64], x: f64) -> usize {
    t.partition_point(|&v| v <= x).saturating_sub(1).min(t.len() - 2)
}

/// Monotone piecewise cubic (Fritsch-Carlson slopes).
#[cfg(test)]
#[derive(Debug, Clone)]
pub(crate) struct Pchip {
    t: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

#[cfg(test)]
impl Pchip {
    pub fn new(t: Vec<f64>, y: Vec<f64>) -> Self {
        let d = pchip_slopes(&t, &y);
        Self { t, y, d }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let i = interval(&self.t, x);
        hermite(self.t[i], self.t[i + 1], self.y[i], self.y[i + 1], self.d[i], self.d[i + 1], x).0
    }
}

/// Node slopes of the monotone interpolant.
pub(crate) fn pchip_slopes(t: &[f64], y: &[f64]) -> Vec<f64> {
    let n = t.len();
    assert!(n >= 2 && y.len() == n);
    let sec: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / (t[i + 1] - t[i])).collect();
    if n == 2 {
        return vec![sec[0]; 2];
    }
    let mut d = vec![0.0; n];
    for i in 1..n - 1 {
        if sec[i - 1] * sec[i] > 0.0 {
            let (h0, h1) = (t[i] - t[i - 1], t[i + 1] - t[i]);
            let (w0, w1) = (2.0 * h1 + h0, h1 + 2.0 * h0);
            d[i] = (w0 + w1) / (w0 / sec[i - 1] + w1 / sec[i]);
        }
    }
    d[0] = end_slope(t[1] - t[0], t[2] - t[1], sec[0], sec[1]);
    d[n - 1] = end_slope(t[n - 1] - t[n - 2], t[n - 2] - t[n - 3], sec[n - 2], sec[n - 3]);
    d
}

// one-sided three-point slope, limited to keep monotonicity
fn end_slope(h0: f64, h1: f64, s0: f64, s1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * s0 - h0 * s1) / (h0 + h1);
    if d * s0 <= 0.0 {
        0.0
    } else if s0 * s1 <= 0.0 && d.abs() > 3.0 * s0.abs() {
        3.0 * s0
    } else {
        d
    }
}
