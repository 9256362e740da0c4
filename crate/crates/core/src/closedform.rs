//! Exact formulas: the unconstrained (a = 0) solution, the floor annuity
//! value, the value bounds and the aggregator. Everything else is checked
//! against these.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::params::{DerivedConstants, ModelParams};

#[derive(Debug, Error, PartialEq)]
pub enum ClosedFormError {
    #[error("{what} must be positive, got {value:e}")]
    NonPositive { what: &'static str, value: f64 },
    #[error("(1-R) v must be positive, got {0:e}")]
    UtilitySign(f64),
    #[error("wealth {x:e} is below the floor annuity value {floor:e}")]
    BelowFloor { x: f64, floor: f64 },
    #[error("floor value is infinite for a = 0 and R > 1")]
    DegenerateFloor,
}

/// `x^e` evaluated as `exp(e ln x)`; stays finite for large exponents where
/// intermediate products would overflow.
#[inline]
pub(crate) fn pow(x: f64, e: f64) -> f64 {
    (e * x.ln()).exp()
}

fn positive(what: &'static str, value: f64) -> Result<(), ClosedFormError> {
    if value > 0.0 {
        Ok(())
    } else {
        Err(ClosedFormError::NonPositive { what, value })
    }
}

/// Epstein-Zin aggregator `c^{1-S}/(1-S) ((1-R) v)^rho`.
pub fn aggregator(
    c: f64,
    v: f64,
    p: &ModelParams,
    k: &DerivedConstants,
) -> Result<f64, ClosedFormError> {
    positive("consumption", c)?;
    let scaled = (1.0 - p.risk_aversion) * v;
    if !(scaled > 0.0) {
        return Err(ClosedFormError::UtilitySign(scaled));
    }
    Ok(pow(c, 1.0 - p.eic) / (1.0 - p.eic) * pow(scaled, k.rho))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MertonSolution {
    /// Constant fraction of wealth in the risky asset.
    pub pi_ez: f64,
    /// Consumption per unit wealth.
    pub consumption_propensity: f64,
    /// `J^ez(x) = value_coefficient * x^{1-R}/(1-R)`.
    pub value_coefficient: f64,
}

pub fn merton(p: &ModelParams, k: &DerivedConstants) -> MertonSolution {
    MertonSolution {
        pi_ez: (p.mu - p.r) / (p.risk_aversion * p.sigma * p.sigma),
        consumption_propensity: k.eta,
        value_coefficient: pow(k.eta, -k.nu * p.eic),
    }
}

pub fn value_unconstrained(
    x: f64,
    p: &ModelParams,
    k: &DerivedConstants,
) -> Result<f64, ClosedFormError> {
    positive("wealth", x)?;
    let one_r = 1.0 - p.risk_aversion;
    Ok((-k.nu * p.eic * k.eta.ln() + one_r * x.ln()).exp() / one_r)
}

/// Coefficient `eta^{-nu S / R}` of the unconstrained dual; it is the value
/// of `H(z) / z^{1-1/R}` and of `-h'(z) / z^{-1/R}`.
pub fn dual_coefficient(p: &ModelParams, k: &DerivedConstants) -> f64 {
    pow(k.eta, -k.nu * p.eic / p.risk_aversion)
}

/// Unconstrained dual value `h^ez(z) = R/(1-R) eta^{-nu S/R} z^{1-1/R}`.
pub fn h_unconstrained(
    z: f64,
    p: &ModelParams,
    k: &DerivedConstants,
) -> Result<f64, ClosedFormError> {
    positive("dual variable", z)?;
    let big_r = p.risk_aversion;
    let e = 1.0 - 1.0 / big_r;
    Ok(big_r / (1.0 - big_r) * dual_coefficient(p, k) * pow(z, e))
}

/// `(h, h', h'')` of the unconstrained dual.
pub fn h_unconstrained_derivs(
    z: f64,
    p: &ModelParams,
    k: &DerivedConstants,
) -> Result<(f64, f64, f64), ClosedFormError> {
    let h = h_unconstrained(z, p, k)?;
    let big_r = p.risk_aversion;
    let c = dual_coefficient(p, k);
    let hp = -c * pow(z, -1.0 / big_r);
    let hpp = c / big_r * pow(z, -1.0 / big_r - 1.0);
    Ok((h, hp, hpp))
}

/// `J(a/r) = delta^{-nu} a^{1-R}/(1-R)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FloorValue {
    pub value: f64,
    /// Set when `a = 0`, where the floor collapses to zero wealth.
    pub degenerate: bool,
}

pub fn value_at_floor(p: &ModelParams, k: &DerivedConstants) -> Result<FloorValue, ClosedFormError> {
    let one_r = 1.0 - p.risk_aversion;
    if p.a == 0.0 {
        if one_r > 0.0 {
            return Ok(FloorValue {
                value: 0.0,
                degenerate: true,
            });
        }
        return Err(ClosedFormError::DegenerateFloor);
    }
    positive("floor", p.a)?;
    Ok(FloorValue {
        value: (-k.nu * p.delta.ln() + one_r * p.a.ln()).exp() / one_r,
        degenerate: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueBounds {
    pub lower: f64,
    pub upper: f64,
}

/// Floor-annuity lower bound and unconstrained upper bound on `J(x)`.
pub fn bounds(x: f64, p: &ModelParams, k: &DerivedConstants) -> Result<ValueBounds, ClosedFormError> {
    let floor = p.floor_wealth();
    // a relative slack so that x = a/r computed elsewhere is accepted
    if x < floor * (1.0 - 4.0 * f64::EPSILON) {
        return Err(ClosedFormError::BelowFloor { x, floor });
    }
    positive("wealth", x)?;
    let one_r = 1.0 - p.risk_aversion;
    let lower = (-k.nu * p.delta.ln() + one_r * (p.r * x).ln()).exp() / one_r;
    let upper = value_unconstrained(x, p, k)?;
    Ok(ValueBounds { lower, upper })
}

/// Utility of consuming exactly `a` forever, seen from time `t`.
pub fn constant_floor_utility(t: f64, p: &ModelParams, k: &DerivedConstants) -> Result<f64, ClosedFormError> {
    positive("floor", p.a)?;
    if !(t >= 0.0) {
        return Err(ClosedFormError::NonPositive { what: "time", value: t });
    }
    let one_r = 1.0 - p.risk_aversion;
    Ok((-k.nu * p.delta.ln() - p.delta * k.nu * t + one_r * p.a.ln()).exp() / one_r)
}

/// Envelope that every admissible dual must satisfy.
///
/// The upper curve is the conjugate of the unconstrained value. The lower
/// curve is the conjugate of the floor-annuity bound over the admissible
/// region `y > 1/r`: a power law for `z <= r delta^{-nu}` and the affine
/// function `delta^{-nu}/(1-R) - z/r` beyond it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualEnvelope {
    pub lower: f64,
    pub upper: f64,
}

pub fn dual_envelope(z: f64, p: &ModelParams, k: &DerivedConstants) -> Result<DualEnvelope, ClosedFormError> {
    positive("dual variable", z)?;
    let big_r = p.risk_aversion;
    let one_r = 1.0 - big_r;
    let e = 1.0 - 1.0 / big_r;
    let d = pow(p.delta, -k.nu);
    let kink = p.r * d;
    let lower = if z <= kink {
        big_r / one_r * pow(d * pow(p.r, one_r), 1.0 / big_r) * pow(z, e)
    } else {
        d / one_r - z / p.r
    };
    let upper = h_unconstrained(z, p, k)?;
    Ok(DualEnvelope { lower, upper })
}
