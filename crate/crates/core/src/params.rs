//! Model primitives, derived constants and well-posedness gating.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Margin used when classifying the open conditions on the parameters.
pub const DEFAULT_CONDITION_MARGIN: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum ParamError {
    #[error("parameter `{0}` is not a finite number")]
    NonFinite(&'static str),
    #[error("derived constant `{0}` is not finite (R = 1 or S = 1?)")]
    Degenerate(&'static str),
    #[error("invalid parameter document: {0}")]
    Document(String),
}

/// Market and preference primitives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    /// Drift of the risky asset.
    pub mu: f64,
    /// Volatility of the risky asset.
    pub sigma: f64,
    /// Risk-free rate.
    pub r: f64,
    /// Subjective discount rate.
    pub delta: f64,
    /// Relative risk aversion.
    #[serde(rename = "R")]
    pub risk_aversion: f64,
    /// Elasticity of intertemporal complementarity.
    #[serde(rename = "S")]
    pub eic: f64,
    /// Consumption floor (rate). Zero selects the unconstrained benchmark.
    pub a: f64,
}

impl ModelParams {
    /// Wealth that exactly finances the floor forever, `a / r`.
    pub fn floor_wealth(&self) -> f64 {
        self.a / self.r
    }

    pub fn with_floor(mut self, a: f64) -> Self {
        self.a = a;
        self
    }

    fn fields(&self) -> [(&'static str, f64); 7] {
        [
            ("mu", self.mu),
            ("sigma", self.sigma),
            ("r", self.r),
            ("delta", self.delta),
            ("R", self.risk_aversion),
            ("S", self.eic),
            ("a", self.a),
        ]
    }
}

/// Constants derived from [`ModelParams`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    /// (1-R)/(1-S)
    pub nu: f64,
    /// (S-R)/(1-R) = 1 - 1/nu
    pub rho: f64,
    /// Half the squared Sharpe ratio.
    pub kappa: f64,
    /// Merton consumption propensity.
    pub eta: f64,
}

pub fn derive(p: &ModelParams) -> Result<DerivedConstants, ParamError> {
    for (name, v) in p.fields() {
        if !v.is_finite() {
            return Err(ParamError::NonFinite(name));
        }
    }
    let (big_r, big_s) = (p.risk_aversion, p.eic);
    let nu = (1.0 - big_r) / (1.0 - big_s);
    let rho = (big_s - big_r) / (1.0 - big_r);
    let kappa = (p.mu - p.r).powi(2) / (2.0 * p.sigma * p.sigma);
    let eta = (p.delta + (big_s - 1.0) * (p.r + kappa / big_r)) / big_s;
    for (name, v) in [("nu", nu), ("rho", rho), ("kappa", kappa), ("eta", eta)] {
        if !v.is_finite() {
            return Err(ParamError::Degenerate(name));
        }
    }
    Ok(DerivedConstants { nu, rho, kappa, eta })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CaseTag {
    #[serde(rename = "R>1")]
    AboveOne,
    #[serde(rename = "R<1")]
    BelowOne,
}

/// A violated condition together with the quantity that was tested.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedCondition {
    pub name: String,
    pub value: f64,
    /// `true` for conditions that make the problem ill-posed; `false` for the
    /// extra region-theorem condition.
    pub blocks_well_posedness: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub well_posed: bool,
    pub region_theorem_applicable: bool,
    pub case_tag: CaseTag,
    pub failed_conditions: Vec<FailedCondition>,
}

impl ValidationReport {
    /// Human readable summary of the blocking conditions.
    pub fn describe_failures(&self) -> String {
        self.failed_conditions
            .iter()
            .map(|c| format!("{} (value {:e})", c.name, c.value))
            .collect::<Vec<_>>()
            .join(", ")
    }
}

pub fn validate(p: &ModelParams) -> ValidationReport {
    validate_with_margin(p, DEFAULT_CONDITION_MARGIN)
}

/// Checks every open condition `q > 0` as `q > margin`.
pub fn validate_with_margin(p: &ModelParams, margin: f64) -> ValidationReport {
    let mut failed = Vec::new();
    let mut check = |name: &str, value: f64, blocking: bool| {
        // NaN fails every comparison, which is what we want here.
        if !(value > margin) {
            failed.push(FailedCondition {
                name: name.to_string(),
                value,
                blocks_well_posedness: blocking,
            });
        }
    };

    for (name, v) in p.fields() {
        if !v.is_finite() {
            check(&format!("{name}_finite"), f64::NAN, true);
        }
    }
    check("sigma_positive", p.sigma, true);
    check("r_positive", p.r, true);
    check("mu_exceeds_r", p.mu - p.r, true);
    check("delta_positive", p.delta, true);
    check("R_positive", p.risk_aversion, true);
    check("R_not_one", (p.risk_aversion - 1.0).abs(), true);
    check("S_positive", p.eic, true);
    check("S_not_one", (p.eic - 1.0).abs(), true);
    if !(p.a >= 0.0) {
        check("a_nonnegative", p.a, true);
    }

    let case_tag = if p.risk_aversion > 1.0 {
        CaseTag::AboveOne
    } else {
        CaseTag::BelowOne
    };
    let mut region_ok = false;
    match derive(p) {
        Ok(c) => {
            check("nu_positive", c.nu, true);
            check("nu_below_one", 1.0 - c.nu, true);
            check("eta_positive", c.eta, true);
            let region_value = match case_tag {
                CaseTag::AboveOne => p.r - p.delta + (p.eic - 1.0) / p.eic * c.kappa,
                CaseTag::BelowOne => c.kappa + c.rho * p.delta * c.nu,
            };
            region_ok = region_value > margin;
            let name = match case_tag {
                CaseTag::AboveOne => "region_condition_R_above_one",
                CaseTag::BelowOne => "region_condition_R_below_one",
            };
            check(name, region_value, false);
        }
        Err(_) => check("derived_constants_finite", f64::NAN, true),
    }

    let well_posed = failed.iter().all(|c| !c.blocks_well_posedness);
    ValidationReport {
        well_posed,
        region_theorem_applicable: well_posed && region_ok,
        case_tag,
        failed_conditions: failed,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InflationFlags {
    /// The transformed risk-free rate is not positive.
    pub rate_nonpositive: bool,
    /// A negative growth rate (deflating floor) was requested.
    pub negative_beta: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InflationTransform {
    pub beta: f64,
    pub original: ModelParams,
    pub transformed: ModelParams,
    pub flags: InflationFlags,
}

/// Maps the problem with a floor growing like `a e^{beta t}` onto a constant
/// floor problem. The caller must re-validate the transformed parameters.
pub fn inflation_transform(p: &ModelParams, beta: f64) -> InflationTransform {
    let transformed = ModelParams {
        mu: p.mu - beta,
        r: p.r - beta,
        delta: p.delta + beta * (p.eic - 1.0),
        ..*p
    };
    InflationTransform {
        beta,
        original: *p,
        transformed,
        flags: InflationFlags {
            rate_nonpositive: !(transformed.r > 0.0),
            negative_beta: beta < 0.0,
        },
    }
}

/// The JSON parameter document: the seven primitives plus an optional floor
/// growth rate. Unknown keys are rejected.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsDocument {
    pub mu: f64,
    pub sigma: f64,
    pub r: f64,
    pub delta: f64,
    #[serde(rename = "R")]
    pub risk_aversion: f64,
    #[serde(rename = "S")]
    pub eic: f64,
    pub a: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
}

impl ParamsDocument {
    pub fn from_json(text: &str) -> Result<Self, ParamError> {
        serde_json::from_str(text).map_err(|e| ParamError::Document(e.to_string()))
    }

    pub fn from_value(value: serde_json::Value) -> Result<Self, ParamError> {
        serde_json::from_value(value).map_err(|e| ParamError::Document(e.to_string()))
    }

    pub fn params(&self) -> ModelParams {
        ModelParams {
            mu: self.mu,
            sigma: self.sigma,
            r: self.r,
            delta: self.delta,
            risk_aversion: self.risk_aversion,
            eic: self.eic,
            a: self.a,
        }
    }
}
