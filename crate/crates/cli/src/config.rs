//! The run configuration document and its digest.

use std::collections::BTreeMap;

use ezc_core::dualsolver::SolverConfig;
use ezc_core::params::{inflation_transform, InflationTransform, ModelParams, ParamsDocument};
use ezc_core::simulate::SimConfig;
use ezc_core::verify::VerifyConfig;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Keys that configure the run rather than the model.
const SECTIONS: [&str; 5] = ["solver", "simulate", "verify", "sweep", "n_x"];

/// Parameters that a sweep may vary.
pub const SWEEPABLE: [&str; 8] = ["mu", "sigma", "r", "delta", "R", "S", "a", "beta"];

#[derive(Debug, Clone)]
pub struct RunConfig {
    /// The document as read, with keys sorted.
    pub document: Value,
    pub model: ParamsDocument,
    pub solver: SolverConfig,
    pub simulate: SimConfig,
    pub verify: VerifyConfig,
    /// Sweep axes in key order.
    pub sweep: BTreeMap<String, Vec<f64>>,
    pub n_x: usize,
}

fn section<T: serde::de::DeserializeOwned + Default>(map: &Map<String, Value>, key: &str) -> Result<T, CliError> {
    match map.get(key) {
        None => Ok(T::default()),
        Some(v) => serde_json::from_value(v.clone()).map_err(|e| CliError::Validation(format!("`{key}` section: {e}"))),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let document: Value =
            serde_json::from_str(text).map_err(|e| CliError::Validation(format!("config is not valid JSON: {e}")))?;
        Self::from_value(document)
    }

    pub fn from_value(document: Value) -> Result<Self, CliError> {
        let Value::Object(map) = &document else {
            return Err(CliError::Validation("config must be a JSON object".into()));
        };
        let model_keys: Map<String, Value> =
            map.iter().filter(|(k, _)| !SECTIONS.contains(&k.as_str())).map(|(k, v)| (k.clone(), v.clone())).collect();
        let model = ParamsDocument::from_value(Value::Object(model_keys))
            .map_err(|e| CliError::Validation(format!("config schema: {e}")))?;
        let sweep: BTreeMap<String, Vec<f64>> = section(map, "sweep")?;
        if let Some(bad) = sweep.keys().find(|k| !SWEEPABLE.contains(&k.as_str())) {
            return Err(CliError::Validation(format!("cannot sweep `{bad}`; allowed: {}", SWEEPABLE.join(", "))));
        }
        if let Some((k, _)) = sweep.iter().find(|(_, v)| v.is_empty()) {
            return Err(CliError::Validation(format!("sweep axis `{k}` is empty")));
        }
        let n_x = match map.get("n_x") {
            None => 800,
            Some(v) => v.as_u64().ok_or_else(|| CliError::Validation("`n_x` must be a positive integer".into()))? as usize,
        };
        Ok(Self {
            model,
            solver: section(map, "solver")?,
            simulate: section(map, "simulate")?,
            verify: section(map, "verify")?,
            sweep,
            n_x,
            document,
        })
    }

    /// Compact JSON with sorted keys; insensitive to how the file was laid out.
    pub fn canonical(&self) -> String {
        serde_json::to_string(&self.document).expect("serialisable")
    }

    pub fn digest(&self) -> String {
        sha256_hex(self.canonical().as_bytes())
    }
}

/// The model to solve and, in inflation mode, the transform that produced it.
pub fn model_of(doc: &ParamsDocument) -> (ModelParams, Option<InflationTransform>) {
    let p = doc.params();
    match doc.beta {
        Some(beta) => {
            let t = inflation_transform(&p, beta);
            (t.transformed, Some(t))
        }
        None => (p, None),
    }
}

/// Model document with one sweep point applied.
pub fn with_overrides(doc: &ParamsDocument, point: &[(String, f64)]) -> ParamsDocument {
    let mut d = *doc;
    for (k, v) in point {
        match k.as_str() {
            "mu" => d.mu = *v,
            "sigma" => d.sigma = *v,
            "r" => d.r = *v,
            "delta" => d.delta = *v,
            "R" => d.risk_aversion = *v,
            "S" => d.eic = *v,
            "a" => d.a = *v,
            "beta" => d.beta = Some(*v),
            _ => unreachable!("sweep keys are checked on load"),
        }
    }
    d
}

/// Cartesian product of the sweep axes, last key varying fastest.
pub fn sweep_points(axes: &BTreeMap<String, Vec<f64>>) -> Vec<Vec<(String, f64)>> {
    axes.iter().fold(vec![Vec::new()], |acc, (k, vals)| {
        acc.iter()
            .flat_map(|prefix| {
                vals.iter().map(move |v| {
                    let mut p = prefix.clone();
                    p.push((k.clone(), *v));
                    p
                })
            })
            .collect()
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
