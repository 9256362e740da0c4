//! Text serialisation of solutions, tables and path summaries.
//!
//! Numbers are written as `{:.16e}` (17 significant digits), so every value
//! round-trips exactly. Output depends only on the data, never on the clock.

use serde::{Deserialize, Serialize};

use crate::dualsolver::{DualSolution, Method, Region, SolverConfig};
use crate::params::ModelParams;
use crate::policy::PolicyTable;
use crate::simulate::SummaryRow;

pub const SOLUTION_COLUMNS: [&str; 5] = ["z", "u", "w", "h", "region"];
pub const POLICY_COLUMNS: [&str; 7] = ["x", "J", "Jp", "Jpp", "c_star", "pi_star", "region"];
pub const SUMMARY_COLUMNS: [&str; 7] = ["t", "x_mean", "x_q05", "x_q50", "x_q95", "c_mean", "alpha_mean"];

/// Scientific notation with 17 significant digits.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn table(columns: &[&str], rows: impl Iterator<Item = Vec<String>>) -> String {
    let mut out = columns.join(",");
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn solution_csv(sol: &DualSolution) -> String {
    table(
        &SOLUTION_COLUMNS,
        (0..sol.grid.len()).map(|i| {
            vec![num(sol.grid[i]), num(sol.u[i]), num(sol.w[i]), num(sol.h[i]), sol.region[i].as_str().to_string()]
        }),
    )
}

pub fn policy_csv(t: &PolicyTable) -> String {
    table(
        &POLICY_COLUMNS,
        (0..t.len()).map(|i| {
            vec![
                num(t.x[i]),
                num(t.j[i]),
                num(t.jp[i]),
                num(t.jpp[i]),
                num(t.c_star[i]),
                num(t.pi_star[i]),
                t.region[i].as_str().to_string(),
            ]
        }),
    )
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    table(
        &SUMMARY_COLUMNS,
        rows.iter().map(|r| {
            [r.t, r.x_mean, r.x_q05, r.x_q50, r.x_q95, r.c_mean, r.alpha_mean].into_iter().map(num).collect()
        }),
    )
}

/// Sidecar of `solution.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionMeta {
    pub params: ModelParams,
    pub zhat: f64,
    pub residual_sup: f64,
    pub boundary_u_dev: f64,
    pub boundary_w_dev: f64,
    pub small_z_dev: f64,
    pub method: Method,
    pub amplitude: Option<f64>,
    /// Grid and tolerances the solve ran with.
    pub tolerances: SolverConfig,
    pub assumption_flags: Vec<String>,
}

impl SolutionMeta {
    pub fn of(sol: &DualSolution) -> Self {
        Self {
            params: sol.params,
            zhat: sol.zhat,
            residual_sup: sol.residual_sup,
            boundary_u_dev: sol.boundary_u_dev,
            boundary_w_dev: sol.boundary_w_dev,
            small_z_dev: sol.small_z_dev,
            method: sol.method,
            amplitude: sol.amplitude,
            tolerances: sol.config,
            assumption_flags: sol.assumption_flags.clone(),
        }
    }
}

/// Sidecar of `policy.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyMeta {
    pub params: ModelParams,
    pub xhat: f64,
    /// `a/r`, the wealth that finances the floor forever.
    pub floor_wealth: f64,
    /// Value of consuming exactly the floor forever.
    pub floor_value: f64,
    pub rows: usize,
}

impl PolicyMeta {
    pub fn of(t: &PolicyTable) -> Self {
        Self { params: t.params, xhat: t.xhat, floor_wealth: t.floor_wealth, floor_value: t.floor_value, rows: t.len() }
    }
}

/// Pretty JSON with a trailing newline.
pub fn json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serialisable");
    s.push('\n');
    s
}

/// Columns of a CSV written by this module, keyed by header.
#[derive(Debug, Clone, PartialEq)]
pub struct Columns {
    pub header: Vec<String>,
    pub cells: Vec<Vec<String>>,
}

impl Columns {
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut lines = text.lines();
        let header: Vec<String> = lines.next().ok_or("empty file")?.split(',').map(str::to_string).collect();
        let mut cells = Vec::new();
        for (k, line) in lines.enumerate() {
            let row: Vec<String> = line.split(',').map(str::to_string).collect();
            if row.len() != header.len() {
                return Err(format!("row {} has {} fields, expected {}", k + 1, row.len(), header.len()));
            }
            cells.push(row);
        }
        Ok(Self { header, cells })
    }

    fn index(&self, name: &str) -> Result<usize, String> {
        self.header.iter().position(|h| h == name).ok_or_else(|| format!("missing column `{name}`"))
    }

    pub fn numbers(&self, name: &str) -> Result<Vec<f64>, String> {
        let j = self.index(name)?;
        self.cells.iter().map(|r| r[j].parse::<f64>().map_err(|e| format!("{name}: {e}"))).collect()
    }

    pub fn regions(&self) -> Result<Vec<Region>, String> {
        let j = self.index("region")?;
        self.cells.iter().map(|r| Region::parse(&r[j]).ok_or_else(|| format!("bad region `{}`", r[j]))).collect()
    }
}
