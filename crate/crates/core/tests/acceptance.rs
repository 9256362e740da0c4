//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Runs without the libtest harness so the lines always print.

use std::time::Instant;

use ezc_core::closedform::{bounds, h_unconstrained_derivs, value_at_floor, value_unconstrained};
use ezc_core::dualsolver::{residual, solve, DualSolution, Region, SolverConfig};
use ezc_core::io::{json, policy_csv, solution_csv, summary_csv};
use ezc_core::params::{derive, ModelParams};
use ezc_core::policy::{build_table, hjb_residual, one_sided_jpp_at_xhat, PolicyTable};
use ezc_core::simulate::{
    duality_consistency, dynkin_check, dynkin_floor_check, envelope_rate, simulate_wealth, transversality_probe, Scheme,
    SimConfig,
};
use ezc_core::verify::{inject, run_suite, scaling_check, Series, Status, VerifyConfig};

fn set_a() -> ModelParams {
    ModelParams { mu: 0.07, sigma: 0.2, r: 0.02, delta: 0.03, risk_aversion: 2.0, eic: 3.0, a: 0.02 }
}

fn set_b() -> ModelParams {
    ModelParams { risk_aversion: 0.5, eic: 0.25, delta: 0.08, ..set_a() }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

struct Case {
    sol: DualSolution,
    table: PolicyTable,
}

fn case(p: ModelParams, cfg: &SolverConfig) -> Result<Case, String> {
    let k = derive(&p).map_err(|e| e.to_string())?;
    let sol = solve(&p, &k, cfg).map_err(|e| e.to_string())?;
    let table = build_table(&sol, 800).map_err(|e| e.to_string())?;
    Ok(Case { sol, table })
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn c1_oracle() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for p in [set_a(), set_b()] {
        let p = p.with_floor(0.0);
        let k = derive(&p).unwrap();
        for i in 0..1000 {
            let z = 10f64.powf(-6.0 + 12.0 * i as f64 / 999.0);
            let (h, hp, hpp) = h_unconstrained_derivs(z, &p, &k).unwrap();
            let res = residual(h, hp, hpp, z, Region::Unconstrained, &p, &k).unwrap_or(f64::INFINITY);
            worst = worst.max(if res.is_nan() { f64::INFINITY } else { res.abs() });
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(worst <= 1e-10 && secs < 1.0, format!("max residual {worst:.2e} <= 1e-10 at 1000 points, sets A and B, {secs:.3} s"))
}

fn switch_count(sol: &DualSolution) -> usize {
    sol.region.windows(2).filter(|w| w[0] != w[1]).count()
}

fn c2_c3_solve(label: &str, p: ModelParams) -> Outcome {
    let start = Instant::now();
    let base = SolverConfig::default();
    let sol = match case(p, &base) {
        Ok(c) => c.sol,
        Err(e) => return outcome(false, format!("set {label}: solve failed: {e}")),
    };
    let secs = start.elapsed().as_secs_f64();
    let boundaries = sol.region.iter().filter(|r| **r == Region::Boundary).count();
    let switches = switch_count(&sol);
    let fine = match solve(&p, &derive(&p).unwrap(), &SolverConfig { n_nodes: 2 * base.n_nodes, ..base }) {
        Ok(s) => s,
        Err(e) => return outcome(false, format!("set {label}: doubled grid failed: {e}")),
    };
    let dz = rel(fine.zhat, sol.zhat);
    let pass = sol.residual_sup <= 1e-6
        && sol.boundary_u_dev <= 1e-4
        && sol.boundary_w_dev <= 1e-4
        && boundaries == 1
        && switches == 2
        && dz <= 1e-6
        && secs < 30.0;
    outcome(
        pass,
        format!(
            "set {label}: residual {:.2e}, boundary u {:.2e}, w {:.2e}, one switch {}, grid doubling {:.2e}, {secs:.2} s",
            sol.residual_sup,
            sol.boundary_u_dev,
            sol.boundary_w_dev,
            boundaries == 1 && switches == 2,
            dz
        ),
    )
}

fn c4_hjb(cases: &[(&str, &Case)]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (label, c) in cases {
        let t = &c.table;
        let worst = (0..t.len())
            .map(|i| {
                hjb_residual(t.excess[i], t.j[i], t.jp[i], t.jpp[i], t.c_star[i], t.alpha_star[i], &t.params, &t.consts)
                    .abs()
            })
            .fold(0.0f64, |m, v| if v.is_nan() { f64::INFINITY } else { m.max(v) });
        let (l, r) = one_sided_jpp_at_xhat(&t.excess, &t.jp, t.xhat_index());
        let c2 = rel(l, r);
        pass &= worst <= 1e-6 && c2 <= 1e-6;
        parts.push(format!("set {label}: HJB {worst:.2e}, J'' jump at x_hat {c2:.2e}"));
    }
    outcome(pass, parts.join("; ") + " (<= 1e-6)")
}

fn c5_bounds(cases: &[(&str, &Case)]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (label, c) in cases {
        let t = &c.table;
        let ok = (0..t.len())
            .filter(|&i| {
                let b = bounds(t.x[i], &t.params, &t.consts).unwrap();
                let jez = value_unconstrained(t.x[i], &t.params.with_floor(0.0), &t.consts).unwrap();
                b.lower <= t.j[i] && t.j[i] < b.upper && t.j[i] < jez
            })
            .count();
        pass &= ok == t.len();
        parts.push(format!("set {label}: {ok}/{} nodes", t.len()));
    }
    outcome(pass, parts.join(", "))
}

fn c6_scaling() -> Outcome {
    let p = set_a();
    let checks = scaling_check(&p, p.a, 2.0 * p.a, &SolverConfig::default(), 50, 1e-6);
    let pass = checks.iter().all(|c| c.status == Status::Pass);
    let parts: Vec<String> = checks.iter().map(|c| format!("{} {:.2e}", c.name, c.value)).collect();
    outcome(pass, parts.join(", ") + " (<= 1e-6)")
}

fn c7_dynkin(a: &Case) -> Outcome {
    let start = Instant::now();
    let x0 = 2.0 * a.table.xhat;
    let cfg = SimConfig { x0, horizon: 5.0, dt: 1e-3, n_paths: 10_000, seed: 11, ..Default::default() };
    let judge = |est: f64, target: f64, se: f64| rel(est, target) <= 0.01f64.max(3.0 * se / target.abs());
    let opt = match dynkin_check(&a.table, &cfg) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("simulation failed: {e}")),
    };
    let floor = match dynkin_floor_check(&a.table, &cfg, 1e-9) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("floor simulation failed: {e}")),
    };
    let secs = start.elapsed().as_secs_f64();
    let jf = value_at_floor(&a.table.params, &a.table.consts).unwrap().value;
    let pass = judge(opt.estimate, opt.target, opt.std_error)
        && judge(floor.estimate, jf, floor.std_error)
        && rel(floor.target, jf) <= 1e-12
        && secs < 120.0;
    outcome(
        pass,
        format!(
            "x0 = 2 x_hat: rel err {:.2e} (SE/|J| {:.2e}); floor strategy: rel err {:.2e}; {secs:.1} s",
            rel(opt.estimate, opt.target),
            opt.std_error / opt.target.abs(),
            rel(floor.estimate, jf)
        ),
    )
}

fn c8_consistency(a: &Case) -> Outcome {
    let x0 = 2.0 * a.table.xhat;
    let cfg = SimConfig { x0, horizon: 1.0, n_paths: 64, seed: 7, scheme: Scheme::Milstein, ..Default::default() };
    match duality_consistency(&a.sol, &a.table, &cfg, &[1e-2, 1e-3, 1e-4]) {
        Ok(rep) => {
            let falls = rep.points.windows(2).all(|w| w[1].sup_gap < w[0].sup_gap);
            let gaps: Vec<String> = rep.points.iter().map(|p| format!("{:.2e}", p.sup_gap)).collect();
            outcome(falls && rep.order >= 0.5, format!("sup gaps [{}], order {:.3} >= 0.5", gaps.join(", "), rep.order))
        }
        Err(e) => outcome(false, format!("simulation failed: {e}")),
    }
}

fn c9_transversality(cases: &[(&str, &Case)]) -> Outcome {
    let times = [1.0, 2.0, 5.0, 10.0];
    let mut pass = true;
    let mut parts = Vec::new();
    for (label, c) in cases {
        let x0 = 2.0 * c.table.xhat;
        let cfg = SimConfig { x0, dt: 1e-2, n_paths: 4000, seed: 3, ..Default::default() };
        let pts = match transversality_probe(&c.table, &cfg, &times) {
            Ok(p) => p,
            Err(e) => return outcome(false, format!("set {label}: {e}")),
        };
        let mono = pts.windows(2).all(|w| w[1].mean.abs() < w[0].mean.abs());
        pass &= mono;
        let mags: Vec<String> = pts.iter().map(|p| format!("{:.3e}", p.mean.abs())).collect();
        let mut line = format!("set {label}: |m| [{}] decreasing {mono}", mags.join(", "));
        if c.table.params.risk_aversion < 1.0 {
            let rate = envelope_rate(&c.table);
            let cst = pts[0].mean.abs() * (rate * pts[0].t).exp();
            let inside = pts[1..].iter().all(|q| q.mean.abs() <= cst * (-rate * q.t).exp() + 3.0 * q.std_error);
            pass &= inside;
            line += &format!(", inside C e^(-{rate:.4} t) with C = {cst:.3e}: {inside}");
        }
        parts.push(line);
    }
    outcome(pass, parts.join("; "))
}

fn c10_near_separable() -> Outcome {
    let p = ModelParams { eic: 2.001, ..set_a() };
    let k = derive(&p).unwrap();
    match solve(&p, &k, &SolverConfig::default()) {
        Ok(sol) => {
            let d = (sol.zhat - 1.0).abs();
            outcome(d <= 0.05, format!("rho = {:.3e}, z_hat = {:.6}, |z_hat - 1| = {d:.2e} <= 5e-2", k.rho, sol.zhat))
        }
        Err(e) => outcome(false, format!("solve failed: {e}")),
    }
}

fn pipeline_bytes() -> Vec<String> {
    let c = case(set_a(), &SolverConfig::default()).unwrap();
    let x0 = 2.0 * c.table.xhat;
    let sim = SimConfig { x0, horizon: 1.0, dt: 1e-2, n_paths: 500, seed: 5, record_every: 10, ..Default::default() };
    let bundle = simulate_wealth(&c.table, &sim).unwrap();
    let dynkin = dynkin_check(&c.table, &sim).unwrap();
    let vcfg = VerifyConfig {
        dynkin: SimConfig { n_paths: 400, ..VerifyConfig::default().dynkin },
        transversality: SimConfig { n_paths: 200, ..VerifyConfig::default().transversality },
        ..Default::default()
    };
    let report = run_suite(&c.sol, &c.table, &vcfg);
    vec![solution_csv(&c.sol), policy_csv(&c.table), summary_csv(&bundle.summary()), json(&dynkin), json(&report)]
}

fn c11_determinism() -> Outcome {
    let runs: Vec<Vec<String>> = [1, 4, 1]
        .iter()
        .map(|&n| rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap().install(pipeline_bytes))
        .collect();
    let same = runs.windows(2).all(|w| w[0] == w[1]);
    let bytes: usize = runs[0].iter().map(String::len).sum();
    outcome(same, format!("three runs on 1, 4 and 1 threads, {bytes} bytes of CSV/JSON, identical: {same}"))
}

fn c12_fault_injection(cases: &[(&str, &Case)]) -> Outcome {
    let cfg = VerifyConfig { monte_carlo: false, ..Default::default() };
    let mut tried = 0;
    let mut missed = Vec::new();
    for (label, c) in cases {
        let clean = run_suite(&c.sol, &c.table, &cfg);
        if clean.overall == Status::Fail {
            return outcome(false, format!("set {label}: clean solution already fails {:?}", clean.failed()));
        }
        for series in Series::ALL {
            let n = series.len(&c.sol, &c.table);
            let mut idx: Vec<usize> = (0..n).step_by((n / 7).max(1)).collect();
            idx.push(n - 1);
            idx.push(if matches!(series, Series::U | Series::W | Series::H) {
                c.sol.boundary_index()
            } else {
                c.table.xhat_index()
            });
            for i in idx {
                let (s, t) = inject(&c.sol, &c.table, series, i, 1e-3, false);
                tried += 1;
                if run_suite(&s, &t, &cfg).overall != Status::Fail {
                    missed.push(format!("{label}:{series:?}[{i}]"));
                }
            }
        }
    }
    outcome(missed.is_empty(), format!("{} of {tried} single-entry 1e-3 perturbations flagged {:?}", tried - missed.len(), missed))
}

fn main() {
    let (a, b) = match (case(set_a(), &SolverConfig::default()), case(set_b(), &SolverConfig::default())) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => {
            println!("acceptance: cannot solve the reference sets: {e}");
            std::process::exit(1);
        }
    };
    let both = [("A", &a), ("B", &b)];
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("closed-form ODE oracle", Box::new(c1_oracle)),
        ("free-boundary solve, set A", Box::new(|| c2_c3_solve("A", set_a()))),
        ("free-boundary solve, set B", Box::new(|| c2_c3_solve("B", set_b()))),
        ("primal HJB certification", Box::new(|| c4_hjb(&both))),
        ("bound envelope", Box::new(|| c5_bounds(&both))),
        ("scaling law", Box::new(c6_scaling)),
        ("Dynkin identity", Box::new(|| c7_dynkin(&a))),
        ("dual-primal pathwise consistency", Box::new(|| c8_consistency(&a))),
        ("transversality trend", Box::new(|| c9_transversality(&both))),
        ("near-separable continuity", Box::new(c10_near_separable)),
        ("determinism", Box::new(c11_determinism)),
        ("fault injection", Box::new(|| c12_fault_injection(&both))),
    ];
    let mut failures = 0;
    for (n, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        failures += usize::from(!o.pass);
        println!("criterion {:>2} {} {name}: {}", n + 1, if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
