use super::*;
use crate::params::fixtures::*;
use std::collections::HashSet;
use std::sync::OnceLock;

struct Case {
    sol: DualSolution,
    table: PolicyTable,
}

fn case(p: ModelParams) -> Case {
    let k = derive(&p).unwrap();
    let sol = solve(&p, &k, &SolverConfig::default()).unwrap();
    let table = default_table(&sol).unwrap();
    Case { sol, table }
}

fn case_a() -> &'static Case {
    static C: OnceLock<Case> = OnceLock::new();
    C.get_or_init(|| case(set_a()))
}

fn case_b() -> &'static Case {
    static C: OnceLock<Case> = OnceLock::new();
    C.get_or_init(|| case(set_b()))
}

fn quick() -> VerifyConfig {
    VerifyConfig { monte_carlo: false, ..Default::default() }
}

#[test]
fn registry_is_sorted_unique_and_anchored() {
    let names: Vec<&str> = CHECKS.iter().map(|c| c.name).collect();
    let mut sorted = names.clone();
    sorted.sort();
    assert_eq!(names, sorted);
    assert_eq!(names.iter().collect::<HashSet<_>>().len(), names.len());
    assert!(CHECKS.iter().all(|c| !c.anchor.is_empty()));
    for required in [
        "dual.residual",
        "policy.hjb",
        "dual.legendre",
        "policy.bounds",
        "dual.single_switch",
        "policy.xhat",
        "policy.c2_pasting",
        "dual.boundary_u",
        "dual.boundary_w",
        "sim.dynkin",
        "sim.transversality",
    ] {
        assert!(names.contains(&required), "{required}");
    }
}

#[test]
fn solved_sets_pass_every_proven_check() {
    for c in [case_a(), case_b()] {
        let rep = run_suite(&c.sol, &c.table, &VerifyConfig::default());
        assert_eq!(rep.checks.len(), CHECKS.len());
        for chk in &rep.checks {
            assert_eq!(chk.status, Status::Pass, "{chk:?}");
        }
        assert_eq!(rep.overall, Status::Pass);
        assert!(rep.assumption_flags.iter().any(|f| f == "small_z_asymptote"));
    }
}

#[test]
fn skipped_monte_carlo_only_warns() {
    let c = case_a();
    let rep = run_suite(&c.sol, &c.table, &quick());
    assert_eq!(rep.overall, Status::Warn);
    for chk in &rep.checks {
        let expect = if chk.name.starts_with("sim.") { Status::Warn } else { Status::Pass };
        assert_eq!(chk.status, expect, "{chk:?}");
    }
}

#[test]
fn report_serialises_with_sorted_names() {
    let c = case_a();
    let rep = run_suite(&c.sol, &c.table, &quick());
    let text = serde_json::to_string(&rep).unwrap();
    let back: VerificationReport = serde_json::from_str(&text).unwrap();
    assert_eq!(back.checks.len(), rep.checks.len());
    assert!(rep.checks.windows(2).all(|w| w[0].name < w[1].name));
    assert!(text.contains("\"overall\":\"warn\""));
}

#[test]
fn corrupted_u_breaks_the_legendre_identity() {
    let c = case_a();
    let i = c.sol.grid.len() / 3;
    let (s, t) = inject(&c.sol, &c.table, Series::U, i, 1e-3, false);
    let rep = run_suite(&s, &t, &quick());
    assert_eq!(rep.get("dual.legendre").unwrap().status, Status::Fail);
    assert_eq!(rep.overall, Status::Fail);
}

#[test]
fn corrupted_w_breaks_the_residual() {
    let c = case_a();
    let i = c.sol.grid.len() / 3;
    let (s, t) = inject(&c.sol, &c.table, Series::W, i, 1e-3, false);
    let rep = run_suite(&s, &t, &quick());
    assert_eq!(rep.get("dual.residual").unwrap().status, Status::Fail);
}

#[test]
fn every_series_and_node_is_guarded() {
    for c in [case_a(), case_b()] {
        for series in Series::ALL {
            let n = series.len(&c.sol, &c.table);
            let mut idx: Vec<usize> = (0..n).step_by(n / 7).collect();
            idx.extend([n - 1, c.table.xhat_index(), c.sol.boundary_index()].into_iter().filter(|&i| i < n));
            for i in idx {
                let (s, t) = inject(&c.sol, &c.table, series, i, 1e-3, false);
                let rep = run_suite(&s, &t, &quick());
                assert_eq!(rep.overall, Status::Fail, "{series:?} at {i} went unnoticed");
            }
        }
    }
}

#[test]
fn unconstrained_gap_profile() {
    for c in [case_a(), case_b()] {
        let g = compare_unconstrained(&c.table);
        assert!(g.iter().all(|p| p.gap > 0.0));
        assert!(g[g.len() - 1].ratio < 1e-2);
        assert!(g[0].ratio > g[g.len() - 1].ratio);
    }
}

#[test]
fn smaller_floor_narrows_the_gap() {
    let c = case_a();
    let p = set_a().with_floor(0.01);
    let k = derive(&p).unwrap();
    let sol = solve(&p, &k, &SolverConfig::default()).unwrap();
    let x = 2.0 * c.table.xhat;
    let jez = crate::closedform::value_unconstrained(x, &p, &k).unwrap();
    let (j_full, j_half) = (value(&c.sol, x).unwrap(), value(&sol, x).unwrap());
    assert!(jez - j_half < jez - j_full);
}

#[test]
fn scaling_law_between_floors() {
    let p = set_a();
    let same = scaling_check(&p, p.a, p.a, &SolverConfig::default(), 10, 1e-12);
    assert!(same.iter().all(|c| c.status == Status::Pass), "{same:?}");
    let rep = scaling_check(&p, p.a, 2.0 * p.a, &SolverConfig::default(), 50, 1e-6);
    assert!(rep.iter().all(|c| c.status == Status::Pass), "{rep:?}");
}
