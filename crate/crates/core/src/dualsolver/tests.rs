use super::*;
use crate::interp::hermite;
use crate::closedform::{h_unconstrained_derivs, value_at_floor};
use crate::params::fixtures::*;
use proptest::prelude::*;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn near_separable() -> ModelParams {
    ModelParams { eic: 2.001, ..set_a() }
}

#[test]
fn constrained_fixed_point_is_stationary() {
    for p in [set_a(), set_b()] {
        let k = derive(&p).unwrap();
        let u0 = p.delta.powf(-k.nu);
        let (du, dw) = rhs(3.0, u0, 1.0 / p.r, Region::Constrained, &p, &k).unwrap();
        assert!(du.abs() < 1e-12 && dw.abs() < 1e-12, "{du} {dw}");
    }
}

#[test]
fn unconstrained_closed_form_satisfies_rhs() {
    for p in [set_a(), set_b()] {
        let p = p.with_floor(0.0);
        let k = derive(&p).unwrap();
        let c = dual_coefficient(&p, &k);
        let e = 1.0 - 1.0 / p.risk_aversion;
        for z in [1e-3f64, 0.3, 2.0, 50.0] {
            let u = c * z.powf(e);
            let w = c * z.powf(-1.0 / p.risk_aversion);
            let (du, dw) = rhs(z, u, w, Region::Unconstrained, &p, &k).unwrap();
            assert!(rel(du, c * e * z.powf(e - 1.0)) < 1e-12);
            assert!(rel(dw, -c / p.risk_aversion * z.powf(-1.0 / p.risk_aversion - 1.0)) < 1e-12);
        }
    }
}

#[test]
fn separable_sources() {
    // rho = 0 turns u^rho into one on both branches
    let p = ModelParams { eic: 2.0, ..set_a() };
    let k = derive(&p).unwrap();
    assert_eq!(k.rho, 0.0);
    let (z, u, w) = (0.7, 3.0, 60.0);
    let s = p.eic;
    for (branch, source) in [
        (Region::Constrained, 1.0 / (1.0 - s) - z),
        (Region::Unconstrained, s / (1.0 - s) * z.powf((s - 1.0) / s)),
    ] {
        let (du, _) = rhs(z, u, w, branch, &p, &k).unwrap();
        let expect = (-p.delta * k.nu * u + (1.0 - p.risk_aversion) * (p.r * z * w + source)) / (k.kappa * z);
        assert!(rel(du, expect) < 1e-14);
    }
}

#[test]
fn rhs_rejects_nonpositive_u() {
    let p = set_a();
    let k = derive(&p).unwrap();
    assert!(matches!(rhs(1.0, 0.0, 60.0, Region::Constrained, &p, &k), Err(SolverError::PositivityLost { .. })));
}

#[test]
fn branch_classification_examples() {
    let k = derive(&set_a()).unwrap();
    assert_eq!(branch_classify(1.0, 2.0, &k, 1e-9), Region::Constrained);
    assert_eq!(branch_classify(1.0, 0.5, &k, 1e-9), Region::Unconstrained);
    let z: f64 = 0.37;
    assert_eq!(branch_classify(z, z.powf(1.0 / k.rho), &k, 1e-9), Region::Boundary);
}

#[test]
fn residual_vanishes_on_closed_form() {
    for p in [set_a(), set_b()] {
        let p = p.with_floor(0.0);
        let k = derive(&p).unwrap();
        for i in 0..200 {
            let z = 10f64.powf(-4.0 + 8.0 * i as f64 / 199.0);
            let (h, hp, hpp) = h_unconstrained_derivs(z, &p, &k).unwrap();
            let r = residual(h, hp, hpp, z, Region::Unconstrained, &p, &k).unwrap();
            assert!(r.abs() < 1e-12, "z = {z}: {r}");
        }
    }
}

#[test]
fn floor_asymptote_is_an_exact_constrained_solution() {
    let p = set_a();
    let k = derive(&p).unwrap();
    let d = p.delta.powf(-k.nu);
    let one_r = 1.0 - p.risk_aversion;
    for z in [1e-2, 1.0, 1e2, 1e4, 1e6, 1e8] {
        let h = d / one_r - z / p.r;
        let r = residual(h, -1.0 / p.r, 0.0, z, Region::Constrained, &p, &k).unwrap();
        assert!(r.abs() < 1e-12, "z = {z}: {r}");
    }
}

#[test]
fn residual_detects_one_percent_perturbation() {
    let p = set_a().with_floor(0.0);
    let k = derive(&p).unwrap();
    let z = 0.5;
    let (h, hp, hpp) = h_unconstrained_derivs(z, &p, &k).unwrap();
    let r = residual(1.01 * h, hp, hpp, z, Region::Unconstrained, &p, &k).unwrap();
    assert!(r.abs() > 1e-3, "{r}");
}

#[test]
fn saddle_eigenpair() {
    for p in [set_a(), set_b()] {
        let k = derive(&p).unwrap();
        let m = Model::new(&p, &k);
        let (lam, v) = m.saddle();
        assert!(lam < 0.0 && lam > -p.delta / k.kappa);
        let jac = [
            [-p.delta / k.kappa, p.r / k.kappa],
            [-p.delta / k.kappa, 1.0 + p.r / k.kappa],
        ];
        for row in 0..2 {
            let mv = jac[row][0] * v[0] + jac[row][1] * v[1];
            assert!((mv - lam * v[row]).abs() < 1e-12);
        }
        // linearisation of the nonlinear field along the eigenvector
        let eps = 1e-7;
        let f = m.field(5.0, &[eps * v[0], eps * v[1]], Region::Constrained).unwrap();
        assert!(rel(f[0], lam * eps * v[0]) < 1e-5);
    }
    let (lam_a, _) = Model::new(&set_a(), &derive(&set_a()).unwrap()).saddle();
    assert!((lam_a + 0.697).abs() < 1e-3, "{lam_a}");
}

#[test]
fn growing_mode_matches_power_law_exponents() {
    for p in [set_a(), set_b(), near_separable()] {
        let k = derive(&p).unwrap();
        let m = Model::new(&p, &k);
        let (lam, v, b) = m.bad_mode().unwrap();
        // z^m modes: kappa m^2 + (dnu - r - kappa - rho nu eta) m + (rho nu eta - dnu) = 0
        let (a2, a1, a0) = (
            k.kappa,
            m.dnu - p.r - k.kappa - k.rho * k.nu * k.eta,
            k.rho * k.nu * k.eta - m.dnu,
        );
        let disc = (a1 * a1 - 4.0 * a2 * a0).sqrt();
        let m_minus = (-a1 - disc) / (2.0 * a2);
        assert!((lam - (m_minus - m.e)).abs() < 1e-10, "{lam} vs {}", m_minus - m.e);
        assert!(lam < 0.0);
        let j = m.scaled_jacobian();
        let jv = [j[0][0] * v[0] + j[0][1] * v[1], j[1][0] * v[0] + j[1][1] * v[1]];
        assert!((jv[0] - lam * v[0]).abs() < 1e-10 && (jv[1] - lam * v[1]).abs() < 1e-10);
        let bj = [b[0] * j[0][0] + b[1] * j[1][0], b[0] * j[0][1] + b[1] * j[1][1]];
        assert!((bj[0] - lam * b[0]).abs() < 1e-10 && (bj[1] - lam * b[1]).abs() < 1e-10);
        assert!((b[0] * v[0] + b[1] * v[1] - 1.0).abs() < 1e-12);
    }
}

#[test]
fn fornberg_weights_reproduce_polynomials() {
    let xs = [0.0, 0.3, 0.7, 1.2, 2.0];
    let w1 = fd_weights(0.5, &xs, 1);
    let w2 = fd_weights(0.5, &xs, 2);
    let f = |x: f64| 1.0 + 2.0 * x - x * x + 0.5 * x.powi(3) - 0.1 * x.powi(4);
    let d1: f64 = xs.iter().zip(&w1).map(|(x, w)| w * f(*x)).sum();
    let d2: f64 = xs.iter().zip(&w2).map(|(x, w)| w * f(*x)).sum();
    let x: f64 = 0.5;
    assert!((d1 - (2.0 - 2.0 * x + 1.5 * x * x - 0.4 * x.powi(3))).abs() < 1e-12);
    assert!((d2 - (-2.0 + 3.0 * x - 1.2 * x * x)).abs() < 1e-11);
}

#[test]
fn stencils_stay_on_one_side() {
    let t: Vec<f64> = (0..30).map(|i| i as f64 * 0.1).collect();
    let mut t2 = t.clone();
    t2.insert(13, 1.25);
    let st = stencils(&t2, 13);
    for (i, s) in st.iter().enumerate() {
        assert!(s.len() >= 5);
        match i.cmp(&13) {
            std::cmp::Ordering::Less => assert!(s.iter().all(|&j| j < 13)),
            std::cmp::Ordering::Greater => assert!(s.iter().all(|&j| j > 13)),
            std::cmp::Ordering::Equal => assert!(s.iter().all(|&j| j >= 13)),
        }
    }
}

#[test]
fn hermite_interpolates_cubics_exactly() {
    let f = |t: f64| 0.3 * t.powi(3) - t + 2.0;
    let df = |t: f64| 0.9 * t * t - 1.0;
    let (v, d) = hermite(1.0, 1.5, f(1.0), f(1.5), df(1.0), df(1.5), 1.2);
    assert!((v - f(1.2)).abs() < 1e-14);
    assert!((d - df(1.2)).abs() < 1e-13);
}

fn solved(p: &ModelParams) -> DualSolution {
    let k = derive(p).unwrap();
    solve(p, &k, &SolverConfig::default()).unwrap()
}

#[test]
fn dense_output_round_trip_and_node_agreement() {
    for p in [set_a(), set_b()] {
        let sol = solved(&p);
        for i in (0..sol.grid.len()).step_by(97) {
            let pt = sol.at(sol.grid[i]).unwrap();
            assert!(rel(pt.u, sol.u[i]) < 1e-12);
            assert!(rel(pt.w, sol.w[i]) < 1e-12);
            assert!(rel(pt.hpp, sol.node_hpp(i)) < 1e-9);
            let z = sol.z_of_excess(sol.node_excess(i)).unwrap();
            assert!(rel(z, sol.grid[i]) < 1e-10, "{z} vs {}", sol.grid[i]);
        }
        for j in 0..50 {
            let z = (sol.z_min().ln() + (sol.z_max() / sol.z_min()).ln() * (j as f64 + 0.37) / 50.0).exp();
            let pt = sol.at(z).unwrap();
            assert!(rel(sol.z_of_excess(pt.excess).unwrap(), z) < 1e-10);
        }
        assert!(sol.at(sol.z_min() * 0.5).is_err());
        assert!(sol.at(sol.z_max() * 2.0).is_err());
    }
}

#[test]
fn refuses_zero_floor() {
    let p = set_a().with_floor(0.0);
    let k = derive(&p).unwrap();
    assert!(matches!(
        solve(&p, &k, &SolverConfig::default()),
        Err(SolverError::ConditionNotApplicable(_))
    ));
}

#[test]
fn refuses_bad_config() {
    let p = set_a();
    let k = derive(&p).unwrap();
    let cfg = SolverConfig { z_min: 10.0, z_max: 1.0, ..Default::default() };
    assert!(matches!(solve(&p, &k, &cfg), Err(SolverError::InvalidConfig(_))));
}

#[test]
fn floor_value_is_the_large_z_limit() {
    let p = set_a();
    let sol = solved(&p);
    let k = derive(&p).unwrap();
    let n = sol.grid.len();
    let j_floor = value_at_floor(&p, &k).unwrap().value;
    let j_end = p.a.powf(1.0 - p.risk_aversion) * sol.u[n - 1] / (1.0 - p.risk_aversion);
    assert!(rel(j_end, j_floor) < 1e-6);
}

#[test]
fn near_separable_switch_is_close_to_one() {
    let sol = solved(&near_separable());
    assert!((sol.zhat - 1.0).abs() < 0.05, "{}", sol.zhat);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn switch_function_decreasing_for_r_above_one(i in 0usize..3999) {
        // u^rho - z strictly decreasing in z on the solved grid
        thread_local!(static SOL: DualSolution = solved(&set_a()));
        SOL.with(|sol| {
            let rho = sol.consts.rho;
            let g = |j: usize| sol.u[j].powf(rho) - sol.grid[j];
            prop_assert!(g(i + 1) < g(i));
            Ok(())
        })?;
    }
}

#[test]
fn grid_doubling_moves_the_switch_point_very_little() {
    for p in [set_a(), set_b()] {
        let k = derive(&p).unwrap();
        let base = SolverConfig { n_nodes: 2000, ..Default::default() };
        let fine = SolverConfig { n_nodes: 4000, ..Default::default() };
        let s1 = solve(&p, &k, &base).unwrap();
        let s2 = solve(&p, &k, &fine).unwrap();
        assert!(rel(s1.zhat, s2.zhat) < 1e-6, "{} {}", s1.zhat, s2.zhat);
        for j in 0..40 {
            let z = (s1.z_min().ln() + (s1.z_max() / s1.z_min()).ln() * (j as f64 + 0.5) / 40.0).exp();
            let (a, b) = (s1.at(z).unwrap(), s2.at(z).unwrap());
            assert!(rel(a.u, b.u) < 1e-8 && rel(a.w, b.w) < 1e-8, "z={z}");
        }
    }
}

#[test]
fn residual_is_small_between_nodes() {
    for p in [set_a(), set_b()] {
        let sol = solved(&p);
        let k = sol.consts;
        for i in (0..sol.grid.len() - 1).step_by(13) {
            let z = (sol.grid[i] * sol.grid[i + 1]).sqrt();
            let pt = sol.at(z).unwrap();
            let r = residual(pt.h, -pt.w, pt.hpp, z, pt.region, &p, &k).unwrap();
            assert!(r.abs() < 1e-9, "z={z}: {r}");
            // second derivative from the interpolant of w agrees with the ODE value
            let hpp = sol.hpp_interp(z).unwrap();
            assert!(rel(hpp, pt.hpp) < 1e-6, "z={z}: {hpp} vs {}", pt.hpp);
        }
    }
}

#[test]
fn collocation_agrees_with_shooting() {
    for p in [set_a(), set_b()] {
        let k = derive(&p).unwrap();
        let shoot = solved(&p);
        let cfg = SolverConfig { method: Method::Collocation, ..Default::default() };
        let coll = solve(&p, &k, &cfg).unwrap();
        assert_eq!(coll.method, Method::Collocation);
        assert!(rel(coll.zhat, shoot.zhat) < 1e-6, "{} {}", coll.zhat, shoot.zhat);
        for i in (0..coll.grid.len()).step_by(50) {
            let z = coll.grid[i];
            let s = shoot.at(z).unwrap();
            assert!(rel(coll.u[i], s.u) < 1e-6 && rel(coll.w[i], s.w) < 1e-6, "z={z}");
        }
    }
}

#[test]
fn collocation_converges_at_high_order() {
    let p = set_a();
    let k = derive(&p).unwrap();
    let reference = solved(&p);
    let errs: Vec<f64> = [250, 500, 1000]
        .iter()
        .map(|&n| {
            let cfg = SolverConfig { method: Method::Collocation, n_nodes: n, tol_residual: 1.0, ..Default::default() };
            let sol = solve(&p, &k, &cfg).unwrap();
            rel(sol.zhat, reference.zhat)
        })
        .collect();
    // fourth order stencils; the kink at the switch limits the observed rate
    for e in errs.windows(2) {
        assert!(e[1] < e[0] / 3.0, "{errs:?}");
    }
}

#[test]
fn centered_differences_of_w_are_second_order() {
    let p = set_a();
    let k = derive(&p).unwrap();
    let err = |n: usize, step: usize| {
        let sol = solve(&p, &k, &SolverConfig { n_nodes: n, ..Default::default() }).unwrap();
        let dt = (sol.z_max() / sol.z_min()).ln() / (n - 1) as f64;
        let th = sol.zhat.ln();
        let mut worst = 0.0f64;
        // nodes shared by both grids, away from the switch and the ends
        for i in (step..sol.grid.len() - step).step_by(step) {
            let t = sol.grid[i].ln();
            if (t - th).abs() < 12.0 * dt * step as f64 || i < 4 * step || i + 4 * step > sol.grid.len() {
                continue;
            }
            // differences of w - 1/r avoid cancellation where w is close to 1/r
            let fd = (sol.node_excess(i + 1) - sol.node_excess(i - 1)) / (sol.grid[i + 1] - sol.grid[i - 1]);
            worst = worst.max(rel(fd, -sol.node_hpp(i)));
        }
        worst
    };
    let coarse = err(1001, 1);
    let fine = err(2001, 2);
    let ratio = coarse / fine;
    assert!((3.5..4.5).contains(&ratio), "{coarse} {fine} {ratio}");
}

#[test]
fn strong_risk_aversion_is_matched_at_the_switch() {
    // end-point shooting lands on a runaway sign change for these sets
    for p in [
        ModelParams { risk_aversion: 4.0, eic: 6.0, ..set_a() },
        ModelParams { mu: 0.068, r: 0.018, delta: 0.036, ..set_a() },
    ] {
        let sol = solved(&p);
        assert_eq!(sol.region.iter().filter(|r| **r == Region::Boundary).count(), 1);
        assert!(sol.residual_sup <= 1e-6 && sol.boundary_u_dev <= 1e-4 && sol.boundary_w_dev <= 1e-4);
        let m = Model::new(&p, &sol.consts);
        let d = &sol.dense;
        let ode = Dopri5 { rtol: 1e-11, ..Default::default() };
        let (t_hat, y_hat) = (d.t[d.ihat], [d.p[d.ihat], d.q[d.ihat]]);
        assert!(switch_mismatch(&m, &ode, sol.grid[0].ln(), t_hat, &y_hat).unwrap().abs() < 1e-8);
        let fine = solve(&p, &sol.consts, &SolverConfig { n_nodes: 8000, ..Default::default() }).unwrap();
        assert!(rel(fine.zhat, sol.zhat) < 1e-6);
    }
}
