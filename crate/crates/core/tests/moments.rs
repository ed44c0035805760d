mod common;

use common::{brute_force_moments, norm, random_instance, random_preconditioned};
use nalgebra::DVector;
use stochreg_core::analysis::{
    closed_form_mean_iterate, enumerate_exact_moments, enumerate_exact_moments_with, mc_moments,
    sgd_variance_terms, svrg_variance_terms, variance_compare, EnumerationOptions, R1Spec, R2Spec,
};
use stochreg_core::solvers::SolverConfig;
use stochreg_core::{Error, Method};

fn step(inst: &stochreg_core::ProblemInstance) -> f64 {
    0.7 * inst.gram().unwrap().admissible_step()
}

#[test]
fn enumerated_mean_matches_closed_form_and_brute_force() {
    for (seed, n, m, mf, k) in [(1, 2, 3, 2, 2), (2, 3, 2, 3, 1), (3, 3, 3, 1, 3), (4, 2, 2, 3, 3)] {
        let (inst, y) = random_instance(seed, n, m, 0.3);
        let c0 = step(&inst);
        let cf = closed_form_mean_iterate(&inst, &y, c0, mf, k).unwrap();
        let tol = 1e-11 * (1.0 + norm(&inst.x_dag));
        for method in [Method::Sgd, Method::Svrg] {
            let ex = enumerate_exact_moments(&inst, &y, c0, mf, k, method).unwrap();
            let d: Vec<f64> = ex.mean.iter().zip(&cf).map(|(a, b)| a - b).collect();
            assert!(norm(&d) <= tol, "{method} seed {seed}: {}", norm(&d));
            let (bf, _) = brute_force_moments(&inst, &y, c0, mf, k * mf, method);
            let d: Vec<f64> = ex.mean.iter().zip(bf.iter()).map(|(a, b)| a - b).collect();
            assert!(norm(&d) <= tol, "{method} seed {seed} brute force: {}", norm(&d));
        }
    }
}

#[test]
fn enumerated_covariance_matches_brute_force() {
    let (inst, y) = random_instance(21, 3, 2, 0.2);
    let c0 = step(&inst);
    for method in [Method::Sgd, Method::Svrg] {
        let ex = enumerate_exact_moments(&inst, &y, c0, 2, 2, method).unwrap();
        let (mean, second) = brute_force_moments(&inst, &y, c0, 2, 4, method);
        let cov = second - &mean * mean.transpose();
        let gap = (&ex.covariance - &cov).norm();
        assert!(gap <= 1e-12 * (1.0 + cov.norm()), "{method}: {gap}");
        assert!((ex.variance_trace - cov.trace()).abs() <= 1e-12 * (1.0 + cov.trace()));
        let bias: f64 = mean.iter().zip(&inst.x_dag).map(|(a, b)| (a - b).powi(2)).sum();
        assert!((ex.mse - (bias + cov.trace())).abs() <= 1e-11 * (1.0 + ex.mse));
    }
}

#[test]
fn lumping_does_not_change_moments() {
    let (inst, y) = random_preconditioned(5, 6, 2, 0.1);
    let c0 = step(&inst);
    let lumped = enumerate_exact_moments(&inst, &y, c0, 2, 2, Method::Sgd).unwrap();
    let plain = enumerate_exact_moments_with(
        &inst,
        &y,
        c0,
        2,
        2,
        Method::Sgd,
        EnumerationOptions { lump: false, ..Default::default() },
    )
    .unwrap();
    assert!(lumped.evaluated_paths < plain.evaluated_paths);
    let d: Vec<f64> = lumped.mean.iter().zip(&plain.mean).map(|(a, b)| a - b).collect();
    assert!(norm(&d) < 1e-13);
    assert!((lumped.variance_trace - plain.variance_trace).abs() < 1e-13);
}

#[test]
fn path_budget_is_enforced() {
    let (inst, y) = random_instance(6, 3, 3, 0.1);
    let opts = EnumerationOptions { budget: 100, lump: false };
    let r = enumerate_exact_moments_with(&inst, &y, step(&inst), 3, 2, Method::Svrg, opts);
    assert!(matches!(r, Err(Error::PathBudget { .. })));
}

#[test]
fn monte_carlo_agrees_with_enumeration() {
    let (inst, y) = random_instance(7, 3, 2, 0.3);
    let c0 = step(&inst);
    let ex = enumerate_exact_moments(&inst, &y, c0, 1, 4, Method::Sgd).unwrap();
    let cfg = SolverConfig::sgd(c0).seed(3);
    // 4 updates = 4/3 epochs.
    let rep = mc_moments(&inst, &y, &cfg, 4000, &[4.0 / 3.0]).unwrap();
    let row = rep.rows.last().unwrap();
    assert_eq!(row.iteration, 4);
    assert!((row.mse - ex.mse).abs() <= 4.0 * row.mse_standard_error);
    assert!((row.variance - ex.variance_trace).abs() <= 0.1 * ex.variance_trace);
}

#[test]
fn landweber_moments_are_deterministic() {
    let (inst, y) = random_instance(8, 5, 3, 0.3);
    let c0 = 0.5 / inst.gram().unwrap().spectral_norm();
    let rep = mc_moments(&inst, &y, &SolverConfig::landweber(c0), 10, &[0.0, 3.0]).unwrap();
    assert_eq!(rep.rows.len(), 2);
    assert!(rep.rows.iter().all(|r| r.variance == 0.0 && r.run_count == 10));
}

fn r1_family() -> Vec<R1Spec> {
    vec![R1Spec::identity(), R1Spec::b(1.0), R1Spec::m0(2.0)]
}

fn enumerated(
    inst: &stochreg_core::ProblemInstance,
    y: &[f64],
    c0: f64,
    mf: usize,
    k: usize,
    method: Method,
    r1: &R1Spec,
    r2: R2Spec,
) -> f64 {
    let ex = enumerate_exact_moments(inst, y, c0, mf, k, method).unwrap();
    let g = inst.gram().unwrap();
    let bz = g.pinv_apply(&inst.zeta(y));
    let r2v: DVector<f64> = r2.vector(&bz);
    ex.weighted_value(&r1.matrix(g, c0), &inst.x_dag, &bz, &r2v)
}

#[test]
fn svrg_decomposition_is_exact() {
    for (seed, n, m, mf, k) in [(31, 3, 2, 2, 2), (32, 2, 3, 3, 1), (33, 3, 3, 2, 3)] {
        let (inst, y) = random_preconditioned(seed, n, m, 0.2);
        let c0 = step(&inst);
        for r1 in r1_family() {
            for r2 in [R2Spec::Zero, R2Spec::BinvZeta] {
                let t = svrg_variance_terms(&inst, &y, c0, mf, k, &r1, r2, Default::default()).unwrap();
                let e = enumerated(&inst, &y, c0, mf, k, Method::Svrg, &r1, r2);
                assert!((t.total() - e).abs() <= 1e-11 * e.abs().max(1e-300), "{r1} {r2}: {} vs {e}", t.total());
            }
        }
    }
}

#[test]
fn sgd_decomposition_with_mixed_terms_is_exact() {
    for (seed, n, m, mf, k) in [(41, 3, 2, 2, 2), (42, 2, 3, 3, 1), (43, 3, 3, 2, 3)] {
        let (inst, y) = random_preconditioned(seed, n, m, 0.2);
        let c0 = step(&inst);
        for r1 in r1_family() {
            for r2 in [R2Spec::Zero, R2Spec::BinvZeta] {
                let t = sgd_variance_terms(&inst, &y, c0, mf, k, &r1, r2, Default::default()).unwrap();
                let e = enumerated(&inst, &y, c0, mf, k, Method::Sgd, &r1, r2);
                assert!((t.total() - e).abs() <= 1e-11 * e.abs(), "{r1} {r2}: {} vs {e}", t.total());
            }
        }
    }
}

#[test]
fn sgd_mixed_terms_vanish_for_single_inner_step() {
    let (inst, y) = random_preconditioned(44, 3, 2, 0.2);
    let c0 = step(&inst);
    let t = sgd_variance_terms(&inst, &y, c0, 1, 3, &R1Spec::identity(), R2Spec::Zero, Default::default()).unwrap();
    assert!(t.cross.iter().all(|&c| c == 0.0));
    let e = enumerated(&inst, &y, c0, 1, 3, Method::Sgd, &R1Spec::identity(), R2Spec::Zero);
    assert!((t.without_cross() - e).abs() <= 1e-11 * e);
}

#[test]
fn decompositions_require_commuting_rows() {
    let (inst, y) = random_instance(45, 3, 2, 0.2);
    let r = svrg_variance_terms(&inst, &y, step(&inst), 2, 1, &R1Spec::identity(), R2Spec::Zero, Default::default());
    assert!(matches!(r, Err(Error::Assumption(_))));
}

#[test]
fn svrg_is_not_worse_under_comparison_condition() {
    // Zero-padded preconditioned systems with many rows satisfy the comparison
    // condition for M = 2 and small steps.
    let (inst, y) = random_preconditioned(51, 24, 2, 0.3);
    let c0 = 0.05 * inst.gram().unwrap().admissible_step();
    for k in 1..=3 {
        for r1 in r1_family() {
            for r2 in [R2Spec::Zero, R2Spec::BinvZeta] {
                let v = variance_compare(&inst, &y, c0, 2, k, &r1, r2, Default::default()).unwrap();
                assert!(v.condition_holds);
                assert!(v.ordered, "K={k} {r1} {r2}: {} > {}", v.svrg_value, v.sgd_value);
            }
        }
    }
}
