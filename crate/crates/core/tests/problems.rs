mod common;

use common::{dense, random_instance};
use stochreg_core::analysis::commutator_check;
use stochreg_core::linalg::{max_abs, svd};
use stochreg_core::problems::{
    add_noise, gen_gravity, gen_phillips, gen_shaw, normalize, precondition, precondition_noisy, smooth_solution,
    source_element, InstanceBundle, ProblemKind,
};
use stochreg_core::Error;

fn phillips_cell(lo: f64, hi: f64) -> f64 {
    let lo = lo.max(-3.0);
    let hi = hi.min(3.0);
    if hi <= lo {
        return 0.0;
    }
    let k = std::f64::consts::PI / 3.0;
    (hi - lo) + ((k * hi).sin() - (k * lo).sin()) / k
}

#[test]
fn phillips_entries_match_analytic_integrals() {
    let n = 40;
    let p = gen_phillips(n).unwrap();
    let h = 12.0 / n as f64;
    for i in 0..n {
        for j in 0..n {
            let s = -6.0 + (i as f64 + 0.5) * h;
            let t0 = -6.0 + j as f64 * h;
            let exact = phillips_cell(s - t0 - h, s - t0);
            assert!((p.a.get(i, j) - exact).abs() <= 1e-14, "({i}, {j})");
        }
    }
}

#[test]
fn phillips_shape_and_support() {
    assert!(matches!(gen_phillips(10), Err(Error::InvalidInput(_))));
    let n = 24;
    let p = gen_phillips(n).unwrap();
    let h = 12.0 / n as f64;
    for i in 0..n {
        for j in 0..n {
            let off = (i as f64 - j as f64).abs() * h;
            if off >= 3.0 + 0.5 * h {
                assert_eq!(p.a.get(i, j), 0.0);
            } else {
                assert!(p.a.get(i, j) > 0.0);
            }
            assert_eq!(p.a.get(i, j), p.a.get(j, i));
        }
    }
    // The solution is φ at the grid midpoints; φ(0) = 2 is its maximum.
    assert_eq!(stochreg_core::problems::phillips_phi(0.0), 2.0);
    assert!(p.x_dag.iter().all(|&v| (0.0..=2.0).contains(&v)));
}

#[test]
fn gram_matches_naive_product() {
    let (inst, _) = random_instance(1, 7, 4, 0.0);
    let b = inst.gram().unwrap().matrix();
    for j in 0..4 {
        for k in 0..4 {
            let mut s = 0.0;
            for i in 0..7 {
                s += inst.a.get(i, j) * inst.a.get(i, k);
            }
            assert!((b[(j, k)] - s / 7.0).abs() <= 1e-14 * (1.0 + s.abs()));
        }
    }
    let ev = inst.gram().unwrap().eigenvalues();
    assert!(ev.windows(2).all(|w| w[0] >= w[1]));
    assert!((ev.iter().sum::<f64>() - b.trace()).abs() < 1e-12);
}

#[test]
fn shaw_is_severely_ill_posed() {
    let p = gen_shaw(64).unwrap();
    let f = svd(&p.a, 0.0).unwrap();
    assert!(f.sigma[20] / f.sigma[0] < 1e-10, "{:?}", &f.sigma[..22]);
    assert!(f.sigma[5] / f.sigma[0] > 1e-6);
    let recon = f.reconstruct();
    assert!((recon - dense(&p.a)).norm() < 1e-12 * dense(&p.a).norm());
}

#[test]
fn gravity_kernel_is_symmetric_and_positive() {
    let p = gen_gravity(16, 0.25).unwrap();
    for i in 0..16 {
        for j in 0..16 {
            assert!(p.a.get(i, j) > 0.0);
            assert_eq!(p.a.get(i, j), p.a.get(j, i));
        }
    }
    assert!(gen_gravity(16, 0.0).is_err());
}

#[test]
fn smoothing_normalizes_and_has_source_element() {
    for kind in [ProblemKind::Shaw, ProblemKind::Gravity, ProblemKind::Phillips] {
        let p = kind.generate(32).unwrap();
        for nu in [0.0, 1.0, 2.0] {
            let s = smooth_solution(&p, nu).unwrap();
            assert!((max_abs(&s.x_dag) - 1.0).abs() < 1e-15);
            let w = source_element(&s, nu).unwrap();
            let back = s.gram().unwrap().power_apply(&w.w, nu);
            let gap: f64 = back.iter().zip(&s.x_dag).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(gap < 1e-8, "{kind:?} nu={nu}: {gap}");
        }
    }
}

#[test]
fn rough_solution_violates_high_smoothness() {
    let p = gen_shaw(32).unwrap();
    let r = source_element(&p, 3.0);
    assert!(matches!(r, Err(Error::RangeViolation { .. })), "{r:?}");
}

#[test]
fn noise_is_seeded_and_scaled() {
    let p = gen_shaw(200).unwrap();
    let a = add_noise(&p, 1e-2, 7).unwrap();
    let b = add_noise(&p, 1e-2, 7).unwrap();
    assert_eq!(a.y_delta, b.y_delta);
    assert_ne!(a.y_delta, add_noise(&p, 1e-2, 8).unwrap().y_delta);
    assert!((a.delta_bar - a.delta / (200f64).sqrt()).abs() < 1e-15);
    // δ̄ ≈ ε‖y†‖_∞ for Gaussian noise.
    let expected = 1e-2 * max_abs(&p.y_dag);
    assert!((a.delta_bar / expected - 1.0).abs() < 0.2);
}

#[test]
fn preconditioning_preserves_gram_and_residuals() {
    let (inst, y) = random_instance(2, 8, 3, 0.1);
    let (pre, ypre) = precondition(&inst, &y).unwrap();
    assert!(pre.preconditioned);
    let b0 = inst.gram().unwrap().matrix();
    let b1 = pre.gram().unwrap().matrix();
    assert!((b0 - b1).norm() <= 1e-12 * b0.norm());
    assert!(commutator_check(&pre.a) <= 1e-12);
    for i in 3..8 {
        assert!(pre.a.row(i).iter().all(|&v| v == 0.0));
    }
    let x = [0.3, -1.0, 2.0];
    let r0: f64 = inst.a.apply(&x).iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum();
    let r1: f64 = pre.a.apply(&x).iter().zip(&ypre).map(|(a, b)| (a - b).powi(2)).sum();
    assert!((r0 - r1).abs() <= 1e-12 * r0);
    let noise = add_noise(&inst, 0.05, 3).unwrap();
    let (_, pn) = precondition_noisy(&inst, &noise).unwrap();
    assert!((pn.delta - noise.delta).abs() <= 1e-12 * noise.delta);
}

#[test]
fn normalization_gives_unit_gram_norm() {
    let p = gen_phillips(16).unwrap();
    let q = normalize(&p).unwrap();
    assert!((q.gram().unwrap().spectral_norm() - 1.0).abs() < 1e-13);
}

#[test]
fn bundle_round_trip_is_exact() {
    let p = smooth_solution(&gen_gravity(12, 0.25).unwrap(), 1.0).unwrap();
    let noise = add_noise(&p, 1e-3, 11).unwrap();
    let b = InstanceBundle::new(p, noise);
    let text = b.to_json().unwrap();
    let back = InstanceBundle::from_json(&text).unwrap();
    assert_eq!(back.instance.a, b.instance.a);
    assert_eq!(back.instance.x_dag, b.instance.x_dag);
    assert_eq!(back.noise.y_delta, b.noise.y_delta);
    assert_eq!(back.to_json().unwrap(), text);
    let bad = text.replacen("\"schema_version\": 1", "\"schema_version\": 99", 1);
    assert!(InstanceBundle::from_json(&bad).is_err());
}
