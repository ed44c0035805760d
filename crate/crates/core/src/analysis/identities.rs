//! Structural identities of the iterations, checked numerically: the
//! step-sum identity, orthogonality of the inner-loop increments, the
//! one-outer-loop error recursion, commutation of row outer products and the
//! `(n - 1)` second-moment identities.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::decomposition::PathAlgebra;
use super::enumerate::{expect_over_paths, EnumerationOptions};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm_sq, one_minus_pow, DesignMatrix, GramOperator};
use crate::problems::ProblemInstance;
use crate::rng::IndexStream;
use crate::solvers::{full_gradient, svrg_step, Method};

/// Largest `‖[a_i a_iᵗ, a_j a_jᵗ]‖_F` over row pairs, relative to `max_i ‖a_i‖⁴`.
pub fn commutator_check(a: &DesignMatrix) -> f64 {
    let n = a.nrows();
    let scale = a.max_row_norm_sq().powi(2);
    if scale == 0.0 {
        return 0.0;
    }
    let norms: Vec<f64> = (0..n).map(|i| a.row_norm_sq(i)).collect();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            // [a aᵗ, b bᵗ] = (a·b)(a bᵗ - b aᵗ), ‖a bᵗ - b aᵗ‖_F² = 2(‖a‖²‖b‖² - (a·b)²).
            let ab = dot(a.row(i), a.row(j));
            let skew = (2.0 * (norms[i] * norms[j] - ab * ab)).max(0.0).sqrt();
            worst = worst.max(ab.abs() * skew);
        }
    }
    worst / scale
}

/// Relative deviation between `c0 Σ_{i<j} M0^i v` (repeated multiplication)
/// and `(I - M0^j) B⁻¹ v` (spectral), for `v` projected onto the range of `B`.
pub fn step_sum_identity_check(gram: &GramOperator, c0: f64, j: usize, v: &[f64]) -> Result<f64> {
    if !(c0 > 0.0) {
        return Err(Error::invalid("c0 must be positive"));
    }
    let v = gram.apply_fn(v, |_, s| if s { 1.0 } else { 0.0 });
    let m0 = DMatrix::<f64>::identity(gram.dim(), gram.dim()) - gram.matrix() * c0;
    let mut u = DVector::from_column_slice(&v);
    let mut acc = DVector::zeros(v.len());
    for _ in 0..j {
        acc += &u;
        u = &m0 * u;
    }
    let lhs = acc * c0;
    let rhs = gram.apply_fn(&v, |l, s| if s { one_minus_pow(c0 * l, j as u32) / l } else { 0.0 });
    let rhs = DVector::from_vec(rhs);
    let scale = lhs.norm().max(rhs.norm()).max(f64::MIN_POSITIVE);
    Ok((lhs - rhs).norm() / scale)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NMinusOneReport {
    /// `E‖X N_j v‖²` and `(n - 1)‖X B v‖²`.
    pub lhs_n: f64,
    pub rhs_n: f64,
    /// `E‖X (ζ_j - ζ)‖²` and `(n - 1)‖X ζ‖²`.
    pub lhs_zeta: f64,
    pub rhs_zeta: f64,
}

impl NMinusOneReport {
    pub fn max_relative_gap(&self) -> f64 {
        let g = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE);
        g(self.lhs_n, self.rhs_n).max(g(self.lhs_zeta, self.rhs_zeta))
    }
}

/// For `X = V diag(d) Vᵗ`, with `V` the normalized nonzero rows of a
/// preconditioned `A` (one entry of `d` per nonzero row, in row order),
/// evaluates both sides of the two `(n - 1)` identities exactly over the
/// single random index.
pub fn lemma_n_minus_one_check(inst: &ProblemInstance, y: &[f64], d: &[f64], v: &[f64]) -> Result<NMinusOneReport> {
    let n = inst.n();
    let m = inst.m();
    let nonzero: Vec<usize> = (0..n).filter(|&i| inst.a.row_norm_sq(i) > 0.0).collect();
    if d.len() != nonzero.len() {
        return Err(Error::invalid(format!(
            "expected {} diagonal entries (one per nonzero row), got {}",
            nonzero.len(),
            d.len()
        )));
    }
    if v.len() != m || y.len() != n {
        return Err(Error::invalid("vector lengths do not match A"));
    }
    let mut x = DMatrix::<f64>::zeros(m, m);
    for (&i, &di) in nonzero.iter().zip(d) {
        let row = DVector::from_column_slice(inst.a.row(i));
        let u = &row / norm_sq(inst.a.row(i)).sqrt();
        x += &u * u.transpose() * di;
    }
    let gram = inst.gram()?;
    let b = gram.matrix();
    let vv = DVector::from_column_slice(v);
    let zeta = DVector::from_vec(inst.zeta(y));
    let mut lhs_n = 0.0;
    let mut lhs_zeta = 0.0;
    for i in 0..n {
        let a = DVector::from_column_slice(inst.a.row(i));
        let nv = b * &vv - &a * a.dot(&vv);
        lhs_n += (&x * nv).norm_squared();
        let zd = &a * (y[i] - inst.y_dag[i]) - &zeta;
        lhs_zeta += (&x * zd).norm_squared();
    }
    let nf = n as f64;
    Ok(NMinusOneReport {
        lhs_n: lhs_n / nf,
        rhs_n: (nf - 1.0) * (&x * (b * &vv)).norm_squared(),
        lhs_zeta: lhs_zeta / nf,
        rhs_zeta: (nf - 1.0) * (&x * &zeta).norm_squared(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrthogonalityReport {
    /// Largest `|E⟨H_{jM+i} e_{jM}, H_{j'M+i'} e_{j'M}⟩|` over distinct pairs.
    pub max_cross_term: f64,
    /// Largest `E‖H_{jM+i} e_{jM}‖²`.
    pub scale: f64,
    pub pairs: usize,
}

/// Exact cross moments of the SVRG inner-loop increments `H_{jM+i} e_{jM}`
/// for `j < K` and `1 <= i < M` (the indices that enter the recursion).
pub fn orthogonality_check(
    inst: &ProblemInstance,
    y: &[f64],
    c0: f64,
    m_freq: usize,
    k: usize,
    opts: EnumerationOptions,
) -> Result<OrthogonalityReport> {
    let alg = PathAlgebra::new(inst, y, c0, m_freq, m_freq)?;
    let slots: Vec<(usize, usize)> = (0..k).flat_map(|j| (1..m_freq).map(move |i| (j, i))).collect();
    if slots.is_empty() {
        return Ok(OrthogonalityReport {
            max_cross_term: 0.0,
            scale: 0.0,
            pairs: 0,
        });
    }
    let classes = opts.classes(inst, y);
    let p = slots.len();
    let vals = expect_over_paths(&classes, k * m_freq, opts.budget, |path| {
        let h = alg.h_matrices(path);
        let e = alg.anchor_errors(path, Method::Svrg);
        let v: Vec<DVector<f64>> = slots.iter().map(|&(j, i)| &h[j * m_freq + i] * &e[j]).collect();
        let mut out = Vec::with_capacity(p * (p + 1) / 2);
        for a in 0..p {
            for b in a..p {
                out.push(v[a].dot(&v[b]));
            }
        }
        out
    })?;
    let mut idx = 0;
    let mut max_cross: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for a in 0..p {
        for b in a..p {
            if a == b {
                scale = scale.max(vals[idx]);
            } else {
                max_cross = max_cross.max(vals[idx].abs());
            }
            idx += 1;
        }
    }
    Ok(OrthogonalityReport {
        max_cross_term: max_cross,
        scale,
        pairs: p * (p - 1) / 2,
    })
}

/// Signature of an SVRG inner update: `(a_i, anchor, J'(anchor), c0, x)`.
pub type SvrgStep = dyn Fn(&[f64], &[f64], &[f64], f64, &mut [f64]);

/// Largest deviation, relative to `max(1, ‖e‖)`, between the SVRG errors at
/// the anchors along the seeded path and the one-outer-loop recursion
/// `e_{(K+1)M} = (M0^M - L_K B) e_{KM} + (c0 Σ_{i<M} M0^i + L_K) ζ` with
/// `L_K = c0 Σ_{i=1}^{M-1} H_{KM+i}(I - M0^i) B⁻¹`.
pub fn recursion_check(inst: &ProblemInstance, y: &[f64], c0: f64, m_freq: usize, seed: u64, k: usize) -> Result<f64> {
    recursion_check_with_step(inst, y, c0, m_freq, seed, k, &svrg_step)
}

/// [`recursion_check`] with a substitute update rule (mutation testing).
pub fn recursion_check_with_step(
    inst: &ProblemInstance,
    y: &[f64],
    c0: f64,
    m_freq: usize,
    seed: u64,
    k: usize,
    step: &SvrgStep,
) -> Result<f64> {
    let alg = PathAlgebra::new(inst, y, c0, m_freq, m_freq)?;
    let m = inst.m();
    let path = IndexStream::new(seed, inst.n()).take_vec(k * m_freq);
    let h = alg.h_matrices(&path);
    let gram = inst.gram()?;
    let binv = gram.power_matrix(-1.0);
    let id = DMatrix::<f64>::identity(m, m);
    let mut geometric = DMatrix::<f64>::zeros(m, m);
    for i in 0..m_freq {
        geometric += alg.m0p(i);
    }
    geometric *= c0;

    let mut x = inst.x0.clone();
    let mut worst: f64 = 0.0;
    for outer in 0..k {
        let e_start = DVector::from_iterator(m, x.iter().zip(&inst.x_dag).map(|(a, b)| a - b));
        let grad = full_gradient(&inst.a, y, &x).0;
        let anchor = x.clone();
        for t in 0..m_freq {
            let i = path[outer * m_freq + t];
            step(inst.a.row(i), &anchor, &grad, c0, &mut x);
        }
        let e_end = DVector::from_iterator(m, x.iter().zip(&inst.x_dag).map(|(a, b)| a - b));
        let mut l = DMatrix::<f64>::zeros(m, m);
        for i in 1..m_freq {
            l += &h[outer * m_freq + i] * (&id - alg.m0p(i)) * &binv;
        }
        l *= c0;
        let predicted = (alg.m0p(m_freq) - &l * &alg.b) * &e_start + (&geometric + &l) * &alg.zeta;
        let dev = (predicted - &e_end).norm() / e_end.norm().max(1.0);
        worst = worst.max(dev);
    }
    Ok(worst)
}
