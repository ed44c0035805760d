//! Exact variance decompositions of the weighted error
//! `E‖R1(e_{KM} - B⁻¹ζ) + R2‖²` for SVRG and SGD, and the comparison of the
//! two methods.
//!
//! With `P_k = I - c0 a_{i_k} a_{i_k}ᵗ`, `N_k = B - a_{i_k} a_{i_k}ᵗ`,
//! `G_k = P_{jM+M-1} ⋯ P_k` inside the `j`-th inner loop (`G = I` at anchors)
//! and `H_k = G_{k+1} N_k`, the terms below are evaluated path by path and
//! averaged exactly over all index paths. `K` counts outer loops, so the
//! final iterate is `x_{KM}` and `j` runs over `0..K`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::bounds::condition_report;
use super::enumerate::{enumerate_exact_moments_with, expect_over_paths, EnumerationOptions};
use super::identities::commutator_check;
use super::moments::run_stream;
use super::operators::{R1Spec, R2Spec};
use crate::error::{Error, Result};
use crate::problems::ProblemInstance;
use crate::solvers::{full_gradient, run, sgd_step, svrg_step, CheckpointPlan, Method, SolverConfig};

/// Relative commutator size above which an instance is not treated as
/// preconditioned.
const COMMUTATOR_TOL: f64 = 1e-10;

/// Dense per-path operators of one instance.
pub(crate) struct PathAlgebra<'a> {
    pub inst: &'a ProblemInstance,
    pub y: &'a [f64],
    pub c0: f64,
    pub m_freq: usize,
    pub b: DMatrix<f64>,
    pub m0_pow: Vec<DMatrix<f64>>,
    pub zeta: DVector<f64>,
    pub binv_zeta: DVector<f64>,
    pub n_mat: Vec<DMatrix<f64>>,
    pub p_mat: Vec<DMatrix<f64>>,
    /// `ζ_i - ζ` with `ζ_i = a_i (y_i - y†_i)`.
    pub zeta_dev: Vec<DVector<f64>>,
}

impl<'a> PathAlgebra<'a> {
    pub fn new(inst: &'a ProblemInstance, y: &'a [f64], c0: f64, m_freq: usize, max_pow: usize) -> Result<Self> {
        if m_freq == 0 {
            return Err(Error::invalid("M must be positive"));
        }
        if !(c0 > 0.0 && c0.is_finite()) {
            return Err(Error::invalid(format!("c0 must be positive, got {c0}")));
        }
        if y.len() != inst.n() {
            return Err(Error::invalid("data length does not match A"));
        }
        let gram = inst.gram()?;
        let m = inst.m();
        let b = gram.matrix().clone();
        let id = DMatrix::<f64>::identity(m, m);
        let m0 = &id - &b * c0;
        let mut m0_pow = vec![id.clone()];
        for k in 1..=max_pow {
            let next = &m0_pow[k - 1] * &m0;
            m0_pow.push(next);
        }
        let zeta_v = inst.zeta(y);
        let binv_zeta = DVector::from_vec(gram.pinv_apply(&zeta_v));
        let zeta = DVector::from_vec(zeta_v);
        let mut n_mat = Vec::with_capacity(inst.n());
        let mut p_mat = Vec::with_capacity(inst.n());
        let mut zeta_dev = Vec::with_capacity(inst.n());
        for i in 0..inst.n() {
            let a = DVector::from_column_slice(inst.a.row(i));
            let aat = &a * a.transpose();
            n_mat.push(&b - &aat);
            p_mat.push(&id - &aat * c0);
            let xi = y[i] - inst.y_dag[i];
            zeta_dev.push(&a * xi - &zeta);
        }
        Ok(Self {
            inst,
            y,
            c0,
            m_freq,
            b,
            m0_pow,
            zeta,
            binv_zeta,
            n_mat,
            p_mat,
            zeta_dev,
        })
    }

    pub fn m0p(&self, k: usize) -> &DMatrix<f64> {
        &self.m0_pow[k]
    }

    /// `H_k` for every position of the path (length a multiple of `M`).
    pub fn h_matrices(&self, path: &[usize]) -> Vec<DMatrix<f64>> {
        let m = self.inst.m();
        let mm = self.m_freq;
        let mut h = vec![DMatrix::zeros(m, m); path.len()];
        for j in 0..path.len() / mm {
            let mut g = DMatrix::<f64>::identity(m, m);
            for k in (j * mm..(j + 1) * mm).rev() {
                h[k] = &g * &self.n_mat[path[k]];
                if k > j * mm {
                    g = &g * &self.p_mat[path[k]];
                }
            }
        }
        h
    }

    /// Errors `e_{jM} = x_{jM} - x†` for `j = 0..=len/M` along the path,
    /// produced by the solver's own update routines.
    pub fn anchor_errors(&self, path: &[usize], method: Method) -> Vec<DVector<f64>> {
        let a = &self.inst.a;
        let mut x = self.inst.x0.clone();
        let mut anchor = x.clone();
        let mut grad = vec![0.0; x.len()];
        let mut out = Vec::with_capacity(path.len() / self.m_freq + 1);
        let err = |x: &[f64]| DVector::from_iterator(x.len(), x.iter().zip(&self.inst.x_dag).map(|(p, q)| p - q));
        for (k, &i) in path.iter().enumerate() {
            if k % self.m_freq == 0 {
                out.push(err(&x));
                if method == Method::Svrg {
                    grad = full_gradient(a, self.y, &x).0;
                    anchor.clone_from(&x);
                }
            }
            match method {
                Method::Svrg => svrg_step(a.row(i), &anchor, &grad, self.c0, &mut x),
                _ => sgd_step(a.row(i), self.y[i], self.c0, &mut x),
            }
        }
        out.push(err(&x));
        out
    }
}

fn ensure_preconditioned(inst: &ProblemInstance) -> Result<()> {
    let c = commutator_check(&inst.a);
    if c > COMMUTATOR_TOL {
        return Err(Error::Assumption(format!(
            "row outer products do not commute (relative commutator {c:e}); precondition the instance first"
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvrgVarianceTerms {
    pub i0: f64,
    pub i1: Vec<f64>,
    pub evaluated_paths: f64,
}

impl SvrgVarianceTerms {
    pub fn total(&self) -> f64 {
        self.i0 + self.i1.iter().sum::<f64>()
    }
}

/// SGD terms. `i0 + Σ(i2 + i3)` is the decomposition with the mixed terms
/// dropped; `cross` holds `2 Σ E⟨·,·⟩` of the pairs that share the same
/// noise draw `ζ_{jM+i}` (the `(j, i)`-th term of `i2` against the
/// `(j, i+t+1, t)`-th term of `i3`). The exact value is `total()`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdVarianceTerms {
    pub i0: f64,
    pub i2: Vec<f64>,
    pub i3: Vec<f64>,
    pub cross: Vec<f64>,
    pub evaluated_paths: f64,
}

impl SgdVarianceTerms {
    pub fn without_cross(&self) -> f64 {
        self.i0 + self.i2.iter().sum::<f64>() + self.i3.iter().sum::<f64>()
    }

    pub fn total(&self) -> f64 {
        self.without_cross() + self.cross.iter().sum::<f64>()
    }
}

struct Weights {
    /// `R1 M0^{(K-1-j)M}` for `j = 0..K`.
    pre: Vec<DMatrix<f64>>,
    i0: f64,
}

fn weights(alg: &PathAlgebra<'_>, k: usize, r1: &R1Spec, r2: R2Spec) -> Result<Weights> {
    let gram = alg.inst.gram()?;
    let r1m = r1.matrix(gram, alg.c0);
    let r2v = r2.vector(alg.binv_zeta.as_slice());
    let mm = alg.m_freq;
    let pre = (0..k).map(|j| &r1m * alg.m0p((k - 1 - j) * mm)).collect();
    let e0 = DVector::from_vec(alg.inst.initial_error());
    let v = &r1m * alg.m0p(k * mm) * (e0 - &alg.binv_zeta) + &r2v;
    Ok(Weights {
        pre,
        i0: v.norm_squared(),
    })
}

/// `I0 + Σ_j I_{1,j}` for SVRG.
pub fn svrg_variance_terms(
    inst: &ProblemInstance,
    y: &[f64],
    c0: f64,
    m_freq: usize,
    k: usize,
    r1: &R1Spec,
    r2: R2Spec,
    opts: EnumerationOptions,
) -> Result<SvrgVarianceTerms> {
    ensure_preconditioned(inst)?;
    let alg = PathAlgebra::new(inst, y, c0, m_freq, k * m_freq)?;
    let w = weights(&alg, k, r1, r2)?;
    let classes = opts.classes(inst, y);
    let c2 = c0 * c0;
    let id = DMatrix::<f64>::identity(inst.m(), inst.m());
    let i1 = expect_over_paths(&classes, k * m_freq, opts.budget, |path| {
        let h = alg.h_matrices(path);
        let e = alg.anchor_errors(path, Method::Svrg);
        (0..k)
            .map(|j| {
                let d = &e[j] - &alg.binv_zeta;
                (1..m_freq)
                    .map(|i| {
                        let v = &w.pre[j] * &h[j * m_freq + i] * ((&id - alg.m0p(i)) * &d);
                        c2 * v.norm_squared()
                    })
                    .sum()
            })
            .collect()
    })?;
    Ok(SvrgVarianceTerms {
        i0: w.i0,
        i1: if k == 0 { Vec::new() } else { i1 },
        evaluated_paths: classes.paths(k * m_freq),
    })
}

/// `I0 + Σ_j (I_{2,j} + I_{3,j})` for SGD, together with the mixed terms.
pub fn sgd_variance_terms(
    inst: &ProblemInstance,
    y: &[f64],
    c0: f64,
    m_freq: usize,
    k: usize,
    r1: &R1Spec,
    r2: R2Spec,
    opts: EnumerationOptions,
) -> Result<SgdVarianceTerms> {
    ensure_preconditioned(inst)?;
    let alg = PathAlgebra::new(inst, y, c0, m_freq, k * m_freq)?;
    let w = weights(&alg, k, r1, r2)?;
    let classes = opts.classes(inst, y);
    let mm = m_freq;
    let vals = expect_over_paths(&classes, k * mm, opts.budget, |path| {
        let h = alg.h_matrices(path);
        let e = alg.anchor_errors(path, Method::Sgd);
        let mut out = vec![0.0; 3 * k];
        for j in 0..k {
            let pre = &w.pre[j];
            let d = &e[j] - &alg.binv_zeta;
            // c0^{-1} times the (j, i)-th summand of the first group.
            let first: Vec<DVector<f64>> = (0..mm)
                .map(|i| {
                    let kk = j * mm + i;
                    let v = &h[kk] * (alg.m0p(i) * &d + &alg.binv_zeta)
                        + alg.m0p(mm - i - 1) * &alg.zeta_dev[path[kk]];
                    pre * v
                })
                .collect();
            let mut i2 = 0.0;
            for v in &first {
                i2 += alg.c0 * alg.c0 * v.norm_squared();
            }
            let mut i3 = 0.0;
            for i in 1..mm {
                for t in 0..i {
                    let u = pre * (&h[j * mm + i] * (alg.m0p(t) * &alg.zeta_dev[path[j * mm + i - 1 - t]]));
                    i3 += alg.c0.powi(4) * u.norm_squared();
                }
            }
            let mut cross = 0.0;
            for i in 0..mm.saturating_sub(1) {
                for t in 0..(mm - i - 1) {
                    let u = pre * (&h[j * mm + i + t + 1] * (alg.m0p(t) * &alg.zeta_dev[path[j * mm + i]]));
                    cross += 2.0 * alg.c0.powi(3) * first[i].dot(&u);
                }
            }
            out[j] = i2;
            out[k + j] = i3;
            out[2 * k + j] = cross;
        }
        out
    })?;
    Ok(SgdVarianceTerms {
        i0: w.i0,
        i2: vals[..k].to_vec(),
        i3: vals[k..2 * k].to_vec(),
        cross: vals[2 * k..].to_vec(),
        evaluated_paths: classes.paths(k * mm),
    })
}

/// The enumerated value of `E‖R1(e_{KM} - B⁻¹ζ) + R2‖²`.
pub fn enumerated_weighted_value(
    inst: &ProblemInstance,
    y: &[f64],
    c0: f64,
    m_freq: usize,
    k: usize,
    method: Method,
    r1: &R1Spec,
    r2: R2Spec,
    opts: EnumerationOptions,
) -> Result<f64> {
    let mom = enumerate_exact_moments_with(inst, y, c0, m_freq, k, method, opts)?;
    let gram = inst.gram()?;
    let binv_zeta = gram.pinv_apply(&inst.zeta(y));
    let r1m = r1.matrix(gram, c0);
    let r2v = r2.vector(&binv_zeta);
    Ok(mom.weighted_value(&r1m, &inst.x_dag, &binv_zeta, &r2v))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceComparison {
    pub svrg_value: f64,
    pub sgd_value: f64,
    pub ordered: bool,
    /// Both parts of the comparison condition hold.
    pub condition_holds: bool,
    /// Combined standard error (Monte Carlo mode only).
    pub standard_error: Option<f64>,
}

/// Compares the weighted errors of SVRG and SGD by exact enumeration.
pub fn variance_compare(
    inst: &ProblemInstance,
    y: &[f64],
    c0: f64,
    m_freq: usize,
    k: usize,
    r1: &R1Spec,
    r2: R2Spec,
    opts: EnumerationOptions,
) -> Result<VarianceComparison> {
    ensure_preconditioned(inst)?;
    let report = condition_report(inst, c0, m_freq, 0.0, super::bounds::DEFAULT_C_STAR)?;
    let svrg_value = enumerated_weighted_value(inst, y, c0, m_freq, k, Method::Svrg, r1, r2, opts)?;
    let sgd_value = enumerated_weighted_value(inst, y, c0, m_freq, k, Method::Sgd, r1, r2, opts)?;
    Ok(VarianceComparison {
        svrg_value,
        sgd_value,
        ordered: svrg_value <= sgd_value + 1e-12,
        condition_holds: report.cond_compare.0 && report.cond_compare.1,
        standard_error: None,
    })
}

/// Monte Carlo version of [`variance_compare`] for instances too large to enumerate.
pub fn variance_compare_mc(
    inst: &ProblemInstance,
    y: &[f64],
    c0: f64,
    m_freq: usize,
    k: usize,
    r1: &R1Spec,
    r2: R2Spec,
    runs: usize,
    seed: u64,
) -> Result<VarianceComparison> {
    if runs < 2 {
        return Err(Error::invalid("Monte Carlo comparison needs at least 2 runs"));
    }
    ensure_preconditioned(inst)?;
    let report = condition_report(inst, c0, m_freq, 0.0, super::bounds::DEFAULT_C_STAR)?;
    let gram = inst.gram()?;
    let binv_zeta = DVector::from_vec(gram.pinv_apply(&inst.zeta(y)));
    let r1m = r1.matrix(gram, c0);
    let r2v = r2.vector(binv_zeta.as_slice());
    let target = (k * m_freq) as u64;
    let estimate = |method: Method| -> Result<(f64, f64)> {
        let mut vals = Vec::with_capacity(runs);
        for r in 0..runs {
            let cfg = SolverConfig::new(method, c0)
                .seed(seed)
                .stream(run_stream(0, r as u64))
                .checkpoints(CheckpointPlan::AtIterations {
                    iterations: vec![target],
                })
                .max_epochs(k as f64 * m_freq as f64 + 1.0)
                .record_iterates(true)
                .allow_large_step(true);
            let cfg = SolverConfig { m_freq, ..cfg };
            let t = run(inst, y, &cfg)?;
            let x = t.final_iterate().expect("iterate recorded");
            let e = DVector::from_iterator(
                x.len(),
                x.iter().zip(&inst.x_dag).map(|(a, b)| a - b),
            );
            vals.push((&r1m * (e - &binv_zeta) + &r2v).norm_squared());
        }
        let nr = runs as f64;
        let mean = vals.iter().sum::<f64>() / nr;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nr - 1.0);
        Ok((mean, (var / nr).sqrt()))
    };
    let (svrg_value, se1) = estimate(Method::Svrg)?;
    let (sgd_value, se2) = estimate(Method::Sgd)?;
    let se = (se1 * se1 + se2 * se2).sqrt();
    Ok(VarianceComparison {
        svrg_value,
        sgd_value,
        ordered: svrg_value <= sgd_value + 3.0 * se,
        condition_holds: report.cond_compare.0 && report.cond_compare.1,
        standard_error: Some(se),
    })
}
