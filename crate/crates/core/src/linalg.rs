//! Dense linear algebra: design matrices, the Gram operator `B = AᵗA / n`,
//! the propagator `M0 = I - c0 B`, thin SVDs and the spectral kernel bounds.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative eigenvalue threshold below which the spectrum is treated as zero.
pub const DEFAULT_TAU: f64 = 1e-12;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        s += d * d;
    }
    s
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// An `n × m` matrix stored row-major so that `row(i)` is a contiguous slice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct DesignMatrix {
    n: usize,
    m: usize,
    data: Vec<f64>,
}

impl DesignMatrix {
    pub fn from_row_major(n: usize, m: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::invalid("matrix dimensions must be positive"));
        }
        if data.len() != n * m {
            return Err(Error::invalid(format!(
                "expected {} entries for a {n}x{m} matrix, got {}",
                n * m,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite entry at row {}, column {}",
                pos / m,
                pos % m
            )));
        }
        Ok(Self { n, m, data })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::invalid("rows have unequal lengths"));
        }
        Self::from_row_major(n, m, rows.into_iter().flatten().collect())
    }

    pub fn from_fn(n: usize, m: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(n * m);
        for i in 0..n {
            for j in 0..m {
                data.push(f(i, j));
            }
        }
        Self::from_row_major(n, m, data)
    }

    pub fn from_dmatrix(a: &DMatrix<f64>) -> Result<Self> {
        Self::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn nrows(&self) -> usize {
        self.n
    }

    pub fn ncols(&self) -> usize {
        self.m
    }

    /// Row `i` (zero-based).
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.m..(i + 1) * self.m]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.m + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row_norm_sq(&self, i: usize) -> f64 {
        norm_sq(self.row(i))
    }

    pub fn max_row_norm_sq(&self) -> f64 {
        (0..self.n).map(|i| self.row_norm_sq(i)).fold(0.0, f64::max)
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.m, &self.data)
    }

    /// `A x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| dot(self.row(i), x)).collect()
    }

    /// `Aᵗ r`.
    pub fn apply_transpose(&self, r: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        for (i, ri) in r.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += ri * a;
            }
        }
        out
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            n: self.n,
            m: self.m,
            data: self.data.iter().map(|v| v * alpha).collect(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm_sq(&self.data).sqrt()
    }
}

impl TryFrom<Vec<Vec<f64>>> for DesignMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_rows(rows)
    }
}

impl From<DesignMatrix> for Vec<Vec<f64>> {
    fn from(a: DesignMatrix) -> Self {
        a.data.chunks(a.m).map(<[f64]>::to_vec).collect()
    }
}

/// `B = n⁻¹AᵗA` with a cached symmetric eigendecomposition (eigenvalues
/// sorted in descending order).
#[derive(Clone, Debug)]
pub struct GramOperator {
    matrix: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    eigenvectors: DMatrix<f64>,
    n_samples: usize,
    max_row_norm_sq: f64,
    tau: f64,
}

pub fn build_gram(a: &DesignMatrix) -> Result<GramOperator> {
    let n = a.nrows();
    let dm = a.to_dmatrix();
    let mut b = dm.tr_mul(&dm) / n as f64;
    let bt = b.transpose();
    b = (&b + bt) * 0.5;
    GramOperator::from_matrix(b, n, a.max_row_norm_sq())
}

impl GramOperator {
    /// Wraps an already formed symmetric positive semidefinite matrix.
    /// `max_row_norm_sq` is only used for the step-size admissibility flag.
    pub fn from_matrix(b: DMatrix<f64>, n_samples: usize, max_row_norm_sq: f64) -> Result<Self> {
        if !b.is_square() || b.nrows() == 0 {
            return Err(Error::invalid("Gram matrix must be square and nonempty"));
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("Gram matrix has non-finite entries"));
        }
        let dim = b.nrows();
        let eig = SymmetricEigen::try_new(b.clone(), f64::EPSILON, 0).ok_or_else(|| {
            Error::Numerical(format!("symmetric eigensolver did not converge (dim {dim})"))
        })?;
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&i, &j| {
            eig.eigenvalues[j]
                .partial_cmp(&eig.eigenvalues[i])
                .unwrap_or(Ordering::Equal)
        });
        let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let mut eigenvectors = DMatrix::zeros(dim, dim);
        for (dst, &src) in order.iter().enumerate() {
            eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
        }
        Ok(Self {
            matrix: b,
            eigenvalues,
            eigenvectors,
            n_samples,
            max_row_norm_sq,
            tau: DEFAULT_TAU,
        })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Eigenvalues in descending order.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Orthonormal eigenvectors, column `j` belongs to `eigenvalues()[j]`.
    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn spectral_norm(&self) -> f64 {
        self.eigenvalues[0].max(0.0)
    }

    pub fn max_row_norm_sq(&self) -> f64 {
        self.max_row_norm_sq
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }

    /// Eigenvalues at or below this value are treated as zero.
    pub fn threshold(&self) -> f64 {
        self.tau * self.spectral_norm()
    }

    pub fn is_significant(&self, lambda: f64) -> bool {
        lambda > self.threshold()
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        (&self.matrix * DVector::from_column_slice(v)).as_slice().to_vec()
    }

    /// Applies `f(B)` through the eigenbasis. `f` receives the eigenvalue
    /// clipped at zero and whether it lies above the truncation threshold.
    pub fn apply_fn(&self, v: &[f64], f: impl Fn(f64, bool) -> f64) -> Vec<f64> {
        let q = &self.eigenvectors;
        let coeffs = q.tr_mul(&DVector::from_column_slice(v));
        let scaled = DVector::from_iterator(
            self.dim(),
            coeffs.iter().zip(&self.eigenvalues).map(|(c, &l)| {
                let l0 = l.max(0.0);
                c * f(l0, self.is_significant(l))
            }),
        );
        (q * scaled).as_slice().to_vec()
    }

    /// Dense `f(B)`.
    pub fn spectral_matrix(&self, f: impl Fn(f64, bool) -> f64) -> DMatrix<f64> {
        let q = &self.eigenvectors;
        let mut scaled = q.clone();
        for (j, &l) in self.eigenvalues.iter().enumerate() {
            let s = f(l.max(0.0), self.is_significant(l));
            scaled.column_mut(j).scale_mut(s);
        }
        scaled * q.transpose()
    }

    /// `B^p` as a scalar spectral function; negative powers act on the
    /// retained spectrum only (pseudo-inverse powers).
    pub fn power_fn(p: f64) -> impl Fn(f64, bool) -> f64 {
        move |l, significant| {
            if p == 0.0 {
                1.0
            } else if p > 0.0 || significant {
                l.powf(p)
            } else {
                0.0
            }
        }
    }

    pub fn power_apply(&self, v: &[f64], p: f64) -> Vec<f64> {
        self.apply_fn(v, Self::power_fn(p))
    }

    pub fn power_matrix(&self, p: f64) -> DMatrix<f64> {
        self.spectral_matrix(Self::power_fn(p))
    }

    /// Truncated pseudo-inverse applied to `v`.
    pub fn pinv_apply(&self, v: &[f64]) -> Vec<f64> {
        self.power_apply(v, -1.0)
    }

    /// The largest step constant admitted by the step-size assumption,
    /// `(max(max_i‖a_i‖², ‖B‖²))⁻¹`.
    pub fn admissible_step(&self) -> f64 {
        1.0 / self.max_row_norm_sq.max(self.spectral_norm().powi(2))
    }
}

/// `c = (max_i ‖a_i‖²)⁻¹`.
pub fn step_constant(a: &DesignMatrix) -> Result<f64> {
    let r = a.max_row_norm_sq();
    if r == 0.0 {
        return Err(Error::Degenerate("all rows of A are zero".into()));
    }
    Ok(1.0 / r)
}

/// `M0 = I - c0 B`, represented through the eigenbasis of `B`.
#[derive(Clone, Debug)]
pub struct Propagator<'a> {
    gram: &'a GramOperator,
    c0: f64,
    admissible: bool,
}

pub fn propagator(gram: &GramOperator, c0: f64) -> Result<Propagator<'_>> {
    if !(c0 > 0.0 && c0.is_finite()) {
        return Err(Error::invalid(format!("step size must be positive, got {c0}")));
    }
    let admissible = c0 <= gram.admissible_step() * (1.0 + 1e-12);
    Ok(Propagator {
        gram,
        c0,
        admissible,
    })
}

impl<'a> Propagator<'a> {
    pub fn c0(&self) -> f64 {
        self.c0
    }

    pub fn gram(&self) -> &'a GramOperator {
        self.gram
    }

    /// Whether `c0` satisfies the step-size assumption.
    pub fn admissible(&self) -> bool {
        self.admissible
    }

    /// Eigenvalues `1 - c0 λ_j` in the order of `B`'s eigenvalues.
    pub fn eigenvalues(&self) -> Vec<f64> {
        self.gram
            .eigenvalues()
            .iter()
            .map(|l| 1.0 - self.c0 * l.max(0.0))
            .collect()
    }

    pub fn power_fn(&self, k: f64) -> impl Fn(f64, bool) -> f64 {
        let c0 = self.c0;
        move |l, _| (1.0 - c0 * l).powf(k)
    }

    /// `M0^k v`.
    pub fn apply_power(&self, v: &[f64], k: u32) -> Vec<f64> {
        let c0 = self.c0;
        self.gram.apply_fn(v, |l, _| (1.0 - c0 * l).powi(k as i32))
    }

    pub fn power_matrix(&self, k: u32) -> DMatrix<f64> {
        let c0 = self.c0;
        self.gram.spectral_matrix(|l, _| (1.0 - c0 * l).powi(k as i32))
    }

    /// Dense `I - c0 B` built directly from the matrix (no eigenbasis).
    pub fn dense(&self) -> DMatrix<f64> {
        let dim = self.gram.dim();
        DMatrix::identity(dim, dim) - self.gram.matrix() * self.c0
    }

    pub fn norm(&self) -> f64 {
        self.eigenvalues().iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelBoundReport {
    pub lhs_power: f64,
    pub rhs_power: f64,
    pub lhs_inv: f64,
    pub rhs_inv: f64,
    pub pass: bool,
}

/// `1 - (1 - x)^k` without cancellation for small `x`.
pub fn one_minus_pow(x: f64, k: u32) -> f64 {
    if x < 1.0 {
        -(k as f64 * (-x).ln_1p()).exp_m1()
    } else {
        1.0 - (1.0 - x).powi(k as i32)
    }
}

/// `x^x` with `0^0 = 1`.
pub fn self_power(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        x.powf(x)
    }
}

/// Evaluates `‖B^s M0^{KM}‖` and `‖B^{-t}(I - M0^{KM})‖` over the spectrum and
/// compares them with `s^s (M c0)^{-s} K^{-s}` and `(M c0)^t K^t`.
pub fn kernel_bound_check(
    gram: &GramOperator,
    c0: f64,
    m_freq: usize,
    k: usize,
    s: f64,
    t: f64,
) -> Result<KernelBoundReport> {
    if !(s >= 0.0 && s.is_finite()) {
        return Err(Error::invalid(format!("s must be nonnegative, got {s}")));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("t must lie in [0, 1], got {t}")));
    }
    if m_freq == 0 || k == 0 {
        return Err(Error::invalid("M and K must be positive"));
    }
    if !(c0 > 0.0) || c0 * gram.spectral_norm() > 1.0 + 1e-12 {
        return Err(Error::Assumption(format!(
            "kernel bounds need 0 < c0 ||B|| <= 1, got {}",
            c0 * gram.spectral_norm()
        )));
    }
    let km = (k * m_freq) as i32;
    let mut lhs_power: f64 = 0.0;
    let mut lhs_inv: f64 = 0.0;
    for &l in gram.eigenvalues() {
        let l0 = l.max(0.0);
        let decay = (1.0 - c0 * l0).powi(km);
        let bs = if s == 0.0 { 1.0 } else { l0.powf(s) };
        lhs_power = lhs_power.max(bs * decay);
        if gram.is_significant(l) {
            lhs_inv = lhs_inv.max(l0.powf(-t) * one_minus_pow(c0 * l0, km as u32));
        }
    }
    let mc = m_freq as f64 * c0;
    let kf = k as f64;
    let rhs_power = self_power(s) * mc.powf(-s) * kf.powf(-s);
    let rhs_inv = mc.powf(t) * kf.powf(t);
    let slack = 1e-12;
    let pass = lhs_power <= rhs_power * (1.0 + slack) && lhs_inv <= rhs_inv * (1.0 + slack);
    Ok(KernelBoundReport {
        lhs_power,
        rhs_power,
        lhs_inv,
        rhs_inv,
        pass,
    })
}

/// Thin SVD `A = U Σ Vᵗ` with singular values in descending order.
#[derive(Clone, Debug)]
pub struct SvdFactors {
    pub u: DMatrix<f64>,
    pub sigma: Vec<f64>,
    pub v: DMatrix<f64>,
    pub tau: f64,
}

impl SvdFactors {
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut us = self.u.clone();
        for (j, s) in self.sigma.iter().enumerate() {
            us.column_mut(j).scale_mut(*s);
        }
        us * self.v.transpose()
    }
}

/// Full thin SVD (all `min(n, m)` triplets), sorted descending.
pub(crate) fn svd_all(a: &DesignMatrix) -> Result<SvdFactors> {
    let dm = a.to_dmatrix();
    let (n, m) = dm.shape();
    let svd = SVD::try_new(dm, true, true, f64::EPSILON, 0).ok_or_else(|| {
        Error::Numerical(format!("SVD did not converge for a {n}x{m} matrix"))
    })?;
    let u = svd.u.ok_or_else(|| Error::Numerical("SVD returned no U".into()))?;
    let vt = svd.v_t.ok_or_else(|| Error::Numerical("SVD returned no Vᵗ".into()))?;
    let r = svd.singular_values.len();
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&i, &j| {
        svd.singular_values[j]
            .partial_cmp(&svd.singular_values[i])
            .unwrap_or(Ordering::Equal)
    });
    let mut us = DMatrix::zeros(n, r);
    let mut vs = DMatrix::zeros(m, r);
    let mut sigma = Vec::with_capacity(r);
    for (dst, &src) in order.iter().enumerate() {
        us.set_column(dst, &u.column(src));
        vs.set_column(dst, &vt.row(src).transpose());
        sigma.push(svd.singular_values[src]);
        // Sign convention: the largest-magnitude entry of each u_j is positive.
        let pivot = us.column(dst).iamax();
        if us[(pivot, dst)] < 0.0 {
            us.column_mut(dst).neg_mut();
            vs.column_mut(dst).neg_mut();
        }
    }
    Ok(SvdFactors {
        u: us,
        sigma,
        v: vs,
        tau: 0.0,
    })
}

/// Thin SVD truncated at `σ_j <= τ σ_max`.
pub fn svd(a: &DesignMatrix, tau: f64) -> Result<SvdFactors> {
    if !(0.0..1.0).contains(&tau) {
        return Err(Error::invalid(format!("rank tolerance must lie in [0, 1), got {tau}")));
    }
    let full = svd_all(a)?;
    let smax = full.sigma.first().copied().unwrap_or(0.0);
    let r = full.sigma.iter().take_while(|&&s| s > tau * smax && s > 0.0).count();
    Ok(SvdFactors {
        u: full.u.columns(0, r).into_owned(),
        sigma: full.sigma[..r].to_vec(),
        v: full.v.columns(0, r).into_owned(),
        tau,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn identity_gram() {
        let a = DesignMatrix::identity(3).unwrap();
        let g = build_gram(&a).unwrap();
        assert_relative_eq!(g.spectral_norm(), 1.0 / 3.0, epsilon = 1e-15);
        assert_eq!(step_constant(&a).unwrap(), 1.0);
    }

    #[test]
    fn diagonal_gram() {
        let a = DesignMatrix::from_rows(vec![vec![2.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let g = build_gram(&a).unwrap();
        assert_relative_eq!(g.spectral_norm(), 2.0, epsilon = 1e-15);
        assert_relative_eq!(g.eigenvalues()[1], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn rejects_non_finite() {
        let err = DesignMatrix::from_rows(vec![vec![1.0, f64::NAN]]).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn zero_matrix_has_no_step_constant() {
        let a = DesignMatrix::from_rows(vec![vec![0.0, 0.0]]).unwrap();
        assert!(matches!(step_constant(&a), Err(Error::Degenerate(_))));
    }

    #[test]
    fn propagator_of_identity() {
        let g = GramOperator::from_matrix(DMatrix::identity(3, 3), 3, 1.0).unwrap();
        let p = propagator(&g, 0.5).unwrap();
        assert!(p.eigenvalues().iter().all(|&v| (v - 0.5).abs() < 1e-15));
        assert!(p.admissible());
        assert!(propagator(&g, 0.0).is_err());
    }

    #[test]
    fn kernel_bound_scalar_example() {
        let g = GramOperator::from_matrix(DMatrix::from_element(1, 1, 0.5), 1, 0.5).unwrap();
        let r = kernel_bound_check(&g, 1.0, 2, 3, 1.0, 0.5).unwrap();
        assert_relative_eq!(r.lhs_power, 0.0078125, epsilon = 1e-15);
        assert_relative_eq!(r.rhs_power, 1.0 / 6.0, epsilon = 1e-15);
        assert!(r.pass);
        assert!(kernel_bound_check(&g, 1.0, 2, 3, -1.0, 0.5).is_err());
        assert!(kernel_bound_check(&g, 1.0, 2, 3, 1.0, 1.5).is_err());
    }

    #[test]
    fn svd_of_diagonal() {
        let a = DesignMatrix::from_rows(vec![
            vec![3.0, 0.0, 0.0],
            vec![0.0, 2.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ])
        .unwrap();
        let f = svd(&a, 0.0).unwrap();
        assert_eq!(f.rank(), 3);
        for (s, e) in f.sigma.iter().zip([3.0, 2.0, 1.0]) {
            assert_relative_eq!(*s, e, epsilon = 1e-14);
        }
        for j in 0..3 {
            assert_relative_eq!(f.u[(j, j)].abs(), 1.0, epsilon = 1e-14);
            assert_relative_eq!(f.v[(j, j)].abs(), 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn svd_rank_one() {
        let u = [1.0, 2.0, -1.0];
        let v = [0.5, 3.0];
        let a = DesignMatrix::from_fn(3, 2, |i, j| u[i] * v[j]).unwrap();
        let f = svd(&a, 1e-10).unwrap();
        assert_eq!(f.rank(), 1);
        assert_relative_eq!(f.sigma[0], norm_sq(&u).sqrt() * norm_sq(&v).sqrt(), epsilon = 1e-13);
        assert!(svd(&a, 1.0).is_err());
    }

    #[test]
    fn pseudo_inverse_ignores_null_space() {
        let a = DesignMatrix::from_rows(vec![vec![2.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let g = build_gram(&a).unwrap();
        let w = g.pinv_apply(&[1.0, 1.0]);
        assert_relative_eq!(w[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(w[1], 0.0, epsilon = 1e-15);
        let id = g.power_apply(&[1.0, 1.0], 0.0);
        assert_eq!(id, vec![1.0, 1.0]);
    }
}
