//! Test problems (discretized Fredholm equations), source smoothing, the
//! relative Gaussian noise model and the orthogonally preconditioned system.

use std::num::NonZeroUsize;
use std::sync::{Arc, OnceLock};

use gauss_quad::legendre::GaussLegendre;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{build_gram, dist_sq, max_abs, norm_sq, svd_all, DesignMatrix, GramOperator};
use crate::rng::GaussianStream;

/// Version tag written into every JSON container.
pub const SCHEMA_VERSION: u32 = 1;

/// Gauss–Legendre points per grid cell in the phillips assembly.
pub const PHILLIPS_QUADRATURE_POINTS: usize = 64;

/// The linear system `A x = y†` together with the exact solution and the
/// initial guess.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(into = "InstanceRecord", try_from = "InstanceRecord")]
pub struct ProblemInstance {
    pub name: String,
    pub a: DesignMatrix,
    pub x_dag: Vec<f64>,
    pub y_dag: Vec<f64>,
    pub x0: Vec<f64>,
    pub nu: f64,
    pub preconditioned: bool,
    gram: OnceLock<Arc<GramOperator>>,
}

#[derive(Serialize, Deserialize)]
struct InstanceRecord {
    name: String,
    n: usize,
    m: usize,
    nu: f64,
    #[serde(default)]
    preconditioned: bool,
    #[serde(rename = "A")]
    a: DesignMatrix,
    x_dag: Vec<f64>,
    y_dag: Vec<f64>,
    x0: Vec<f64>,
}

impl From<ProblemInstance> for InstanceRecord {
    fn from(p: ProblemInstance) -> Self {
        Self {
            name: p.name,
            n: p.a.nrows(),
            m: p.a.ncols(),
            nu: p.nu,
            preconditioned: p.preconditioned,
            a: p.a,
            x_dag: p.x_dag,
            y_dag: p.y_dag,
            x0: p.x0,
        }
    }
}

impl TryFrom<InstanceRecord> for ProblemInstance {
    type Error = Error;

    fn try_from(r: InstanceRecord) -> Result<Self> {
        if r.a.nrows() != r.n || r.a.ncols() != r.m {
            return Err(Error::invalid(format!(
                "declared size {}x{} does not match A ({}x{})",
                r.n,
                r.m,
                r.a.nrows(),
                r.a.ncols()
            )));
        }
        if r.x_dag.len() != r.m || r.x0.len() != r.m || r.y_dag.len() != r.n {
            return Err(Error::invalid("vector lengths do not match A"));
        }
        Ok(Self {
            name: r.name,
            a: r.a,
            x_dag: r.x_dag,
            y_dag: r.y_dag,
            x0: r.x0,
            nu: r.nu,
            preconditioned: r.preconditioned,
            gram: OnceLock::new(),
        })
    }
}

impl ProblemInstance {
    /// Builds an instance with `y† = A x†` and `x0 = 0`.
    pub fn new(name: impl Into<String>, a: DesignMatrix, x_dag: Vec<f64>) -> Result<Self> {
        if x_dag.len() != a.ncols() {
            return Err(Error::invalid(format!(
                "x_dag has length {}, A has {} columns",
                x_dag.len(),
                a.ncols()
            )));
        }
        let y_dag = a.apply(&x_dag);
        let m = a.ncols();
        Ok(Self {
            name: name.into(),
            a,
            x_dag,
            y_dag,
            x0: vec![0.0; m],
            nu: 0.0,
            preconditioned: false,
            gram: OnceLock::new(),
        })
    }

    pub fn with_x0(mut self, x0: Vec<f64>) -> Result<Self> {
        if x0.len() != self.m() {
            return Err(Error::invalid("x0 length does not match A"));
        }
        self.x0 = x0;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.a.ncols()
    }

    /// The Gram operator of `A`, computed once and cached.
    pub fn gram(&self) -> Result<&GramOperator> {
        if let Some(g) = self.gram.get() {
            return Ok(g);
        }
        let g = Arc::new(build_gram(&self.a)?);
        Ok(self.gram.get_or_init(|| g))
    }

    /// `e0 = x0 - x†`.
    pub fn initial_error(&self) -> Vec<f64> {
        self.x0.iter().zip(&self.x_dag).map(|(a, b)| a - b).collect()
    }

    /// `ζ = n⁻¹Aᵗ(y - y†)` for the supplied data.
    pub fn zeta(&self, y: &[f64]) -> Vec<f64> {
        let xi: Vec<f64> = y.iter().zip(&self.y_dag).map(|(a, b)| a - b).collect();
        let n = self.n() as f64;
        self.a.apply_transpose(&xi).into_iter().map(|v| v / n).collect()
    }

    pub fn consistency_residual(&self) -> f64 {
        dist_sq(&self.a.apply(&self.x_dag), &self.y_dag).sqrt()
    }

    fn replace_a(&self, a: DesignMatrix) -> Self {
        Self {
            name: self.name.clone(),
            y_dag: a.apply(&self.x_dag),
            a,
            x_dag: self.x_dag.clone(),
            x0: self.x0.clone(),
            nu: self.nu,
            preconditioned: self.preconditioned,
            gram: OnceLock::new(),
        }
    }
}

/// Noisy right-hand side `y^δ = y† + ε‖y†‖_∞ ξ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisyData {
    pub epsilon: f64,
    pub seed: u64,
    #[serde(default)]
    pub stream: u64,
    pub y_delta: Vec<f64>,
    pub delta: f64,
    pub delta_bar: f64,
}

/// An instance and its noisy data, as written by `stochreg generate`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InstanceBundle {
    pub schema_version: u32,
    pub instance: ProblemInstance,
    pub noise: NoisyData,
}

impl InstanceBundle {
    pub fn new(instance: ProblemInstance, noise: NoisyData) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            instance,
            noise,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::invalid(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let b: Self = serde_json::from_str(s).map_err(|e| Error::invalid(e.to_string()))?;
        if b.schema_version != SCHEMA_VERSION {
            return Err(Error::invalid(format!(
                "unsupported schema version {} (expected {SCHEMA_VERSION})",
                b.schema_version
            )));
        }
        if b.noise.y_delta.len() != b.instance.n() {
            return Err(Error::invalid("y_delta length does not match A"));
        }
        Ok(b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProblemKind {
    #[serde(rename = "s-phillips")]
    Phillips,
    #[serde(rename = "s-gravity")]
    Gravity,
    #[serde(rename = "s-shaw")]
    Shaw,
}

impl ProblemKind {
    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::Phillips => "s-phillips",
            ProblemKind::Gravity => "s-gravity",
            ProblemKind::Shaw => "s-shaw",
        }
    }

    pub fn generate(self, n: usize) -> Result<ProblemInstance> {
        match self {
            ProblemKind::Phillips => gen_phillips(n),
            ProblemKind::Gravity => gen_gravity(n, 0.25),
            ProblemKind::Shaw => gen_shaw(n),
        }
    }
}

impl std::str::FromStr for ProblemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "s-phillips" | "phillips" => Ok(ProblemKind::Phillips),
            "s-gravity" | "gravity" => Ok(ProblemKind::Gravity),
            "s-shaw" | "shaw" => Ok(ProblemKind::Shaw),
            other => Err(Error::invalid(format!("unknown problem '{other}'"))),
        }
    }
}

fn midpoints(a: f64, b: f64, n: usize) -> Vec<f64> {
    let h = (b - a) / n as f64;
    (0..n).map(|i| a + (i as f64 + 0.5) * h).collect()
}

/// Kernel of the shaw problem (without the quadrature weight).
pub fn shaw_kernel(s: f64, t: f64) -> f64 {
    let c = s.cos() + t.cos();
    let u = std::f64::consts::PI * (s.sin() + t.sin());
    let sinc = if u == 0.0 { 1.0 } else { u.sin() / u };
    c * c * sinc * sinc
}

pub fn gen_shaw(n: usize) -> Result<ProblemInstance> {
    if n < 2 {
        return Err(Error::invalid("shaw needs n >= 2"));
    }
    let half = std::f64::consts::FRAC_PI_2;
    let h = std::f64::consts::PI / n as f64;
    let t = midpoints(-half, half, n);
    let a = DesignMatrix::from_fn(n, n, |i, j| h * shaw_kernel(t[i], t[j]))?;
    let x = t
        .iter()
        .map(|&s| 2.0 * (-6.0 * (s - 0.8) * (s - 0.8)).exp() + (-2.0 * (s + 0.5) * (s + 0.5)).exp())
        .collect();
    ProblemInstance::new("s-shaw", a, x)
}

pub fn gen_gravity(n: usize, d: f64) -> Result<ProblemInstance> {
    if n < 2 {
        return Err(Error::invalid("gravity needs n >= 2"));
    }
    if !(d > 0.0 && d.is_finite()) {
        return Err(Error::invalid(format!("gravity depth must be positive, got {d}")));
    }
    let h = 1.0 / n as f64;
    let t = midpoints(0.0, 1.0, n);
    let a = DesignMatrix::from_fn(n, n, |i, j| {
        let r = t[i] - t[j];
        h * d * (d * d + r * r).powf(-1.5)
    })?;
    let pi = std::f64::consts::PI;
    let x = t.iter().map(|&s| (pi * s).sin() + 0.5 * (2.0 * pi * s).sin()).collect();
    ProblemInstance::new("s-gravity", a, x)
}

/// `φ(x) = 1 + cos(πx/3)` on `|x| < 3`, zero elsewhere.
pub fn phillips_phi(x: f64) -> f64 {
    if x.abs() < 3.0 {
        1.0 + (std::f64::consts::PI * x / 3.0).cos()
    } else {
        0.0
    }
}

/// Phillips' equation on `[-6, 6]`: `A[i][j]` is the integral of
/// `φ(s_i - t)` over the `j`-th grid cell, by composite Gauss–Legendre
/// quadrature restricted to the support of `φ`.
pub fn gen_phillips(n: usize) -> Result<ProblemInstance> {
    if n == 0 || !n.is_multiple_of(4) {
        return Err(Error::invalid(format!("phillips needs n divisible by 4, got {n}")));
    }
    let h = 12.0 / n as f64;
    let s = midpoints(-6.0, 6.0, n);
    let rule = GaussLegendre::new(NonZeroUsize::new(PHILLIPS_QUADRATURE_POINTS).expect("nonzero"));
    // Symmetric Toeplitz structure (φ is even): the entry only depends on |i - j|.
    let mut by_offset = vec![0.0; n];
    for (k, slot) in by_offset.iter_mut().enumerate() {
        let centre = k as f64 * h;
        // Cell of t relative to s: s - t ranges over [centre - h/2, centre + h/2].
        let lo = (centre - 0.5 * h).max(-3.0);
        let hi = (centre + 0.5 * h).min(3.0);
        if hi > lo {
            *slot = rule.integrate(lo, hi, phillips_phi);
        }
    }
    let a = DesignMatrix::from_fn(n, n, |i, j| by_offset[i.abs_diff(j)])?;
    let x = s.iter().map(|&t| phillips_phi(t)).collect();
    ProblemInstance::new("s-phillips", a, x)
}

/// Replaces `x†` by `(AᵗA)^ν x_e / ‖(AᵗA)^ν x_e‖_∞` (computed spectrally) and
/// recomputes `y† = A x†`.
pub fn smooth_solution(inst: &ProblemInstance, nu: f64) -> Result<ProblemInstance> {
    if !(nu >= 0.0 && nu.is_finite()) {
        return Err(Error::invalid(format!("nu must be nonnegative, got {nu}")));
    }
    if max_abs(&inst.x_dag) == 0.0 {
        return Err(Error::Degenerate("exact solution is zero".into()));
    }
    let v = if nu == 0.0 {
        inst.x_dag.clone()
    } else {
        let g = inst.gram()?;
        let scale = (inst.n() as f64).powf(nu);
        g.power_apply(&inst.x_dag, nu)
            .into_iter()
            .map(|v| v * scale)
            .collect()
    };
    let norm = max_abs(&v);
    let floor = if nu == 0.0 {
        0.0
    } else {
        f64::EPSILON * max_abs(&inst.x_dag) * (inst.n() as f64 * inst.gram()?.spectral_norm()).powf(nu)
    };
    if !(norm > floor) {
        return Err(Error::Degenerate(format!(
            "(AᵗA)^{nu} x_e vanishes numerically (max entry {norm:e})"
        )));
    }
    let x_dag: Vec<f64> = v.iter().map(|x| x / norm).collect();
    let mut out = ProblemInstance::new(inst.name.clone(), inst.a.clone(), x_dag)?;
    out.x0 = inst.x0.clone();
    out.nu = nu;
    out.preconditioned = inst.preconditioned;
    out.gram = inst.gram.clone();
    Ok(out)
}

/// `w` with `x† - x0 = B^ν w`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceElement {
    pub w: Vec<f64>,
    pub nu: f64,
    pub residual: f64,
    pub norm_w: f64,
}

pub const SOURCE_RESIDUAL_TOL: f64 = 1e-8;

pub fn source_element(inst: &ProblemInstance, nu: f64) -> Result<SourceElement> {
    if !(nu >= 0.0 && nu.is_finite()) {
        return Err(Error::invalid(format!("nu must be nonnegative, got {nu}")));
    }
    let d: Vec<f64> = inst.x_dag.iter().zip(&inst.x0).map(|(a, b)| a - b).collect();
    if nu == 0.0 {
        let norm_w = norm_sq(&d).sqrt();
        return Ok(SourceElement {
            w: d,
            nu,
            residual: 0.0,
            norm_w,
        });
    }
    let g = inst.gram()?;
    let w = g.power_apply(&d, -nu);
    let back = g.power_apply(&w, nu);
    let residual = dist_sq(&back, &d).sqrt();
    let threshold = SOURCE_RESIDUAL_TOL * norm_sq(&d).sqrt();
    if residual > threshold {
        return Err(Error::RangeViolation {
            nu,
            residual,
            threshold,
        });
    }
    let norm_w = norm_sq(&w).sqrt();
    Ok(SourceElement {
        w,
        nu,
        residual,
        norm_w,
    })
}

/// Adds `ε‖y†‖_∞ ξ` with `ξ` standard Gaussian drawn from `(seed, stream 0)`.
pub fn add_noise(inst: &ProblemInstance, epsilon: f64, seed: u64) -> Result<NoisyData> {
    add_noise_stream(inst, epsilon, seed, 0)
}

pub fn add_noise_stream(
    inst: &ProblemInstance,
    epsilon: f64,
    seed: u64,
    stream: u64,
) -> Result<NoisyData> {
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::invalid(format!("epsilon must be nonnegative, got {epsilon}")));
    }
    let y_delta: Vec<f64> = if epsilon == 0.0 {
        inst.y_dag.clone()
    } else {
        let scale = epsilon * max_abs(&inst.y_dag);
        let mut g = GaussianStream::new(seed, stream);
        inst.y_dag.iter().map(|y| y + scale * g.sample()).collect()
    };
    let delta = dist_sq(&y_delta, &inst.y_dag).sqrt();
    Ok(NoisyData {
        epsilon,
        seed,
        stream,
        delta_bar: delta / (inst.n() as f64).sqrt(),
        y_delta,
        delta,
    })
}

/// Divides `A` by `√‖B‖` so that the rescaled Gram operator has unit norm.
pub fn normalize(inst: &ProblemInstance) -> Result<ProblemInstance> {
    let nb = inst.gram()?.spectral_norm();
    if nb == 0.0 {
        return Err(Error::Degenerate("B is zero".into()));
    }
    Ok(inst.replace_a(inst.a.scaled(1.0 / nb.sqrt())))
}

/// Completes the orthonormal columns of `u` to an orthonormal basis of `Rⁿ`
/// by twice-iterated Gram–Schmidt over the coordinate vectors.
fn complete_basis(u: &DMatrix<f64>) -> DMatrix<f64> {
    let n = u.nrows();
    let mut basis: Vec<DVector<f64>> = u.column_iter().map(|c| c.into_owned()).collect();
    let mut k = 0;
    while basis.len() < n && k < n {
        let mut v = DVector::zeros(n);
        v[k] = 1.0;
        for _ in 0..2 {
            for b in &basis {
                let p = b.dot(&v);
                v.axpy(-p, b, 1.0);
            }
        }
        let norm = v.norm();
        if norm > 1e-3 {
            basis.push(v / norm);
        }
        k += 1;
    }
    DMatrix::from_columns(&basis)
}

/// The orthogonal factor `Q = [U_r, U_⊥]` (n × n) of the preconditioning.
fn precondition_factors(a: &DesignMatrix) -> Result<(DMatrix<f64>, DesignMatrix)> {
    let f = svd_all(a)?;
    let (n, m) = (a.nrows(), a.ncols());
    let q = complete_basis(&f.u);
    let a_pre = DesignMatrix::from_fn(n, m, |i, j| {
        if i < f.rank() {
            f.sigma[i] * f.v[(j, i)]
        } else {
            0.0
        }
    })?;
    Ok((q, a_pre))
}

/// The orthogonal transform `Q = [U_r, U_⊥]` of an instance together with
/// the transformed instance `Ã = QᵗA = ΣVᵗ` (zero rows below the rank).
#[derive(Clone, Debug)]
pub struct Preconditioner {
    q: DMatrix<f64>,
    instance: ProblemInstance,
}

impl Preconditioner {
    pub fn new(inst: &ProblemInstance) -> Result<Self> {
        let (q, a_pre) = precondition_factors(&inst.a)?;
        let mut instance = inst.replace_a(a_pre);
        instance.preconditioned = true;
        Ok(Self { q, instance })
    }

    pub fn instance(&self) -> &ProblemInstance {
        &self.instance
    }

    /// `Qᵗ y`.
    pub fn transform(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.q.nrows() {
            return Err(Error::invalid("data length does not match A"));
        }
        Ok((self.q.transpose() * DVector::from_column_slice(y)).as_slice().to_vec())
    }

    pub fn transform_noisy(&self, data: &NoisyData) -> Result<NoisyData> {
        let y = self.transform(&data.y_delta)?;
        let delta = dist_sq(&y, &self.instance.y_dag).sqrt();
        Ok(NoisyData {
            y_delta: y,
            delta,
            delta_bar: delta / (self.instance.n() as f64).sqrt(),
            ..data.clone()
        })
    }
}

/// `Ã = ΣVᵗ` (padded with zero rows to `n` rows) and `ỹ = Qᵗ y` with `Q` the
/// full left singular basis. `Ã` has the same Gram operator as `A` and
/// `‖Ãx - ỹ‖ = ‖Ax - y‖` for every `x`.
pub fn precondition(inst: &ProblemInstance, y: &[f64]) -> Result<(ProblemInstance, Vec<f64>)> {
    if y.len() != inst.n() {
        return Err(Error::invalid("data length does not match A"));
    }
    let p = Preconditioner::new(inst)?;
    let y_pre = p.transform(y)?;
    Ok((p.instance, y_pre))
}

/// Preconditions an instance together with its noisy data; `δ` is unchanged.
pub fn precondition_noisy(inst: &ProblemInstance, data: &NoisyData) -> Result<(ProblemInstance, NoisyData)> {
    let p = Preconditioner::new(inst)?;
    let data = p.transform_noisy(data)?;
    Ok((p.instance, data))
}

/// A dense instance with standard Gaussian entries in `A` and `x†`, drawn
/// from `seed`; `x0 = 0`.
pub fn gen_gaussian(n: usize, m: usize, seed: u64) -> Result<ProblemInstance> {
    let mut g = GaussianStream::new(seed, 0);
    let a = DesignMatrix::from_fn(n, m, |_, _| g.sample())?;
    let x = (0..m).map(|_| g.sample()).collect();
    ProblemInstance::new("gaussian", a, x)
}
