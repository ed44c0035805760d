//! Exact expectations over index paths.
//!
//! Every path in `{1..n}^L` is visited with its exact probability. Rows that
//! produce identical updates (same `a_i` bit for bit, and same `y_i` unless
//! `a_i = 0`, where the datum never reaches the iterate) are lumped into one
//! class carrying the combined weight; this changes the amount of work, not
//! the measure. Children are combined at each node in a
//! fixed order (fan-in = number of classes), and the top level is split over
//! threads with an ordered reduction, so results do not depend on the thread
//! count.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{dist_sq, DesignMatrix};
use crate::problems::ProblemInstance;
use crate::solvers::{full_gradient, sgd_step, svrg_step, Method};

pub const DEFAULT_PATH_BUDGET: u64 = 10_000_000;

/// Groups of interchangeable row indices with their probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct IndexClasses {
    reps: Vec<usize>,
    weights: Vec<f64>,
    n: usize,
}

impl IndexClasses {
    /// One class per index.
    pub fn singletons(n: usize) -> Self {
        Self {
            reps: (0..n).collect(),
            weights: vec![1.0 / n as f64; n],
            n,
        }
    }

    /// Lumps indices whose row and datum agree bit for bit; all zero rows
    /// form a single class.
    pub fn lumped(a: &DesignMatrix, y: &[f64]) -> Self {
        let n = a.nrows();
        let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut reps = Vec::new();
        let mut counts: Vec<usize> = Vec::new();
        for i in 0..n {
            let mut key: Vec<u64> = a.row(i).iter().map(|v| v.to_bits()).collect();
            if a.row(i).iter().any(|&v| v != 0.0) {
                key.push(y[i].to_bits());
            } else {
                key.fill(0);
            }
            match seen.get(&key) {
                Some(&c) => counts[c] += 1,
                None => {
                    seen.insert(key, reps.len());
                    reps.push(i);
                    counts.push(1);
                }
            }
        }
        Self {
            reps,
            weights: counts.iter().map(|&c| c as f64 / n as f64).collect(),
            n,
        }
    }

    pub fn len(&self) -> usize {
        self.reps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reps.is_empty()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn reps(&self) -> &[usize] {
        &self.reps
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn paths(&self, len: usize) -> f64 {
        (self.len() as f64).powi(len as i32)
    }

    fn check_budget(&self, len: usize, budget: u64) -> Result<()> {
        let paths = self.paths(len);
        if paths > budget as f64 {
            return Err(Error::PathBudget { paths, budget });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnumerationOptions {
    /// Maximum number of distinct paths to evaluate.
    pub budget: u64,
    /// Lump bit-identical rows (exact; only reduces work).
    pub lump: bool,
}

impl Default for EnumerationOptions {
    fn default() -> Self {
        Self {
            budget: DEFAULT_PATH_BUDGET,
            lump: true,
        }
    }
}

impl EnumerationOptions {
    pub fn classes(&self, inst: &ProblemInstance, y: &[f64]) -> IndexClasses {
        if self.lump {
            IndexClasses::lumped(&inst.a, y)
        } else {
            IndexClasses::singletons(inst.n())
        }
    }
}

fn add_scaled(acc: &mut [f64], w: f64, v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += w * b;
    }
}

fn walk_paths<F>(classes: &IndexClasses, prefix: &mut Vec<usize>, len: usize, f: &F) -> Vec<f64>
where
    F: Fn(&[usize]) -> Vec<f64>,
{
    if prefix.len() == len {
        return f(prefix);
    }
    let mut acc: Option<Vec<f64>> = None;
    for (&rep, &w) in classes.reps.iter().zip(&classes.weights) {
        prefix.push(rep);
        let child = walk_paths(classes, prefix, len, f);
        prefix.pop();
        let a = acc.get_or_insert_with(|| vec![0.0; child.len()]);
        add_scaled(a, w, &child);
    }
    acc.unwrap_or_default()
}

/// `E[f(path)]` over uniform paths of length `len`, where `f` receives the
/// row indices of the path (class representatives) and returns a vector of
/// fixed length.
pub fn expect_over_paths<F>(classes: &IndexClasses, len: usize, budget: u64, f: F) -> Result<Vec<f64>>
where
    F: Fn(&[usize]) -> Vec<f64> + Sync,
{
    classes.check_budget(len, budget)?;
    if len == 0 {
        return Ok(f(&[]));
    }
    let parts: Vec<Vec<f64>> = classes
        .reps
        .par_iter()
        .map(|&rep| {
            let mut prefix = Vec::with_capacity(len);
            prefix.push(rep);
            walk_paths(classes, &mut prefix, len, &f)
        })
        .collect();
    let mut acc = vec![0.0; parts[0].len()];
    for (part, &w) in parts.iter().zip(&classes.weights) {
        add_scaled(&mut acc, w, part);
    }
    Ok(acc)
}

/// Iterate state along a path.
#[derive(Clone)]
struct State {
    x: Vec<f64>,
    anchor: Vec<f64>,
    grad: Vec<f64>,
}

struct Walker<'a> {
    inst: &'a ProblemInstance,
    y: &'a [f64],
    c0: f64,
    m_freq: usize,
    len: usize,
    method: Method,
    classes: &'a IndexClasses,
}

impl Walker<'_> {
    /// Refreshes the SVRG anchor when `depth` is a multiple of `M`.
    fn prepare(&self, state: &mut State, depth: usize) {
        if self.method == Method::Svrg && depth.is_multiple_of(self.m_freq) {
            let (g, _) = full_gradient(&self.inst.a, self.y, &state.x);
            state.grad = g;
            state.anchor.clone_from(&state.x);
        }
    }

    fn step(&self, state: &State, i: usize, out: &mut Vec<f64>) {
        out.clone_from(&state.x);
        let row = self.inst.a.row(i);
        match self.method {
            Method::Sgd => sgd_step(row, self.y[i], self.c0, out),
            Method::Svrg => svrg_step(row, &state.anchor, &state.grad, self.c0, out),
            Method::Landweber => unreachable!("enumeration is for stochastic methods"),
        }
    }

    /// Weighted leaf accumulation below `state` at `depth`.
    fn walk<L>(&self, mut state: State, depth: usize, width: usize, leaf: &L) -> Vec<f64>
    where
        L: Fn(&[f64], f64, &mut [f64]),
    {
        let mut acc = vec![0.0; width];
        if depth == self.len {
            leaf(&state.x, 1.0, &mut acc);
            return acc;
        }
        self.prepare(&mut state, depth);
        let mut next = Vec::with_capacity(state.x.len());
        for (&rep, &w) in self.classes.reps.iter().zip(&self.classes.weights) {
            self.step(&state, rep, &mut next);
            if depth + 1 == self.len {
                leaf(&next, w, &mut acc);
            } else {
                let child = State {
                    x: next.clone(),
                    anchor: state.anchor.clone(),
                    grad: state.grad.clone(),
                };
                let sub = self.walk(child, depth + 1, width, leaf);
                add_scaled(&mut acc, w, &sub);
            }
        }
        acc
    }

    fn expect<L>(&self, width: usize, leaf: L) -> Vec<f64>
    where
        L: Fn(&[f64], f64, &mut [f64]) + Sync,
    {
        let mut root = State {
            x: self.inst.x0.clone(),
            anchor: self.inst.x0.clone(),
            grad: vec![0.0; self.inst.m()],
        };
        if self.len == 0 {
            return self.walk(root, 0, width, &leaf);
        }
        self.prepare(&mut root, 0);
        let parts: Vec<Vec<f64>> = self
            .classes
            .reps
            .par_iter()
            .map(|&rep| {
                let mut x = Vec::new();
                self.step(&root, rep, &mut x);
                let child = State {
                    x,
                    anchor: root.anchor.clone(),
                    grad: root.grad.clone(),
                };
                self.walk(child, 1, width, &leaf)
            })
            .collect();
        let mut acc = vec![0.0; width];
        for (part, &w) in parts.iter().zip(&self.classes.weights) {
            add_scaled(&mut acc, w, part);
        }
        acc
    }
}

/// Exact first and second moments of the final iterate `x_{KM}`.
#[derive(Clone, Debug)]
pub struct ExactMoments {
    pub method: Method,
    pub mean: Vec<f64>,
    /// `E[(x - E x)(x - E x)ᵗ]`, accumulated about the exact mean.
    pub covariance: DMatrix<f64>,
    pub second_moment_trace: f64,
    pub variance_trace: f64,
    /// `n^{KM}`.
    pub path_count: f64,
    /// Distinct paths evaluated after lumping identical rows.
    pub evaluated_paths: f64,
    /// `E‖x - x†‖²`.
    pub mse: f64,
}

impl ExactMoments {
    /// `E‖R1(x - x† - s) + r2‖²` for a fixed shift `s` and offset `r2`.
    pub fn weighted_value(&self, r1: &DMatrix<f64>, x_dag: &[f64], shift: &[f64], r2: &DVector<f64>) -> f64 {
        let d = DVector::from_iterator(
            self.mean.len(),
            self.mean.iter().zip(x_dag).zip(shift).map(|((m, x), s)| m - x - s),
        );
        let bias = r1 * d + r2;
        let spread = (r1 * &self.covariance * r1.transpose()).trace();
        bias.norm_squared() + spread
    }
}

pub fn enumerate_exact_moments(
    inst: &ProblemInstance,
    y: &[f64],
    c0: f64,
    m_freq: usize,
    k: usize,
    method: Method,
) -> Result<ExactMoments> {
    enumerate_exact_moments_with(inst, y, c0, m_freq, k, method, EnumerationOptions::default())
}

pub fn enumerate_exact_moments_with(
    inst: &ProblemInstance,
    y: &[f64],
    c0: f64,
    m_freq: usize,
    k: usize,
    method: Method,
    opts: EnumerationOptions,
) -> Result<ExactMoments> {
    if method == Method::Landweber {
        return Err(Error::invalid("enumeration applies to sgd and svrg"));
    }
    if m_freq == 0 {
        return Err(Error::invalid("M must be positive"));
    }
    if !(c0 > 0.0 && c0.is_finite()) {
        return Err(Error::invalid(format!("c0 must be positive, got {c0}")));
    }
    if y.len() != inst.n() {
        return Err(Error::invalid("data length does not match A"));
    }
    let classes = opts.classes(inst, y);
    let len = k * m_freq;
    classes.check_budget(len, opts.budget)?;
    let walker = Walker {
        inst,
        y,
        c0,
        m_freq,
        len,
        method,
        classes: &classes,
    };
    let m = inst.m();
    let mean = walker.expect(m, |x, w, acc| add_scaled(acc, w, x));
    let cov_flat = walker.expect(m * m, |x, w, acc| {
        for a in 0..m {
            let da = w * (x[a] - mean[a]);
            for b in 0..m {
                acc[a * m + b] += da * (x[b] - mean[b]);
            }
        }
    });
    let x_dag = &inst.x_dag;
    let mse = walker.expect(1, |x, w, acc| acc[0] += w * dist_sq(x, x_dag))[0];
    let covariance = DMatrix::from_row_slice(m, m, &cov_flat);
    let variance_trace = covariance.trace();
    let mean_sq: f64 = mean.iter().map(|v| v * v).sum();
    Ok(ExactMoments {
        method,
        second_moment_trace: variance_trace + mean_sq,
        variance_trace,
        mean,
        covariance,
        path_count: (inst.n() as f64).powi(len as i32),
        evaluated_paths: classes.paths(len),
        mse,
    })
}
