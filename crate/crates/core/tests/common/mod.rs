#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use stochreg_core::linalg::DesignMatrix;
use stochreg_core::problems::{precondition, ProblemInstance};
use stochreg_core::rng::GaussianStream;
use stochreg_core::Method;

/// Gaussian `n × m` instance with a Gaussian solution and noisy data.
pub fn random_instance(seed: u64, n: usize, m: usize, noise: f64) -> (ProblemInstance, Vec<f64>) {
    let mut g = GaussianStream::new(seed, 11);
    let a = DesignMatrix::from_fn(n, m, |_, _| g.sample()).unwrap();
    let x: Vec<f64> = (0..m).map(|_| g.sample()).collect();
    let inst = ProblemInstance::new("random", a, x).unwrap();
    let y = inst.y_dag.iter().map(|v| v + noise * g.sample()).collect();
    (inst, y)
}

/// [`random_instance`] followed by the orthogonal preconditioning.
pub fn random_preconditioned(seed: u64, n: usize, m: usize, noise: f64) -> (ProblemInstance, Vec<f64>) {
    let (inst, y) = random_instance(seed, n, m, noise);
    precondition(&inst, &y).unwrap()
}

pub fn dense(a: &DesignMatrix) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a.get(i, j))
}

/// Mean and second moment `E[x xᵗ]` of `x_L` over all `n^L` paths, with the
/// textbook updates written in matrix form.
pub fn brute_force_moments(
    inst: &ProblemInstance,
    y: &[f64],
    c0: f64,
    m_freq: usize,
    len: usize,
    method: Method,
) -> (DVector<f64>, DMatrix<f64>) {
    let a = dense(&inst.a);
    let yv = DVector::from_column_slice(y);
    let n = inst.n();
    let m = inst.m();
    let total = n.pow(len as u32);
    let w = 1.0 / total as f64;
    let mut mean = DVector::zeros(m);
    let mut second = DMatrix::zeros(m, m);
    for code in 0..total {
        let mut c = code;
        let mut x = DVector::from_column_slice(&inst.x0);
        let mut anchor = x.clone();
        let mut g = DVector::zeros(m);
        for k in 0..len {
            let i = c % n;
            c /= n;
            let ai = a.row(i).transpose();
            match method {
                Method::Sgd => {
                    let r = ai.dot(&x) - yv[i];
                    x -= &ai * (c0 * r);
                }
                Method::Svrg => {
                    if k % m_freq == 0 {
                        anchor = x.clone();
                        g = a.transpose() * (&a * &anchor - &yv) / n as f64;
                    }
                    let s = ai.dot(&(&x - &anchor));
                    x -= (&ai * s + &g) * c0;
                }
                Method::Landweber => unreachable!(),
            }
        }
        mean += &x * w;
        second += &x * x.transpose() * w;
    }
    (mean, second)
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
