//! The `verify` suite: exact-moment oracles, decompositions, the variance
//! ordering, structural identities and (at the full level) Monte Carlo
//! checks of the error bound and a flagship table cell.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use stochreg_core::analysis::{
    closed_form_mean_iterate, commutator_check, condition_report, enumerate_exact_moments, enumerated_weighted_value,
    lemma_n_minus_one_check, mc_moments, orthogonality_check, recursion_check, recursion_check_with_step,
    residual_bound, sgd_variance_terms, step_sum_identity_check, svrg_variance_terms, theorem_bound,
    variance_compare, R1Spec, R2Spec,
};
use stochreg_core::linalg::{dist_sq, kernel_bound_check, norm_sq};
use stochreg_core::problems::{add_noise, gen_gaussian, gen_shaw, precondition_noisy, source_element};
use stochreg_core::solvers::svrg_step;
use stochreg_core::{Method, ProblemInstance, ProblemKind, SolverConfig};

use crate::error::Result;
use crate::experiment::run_experiment;
use crate::spec::ExperimentSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Fast,
    Full,
}

/// Whether `value` must stay below or above `threshold`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bound {
    Max,
    Min,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub bound: Bound,
    pub pass: bool,
    /// Soft checks are reported but do not fail the suite.
    pub hard: bool,
    #[serde(skip_serializing_if = "String::is_empty", default)]
    pub detail: String,
}

impl Check {
    fn new(name: &str, value: f64, threshold: f64, bound: Bound) -> Self {
        let pass = match bound {
            Bound::Max => value <= threshold,
            Bound::Min => value >= threshold,
        };
        Self {
            name: name.to_string(),
            value,
            threshold,
            bound,
            pass,
            hard: true,
            detail: String::new(),
        }
    }

    fn soft(mut self) -> Self {
        self.hard = false;
        self
    }

    fn detail(mut self, d: impl Into<String>) -> Self {
        self.detail = d.into();
        self
    }

    fn failed(name: &str, err: impl std::fmt::Display) -> Self {
        Self {
            name: name.to_string(),
            value: f64::NAN,
            threshold: f64::NAN,
            bound: Bound::Max,
            pass: false,
            hard: true,
            detail: err.to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub level: Level,
    pub passed: bool,
    pub elapsed_seconds: f64,
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn hard_failures(&self) -> Vec<String> {
        self.checks.iter().filter(|c| c.hard && !c.pass).map(|c| c.name.clone()).collect()
    }
}

/// Fast-level runtime budget, seconds.
pub const FAST_BUDGET_SECONDS: f64 = 60.0;

fn noisy(n: usize, m: usize, seed: u64, eps: f64) -> Result<(ProblemInstance, Vec<f64>)> {
    let inst = gen_gaussian(n, m, seed)?;
    let y = add_noise(&inst, eps, seed)?.y_delta;
    Ok((inst, y))
}

fn noisy_preconditioned(n: usize, m: usize, seed: u64, eps: f64) -> Result<(ProblemInstance, Vec<f64>)> {
    let inst = gen_gaussian(n, m, seed)?;
    let d = add_noise(&inst, eps, seed)?;
    let (pre, d) = precondition_noisy(&inst, &d)?;
    Ok((pre, d.y_delta))
}

/// `(n, m, M, K)` for the small enumeration instances, all with `n^{KM} ≤ 10⁵`.
pub fn small_grid() -> Vec<(usize, usize, usize, usize)> {
    let mut out = Vec::new();
    for (i, &(mf, k)) in [(1, 1), (1, 2), (1, 3), (2, 1), (2, 2), (3, 1), (2, 3), (3, 2), (3, 3), (1, 3)]
        .iter()
        .cycle()
        .take(20)
        .enumerate()
    {
        let n = 2 + i % 2;
        let m = 2 + (i / 2) % 2;
        if (n as f64).powi((k * mf) as i32) <= 1e5 {
            out.push((n, m, mf, k));
        }
    }
    out
}

fn r1_family() -> [R1Spec; 3] {
    [R1Spec::identity(), R1Spec::b(1.0), R1Spec::m0(2.0)]
}

fn check_closed_form() -> Result<Check> {
    let mut worst = 0.0f64;
    let grid = small_grid();
    for (s, &(n, m, mf, k)) in grid.iter().enumerate() {
        let (inst, y) = noisy(n, m, 100 + s as u64, 0.1)?;
        let c0 = 0.5 * inst.gram()?.admissible_step();
        let cf = closed_form_mean_iterate(&inst, &y, c0, mf, k)?;
        for method in [Method::Sgd, Method::Svrg] {
            let ex = enumerate_exact_moments(&inst, &y, c0, mf, k, method)?;
            let gap = dist_sq(&ex.mean, &cf).sqrt() / (1.0 + norm_sq(&inst.x_dag).sqrt());
            worst = worst.max(gap);
        }
    }
    Ok(Check::new("closed_form_mean_vs_enumeration", worst, 1e-11, Bound::Max).detail(format!("{} instances", grid.len())))
}

fn check_decompositions() -> Result<Vec<Check>> {
    let mut svrg = 0.0f64;
    let mut sgd = 0.0f64;
    let mut sgd_as_stated = 0.0f64;
    for (s, &(n, m, mf, k)) in small_grid().iter().enumerate().take(8) {
        let (inst, y) = noisy_preconditioned(n, m, 200 + s as u64, 0.2)?;
        let c0 = 0.8 * inst.gram()?.admissible_step();
        for r1 in r1_family() {
            for r2 in [R2Spec::Zero, R2Spec::BinvZeta] {
                let opts = Default::default();
                let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(f64::MIN_POSITIVE);
                let e = enumerated_weighted_value(&inst, &y, c0, mf, k, Method::Svrg, &r1, r2, opts)?;
                let t = svrg_variance_terms(&inst, &y, c0, mf, k, &r1, r2, opts)?;
                svrg = svrg.max(rel(t.total(), e));
                let e = enumerated_weighted_value(&inst, &y, c0, mf, k, Method::Sgd, &r1, r2, opts)?;
                let t = sgd_variance_terms(&inst, &y, c0, mf, k, &r1, r2, opts)?;
                sgd = sgd.max(rel(t.total(), e));
                sgd_as_stated = sgd_as_stated.max(rel(t.without_cross(), e));
            }
        }
    }
    Ok(vec![
        Check::new("svrg_variance_decomposition", svrg, 1e-11, Bound::Max),
        Check::new("sgd_variance_decomposition_with_mixed_terms", sgd, 1e-11, Bound::Max),
        Check::new("sgd_variance_decomposition_without_mixed_terms", sgd_as_stated, 1e-11, Bound::Max)
            .soft()
            .detail("mixed terms sharing one noise draw are omitted; expected to fail for M >= 2"),
    ])
}

fn check_ordering() -> Result<Check> {
    let mut worst = f64::NEG_INFINITY;
    let mut cond = true;
    for s in 0..10u64 {
        let (inst, y) = noisy_preconditioned(24, 2, 300 + s, 0.3)?;
        let c0 = 0.05 * inst.gram()?.admissible_step();
        for k in 1..=3 {
            for r1 in r1_family() {
                for r2 in [R2Spec::Zero, R2Spec::BinvZeta] {
                    let v = variance_compare(&inst, &y, c0, 2, k, &r1, r2, Default::default())?;
                    cond &= v.condition_holds;
                    worst = worst.max(v.svrg_value - v.sgd_value);
                }
            }
        }
    }
    let mut c = Check::new("svrg_not_worse_than_sgd", worst, 1e-12, Bound::Max);
    if !cond {
        c.pass = false;
        c.detail = "comparison condition did not hold on every instance".into();
    }
    Ok(c)
}

fn check_identities() -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let shaw = gen_shaw(12)?;
    let g = shaw.gram()?;
    let mut dev = 0.0f64;
    for j in [0, 1, 5, 40] {
        dev = dev.max(step_sum_identity_check(g, 0.9 / g.spectral_norm(), j, &shaw.x_dag)?);
    }
    out.push(Check::new("step_sum_identity", dev, 1e-12, Bound::Max));

    let mut comm = 0.0f64;
    let mut n1 = 0.0f64;
    let mut orth = 0.0f64;
    let mut rec = 0.0f64;
    for s in 0..4u64 {
        let (inst, y) = noisy_preconditioned(4 + s as usize % 3, 3, 400 + s, 0.3)?;
        comm = comm.max(commutator_check(&inst.a));
        let d: Vec<f64> = (0..inst.m()).map(|j| 0.5 - j as f64).collect();
        let v: Vec<f64> = (0..inst.m()).map(|j| 1.0 + 0.25 * j as f64).collect();
        n1 = n1.max(lemma_n_minus_one_check(&inst, &y, &d, &v)?.max_relative_gap());
        let c0 = 0.8 * inst.gram()?.admissible_step();
        if inst.n() <= 4 {
            let r = orthogonality_check(&inst, &y, c0, 3, 2, Default::default())?;
            orth = orth.max(r.max_cross_term / r.scale.max(f64::MIN_POSITIVE));
        }
        rec = rec.max(recursion_check(&inst, &y, c0, 3, s, 4)?);
    }
    out.push(Check::new("preconditioned_rows_commute", comm, 1e-12, Bound::Max));
    out.push(Check::new("n_minus_one_identities", n1, 1e-12, Bound::Max));
    out.push(Check::new("inner_increments_orthogonal", orth, 1e-12, Bound::Max));
    out.push(Check::new("svrg_recursion", rec, 1e-12, Bound::Max));

    let mut failures = 0.0;
    let mut total = 0;
    for frac in [0.1, 0.5, 1.0] {
        for (mf, k) in [(1, 1), (3, 2), (10, 7)] {
            for s in [0.0, 0.5, 1.0, 2.5] {
                for t in [0.0, 0.5, 1.0] {
                    total += 1;
                    if !kernel_bound_check(g, frac / g.spectral_norm(), mf, k, s, t)?.pass {
                        failures += 1.0;
                    }
                }
            }
        }
    }
    out.push(Check::new("kernel_bound_sweep_failures", failures, 0.0, Bound::Max).detail(format!("{total} cases")));

    let (inst, y) = noisy_preconditioned(4, 3, 450, 0.2)?;
    let c0 = 0.8 * inst.gram()?.admissible_step();
    let flipped = |a: &[f64], anchor: &[f64], g: &[f64], c0: f64, x: &mut [f64]| svrg_step(a, anchor, g, -c0, x);
    let dev = recursion_check_with_step(&inst, &y, c0, 3, 1, 3, &flipped)?;
    out.push(
        Check::new("mutation_flipped_svrg_sign_detected", dev, 1e-6, Bound::Min)
            .detail("recursion deviation with the SVRG update sign reversed"),
    );
    Ok(out)
}

fn check_bound_validity() -> Result<Vec<Check>> {
    let (inst, y) = noisy_preconditioned(40, 3, 500, 0.05)?;
    let g = inst.gram()?;
    let mf = 2;
    let c0 = 0.02 / g.spectral_norm();
    let rep = condition_report(&inst, c0, mf, 0.0, 2.0)?;
    let w = source_element(&inst, 0.0)?;
    let delta_bar = (dist_sq(&y, &inst.y_dag) / inst.n() as f64).sqrt();
    let cfg = SolverConfig::svrg(c0, mf).seed(5);
    let acc = cfg.accounting(inst.n());
    let epochs: Vec<f64> = (1..=10).map(|k| acc.epoch_of((k * mf) as u64)).collect();
    let mc = mc_moments(&inst, &y, &cfg, 2000, &epochs)?;
    let mut err = f64::NEG_INFINITY;
    let mut res = f64::NEG_INFINITY;
    for (k, row) in (1..=10).zip(&mc.rows) {
        err = err.max(row.mse - theorem_bound(&rep, w.norm_w, delta_bar, k) - 3.0 * row.mse_standard_error);
        res = res.max(row.residual_mse - residual_bound(&rep, w.norm_w, delta_bar, k));
    }
    let mut a = Check::new("mse_below_error_bound", err, 0.0, Bound::Max);
    if !rep.cond_rate {
        a.pass = false;
        a.detail = "rate condition does not hold".into();
    }
    Ok(vec![a, Check::new("residual_below_residual_bound", res, 0.0, Bound::Max)])
}

/// The flagship table cell: s-phillips, n = 1000, ν = 0, ε = 5e-2.
pub fn table_cell_spec(runs: usize, base_seed: u64) -> ExperimentSpec {
    serde_json::from_value(serde_json::json!({
        "problem": ProblemKind::Phillips,
        "n": 1000,
        "nu": [0.0],
        "epsilon": [5e-2],
        "methods": [
            {"method": "svrg", "c0": "5*c/M", "M": 100},
            {"method": "sgd", "c0": "4*c/n"},
        ],
        "runs": runs,
        "max_epochs": 400.0,
        "base_seed": base_seed,
    }))
    .expect("valid table cell spec")
}

/// Reference values `(e, k*)` of the flagship cell for SVRG and SGD.
pub const TABLE_CELL_REFERENCE: [(f64, f64); 2] = [(5.42e-1, 96.25), (5.42e-1, 108.90)];

fn check_table_cell() -> Result<Vec<Check>> {
    let out = run_experiment(&table_cell_spec(100, 1))?;
    let mut checks = Vec::new();
    for (row, (e_ref, k_ref)) in out.rows.iter().zip(TABLE_CELL_REFERENCE) {
        let ratio = |v: Option<f64>, r: f64| v.map_or(f64::INFINITY, |v| (v / r).max(r / v));
        checks.push(
            Check::new(&format!("table_cell_{}_e_factor", row.method), ratio(row.e_at_kstar, e_ref), 2.0, Bound::Max)
                .detail(format!("e = {:?}, reference {e_ref}", row.e_at_kstar)),
        );
        checks.push(
            Check::new(&format!("table_cell_{}_kstar_factor", row.method), ratio(row.kstar, k_ref), 2.0, Bound::Max)
                .detail(format!("k* = {:?}, reference {k_ref}", row.kstar)),
        );
    }
    Ok(checks)
}

fn collect(out: &mut Vec<Check>, name: &str, r: Result<Vec<Check>>) {
    match r {
        Ok(c) => out.extend(c),
        Err(e) => out.push(Check::failed(name, e)),
    }
}

pub fn run_verify(level: Level) -> VerifyReport {
    let start = Instant::now();
    let mut checks = Vec::new();
    collect(&mut checks, "closed_form_mean_vs_enumeration", check_closed_form().map(|c| vec![c]));
    collect(&mut checks, "variance_decompositions", check_decompositions());
    collect(&mut checks, "svrg_not_worse_than_sgd", check_ordering().map(|c| vec![c]));
    collect(&mut checks, "identities", check_identities());
    let fast = start.elapsed().as_secs_f64();
    checks.push(
        Check::new("fast_level_runtime_seconds", fast, FAST_BUDGET_SECONDS, Bound::Max)
            .soft()
            .detail("measured wall-clock budget"),
    );
    if level == Level::Full {
        collect(&mut checks, "bound_validity", check_bound_validity());
        collect(&mut checks, "table_cell", check_table_cell());
    }
    let passed = checks.iter().all(|c| c.pass || !c.hard);
    VerifyReport {
        level,
        passed,
        elapsed_seconds: start.elapsed().as_secs_f64(),
        checks,
    }
}
