//! The experiment grid and the raw-versus-preconditioned study.
//!
//! Seeds: cell `c = nu_index * |epsilon| + epsilon_index` draws its fixed
//! noise from stream `NOISE_STREAM_BASE + run_stream(c, 0)`; with
//! `resample_noise` run `r` uses `run_stream(c, r)` instead, so run 0 sees
//! the fixed draw. Method `j` of cell `c` draws indices for run `r` from
//! stream `run_stream(64 c + j, r)`.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use stochreg_core::analysis::{mc_moments_plan, run_stream};
use stochreg_core::linalg::{dist_sq, step_constant};
use stochreg_core::problems::{add_noise_stream, normalize, smooth_solution, Preconditioner};
use stochreg_core::rng::NOISE_STREAM_BASE;
use stochreg_core::{CheckpointPlan, Error as CoreError, Method, ProblemInstance, SolverConfig};

use crate::error::{input, Result};
use crate::output::{ensure_dir, to_csv, to_json, write_atomic};
use crate::spec::{ExperimentSpec, MethodSpec, SPEC_SCHEMA_VERSION};

/// Cells per grid are limited so that method streams stay clear of the
/// noise streams.
const METHOD_SLOTS: u64 = 64;

/// One table row: oracle-stopped error and stopping epoch for one method in
/// one `(nu, epsilon)` cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub problem: String,
    pub n: usize,
    pub nu: f64,
    pub epsilon: f64,
    /// Noise norm `‖y_delta - y_dag‖`, averaged over runs when resampled.
    pub delta: Option<f64>,
    /// `A` or `A_pre`.
    pub system: String,
    pub method: String,
    pub c0_expr: String,
    pub c0: Option<f64>,
    #[serde(rename = "M")]
    pub m_freq: Option<usize>,
    pub runs: usize,
    pub divergent_runs: usize,
    /// Mean over runs of the smallest squared error along each trajectory.
    pub e_at_kstar: Option<f64>,
    /// Mean over runs of the epoch attaining it.
    pub kstar: Option<f64>,
    pub standard_error: Option<f64>,
    pub kstar_rounded: Option<u64>,
    /// Epoch minimizing the run-averaged error curve, and that minimum.
    pub kstar_of_mean: Option<f64>,
    pub e_of_mean: Option<f64>,
    pub errors: String,
}

/// Figure data: Monte Carlo bias and variance on a shared update grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentCsvRow {
    pub method: String,
    pub c0: f64,
    #[serde(rename = "M")]
    pub m_freq: Option<usize>,
    pub iteration: u64,
    pub epoch: f64,
    pub bias_sq: f64,
    pub variance: f64,
    pub mse: f64,
    pub residual_mse: f64,
    pub run_count: usize,
    pub mse_standard_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedRow {
    pub problem: String,
    pub nu: f64,
    pub epsilon: f64,
    pub method: String,
    pub c0_expr: String,
    pub c0: Option<f64>,
    #[serde(rename = "M")]
    pub m_freq: Option<usize>,
    pub e_raw: Option<f64>,
    pub e_pre: Option<f64>,
    pub kstar_raw: Option<f64>,
    pub kstar_pre: Option<f64>,
    /// `|e_pre - e_raw| / e_raw`.
    pub relative_gap: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedCurveRow {
    pub nu: f64,
    pub epsilon: f64,
    pub method: String,
    pub epoch: f64,
    pub mse_raw: f64,
    pub mse_pre: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemInfo {
    pub nu: f64,
    pub system: String,
    pub norm_b: f64,
    pub max_row_norm_sq: f64,
    /// Reference constant `c` substituted into the SGD/SVRG step expressions.
    pub c: f64,
    /// Reference constant for Landweber, `1/‖B‖`.
    pub c_landweber: f64,
}

#[derive(Clone, Debug)]
pub struct MomentFile {
    pub name: String,
    pub rows: Vec<MomentCsvRow>,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub rows: Vec<ResultRow>,
    pub moments: Vec<MomentFile>,
    pub systems: Vec<SystemInfo>,
    pub failures: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct StudyOutput {
    pub rows: Vec<ResultRow>,
    pub paired: Vec<PairedRow>,
    pub curves: Vec<PairedCurveRow>,
    pub systems: Vec<SystemInfo>,
    pub max_relative_gap: Option<f64>,
}

/// One linear system of a `nu` slice with its reference step constants.
struct System {
    label: &'static str,
    inst: ProblemInstance,
    pre: Option<Preconditioner>,
    c: f64,
    c_landweber: f64,
}

impl System {
    fn info(&self, nu: f64) -> Result<SystemInfo> {
        Ok(SystemInfo {
            nu,
            system: self.label.to_string(),
            norm_b: self.inst.gram()?.spectral_norm(),
            max_row_norm_sq: self.inst.a.max_row_norm_sq(),
            c: self.c,
            c_landweber: self.c_landweber,
        })
    }

    /// Data for this system from data generated on the raw system.
    fn data(&self, y: &[f64]) -> Result<Vec<f64>> {
        match &self.pre {
            Some(p) => Ok(p.transform(y)?),
            None => Ok(y.to_vec()),
        }
    }
}

struct Slice {
    nu: f64,
    raw: ProblemInstance,
    systems: Vec<System>,
}

#[derive(Clone, Copy)]
struct Cell {
    index: u64,
    nu_idx: usize,
    eps_idx: usize,
}

/// Outcome of one method in one cell on one system.
struct MethodOutcome {
    row: ResultRow,
    curve: Vec<(f64, f64)>,
}

fn build_slice(spec: &ExperimentSpec, nu: f64, systems: &[&'static str], shared_c: bool) -> Result<Slice> {
    let mut base = spec.problem.generate(spec.n)?;
    if spec.normalize {
        base = normalize(&base)?;
    }
    let raw = smooth_solution(&base, nu)?;
    let mut out = Vec::new();
    for &label in systems {
        let (inst, pre) = if label == "A" {
            (raw.clone(), None)
        } else {
            let p = Preconditioner::new(&raw)?;
            (p.instance().clone(), Some(p))
        };
        let c_landweber = 1.0 / inst.gram()?.spectral_norm();
        out.push(System {
            label,
            c: step_constant(&inst.a)?,
            c_landweber,
            inst,
            pre,
        });
    }
    if shared_c {
        let c = out.iter().map(|s| s.c).fold(f64::INFINITY, f64::min);
        for s in &mut out {
            s.c = c;
        }
    }
    Ok(Slice { nu, raw, systems: out })
}

fn noise_stream(cell: u64, run: u64) -> u64 {
    NOISE_STREAM_BASE + run_stream(cell, run)
}

fn method_stream(cell: u64, method_idx: usize) -> u64 {
    cell * METHOD_SLOTS + method_idx as u64
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn standard_error(v: &[f64]) -> Option<f64> {
    if v.len() < 2 {
        return None;
    }
    let m = mean(v);
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
    Some((var / v.len() as f64).sqrt())
}

fn resolve_step(ms: &MethodSpec, sys: &System, n: usize) -> Result<(f64, Option<usize>)> {
    let m_freq = ms.m_freq.as_ref().map(|f| f.resolve(n));
    let c = match ms.method {
        Method::Landweber => sys.c_landweber,
        _ => sys.c,
    };
    Ok((ms.c0.evaluate(c, n, m_freq)?, m_freq))
}

fn solver_config(spec: &ExperimentSpec, ms: &MethodSpec, c0: f64, m_freq: Option<usize>) -> SolverConfig {
    let mut cfg = SolverConfig::new(ms.method, c0)
        .max_epochs(ms.max_epochs.unwrap_or(spec.max_epochs))
        .seed(spec.base_seed)
        .every(spec.checkpoint_every)
        .early_exit(spec.early_exit);
    if ms.method == Method::Svrg {
        cfg.m_freq = m_freq.unwrap_or(1);
    }
    cfg
}

#[allow(clippy::too_many_arguments)]
fn run_method(
    spec: &ExperimentSpec,
    slice: &Slice,
    sys: &System,
    cell: Cell,
    method_idx: usize,
    ms: &MethodSpec,
    fixed_y: &[f64],
) -> MethodOutcome {
    let eps = spec.epsilon[cell.eps_idx];
    let mut row = ResultRow {
        problem: spec.problem.name().to_string(),
        n: spec.n,
        nu: slice.nu,
        epsilon: eps,
        delta: None,
        system: sys.label.to_string(),
        method: ms.method.name().to_string(),
        c0_expr: ms.c0.to_string(),
        c0: None,
        m_freq: None,
        runs: 0,
        divergent_runs: 0,
        e_at_kstar: None,
        kstar: None,
        standard_error: None,
        kstar_rounded: None,
        kstar_of_mean: None,
        e_of_mean: None,
        errors: String::new(),
    };
    match fill_row(spec, slice, sys, cell, method_idx, ms, fixed_y, &mut row) {
        Ok(curve) => MethodOutcome { row, curve },
        Err(e) => {
            row.errors = e.to_string();
            MethodOutcome { row, curve: Vec::new() }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn fill_row(
    spec: &ExperimentSpec,
    slice: &Slice,
    sys: &System,
    cell: Cell,
    method_idx: usize,
    ms: &MethodSpec,
    fixed_y: &[f64],
    row: &mut ResultRow,
) -> Result<Vec<(f64, f64)>> {
    let (c0, m_freq) = resolve_step(ms, sys, spec.n)?;
    row.c0 = Some(c0);
    row.m_freq = if ms.method == Method::Svrg { m_freq } else { None };
    let cfg = solver_config(spec, ms, c0, m_freq);
    let eps = spec.epsilon[cell.eps_idx];
    let runs = if ms.method.is_stochastic() || spec.resample_noise {
        spec.runs
    } else {
        1
    };
    let stream = method_stream(cell.index, method_idx);
    let results: Vec<Result<_>> = (0..runs)
        .into_par_iter()
        .map(|r| {
            let y = if spec.resample_noise && r > 0 {
                let d = add_noise_stream(&slice.raw, eps, spec.base_seed, noise_stream(cell.index, r as u64))?;
                sys.data(&d.y_delta)?
            } else {
                fixed_y.to_vec()
            };
            let c = cfg.clone().stream(run_stream(stream, r as u64));
            let delta = dist_sq(&y, &sys.inst.y_dag).sqrt();
            Ok((delta, stochreg_core::solvers::run(&sys.inst, &y, &c)))
        })
        .collect();
    row.runs = runs;
    let results: Vec<(f64, stochreg_core::Result<_>)> = results.into_iter().collect::<Result<_>>()?;
    row.delta = Some(mean(&results.iter().map(|r| r.0).collect::<Vec<_>>()));
    let mut e = Vec::new();
    let mut k = Vec::new();
    let mut curves: Vec<Vec<(f64, f64)>> = Vec::new();
    for (_, r) in results {
        match r {
            Ok(t) => {
                e.push(t.e_at_k_star);
                k.push(t.k_star);
                curves.push(t.checkpoints.iter().map(|c| (c.epoch, c.error_sq)).collect());
            }
            Err(CoreError::Divergence { .. }) => row.divergent_runs += 1,
            Err(err) => return Err(err.into()),
        }
    }
    if e.is_empty() {
        return Err(input(format!("all {runs} runs diverged")));
    }
    let kstar = mean(&k);
    row.e_at_kstar = Some(mean(&e));
    row.kstar = Some(kstar);
    row.kstar_rounded = Some(kstar.round() as u64);
    row.standard_error = standard_error(&e);
    let len = curves.iter().map(Vec::len).min().unwrap_or(0);
    let curve: Vec<(f64, f64)> = (0..len)
        .map(|i| (curves[0][i].0, curves.iter().map(|c| c[i].1).sum::<f64>() / curves.len() as f64))
        .collect();
    if let Some(best) = curve.iter().copied().reduce(|a, b| if b.1 < a.1 { b } else { a }) {
        row.kstar_of_mean = Some(best.0);
        row.e_of_mean = Some(best.1);
    }
    Ok(curve)
}

fn cells(spec: &ExperimentSpec) -> Result<Vec<Cell>> {
    let ne = spec.epsilon.len();
    let total = spec.nu.len() * ne;
    if spec.methods.len() as u64 > METHOD_SLOTS || total as u64 > u32::MAX as u64 / METHOD_SLOTS {
        return Err(input("experiment grid is too large"));
    }
    Ok((0..total)
        .map(|i| Cell {
            index: i as u64,
            nu_idx: i / ne,
            eps_idx: i % ne,
        })
        .collect())
}

/// Fixed noisy data of each cell, generated on the raw system.
fn fixed_noise(spec: &ExperimentSpec, slices: &[Slice], cells: &[Cell]) -> Result<Vec<Vec<f64>>> {
    cells
        .iter()
        .map(|c| {
            let d = add_noise_stream(
                &slices[c.nu_idx].raw,
                spec.epsilon[c.eps_idx],
                spec.base_seed,
                noise_stream(c.index, 0),
            )?;
            Ok(d.y_delta)
        })
        .collect()
}

fn run_grid(
    spec: &ExperimentSpec,
    slices: &[Slice],
    cells: &[Cell],
    noise: &[Vec<f64>],
) -> Result<Vec<Vec<MethodOutcome>>> {
    // Outcomes indexed [cell][system * |methods| + method].
    let nm = spec.methods.len();
    let tasks: Vec<(usize, usize, usize)> = (0..cells.len())
        .flat_map(|ci| {
            let ns = slices[cells[ci].nu_idx].systems.len();
            (0..ns).flat_map(move |si| (0..nm).map(move |mi| (ci, si, mi)))
        })
        .collect();
    let data: Vec<Vec<Vec<f64>>> = cells
        .iter()
        .enumerate()
        .map(|(ci, c)| {
            slices[c.nu_idx]
                .systems
                .iter()
                .map(|s| s.data(&noise[ci]))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let outcomes: Vec<MethodOutcome> = tasks
        .par_iter()
        .map(|&(ci, si, mi)| {
            let c = cells[ci];
            let slice = &slices[c.nu_idx];
            run_method(spec, slice, &slice.systems[si], c, mi, &spec.methods[mi], &data[ci][si])
        })
        .collect();
    let mut grouped: Vec<Vec<MethodOutcome>> = (0..cells.len()).map(|_| Vec::new()).collect();
    for (&(ci, _, _), o) in tasks.iter().zip(outcomes) {
        grouped[ci].push(o);
    }
    Ok(grouped)
}

fn moment_rows(
    spec: &ExperimentSpec,
    sys: &System,
    cell: Cell,
    y: &[f64],
) -> Result<Vec<MomentCsvRow>> {
    let mo = spec.moments.as_ref().expect("moments requested");
    let plan = CheckpointPlan::AtIterations { iterations: mo.grid() };
    let mut out = Vec::new();
    for (mi, ms) in spec.methods.iter().enumerate() {
        if !ms.method.is_stochastic() {
            continue;
        }
        let (own_c0, m_freq) = resolve_step(ms, sys, spec.n)?;
        let c0 = match &mo.c0 {
            Some(expr) => {
                let shared_m = mo.m_freq.as_ref().map(|f| f.resolve(spec.n)).or(m_freq);
                expr.evaluate(sys.c, spec.n, shared_m)?
            }
            None => own_c0,
        };
        let cfg = solver_config(spec, ms, c0, m_freq).stream(method_stream(cell.index, mi));
        let rep = mc_moments_plan(&sys.inst, y, &cfg, spec.runs.max(2), plan.clone())?;
        let m_col = (ms.method == Method::Svrg).then_some(cfg.m_freq);
        out.extend(rep.rows.iter().map(|r| MomentCsvRow {
            method: ms.method.name().to_string(),
            c0,
            m_freq: m_col,
            iteration: r.iteration,
            epoch: r.epoch,
            bias_sq: r.bias_sq,
            variance: r.variance,
            mse: r.mse,
            residual_mse: r.residual_mse,
            run_count: r.run_count,
            mse_standard_error: r.mse_standard_error,
        }));
    }
    Ok(out)
}

pub fn moment_file_name(nu: f64, eps: f64) -> String {
    format!("moments_nu{nu}_eps{eps}.csv")
}

/// Runs every `(nu, epsilon, method)` cell of the grid. Cells that fail are
/// reported in the `errors` column; the rest of the grid still runs.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    spec.validate()?;
    let label = if spec.precondition { "A_pre" } else { "A" };
    let slices: Vec<Slice> = spec
        .nu
        .par_iter()
        .map(|&nu| build_slice(spec, nu, &[label], false))
        .collect::<Result<_>>()?;
    let cells = cells(spec)?;
    let noise = fixed_noise(spec, &slices, &cells)?;
    let grouped = run_grid(spec, &slices, &cells, &noise)?;
    let rows: Vec<ResultRow> = grouped.into_iter().flatten().map(|o| o.row).collect();

    let mut moments = Vec::new();
    let mut failures = Vec::new();
    if spec.moments.is_some() {
        let results: Vec<Result<Vec<MomentCsvRow>>> = cells
            .par_iter()
            .enumerate()
            .map(|(ci, c)| {
                let sys = &slices[c.nu_idx].systems[0];
                let y = sys.data(&noise[ci])?;
                moment_rows(spec, sys, *c, &y)
            })
            .collect();
        for (c, r) in cells.iter().zip(results) {
            let name = moment_file_name(spec.nu[c.nu_idx], spec.epsilon[c.eps_idx]);
            match r {
                Ok(rows) => moments.push(MomentFile { name, rows }),
                Err(e) => failures.push(format!("{name}: {e}")),
            }
        }
    }
    failures.extend(
        rows.iter()
            .filter(|r| !r.errors.is_empty())
            .map(|r| format!("nu={} epsilon={} {}: {}", r.nu, r.epsilon, r.method, r.errors)),
    );
    let systems = slices
        .iter()
        .flat_map(|s| s.systems.iter().map(move |sys| sys.info(s.nu)))
        .collect::<Result<_>>()?;
    Ok(ExperimentOutput {
        rows,
        moments,
        systems,
        failures,
    })
}

/// Runs every cell on `A` and on the preconditioned `Ã` with shared seeds,
/// shared noise draws (`ỹ = Qᵗy`) and one step constant
/// `c = 1/max(max_i‖a_i‖², max_i‖ã_i‖²)` for both systems.
pub fn run_precondition_study(spec: &ExperimentSpec) -> Result<StudyOutput> {
    spec.validate()?;
    let slices: Vec<Slice> = spec
        .nu
        .par_iter()
        .map(|&nu| build_slice(spec, nu, &["A", "A_pre"], true))
        .collect::<Result<_>>()?;
    let cells = cells(spec)?;
    let noise = fixed_noise(spec, &slices, &cells)?;
    let grouped = run_grid(spec, &slices, &cells, &noise)?;
    let nm = spec.methods.len();
    let mut rows = Vec::new();
    let mut paired = Vec::new();
    let mut curves = Vec::new();
    for (c, outcomes) in cells.iter().zip(grouped) {
        let (raw, pre) = outcomes.split_at(nm);
        for (r, p) in raw.iter().zip(pre) {
            let gap = match (r.row.e_at_kstar, p.row.e_at_kstar) {
                (Some(a), Some(b)) if a > 0.0 => Some((b - a).abs() / a),
                _ => None,
            };
            paired.push(PairedRow {
                problem: r.row.problem.clone(),
                nu: r.row.nu,
                epsilon: r.row.epsilon,
                method: r.row.method.clone(),
                c0_expr: r.row.c0_expr.clone(),
                c0: r.row.c0,
                m_freq: r.row.m_freq,
                e_raw: r.row.e_at_kstar,
                e_pre: p.row.e_at_kstar,
                kstar_raw: r.row.kstar,
                kstar_pre: p.row.kstar,
                relative_gap: gap,
            });
            curves.extend(r.curve.iter().zip(&p.curve).map(|(a, b)| PairedCurveRow {
                nu: spec.nu[c.nu_idx],
                epsilon: spec.epsilon[c.eps_idx],
                method: r.row.method.clone(),
                epoch: a.0,
                mse_raw: a.1,
                mse_pre: b.1,
            }));
        }
        rows.extend(outcomes.into_iter().map(|o| o.row));
    }
    let max_relative_gap = paired
        .iter()
        .filter_map(|p| p.relative_gap)
        .reduce(f64::max);
    let systems = slices
        .iter()
        .flat_map(|s| s.systems.iter().map(move |sys| sys.info(s.nu)))
        .collect::<Result<_>>()?;
    Ok(StudyOutput {
        rows,
        paired,
        curves,
        systems,
        max_relative_gap,
    })
}

const CONVENTIONS: &[(&str, &str)] = &[
    ("e_at_kstar", "mean over runs of min_k ||x_k - x_dag||^2 along each trajectory"),
    ("kstar", "mean over runs of the epoch of that minimum (fractional)"),
    ("kstar_rounded", "kstar rounded to the nearest epoch; equals kstar for landweber"),
    ("kstar_of_mean", "epoch minimizing the run-averaged squared-error curve"),
    ("standard_error", "sample standard deviation of e over runs divided by sqrt(runs); empty for one run"),
    ("epoch", "n SGD updates, nM/(n+M) SVRG updates, or one landweber step"),
    ("c", "1/max_i ||a_i||^2 of the system for sgd and svrg, 1/||B|| for landweber"),
    ("noise", "y_delta = y_dag + epsilon * ||y_dag||_inf * xi with xi standard Gaussian"),
];

#[derive(Serialize)]
struct Metadata<'a> {
    schema_version: u32,
    command: &'a str,
    spec: &'a ExperimentSpec,
    conventions: serde_json::Map<String, serde_json::Value>,
    systems: &'a [SystemInfo],
    files: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_relative_gap: Option<f64>,
    failures: &'a [String],
}

fn conventions() -> serde_json::Map<String, serde_json::Value> {
    CONVENTIONS
        .iter()
        .map(|(k, v)| (k.to_string(), serde_json::Value::String(v.to_string())))
        .collect()
}

pub fn write_experiment(spec: &ExperimentSpec, out: &ExperimentOutput, dir: &Path) -> Result<()> {
    ensure_dir(dir)?;
    let mut files = vec!["results.csv".to_string()];
    write_atomic(&dir.join("results.csv"), to_csv(&out.rows)?.as_bytes())?;
    for m in &out.moments {
        write_atomic(&dir.join(&m.name), to_csv(&m.rows)?.as_bytes())?;
        files.push(m.name.clone());
    }
    let meta = Metadata {
        schema_version: SPEC_SCHEMA_VERSION,
        command: "experiment",
        spec,
        conventions: conventions(),
        systems: &out.systems,
        files,
        max_relative_gap: None,
        failures: &out.failures,
    };
    write_atomic(&dir.join("metadata.json"), to_json(&meta).as_bytes())
}

pub fn write_study(spec: &ExperimentSpec, out: &StudyOutput, dir: &Path) -> Result<()> {
    ensure_dir(dir)?;
    write_atomic(&dir.join("results.csv"), to_csv(&out.rows)?.as_bytes())?;
    write_atomic(&dir.join("paired.csv"), to_csv(&out.paired)?.as_bytes())?;
    write_atomic(&dir.join("paired_curves.csv"), to_csv(&out.curves)?.as_bytes())?;
    let failures: Vec<String> = out
        .rows
        .iter()
        .filter(|r| !r.errors.is_empty())
        .map(|r| format!("nu={} epsilon={} {} on {}: {}", r.nu, r.epsilon, r.method, r.system, r.errors))
        .collect();
    let meta = Metadata {
        schema_version: SPEC_SCHEMA_VERSION,
        command: "precondition-study",
        spec,
        conventions: conventions(),
        systems: &out.systems,
        files: vec!["results.csv".into(), "paired.csv".into(), "paired_curves.csv".into()],
        max_relative_gap: out.max_relative_gap,
        failures: &failures,
    };
    write_atomic(&dir.join("metadata.json"), to_json(&meta).as_bytes())
}
