use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dist_sq, one_minus_pow, GramOperator};
use crate::problems::ProblemInstance;
use crate::solvers::{run, CheckpointPlan, Method, SolverConfig, Trajectory};

/// Runs processed per parallel batch; fixed so that the accumulation order
/// does not depend on the thread count.
const BATCH: usize = 16;

/// Stream id of run `run` in cell `cell`.
pub fn run_stream(cell: u64, run: u64) -> u64 {
    (cell << 32) | run
}

/// `E[e_{KM}] = M0^{KM} e0 + (I - M0^{KM}) B⁻¹ζ`, shared by SGD and SVRG.
///
/// The second term is evaluated as `c0 Σ_{i<KM} M0^i ζ` on each eigenvector
/// (closed form `(1 - (1 - c0λ)^{KM})/λ` on the retained spectrum, its
/// `λ → 0` limit `c0 KM` below the truncation threshold).
pub fn closed_form_mean(
    gram: &GramOperator,
    e0: &[f64],
    zeta: &[f64],
    c0: f64,
    m_freq: usize,
    k: usize,
) -> Vec<f64> {
    let km = (k * m_freq) as i32;
    let decay = gram.apply_fn(e0, |l, _| (1.0 - c0 * l).powi(km));
    let drift = gram.apply_fn(zeta, |l, significant| {
        if km == 0 {
            0.0
        } else if significant {
            one_minus_pow(c0 * l, km as u32) / l
        } else {
            c0 * km as f64
        }
    });
    decay.iter().zip(&drift).map(|(a, b)| a + b).collect()
}

/// [`closed_form_mean`] in iterate coordinates, `x† + E[e_{KM}]`.
pub fn closed_form_mean_iterate(
    inst: &ProblemInstance,
    y: &[f64],
    c0: f64,
    m_freq: usize,
    k: usize,
) -> Result<Vec<f64>> {
    if k == 0 {
        return Ok(inst.x0.clone());
    }
    let e = closed_form_mean(inst.gram()?, &inst.initial_error(), &inst.zeta(y), c0, m_freq, k);
    Ok(inst.x_dag.iter().zip(&e).map(|(a, b)| a + b).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub epoch: f64,
    pub iteration: u64,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub mean_iterate: Vec<f64>,
    pub bias_sq: f64,
    pub variance: f64,
    pub mse: f64,
    pub residual_mse: f64,
    pub run_count: usize,
    pub mse_standard_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub method: Method,
    pub runs_requested: usize,
    pub divergent_runs: usize,
    pub rows: Vec<MomentRow>,
}

impl MomentReport {
    /// CSV rows `epoch,iteration,bias_sq,variance,mse,residual_mse,run_count,mse_standard_error`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,iteration,bias_sq,variance,mse,residual_mse,run_count,mse_standard_error\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.epoch, r.iteration, r.bias_sq, r.variance, r.mse, r.residual_mse, r.run_count, r.mse_standard_error
            ));
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("moment report serializes")
    }
}

/// Running moments at one checkpoint (Welford updates in run order).
#[derive(Clone)]
struct Accumulator {
    count: usize,
    mean: Vec<f64>,
    spread: f64,
    err_mean: f64,
    err_m2: f64,
    res_mean: f64,
}

impl Accumulator {
    fn new(m: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; m],
            spread: 0.0,
            err_mean: 0.0,
            err_m2: 0.0,
            res_mean: 0.0,
        }
    }

    fn push(&mut self, x: &[f64], err: f64, res: f64) {
        self.count += 1;
        let k = self.count as f64;
        let mut s = 0.0;
        for (mu, xi) in self.mean.iter_mut().zip(x) {
            let d_old = xi - *mu;
            *mu += d_old / k;
            s += d_old * (xi - *mu);
        }
        self.spread += s;
        let d = err - self.err_mean;
        self.err_mean += d / k;
        self.err_m2 += d * (err - self.err_mean);
        self.res_mean += (res - self.res_mean) / k;
    }
}

/// Monte Carlo moments at the given epochs. Run `r` draws its indices from
/// stream `run_stream(cfg.stream, r)` of `cfg.seed`.
pub fn mc_moments(
    inst: &ProblemInstance,
    y: &[f64],
    cfg: &SolverConfig,
    runs: usize,
    epochs: &[f64],
) -> Result<MomentReport> {
    mc_moments_plan(
        inst,
        y,
        cfg,
        runs,
        CheckpointPlan::AtEpochs {
            epochs: epochs.to_vec(),
        },
    )
}

/// As [`mc_moments`] with an explicit checkpoint plan (epochs or update counts).
pub fn mc_moments_plan(
    inst: &ProblemInstance,
    y: &[f64],
    cfg: &SolverConfig,
    runs: usize,
    plan: CheckpointPlan,
) -> Result<MomentReport> {
    if runs < 2 {
        return Err(Error::invalid("Monte Carlo moments need at least 2 runs"));
    }
    if matches!(plan, CheckpointPlan::Every { .. }) {
        return Err(Error::invalid("Monte Carlo moments need an explicit checkpoint list"));
    }
    let acc_info = cfg.accounting(inst.n());
    let horizon = match &plan {
        CheckpointPlan::AtEpochs { epochs } => epochs.iter().cloned().fold(0.0, f64::max),
        CheckpointPlan::AtIterations { iterations } => {
            acc_info.epoch_of(iterations.iter().copied().max().unwrap_or(0))
        }
        CheckpointPlan::Every { .. } => unreachable!(),
    };
    let base = SolverConfig {
        checkpoints: plan,
        record_iterates: true,
        early_exit: None,
        // The plan itself stops at its last entry; leave one update of slack.
        max_epochs: horizon + 2.0 / acc_info.updates_per_epoch(),
        ..cfg.clone()
    };
    let runs_eff = if cfg.method.is_stochastic() { runs } else { 1 };
    let mut accs: Option<Vec<Accumulator>> = None;
    let mut layout: Vec<(f64, u64)> = Vec::new();
    let mut divergent = 0;
    let mut start = 0;
    while start < runs_eff {
        let end = (start + BATCH).min(runs_eff);
        let batch: Vec<Result<Trajectory>> = (start..end)
            .into_par_iter()
            .map(|r| {
                let c = base.clone().stream(run_stream(cfg.stream, r as u64));
                run(inst, y, &c)
            })
            .collect();
        for t in batch {
            let t = match t {
                Ok(t) => t,
                Err(Error::Divergence { .. }) => {
                    divergent += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let accs = accs.get_or_insert_with(|| {
                layout = t.checkpoints.iter().map(|c| (c.epoch, c.iteration)).collect();
                vec![Accumulator::new(inst.m()); t.checkpoints.len()]
            });
            for (a, c) in accs.iter_mut().zip(&t.checkpoints) {
                let x = c.iterate.as_deref().expect("iterates recorded");
                a.push(x, c.error_sq, c.residual_sq);
            }
        }
        start = end;
    }
    let accs = accs.ok_or_else(|| Error::Numerical("every Monte Carlo run diverged".into()))?;
    let ok_runs = accs.first().map_or(0, |a| a.count);
    if cfg.method.is_stochastic() && ok_runs < 2 {
        return Err(Error::Numerical(format!("only {ok_runs} non-divergent runs")));
    }
    let rows = accs
        .iter()
        .zip(&layout)
        .map(|(a, &(epoch, iteration))| {
            let k = a.count as f64;
            let se = if a.count >= 2 {
                (a.err_m2 / (k - 1.0)).sqrt() / k.sqrt()
            } else {
                0.0
            };
            MomentRow {
                epoch,
                iteration,
                bias_sq: dist_sq(&a.mean, &inst.x_dag),
                variance: a.spread / k,
                mse: a.err_mean,
                residual_mse: a.res_mean,
                run_count: if cfg.method.is_stochastic() { a.count } else { runs },
                mse_standard_error: se,
                mean_iterate: a.mean.clone(),
            }
        })
        .collect();
    Ok(MomentReport {
        method: cfg.method,
        runs_requested: runs,
        divergent_runs: divergent,
        rows,
    })
}
