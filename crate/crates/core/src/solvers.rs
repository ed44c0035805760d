//! Landweber, SGD and SVRG with a constant step size, epoch accounting,
//! checkpoint recording and oracle stopping.
//!
//! Arithmetic order inside the updates is fixed so that replaying a path by
//! hand reproduces the iterates bit for bit:
//!
//! * SGD: `r = <a_i, x> - y_i`, then `x_j -= (c0 * r) * a_ij`.
//! * SVRG: `s = <a_i, x - x_anchor>` (accumulated as `Σ a_ij (x_j - anchor_j)`),
//!   then `x_j -= c0 * (s * a_ij + g_j)` with `g = J'(x_anchor)`.
//! * Landweber: `x_j -= c0 * g_j` with `g = J'(x)`.
//!
//! `J'(x) = n⁻¹Aᵗ(Ax - y)` is accumulated row by row and divided by `n` last.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dist_sq, dot, norm_sq, DesignMatrix};
use crate::problems::ProblemInstance;
use crate::rng::IndexStream;

/// A run is declared divergent once its squared error exceeds this multiple
/// of `max(‖e0‖², ‖x†‖²)`.
pub const DIVERGENCE_FACTOR: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Landweber,
    Sgd,
    Svrg,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Landweber => "landweber",
            Method::Sgd => "sgd",
            Method::Svrg => "svrg",
        }
    }

    pub fn is_stochastic(self) -> bool {
        !matches!(self, Method::Landweber)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "landweber" | "lm" => Ok(Method::Landweber),
            "sgd" => Ok(Method::Sgd),
            "svrg" => Ok(Method::Svrg),
            other => Err(Error::invalid(format!("unknown method '{other}'"))),
        }
    }
}

/// Where checkpoints are taken.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CheckpointPlan {
    /// Epoch 0, every `epochs` epochs, every SVRG anchor and the last iterate.
    Every { epochs: f64 },
    /// Exactly the first update count at or after each listed epoch.
    AtEpochs { epochs: Vec<f64> },
    /// Exactly the listed update counts.
    AtIterations { iterations: Vec<u64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub method: Method,
    pub c0: f64,
    #[serde(rename = "M")]
    pub m_freq: usize,
    pub max_epochs: f64,
    pub seed: u64,
    /// Index-stream id; Monte Carlo runs use their run index here.
    pub stream: u64,
    pub checkpoints: CheckpointPlan,
    pub record_iterates: bool,
    /// Permits step sizes beyond the admissible bound.
    pub allow_large_step: bool,
    /// Stop once the error exceeds this multiple of the best error so far.
    pub early_exit: Option<f64>,
}

impl SolverConfig {
    pub fn new(method: Method, c0: f64) -> Self {
        Self {
            method,
            c0,
            m_freq: 1,
            max_epochs: 100.0,
            seed: 0,
            stream: 0,
            checkpoints: CheckpointPlan::Every { epochs: 1.0 },
            record_iterates: false,
            allow_large_step: false,
            early_exit: None,
        }
    }

    pub fn landweber(c0: f64) -> Self {
        Self::new(Method::Landweber, c0)
    }

    pub fn sgd(c0: f64) -> Self {
        Self::new(Method::Sgd, c0)
    }

    pub fn svrg(c0: f64, m_freq: usize) -> Self {
        Self {
            m_freq,
            ..Self::new(Method::Svrg, c0)
        }
    }

    pub fn max_epochs(mut self, e: f64) -> Self {
        self.max_epochs = e;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn stream(mut self, stream: u64) -> Self {
        self.stream = stream;
        self
    }

    pub fn checkpoints(mut self, plan: CheckpointPlan) -> Self {
        self.checkpoints = plan;
        self
    }

    pub fn every(self, epochs: f64) -> Self {
        self.checkpoints(CheckpointPlan::Every { epochs })
    }

    pub fn record_iterates(mut self, on: bool) -> Self {
        self.record_iterates = on;
        self
    }

    pub fn allow_large_step(mut self, on: bool) -> Self {
        self.allow_large_step = on;
        self
    }

    pub fn early_exit(mut self, factor: Option<f64>) -> Self {
        self.early_exit = factor;
        self
    }

    pub fn accounting(&self, n: usize) -> EpochAccounting {
        EpochAccounting::new(self.method, n, self.m_freq)
    }

    fn validate(&self, expected: Method) -> Result<()> {
        if self.method != expected {
            return Err(Error::invalid(format!(
                "configuration is for {}, not {}",
                self.method, expected
            )));
        }
        if !(self.c0 > 0.0 && self.c0.is_finite()) {
            return Err(Error::invalid(format!("c0 must be positive, got {}", self.c0)));
        }
        if self.method == Method::Svrg && self.m_freq == 0 {
            return Err(Error::invalid("SVRG needs M >= 1"));
        }
        if !(self.max_epochs > 0.0 && self.max_epochs.is_finite()) {
            return Err(Error::invalid("max_epochs must be positive"));
        }
        match &self.checkpoints {
            CheckpointPlan::Every { epochs } if !(*epochs > 0.0 && epochs.is_finite()) => {
                return Err(Error::invalid("checkpoint cadence must be positive"));
            }
            CheckpointPlan::AtEpochs { epochs } if epochs.iter().any(|e| !(*e >= 0.0)) => {
                return Err(Error::invalid("checkpoint epochs must be nonnegative"));
            }
            _ => {}
        }
        if let Some(f) = self.early_exit {
            if !(f > 1.0) {
                return Err(Error::invalid("early-exit factor must exceed 1"));
            }
        }
        Ok(())
    }
}

/// Cost bookkeeping: one epoch is `n` stochastic row updates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochAccounting {
    pub method: Method,
    pub n: usize,
    #[serde(rename = "M")]
    pub m_freq: usize,
    /// Row-update equivalents per epoch: `n` for SGD and Landweber,
    /// `nM/(n+M)` SVRG iterations.
    pub iterations_per_epoch: f64,
}

impl EpochAccounting {
    pub fn new(method: Method, n: usize, m_freq: usize) -> Self {
        let iterations_per_epoch = match method {
            Method::Svrg => (n * m_freq) as f64 / (n + m_freq) as f64,
            Method::Sgd | Method::Landweber => n as f64,
        };
        Self {
            method,
            n,
            m_freq,
            iterations_per_epoch,
        }
    }

    /// Iterate updates per epoch; a Landweber step touches every row once.
    pub fn updates_per_epoch(&self) -> f64 {
        match self.method {
            Method::Landweber => 1.0,
            _ => self.iterations_per_epoch,
        }
    }

    pub fn epoch_of(&self, updates: u64) -> f64 {
        match self.method {
            Method::Landweber => updates as f64,
            Method::Sgd => updates as f64 / self.n as f64,
            Method::Svrg => updates as f64 * (self.n + self.m_freq) as f64 / (self.n * self.m_freq) as f64,
        }
    }

    /// First update count whose epoch is at least `epoch`.
    pub fn updates_at(&self, epoch: f64) -> u64 {
        let raw = epoch * self.updates_per_epoch();
        let r = raw.round();
        if (raw - r).abs() <= 1e-9 * raw.max(1.0) {
            r as u64
        } else {
            raw.ceil() as u64
        }
    }

    /// Largest update count within the epoch budget.
    pub fn max_updates(&self, max_epochs: f64) -> u64 {
        let raw = max_epochs * self.updates_per_epoch();
        let r = raw.round();
        if (raw - r).abs() <= 1e-9 * raw.max(1.0) {
            r as u64
        } else {
            raw.floor() as u64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub iteration: u64,
    pub epoch: f64,
    pub error_sq: f64,
    pub residual_sq: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub iterate: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub method: Method,
    pub accounting: EpochAccounting,
    pub checkpoints: Vec<Checkpoint>,
    pub k_star: f64,
    pub e_at_k_star: f64,
    /// Set when the run used a step size beyond the admissible bound.
    pub step_override: bool,
    pub stopped_early: bool,
}

impl Trajectory {
    pub fn final_iterate(&self) -> Option<&[f64]> {
        self.checkpoints.last().and_then(|c| c.iterate.as_deref())
    }

    pub fn error_column(&self) -> Vec<f64> {
        self.checkpoints.iter().map(|c| c.error_sq).collect()
    }

    /// CSV with columns `epoch,error_sq,residual_sq`; floats use the
    /// shortest representation that parses back to the same value.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,error_sq,residual_sq\n");
        for c in &self.checkpoints {
            s.push_str(&format!("{},{},{}\n", c.epoch, c.error_sq, c.residual_sq));
        }
        s
    }
}

/// Parses the CSV written by [`Trajectory::to_csv`] into `(epoch, error_sq, residual_sq)` rows.
pub fn parse_trajectory_csv(text: &str) -> Result<Vec<(f64, f64, f64)>> {
    let mut lines = text.lines();
    match lines.next() {
        Some("epoch,error_sq,residual_sq") => {}
        other => return Err(Error::invalid(format!("unexpected CSV header {other:?}"))),
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 3 {
                return Err(Error::invalid(format!("malformed CSV row '{l}'")));
            }
            let p = |s: &str| s.parse::<f64>().map_err(|e| Error::invalid(format!("{e}: '{s}'")));
            Ok((p(f[0])?, p(f[1])?, p(f[2])?))
        })
        .collect()
}

/// Index and squared error of the smallest recorded error; ties go to the
/// earlier checkpoint.
pub fn oracle_stop(checkpoints: &[Checkpoint]) -> Result<(f64, f64)> {
    let first = checkpoints
        .first()
        .ok_or_else(|| Error::invalid("trajectory has no checkpoints"))?;
    let mut best = first;
    for c in &checkpoints[1..] {
        if c.error_sq < best.error_sq {
            best = c;
        }
    }
    Ok((best.epoch, best.error_sq))
}

/// One SGD update on row `a_i` with datum `y_i`.
#[inline]
pub fn sgd_step(a_i: &[f64], y_i: f64, c0: f64, x: &mut [f64]) {
    let r = dot(a_i, x) - y_i;
    let coef = c0 * r;
    for (xj, aj) in x.iter_mut().zip(a_i) {
        *xj -= coef * aj;
    }
}

/// One SVRG inner update on row `a_i` with anchor `anchor` and `grad = J'(anchor)`.
#[inline]
pub fn svrg_step(a_i: &[f64], anchor: &[f64], grad: &[f64], c0: f64, x: &mut [f64]) {
    let mut s = 0.0;
    for ((aj, xj), zj) in a_i.iter().zip(x.iter()).zip(anchor) {
        s += aj * (xj - zj);
    }
    for ((xj, aj), gj) in x.iter_mut().zip(a_i).zip(grad) {
        *xj -= c0 * (s * aj + gj);
    }
}

/// `(J'(x), ‖Ax - y‖²)` with `J'(x) = n⁻¹Aᵗ(Ax - y)`.
pub fn full_gradient(a: &DesignMatrix, y: &[f64], x: &[f64]) -> (Vec<f64>, f64) {
    let mut g = vec![0.0; a.ncols()];
    let mut res = 0.0;
    for (i, yi) in y.iter().enumerate() {
        let row = a.row(i);
        let r = dot(row, x) - yi;
        res += r * r;
        for (gj, aj) in g.iter_mut().zip(row) {
            *gj += r * aj;
        }
    }
    let n = a.nrows() as f64;
    for gj in &mut g {
        *gj /= n;
    }
    (g, res)
}

fn residual_sq(a: &DesignMatrix, y: &[f64], x: &[f64]) -> f64 {
    y.iter()
        .enumerate()
        .map(|(i, yi)| {
            let r = dot(a.row(i), x) - yi;
            r * r
        })
        .sum()
}

/// Sorted update counts at which to record.
fn schedule(cfg: &SolverConfig, acc: &EpochAccounting, max_updates: u64) -> Vec<u64> {
    let mut t: Vec<u64> = match &cfg.checkpoints {
        CheckpointPlan::Every { epochs } => {
            let mut t = vec![0, max_updates];
            let mut j = 1u64;
            loop {
                let u = acc.updates_at(j as f64 * epochs);
                if u > max_updates {
                    break;
                }
                t.push(u);
                j += 1;
            }
            if cfg.method == Method::Svrg {
                let m = cfg.m_freq as u64;
                t.extend((1..=max_updates / m).map(|k| k * m));
            }
            t
        }
        CheckpointPlan::AtEpochs { epochs } => epochs
            .iter()
            .map(|&e| acc.updates_at(e))
            .filter(|&u| u <= max_updates)
            .collect(),
        CheckpointPlan::AtIterations { iterations } => {
            iterations.iter().copied().filter(|&u| u <= max_updates).collect()
        }
    };
    t.sort_unstable();
    t.dedup();
    t
}

fn plan_max_updates(cfg: &SolverConfig, acc: &EpochAccounting) -> u64 {
    let cap = acc.max_updates(cfg.max_epochs);
    match &cfg.checkpoints {
        CheckpointPlan::Every { .. } => cap,
        // Explicit lists stop at their last entry when it is within budget.
        CheckpointPlan::AtEpochs { epochs } => epochs
            .iter()
            .map(|&e| acc.updates_at(e))
            .filter(|&u| u <= cap)
            .max()
            .unwrap_or(0),
        CheckpointPlan::AtIterations { iterations } => {
            iterations.iter().copied().filter(|&u| u <= cap).max().unwrap_or(0)
        }
    }
}

/// Shared checkpoint bookkeeping of the three drivers.
struct Recorder<'a> {
    cfg: &'a SolverConfig,
    acc: EpochAccounting,
    x_dag: &'a [f64],
    targets: Vec<u64>,
    next: usize,
    checkpoints: Vec<Checkpoint>,
    limit: f64,
    best: f64,
    stop: bool,
}

impl<'a> Recorder<'a> {
    fn new(inst: &'a ProblemInstance, cfg: &'a SolverConfig, max_updates: u64) -> Self {
        let acc = cfg.accounting(inst.n());
        let reference = dist_sq(&inst.x0, &inst.x_dag).max(norm_sq(&inst.x_dag));
        Self {
            cfg,
            acc,
            x_dag: &inst.x_dag,
            targets: schedule(cfg, &acc, max_updates),
            next: 0,
            checkpoints: Vec::new(),
            limit: DIVERGENCE_FACTOR * reference.max(f64::MIN_POSITIVE),
            best: f64::INFINITY,
            stop: false,
        }
    }

    fn due(&self, updates: u64) -> bool {
        self.targets.get(self.next) == Some(&updates)
    }

    fn record(&mut self, updates: u64, x: &[f64], residual_sq: f64) -> Result<()> {
        self.next += 1;
        let error_sq = dist_sq(x, self.x_dag);
        let epoch = self.acc.epoch_of(updates);
        if !error_sq.is_finite() || error_sq > self.limit {
            return Err(Error::Divergence {
                epoch,
                c0: self.cfg.c0,
                error_sq,
            });
        }
        self.checkpoints.push(Checkpoint {
            iteration: updates,
            epoch,
            error_sq,
            residual_sq,
            iterate: self.cfg.record_iterates.then(|| x.to_vec()),
        });
        if let Some(f) = self.cfg.early_exit {
            if error_sq > f * self.best {
                self.stop = true;
            }
        }
        self.best = self.best.min(error_sq);
        Ok(())
    }

    fn finish(self, step_override: bool) -> Result<Trajectory> {
        let (k_star, e_at_k_star) = oracle_stop(&self.checkpoints)?;
        Ok(Trajectory {
            method: self.cfg.method,
            accounting: self.acc,
            checkpoints: self.checkpoints,
            k_star,
            e_at_k_star,
            step_override,
            stopped_early: self.stop,
        })
    }
}

fn check_inputs(inst: &ProblemInstance, y: &[f64], cfg: &SolverConfig, method: Method) -> Result<bool> {
    cfg.validate(method)?;
    if y.len() != inst.n() {
        return Err(Error::invalid(format!(
            "data has length {}, A has {} rows",
            y.len(),
            inst.n()
        )));
    }
    let gram = inst.gram()?;
    let bound = match method {
        Method::Landweber => 1.0 / gram.spectral_norm(),
        _ => gram.admissible_step(),
    };
    let over = cfg.c0 > bound * (1.0 + 1e-12);
    if over && !cfg.allow_large_step {
        return Err(Error::Assumption(format!(
            "c0 = {:e} exceeds the admissible step {:e}; set allow_large_step to override",
            cfg.c0, bound
        )));
    }
    Ok(over)
}

/// Gradient descent on `J(x) = (2n)⁻¹‖Ax - y‖²` with step `c0`; one step per epoch.
pub fn landweber_run(inst: &ProblemInstance, y: &[f64], cfg: &SolverConfig) -> Result<Trajectory> {
    let over = check_inputs(inst, y, cfg, Method::Landweber)?;
    let acc = cfg.accounting(inst.n());
    let max_updates = plan_max_updates(cfg, &acc);
    let mut rec = Recorder::new(inst, cfg, max_updates);
    let mut x = inst.x0.clone();
    for t in 0..=max_updates {
        let (g, res) = full_gradient(&inst.a, y, &x);
        if rec.due(t) {
            rec.record(t, &x, res)?;
            if rec.stop {
                break;
            }
        }
        if t == max_updates {
            break;
        }
        for (xj, gj) in x.iter_mut().zip(&g) {
            *xj -= cfg.c0 * gj;
        }
    }
    rec.finish(over)
}

/// Stochastic gradient descent with uniformly drawn rows.
pub fn sgd_run(inst: &ProblemInstance, y: &[f64], cfg: &SolverConfig) -> Result<Trajectory> {
    let over = check_inputs(inst, y, cfg, Method::Sgd)?;
    let acc = cfg.accounting(inst.n());
    let max_updates = plan_max_updates(cfg, &acc);
    let mut rec = Recorder::new(inst, cfg, max_updates);
    let mut x = inst.x0.clone();
    let mut idx = IndexStream::with_stream(cfg.seed, cfg.stream, inst.n());
    if rec.due(0) {
        rec.record(0, &x, residual_sq(&inst.a, y, &x))?;
    }
    for k in 1..=max_updates {
        if rec.stop {
            break;
        }
        let i = idx.next().expect("infinite stream");
        sgd_step(inst.a.row(i), y[i], cfg.c0, &mut x);
        if rec.due(k) {
            rec.record(k, &x, residual_sq(&inst.a, y, &x))?;
        }
    }
    rec.finish(over)
}

/// SVRG with the anchor taken as the last iterate of the previous inner loop.
pub fn svrg_run(inst: &ProblemInstance, y: &[f64], cfg: &SolverConfig) -> Result<Trajectory> {
    let over = check_inputs(inst, y, cfg, Method::Svrg)?;
    let acc = cfg.accounting(inst.n());
    let max_updates = plan_max_updates(cfg, &acc);
    let m = cfg.m_freq as u64;
    let mut rec = Recorder::new(inst, cfg, max_updates);
    let mut x = inst.x0.clone();
    let mut idx = IndexStream::with_stream(cfg.seed, cfg.stream, inst.n());
    let (mut grad, res0) = full_gradient(&inst.a, y, &x);
    let mut anchor = x.clone();
    if rec.due(0) {
        rec.record(0, &x, res0)?;
    }
    for k in 1..=max_updates {
        if rec.stop {
            break;
        }
        let i = idx.next().expect("infinite stream");
        svrg_step(inst.a.row(i), &anchor, &grad, cfg.c0, &mut x);
        if k % m == 0 && k < max_updates {
            let (g, res) = full_gradient(&inst.a, y, &x);
            grad = g;
            anchor.copy_from_slice(&x);
            if rec.due(k) {
                rec.record(k, &x, res)?;
            }
        } else if rec.due(k) {
            rec.record(k, &x, residual_sq(&inst.a, y, &x))?;
        }
    }
    rec.finish(over)
}

/// Dispatches on `cfg.method`.
pub fn run(inst: &ProblemInstance, y: &[f64], cfg: &SolverConfig) -> Result<Trajectory> {
    match cfg.method {
        Method::Landweber => landweber_run(inst, y, cfg),
        Method::Sgd => sgd_run(inst, y, cfg),
        Method::Svrg => svrg_run(inst, y, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cp(epoch: f64, error_sq: f64) -> Checkpoint {
        Checkpoint {
            iteration: 0,
            epoch,
            error_sq,
            residual_sq: 0.0,
            iterate: None,
        }
    }

    #[test]
    fn oracle_stop_cases() {
        let mono = [cp(0.0, 3.0), cp(1.0, 2.0), cp(2.0, 1.0)];
        assert_eq!(oracle_stop(&mono).unwrap(), (2.0, 1.0));
        let vee = [cp(0.0, 3.0), cp(1.0, 1.0), cp(2.0, 2.0)];
        assert_eq!(oracle_stop(&vee).unwrap(), (1.0, 1.0));
        let tie = [cp(0.0, 3.0), cp(1.0, 1.0), cp(2.0, 1.0)];
        assert_eq!(oracle_stop(&tie).unwrap(), (1.0, 1.0));
        assert!(oracle_stop(&[]).is_err());
    }

    #[test]
    fn accounting() {
        let a = EpochAccounting::new(Method::Svrg, 1000, 100);
        assert!((a.iterations_per_epoch - 1000.0 * 100.0 / 1100.0).abs() < 1e-12);
        assert_eq!(a.updates_at(1.0), 91);
        assert_eq!(a.max_updates(1.1), 100);
        let s = EpochAccounting::new(Method::Sgd, 10, 3);
        assert_eq!(s.iterations_per_epoch, 10.0);
        assert_eq!(s.epoch_of(25), 2.5);
        let l = EpochAccounting::new(Method::Landweber, 10, 1);
        assert_eq!(l.iterations_per_epoch, 10.0);
        assert_eq!(l.epoch_of(3), 3.0);
    }

    #[test]
    fn method_names_round_trip() {
        for m in [Method::Landweber, Method::Sgd, Method::Svrg] {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
    }
}
