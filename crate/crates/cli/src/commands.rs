//! `generate` and `solve`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stochreg_core::linalg::step_constant;
use stochreg_core::problems::{add_noise, normalize, smooth_solution, SCHEMA_VERSION};
use stochreg_core::solvers::run;
use stochreg_core::{InstanceBundle, Method, ProblemKind, SolverConfig, Trajectory};

use crate::error::{input, Result};
use crate::expr::{FreqExpr, StepExpr};
use crate::output::{read_text, to_json, write_atomic};

#[derive(Clone, Debug)]
pub struct GenerateArgs {
    pub problem: ProblemKind,
    pub n: usize,
    pub nu: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub normalize: bool,
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerateSummary {
    pub delta: f64,
    pub delta_bar: f64,
    pub norm_b: f64,
    pub c: f64,
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<GenerateSummary> {
    let mut inst = args.problem.generate(args.n)?;
    if args.normalize {
        inst = normalize(&inst)?;
    }
    let inst = smooth_solution(&inst, args.nu)?;
    let noise = add_noise(&inst, args.epsilon, args.seed)?;
    let summary = GenerateSummary {
        delta: noise.delta,
        delta_bar: noise.delta_bar,
        norm_b: inst.gram()?.spectral_norm(),
        c: step_constant(&inst.a)?,
    };
    let bundle = InstanceBundle::new(inst, noise);
    let mut text = bundle.to_json()?;
    text.push('\n');
    write_atomic(&args.out, text.as_bytes())?;
    Ok(summary)
}

#[derive(Clone, Debug)]
pub struct SolveArgs {
    pub instance: PathBuf,
    pub method: Method,
    pub c0: StepExpr,
    pub m_freq: Option<FreqExpr>,
    pub max_epochs: f64,
    pub seed: u64,
    pub every: f64,
    pub allow_large_step: bool,
    pub out: PathBuf,
}

/// Sidecar written next to the trajectory CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveMetadata {
    pub schema_version: u32,
    pub instance: String,
    pub method: Method,
    pub c0_expr: String,
    pub c0: f64,
    /// Reference constant the expression was evaluated with.
    pub c: f64,
    #[serde(rename = "M")]
    pub m_freq: Option<usize>,
    pub max_epochs: f64,
    pub seed: u64,
    pub k_star: f64,
    pub e_at_k_star: f64,
    pub step_override: bool,
    pub checkpoints: usize,
}

pub fn sidecar_path(out: &Path) -> PathBuf {
    out.with_extension("json")
}

pub fn cmd_solve(args: &SolveArgs) -> Result<(Trajectory, SolveMetadata)> {
    let bundle = InstanceBundle::from_json(&read_text(&args.instance)?)?;
    let inst = &bundle.instance;
    let n = inst.n();
    let m_freq = args.m_freq.as_ref().map(|f| f.resolve(n));
    if args.method == Method::Svrg && m_freq.is_none() {
        return Err(input("svrg needs --M"));
    }
    let c = match args.method {
        Method::Landweber => 1.0 / inst.gram()?.spectral_norm(),
        _ => step_constant(&inst.a)?,
    };
    let c0 = args.c0.evaluate(c, n, m_freq)?;
    let mut cfg = SolverConfig::new(args.method, c0)
        .max_epochs(args.max_epochs)
        .seed(args.seed)
        .every(args.every)
        .allow_large_step(args.allow_large_step);
    if args.method == Method::Svrg {
        cfg.m_freq = m_freq.unwrap_or(1);
    }
    let t = run(inst, &bundle.noise.y_delta, &cfg)?;
    let meta = SolveMetadata {
        schema_version: SCHEMA_VERSION,
        instance: args.instance.display().to_string(),
        method: args.method,
        c0_expr: args.c0.to_string(),
        c0,
        c,
        m_freq: (args.method == Method::Svrg).then_some(cfg.m_freq),
        max_epochs: args.max_epochs,
        seed: args.seed,
        k_star: t.k_star,
        e_at_k_star: t.e_at_k_star,
        step_override: t.step_override,
        checkpoints: t.checkpoints.len(),
    };
    write_atomic(&args.out, t.to_csv().as_bytes())?;
    write_atomic(&sidecar_path(&args.out), to_json(&meta).as_bytes())?;
    Ok((t, meta))
}
