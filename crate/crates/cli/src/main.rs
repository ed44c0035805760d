use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use stochreg_cli::commands::{cmd_generate, cmd_solve, GenerateArgs, SolveArgs};
use stochreg_cli::error::{CliError, Result};
use stochreg_cli::experiment::{run_experiment, run_precondition_study, write_experiment, write_study};
use stochreg_cli::expr::{FreqExpr, StepExpr};
use stochreg_cli::output::{read_text, to_json, write_atomic};
use stochreg_cli::verify::{run_verify, Level};
use stochreg_cli::ExperimentSpec;
use stochreg_core::{Method, ProblemKind};

#[derive(Parser)]
#[command(name = "stochreg", version, about = "SVRG, SGD and Landweber experiments on ill-posed test problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a test instance with noisy data as JSON.
    Generate {
        /// s-phillips, s-gravity or s-shaw.
        problem: ProblemKind,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0.0)]
        nu: f64,
        #[arg(long = "eps", default_value_t = 0.0)]
        epsilon: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Scale A so that ‖n⁻¹AᵗA‖ = 1.
        #[arg(long)]
        normalize: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one trajectory on a generated instance.
    Solve {
        instance: PathBuf,
        #[arg(long)]
        method: Method,
        /// Step size, e.g. `5*c/M`, `4*c/n`, `c` or `0.01`.
        #[arg(long)]
        c0: StepExpr,
        /// SVRG frequency, e.g. `100` or `0.1*n`.
        #[arg(long = "M")]
        m_freq: Option<FreqExpr>,
        #[arg(long, default_value_t = 100.0)]
        max_epochs: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Checkpoint cadence in epochs.
        #[arg(long, default_value_t = 1.0)]
        every: f64,
        #[arg(long)]
        allow_large_step: bool,
        /// Trajectory CSV; the metadata goes next to it with a .json extension.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an experiment grid described by a JSON spec.
    Experiment {
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the verification suite.
    Verify {
        #[arg(long, value_enum, default_value_t = Level::Fast)]
        level: Level,
        /// Write the JSON report here as well as to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every cell on A and on the preconditioned system.
    PreconditionStudy {
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("STOCHREG_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Input(format!("STOCHREG_THREADS must be a positive integer, got '{v}'")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Input(e.to_string()))?;
    }
    Ok(())
}

fn load_spec(path: &Path) -> Result<ExperimentSpec> {
    ExperimentSpec::from_json(&read_text(path)?)
}

fn execute(cmd: Command) -> Result<()> {
    configure_threads()?;
    match cmd {
        Command::Generate {
            problem,
            n,
            nu,
            epsilon,
            seed,
            normalize,
            out,
        } => {
            let s = cmd_generate(&GenerateArgs {
                problem,
                n,
                nu,
                epsilon,
                seed,
                normalize,
                out: out.clone(),
            })?;
            println!("wrote {}", out.display());
            println!("delta = {:e}  delta_bar = {:e}  |B| = {:e}  c = {:e}", s.delta, s.delta_bar, s.norm_b, s.c);
        }
        Command::Solve {
            instance,
            method,
            c0,
            m_freq,
            max_epochs,
            seed,
            every,
            allow_large_step,
            out,
        } => {
            let (_, meta) = cmd_solve(&SolveArgs {
                instance,
                method,
                c0,
                m_freq,
                max_epochs,
                seed,
                every,
                allow_large_step,
                out: out.clone(),
            })?;
            if meta.step_override {
                eprintln!("warning: c0 = {:e} exceeds the admissible step", meta.c0);
            }
            println!("wrote {}", out.display());
            println!("k* = {} epochs  e(k*) = {:e}", meta.k_star, meta.e_at_k_star);
        }
        Command::Experiment { spec, out } => {
            let spec = load_spec(&spec)?;
            let res = run_experiment(&spec)?;
            write_experiment(&spec, &res, &out)?;
            for f in &res.failures {
                eprintln!("cell failed: {f}");
            }
            println!("wrote {} rows to {}", res.rows.len(), out.join("results.csv").display());
        }
        Command::PreconditionStudy { spec, out } => {
            let spec = load_spec(&spec)?;
            let res = run_precondition_study(&spec)?;
            write_study(&spec, &res, &out)?;
            println!("wrote {} paired rows to {}", res.paired.len(), out.join("paired.csv").display());
            match res.max_relative_gap {
                Some(g) => println!("max relative gap in e at k* = {g:e}"),
                None => println!("no complete pairs"),
            }
        }
        Command::Verify { level, out } => {
            let report = run_verify(level);
            let text = to_json(&report);
            if let Some(p) = out {
                write_atomic(&p, text.as_bytes())?;
            }
            print!("{text}");
            for c in &report.checks {
                let tag = match (c.pass, c.hard) {
                    (true, _) => "PASS",
                    (false, true) => "FAIL",
                    (false, false) => "WARN",
                };
                eprintln!("{tag} {} = {:e} (threshold {:e})", c.name, c.value, c.threshold);
            }
            let failed = report.hard_failures();
            if !failed.is_empty() {
                return Err(CliError::Verification(failed));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 4 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
