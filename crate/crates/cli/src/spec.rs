use serde::{Deserialize, Serialize};
use stochreg_core::{Method, ProblemKind};

use crate::error::{input, Result};
use crate::expr::{FreqExpr, StepExpr};

pub const SPEC_SCHEMA_VERSION: u32 = 1;

fn schema_version() -> u32 {
    SPEC_SCHEMA_VERSION
}

fn default_every() -> f64 {
    1.0
}

/// One experiment grid: every `(nu, epsilon)` pair is run with every method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub problem: ProblemKind,
    pub n: usize,
    pub nu: Vec<f64>,
    pub epsilon: Vec<f64>,
    pub methods: Vec<MethodSpec>,
    pub runs: usize,
    pub max_epochs: f64,
    pub base_seed: u64,
    #[serde(default)]
    pub precondition: bool,
    /// Draw fresh noise for every run instead of one draw per cell.
    #[serde(default)]
    pub resample_noise: bool,
    /// Scale `A` so that `‖B‖ = 1`.
    #[serde(default)]
    pub normalize: bool,
    /// Checkpoint cadence in epochs (SVRG anchors are always recorded).
    #[serde(default = "default_every")]
    pub checkpoint_every: f64,
    /// Stop a run once its error exceeds this multiple of its best error.
    #[serde(default)]
    pub early_exit: Option<f64>,
    /// Bias/variance curves on a shared update grid.
    #[serde(default)]
    pub moments: Option<MomentsSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub method: Method,
    pub c0: StepExpr,
    #[serde(rename = "M", default, skip_serializing_if = "Option::is_none")]
    pub m_freq: Option<FreqExpr>,
    /// Overrides the grid-wide epoch cap for this method.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_epochs: Option<f64>,
}

/// Checkpoints at update counts `0, stride, 2 stride, ..., <= iterations`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentsSpec {
    pub stride: u64,
    pub iterations: u64,
    /// One step size for every method (evaluated with `M` below, or with
    /// each method's own `M`); by default each method keeps its own.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c0: Option<StepExpr>,
    #[serde(rename = "M", default, skip_serializing_if = "Option::is_none")]
    pub m_freq: Option<FreqExpr>,
}

impl MomentsSpec {
    pub fn grid(&self) -> Vec<u64> {
        (0..=self.iterations / self.stride).map(|k| k * self.stride).collect()
    }
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SPEC_SCHEMA_VERSION {
            return Err(input(format!(
                "unsupported spec schema_version {} (expected {SPEC_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.n < 2 {
            return Err(input("n must be at least 2"));
        }
        if self.runs == 0 {
            return Err(input("runs must be at least 1"));
        }
        if self.nu.is_empty() || self.epsilon.is_empty() || self.methods.is_empty() {
            return Err(input("nu, epsilon and methods must be nonempty"));
        }
        if self.nu.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(input("nu values must be nonnegative"));
        }
        if self.epsilon.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(input("epsilon values must be nonnegative"));
        }
        if !(self.max_epochs > 0.0 && self.max_epochs.is_finite()) {
            return Err(input("max_epochs must be positive"));
        }
        if !(self.checkpoint_every > 0.0 && self.checkpoint_every.is_finite()) {
            return Err(input("checkpoint_every must be positive"));
        }
        if let Some(f) = self.early_exit {
            if !(f > 1.0) {
                return Err(input("early_exit must exceed 1"));
            }
        }
        for m in &self.methods {
            if m.method == Method::Svrg && m.m_freq.is_none() {
                return Err(input("svrg needs M"));
            }
            if let Some(e) = m.max_epochs {
                if !(e > 0.0 && e.is_finite()) {
                    return Err(input("per-method max_epochs must be positive"));
                }
            }
        }
        if let Some(mo) = &self.moments {
            if mo.stride == 0 || mo.iterations == 0 {
                return Err(input("moments stride and iterations must be positive"));
            }
        }
        Ok(())
    }
}
