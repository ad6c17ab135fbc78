//! JSON run configuration and its cross-field checks.

use std::path::PathBuf;

use qsmfg::coupling::{CouplingConfig, ErgodicSchedule, Strategy};
use qsmfg::grid::{Grid, Point};
use qsmfg::hjb::HjbOptions;
use qsmfg::measure::{DensityField, OtOptions};
use qsmfg::model::examples::{
    ConstantModel, Example1, Example1Params, MemoryModel, MemoryParams, SeparatedModel, SeparatedParams,
};
use qsmfg::model::validate::ValidateOptions;
use qsmfg::model::{ContextKind, ModelSpec};
use serde::{Deserialize, Serialize};

/// A configuration problem, reported with exit code 2.
#[derive(Debug, thiserror::Error)]
#[error("invalid config: `{field}`: {reason}")]
pub struct ConfigError {
    pub field: String,
    pub reason: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantParams {
    pub dim: usize,
    pub c: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", content = "params", rename_all = "snake_case")]
pub enum ModelConfig {
    Example1(Example1Params),
    Example2(MemoryParams),
    Separated(SeparatedParams),
    Constant(ConstantParams),
}

impl ModelConfig {
    pub fn build(&self) -> Result<Box<dyn ModelSpec>, ConfigError> {
        let param_err = |e: qsmfg::Error| ConfigError::new("model.params", e.to_string());
        Ok(match *self {
            ModelConfig::Example1(p) => Box::new(Example1::new(p).map_err(param_err)?),
            ModelConfig::Example2(p) => Box::new(MemoryModel::new(p).map_err(param_err)?),
            ModelConfig::Separated(p) => Box::new(SeparatedModel::new(p).map_err(param_err)?),
            ModelConfig::Constant(p) => {
                if !(p.dim == 1 || p.dim == 2) {
                    return Err(ConfigError::new("model.params.dim", "must be 1 or 2"));
                }
                if !p.c.is_finite() {
                    return Err(ConfigError::new("model.params.c", "must be finite"));
                }
                Box::new(ConstantModel::new(p.dim, p.c))
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dim: usize,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub t_final: f64,
    pub dt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Discounted,
    Ergodic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub outer_tol: f64,
    pub max_outer: usize,
    pub damping: f64,
    pub inner_tol: f64,
    pub max_inner: usize,
    pub polish_rounds: usize,
    pub hjb: HjbOptions,
}

impl Default for Tolerances {
    fn default() -> Self {
        let c = CouplingConfig::default();
        Self {
            outer_tol: c.outer_tol,
            max_outer: c.max_outer,
            damping: c.damping,
            inner_tol: c.inner_tol,
            max_inner: c.max_inner,
            polish_rounds: c.polish_rounds,
            hjb: c.hjb,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialDensity {
    Uniform,
    Delta { node: usize },
    VonMises { center: [f64; 2], concentration: f64 },
    TwoBump { c1: [f64; 2], c2: [f64; 2], concentration: f64, weight: f64 },
}

impl InitialDensity {
    pub fn build(&self, grid: Grid) -> Result<DensityField, ConfigError> {
        let pt = |c: [f64; 2]| Point::new(c[0], c[1]);
        Ok(match *self {
            InitialDensity::Uniform => DensityField::uniform(grid),
            InitialDensity::Delta { node } => {
                if node >= grid.len() {
                    return Err(ConfigError::new("m0.node", "outside the grid"));
                }
                DensityField::delta(grid, node)
            }
            InitialDensity::VonMises { center, concentration } => {
                if !(concentration >= 0.0 && concentration.is_finite()) {
                    return Err(ConfigError::new("m0.concentration", "must be nonnegative"));
                }
                DensityField::von_mises(grid, pt(center), concentration)
            }
            InitialDensity::TwoBump {
                c1,
                c2,
                concentration,
                weight,
            } => {
                if !(concentration >= 0.0 && concentration.is_finite()) {
                    return Err(ConfigError::new("m0.concentration", "must be nonnegative"));
                }
                if !(0.0..=1.0).contains(&weight) {
                    return Err(ConfigError::new("m0.weight", "must lie in [0, 1]"));
                }
                DensityField::two_bump(grid, pt(c1), pt(c2), concentration, weight)
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Diagnostics {
    /// Empirical constants of the solution in the summary.
    pub kset: bool,
    /// Model spot-checks before solving, written to `validation.json`.
    pub validate: bool,
    /// Densities as `densities.bin` next to the CSVs.
    pub binary: bool,
}

impl Default for Diagnostics {
    fn default() -> Self {
        Self {
            kset: true,
            validate: false,
            binary: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub grid: GridConfig,
    pub time: TimeConfig,
    pub mode: Mode,
    #[serde(default = "default_strategy")]
    pub strategy: Strategy,
    /// Discount for discounted runs.
    #[serde(default)]
    pub rho: Option<f64>,
    /// Discount sequence for ergodic runs.
    #[serde(default)]
    pub ergodic: ErgodicSchedule,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub ot: OtOptions,
    pub m0: InitialDensity,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub diagnostics: Diagnostics,
    /// Seeds the sampled model spot-checks.
    #[serde(default)]
    pub seed: u64,
}

fn default_strategy() -> Strategy {
    Strategy::Gamma
}

fn default_output() -> PathBuf {
    PathBuf::from("output")
}

/// Everything needed to run once the configuration has been checked.
pub struct Prepared {
    pub spec: Box<dyn ModelSpec>,
    pub m0: DensityField,
    pub coupling: CouplingConfig,
    pub validate: ValidateOptions,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::new("config", e.to_string()))
    }

    pub fn prepare(&self) -> Result<Prepared, ConfigError> {
        let spec = self.model.build()?;
        let grid =
            Grid::new(self.grid.dim, self.grid.n).map_err(|e| ConfigError::new("grid", e.to_string()))?;
        if spec.state_dim() != grid.dim() {
            return Err(ConfigError::new("grid.dim", "must match the model's state dimension"));
        }
        if spec.context_kind() == ContextKind::History && self.strategy != Strategy::Psi {
            return Err(ConfigError::new("strategy", "models with memory require `psi`"));
        }
        let rho = match (self.mode, self.rho) {
            (Mode::Discounted, Some(rho)) if rho > 0.0 && rho.is_finite() => rho,
            (Mode::Discounted, _) => return Err(ConfigError::new("rho", "discounted runs need rho > 0")),
            (Mode::Ergodic, Some(_)) => {
                return Err(ConfigError::new("rho", "ergodic runs take their discounts from `ergodic`"))
            }
            (Mode::Ergodic, None) => CouplingConfig::default().rho,
        };
        let t = self.tolerances;
        let coupling = CouplingConfig {
            outer_tol: t.outer_tol,
            max_outer: t.max_outer,
            damping: t.damping,
            inner_tol: t.inner_tol,
            max_inner: t.max_inner,
            rho,
            ergodic: self.ergodic,
            dt: self.time.dt,
            t_final: self.time.t_final,
            strategy: self.strategy,
            hjb: t.hjb,
            ot: self.ot,
            polish_rounds: t.polish_rounds,
        };
        coupling.validate().map_err(|e| match e {
            qsmfg::Error::InvalidParameter { field, reason } => ConfigError::new(field, reason),
            other => ConfigError::new("config", other.to_string()),
        })?;
        if self.mode == Mode::Ergodic && self.ergodic.max_levels == 0 {
            return Err(ConfigError::new("ergodic.max_levels", "must be positive"));
        }
        let m0 = self.m0.build(grid)?;
        Ok(Prepared {
            spec,
            m0,
            coupling,
            validate: ValidateOptions {
                seed: self.seed,
                ..Default::default()
            },
        })
    }
}
