//! Fixed-point drivers coupling the per-slice HJB solves, the
//! Fokker-Planck evolution and the joint measure.
//!
//! * [`solve_mu`]: Picard iteration for `mu = (Id, alpha*(., Du; mu)) # m`.
//! * [`gamma_iterate`]: outer Picard on `(Du, m)`.
//! * [`psi_iterate`]: outer Picard on the trajectory `t -> mu(t)`; the only
//!   strategy for models with memory.
//! * [`ergodic_drive`]: the discounted problem along `rho_k = rho0 2^-k`.
//! * [`kset_report`]: empirical bounds and Hölder ratios of a solution.
//!
//! Slices are independent inside one outer iteration and are solved in
//! parallel; results do not depend on the thread count.

mod diagnostics;
mod ergodic;
mod mu;
mod outer;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use diagnostics::{kset_report, solution_distance, KsetReport};
pub use ergodic::{ergodic_drive, ErgodicDrive, LevelRecord};
pub use mu::{solve_mu, MuSolution, PastMeasures};
pub use outer::{gamma_iterate, gamma_iterate_from, psi_iterate, psi_iterate_from, run, InitialGuess};

use crate::error::{Error, Result};
use crate::fp::step_count;
use crate::grid::{Point, VectorField};
use crate::hjb::{HjbOptions, HjbSolution};
use crate::measure::{ControlField, DensityField, JointMeasure, OtOptions};
use crate::model::{FrozenModel, History, ModelSpec, MuContext};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Gamma,
    Psi,
}

/// Discount levels `rho_k = rho0 2^-k` for the ergodic driver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ErgodicSchedule {
    pub rho0: f64,
    pub max_levels: usize,
    /// Levels run even when the increment is already below `tol`.
    pub min_levels: usize,
    pub tol: f64,
}

impl Default for ErgodicSchedule {
    fn default() -> Self {
        Self {
            rho0: 1.0,
            max_levels: 30,
            min_levels: 2,
            tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CouplingConfig {
    pub outer_tol: f64,
    pub max_outer: usize,
    /// Weight of the fresh policy when blending with the previous one;
    /// `1` disables damping.
    pub damping: f64,
    pub inner_tol: f64,
    pub max_inner: usize,
    pub rho: f64,
    pub ergodic: ErgodicSchedule,
    pub dt: f64,
    pub t_final: f64,
    pub strategy: Strategy,
    pub hjb: HjbOptions,
    pub ot: OtOptions,
    /// Alternations of the measure and HJB solves per slice after the outer
    /// loop stops.
    pub polish_rounds: usize,
}

impl Default for CouplingConfig {
    fn default() -> Self {
        Self {
            outer_tol: 1e-6,
            max_outer: 200,
            damping: 0.5,
            inner_tol: 1e-10,
            max_inner: 500,
            rho: 1.0,
            ergodic: ErgodicSchedule::default(),
            dt: 0.02,
            t_final: 1.0,
            strategy: Strategy::Gamma,
            hjb: HjbOptions::default(),
            ot: OtOptions::default(),
            polish_rounds: 10,
        }
    }
}

impl CouplingConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |field: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::param(field, "must be positive"))
            }
        };
        positive("outer_tol", self.outer_tol)?;
        positive("inner_tol", self.inner_tol)?;
        positive("hjb.tol", self.hjb.tol)?;
        positive("rho", self.rho)?;
        positive("ergodic.rho0", self.ergodic.rho0)?;
        positive("ergodic.tol", self.ergodic.tol)?;
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::param("damping", "must lie in (0, 1]"));
        }
        if self.max_outer == 0 || self.max_inner == 0 {
            return Err(Error::param("max_outer", "iteration budgets must be positive"));
        }
        step_count(self.t_final, self.dt)?;
        Ok(())
    }

    pub fn steps(&self) -> usize {
        step_count(self.t_final, self.dt).expect("validated config")
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps()).map(|j| j as f64 * self.dt).collect()
    }
}

/// Everything known at one time node.
#[derive(Debug, Clone)]
pub struct Slice {
    pub t: f64,
    pub hjb: HjbSolution,
    pub m: DensityField,
    pub mu: JointMeasure,
    /// The control field whose pushforward of `m` is `mu`.
    pub policy: ControlField,
    /// `W1(mu, (Id, alpha*(., Du; mu)) # m)`.
    pub mu_residual: f64,
    pub mu_rate: f64,
    pub mu_iterations: usize,
    pub mu_converged: bool,
    /// HJB scheme residual of `u` with the measure `mu`.
    pub hjb_residual: f64,
    /// Residual of the implicit FP step that produced `m` under the final
    /// drift of the previous slice; zero at `t = 0`.
    pub fp_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuterRecord {
    pub iteration: usize,
    pub error: f64,
    pub du_error: Option<f64>,
    pub m_error: Option<f64>,
    pub mu_error: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrajectorySolution {
    pub strategy: Strategy,
    /// Discount of the solve; `None` for ergodic solutions.
    pub rho: Option<f64>,
    pub dt: f64,
    pub times: Vec<f64>,
    pub slices: Vec<Slice>,
    pub log: Vec<OuterRecord>,
    pub converged: bool,
    /// Largest measured Picard ratio over all measure solves.
    pub contraction_rate: f64,
}

impl TrajectorySolution {
    pub fn outer_iterations(&self) -> usize {
        self.log.len()
    }

    pub fn max_hjb_residual(&self) -> f64 {
        self.slices.iter().map(|s| s.hjb_residual).fold(0.0, f64::max)
    }

    pub fn max_mu_residual(&self) -> f64 {
        self.slices.iter().map(|s| s.mu_residual).fold(0.0, f64::max)
    }

    pub fn max_fp_residual(&self) -> f64 {
        self.slices.iter().map(|s| s.fp_residual).fold(0.0, f64::max)
    }

    pub fn max_mass_error(&self) -> f64 {
        self.slices.iter().map(|s| (s.m.mass() - 1.0).abs()).fold(0.0, f64::max)
    }

    /// `max_j rho |u(t_j)|_inf`, for discounted solutions.
    pub fn rho_u_max(&self) -> Option<f64> {
        self.rho
            .map(|rho| self.slices.iter().map(|s| rho * s.hjb.u.max_abs()).fold(0.0, f64::max))
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.slices.iter().map(|s| s.hjb.lambda_estimate()).collect()
    }

    /// Rows `iteration,error,du_error,m_error,mu_error`.
    pub fn convergence_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.16e}"));
        let mut out = String::from("iteration,error,du_error,m_error,mu_error\n");
        for r in &self.log {
            let _ = writeln!(
                out,
                "{},{:.16e},{},{},{}",
                r.iteration,
                r.error,
                opt(r.du_error),
                opt(r.m_error),
                opt(r.mu_error)
            );
        }
        out
    }

    /// Rows `t,node,u,m,a0[,a1]` with `u` the solution (normalized for
    /// ergodic runs) and `a` the control generating `mu`.
    pub fn trajectory_csv(&self) -> String {
        let Some(first) = self.slices.first() else {
            return String::new();
        };
        let grid = first.m.grid();
        let cdim = first.policy.values().iter().any(|a| a[1] != 0.0) as usize + 1;
        let mut out = String::from("t,node,u,m,a0");
        if cdim == 2 {
            out.push_str(",a1");
        }
        out.push('\n');
        for s in &self.slices {
            for i in 0..grid.len() {
                let a = s.policy.values()[i];
                let _ = write!(out, "{:.16e},{},{:.16e},{:.16e},{:.16e}", s.t, i, s.hjb.u.values()[i], s.m.values()[i], a[0]);
                if cdim == 2 {
                    let _ = write!(out, ",{:.16e}", a[1]);
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn fp_trajectory(&self) -> crate::fp::FpTrajectory {
        crate::fp::FpTrajectory {
            dt: self.dt,
            times: self.times.clone(),
            densities: self.slices.iter().map(|s| s.m.clone()).collect(),
            drifts: Vec::new(),
        }
    }
}

/// Measure context for slice `j` given the trajectory so far. Instant
/// models only look at `current`.
pub(crate) fn context<'a>(
    spec: &dyn ModelSpec,
    past: Option<&PastMeasures<'a>>,
    current: &'a JointMeasure,
) -> Result<MuContext<'a>> {
    match spec.context_kind() {
        crate::model::ContextKind::Instant => Ok(MuContext::Instant(current)),
        crate::model::ContextKind::History => {
            let past = past.ok_or(Error::ContextMismatch("memory models need the past trajectory"))?;
            Ok(MuContext::History(History::new(past.times, past.past, current)?))
        }
    }
}

/// `alpha*(x_i, Du_i; ctx)` at every node, projected onto `A`.
pub(crate) fn feedback(spec: &dyn ModelSpec, ctx: &MuContext<'_>, du: &VectorField) -> Result<ControlField> {
    let frozen = FrozenModel::new(spec, ctx)?;
    let grid = du.grid();
    let set = spec.control_set();
    let values = (0..grid.len())
        .map(|i| set.project(&frozen.optimal_control(&grid.coords(i), &du.values()[i])))
        .collect();
    Ok(ControlField::from_raw(grid, values))
}

/// FP drift `g = H_p = -b(x, a(x); ctx)`.
pub(crate) fn fp_drift(spec: &dyn ModelSpec, ctx: &MuContext<'_>, policy: &ControlField) -> Result<VectorField> {
    let frozen = FrozenModel::new(spec, ctx)?;
    let grid = policy.grid();
    let values: Vec<Point> = (0..grid.len())
        .map(|i| -frozen.drift(&grid.coords(i), &policy.values()[i]))
        .collect();
    VectorField::new(grid, values)
}
