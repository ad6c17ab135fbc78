use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::outer::{run_at, InitialGuess};
use super::{context, CouplingConfig, PastMeasures, TrajectorySolution};
use crate::error::{Error, Result};
use crate::hjb::{solve_ergodic, ErgodicMode};
use crate::measure::{wasserstein1_state_with, DensityField, JointMeasure};
use crate::model::ModelSpec;

/// One discount level of the ergodic driver. Increments compare with the
/// previous level and are maxima over time nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord {
    pub level: usize,
    pub rho: f64,
    /// `rho u(x0)` at `t = 0`.
    pub lambda0: f64,
    pub lambda_increment: Option<f64>,
    pub shape_increment: Option<f64>,
    pub m_increment: Option<f64>,
    /// `max_j (|d lambda| + |d w|_inf + W1(d m))`.
    pub increment: Option<f64>,
    pub outer_iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct ErgodicDrive {
    /// Last level with `lambda = rho u(x0)` and `u` replaced by
    /// `w = u - u(x0)` on every slice; `rho` is `None`.
    pub solution: TrajectorySolution,
    pub levels: Vec<LevelRecord>,
    /// `max_j |lambda_j - lambda_j^direct|` against direct ergodic solves
    /// with the final measures frozen.
    pub direct_lambda_gap: f64,
    /// `max_j |w_j - w_j^direct|_inf`.
    pub direct_shape_gap: f64,
    pub converged: bool,
}

/// Runs the configured strategy at `rho_k = rho0 2^-k`, each level warm
/// started from the previous one, until the increment drops below
/// `cfg.ergodic.tol` (after at least `min_levels` levels) or the schedule
/// is exhausted.
pub fn ergodic_drive(
    spec: &dyn ModelSpec,
    m0: &DensityField,
    cfg: &CouplingConfig,
    guess: &InitialGuess<'_>,
) -> Result<ErgodicDrive> {
    cfg.validate()?;
    if m0.grid().dim() != spec.state_dim() {
        return Err(Error::param("grid.dim", "must match the model's state dimension"));
    }
    let sched = cfg.ergodic;
    if sched.max_levels == 0 {
        return Err(Error::param("ergodic.max_levels", "must be positive"));
    }
    let mut levels: Vec<LevelRecord> = Vec::new();
    let mut prev: Option<TrajectorySolution> = None;
    let mut all_converged = true;
    for k in 0..sched.max_levels {
        let rho = sched.rho0 * 0.5f64.powi(k as i32);
        let sol = match &prev {
            Some(p) => run_at(spec, m0, cfg, rho, &InitialGuess::FromSolution(p))?,
            None => run_at(spec, m0, cfg, rho, guess)?,
        };
        all_converged &= sol.converged;
        let (dl, dw, dm) = match &prev {
            Some(p) => {
                let parts: Vec<(f64, f64, f64)> = sol
                    .slices
                    .par_iter()
                    .zip(&p.slices)
                    .map(|(a, b)| {
                        Ok((
                            (a.hjb.lambda_estimate() - b.hjb.lambda_estimate()).abs(),
                            a.hjb.normalized().sup_distance(&b.hjb.normalized()),
                            wasserstein1_state_with(&a.m, &b.m, &cfg.ot)?,
                        ))
                    })
                    .collect::<Result<_>>()?;
                let max = |f: fn(&(f64, f64, f64)) -> f64| parts.iter().map(f).fold(0.0, f64::max);
                let total = parts.iter().map(|p| p.0 + p.1 + p.2).fold(0.0, f64::max);
                (Some(max(|p| p.0)), Some(max(|p| p.1)), Some((max(|p| p.2), total)))
            }
            None => (None, None, None),
        };
        levels.push(LevelRecord {
            level: k,
            rho,
            lambda0: sol.slices[0].hjb.lambda_estimate(),
            lambda_increment: dl,
            shape_increment: dw,
            m_increment: dm.map(|d| d.0),
            increment: dm.map(|d| d.1),
            outer_iterations: sol.outer_iterations(),
            converged: sol.converged,
        });
        prev = Some(sol);
        let inc = levels.last().and_then(|l| l.increment);
        if k + 1 >= sched.min_levels && inc.is_some_and(|i| i <= sched.tol) {
            break;
        }
    }

    let mut solution = prev.expect("at least one level");
    let times = solution.times.clone();
    let mus: Vec<JointMeasure> = solution.slices.iter().map(|s| s.mu.clone()).collect();
    let grid = m0.grid();
    let gaps: Vec<(f64, f64)> = (0..solution.slices.len())
        .into_par_iter()
        .map(|j| {
            let past = PastMeasures {
                times: &times[..=j],
                past: &mus[..j],
            };
            let ctx = context(spec, Some(&past), &mus[j])?;
            let s = &solution.slices[j];
            let direct = solve_ergodic(
                spec,
                &ctx,
                grid,
                cfg.hjb.tol,
                ErgodicMode::Direct,
                &cfg.hjb,
                Some(&s.hjb.warm_start()),
            )?;
            Ok((
                (direct.lambda_estimate() - s.hjb.lambda_estimate()).abs(),
                direct.normalized().sup_distance(&s.hjb.normalized()),
            ))
        })
        .collect::<Result<_>>()?;

    solution.rho = None;
    for s in &mut solution.slices {
        s.hjb = s.hjb.clone().into_limit();
    }
    let last = levels.last().and_then(|l| l.increment);
    Ok(ErgodicDrive {
        solution,
        converged: all_converged && last.is_some_and(|i| i <= sched.tol),
        levels,
        direct_lambda_gap: gaps.iter().map(|g| g.0).fold(0.0, f64::max),
        direct_shape_gap: gaps.iter().map(|g| g.1).fold(0.0, f64::max),
    })
}
