use serde::{Deserialize, Serialize};

use super::{context, PastMeasures, TrajectorySolution};
use crate::error::{Error, Result};
use crate::fp::{holder_sup, HolderReport};
use crate::measure::{wasserstein1_joint_with, wasserstein1_state_with, JointMeasure, OtOptions};
use crate::model::{FrozenModel, ModelSpec};

/// Control mesh used to bound `|l|` from below, per axis.
const COST_MESH: usize = 21;
const MAX_PAIRS: usize = 2000;

/// Empirical constants of a solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsetReport {
    /// `max_j rho |u(t_j)|_inf`; `None` for ergodic solutions.
    pub rho_u_max: Option<f64>,
    /// `max |l|` over nodes, the solution's controls and a coarse control
    /// mesh, at every slice.
    pub cost_max: f64,
    /// The model's declared bound `K`.
    pub k_bound: f64,
    pub du_sup: f64,
    pub du_holder: HolderReport,
    pub m_holder: HolderReport,
    pub mu_holder: HolderReport,
    pub contraction_rate: f64,
    pub max_hjb_residual: f64,
    pub max_mu_residual: f64,
    pub max_fp_residual: f64,
    pub max_mass_error: f64,
    pub min_density: f64,
}

pub fn kset_report(spec: &dyn ModelSpec, sol: &TrajectorySolution, ot: &OtOptions) -> Result<KsetReport> {
    if sol.slices.len() < 2 {
        return Err(Error::TrajectoryTooShort {
            available: sol.slices.len(),
            needed: 2,
        });
    }
    let mus: Vec<JointMeasure> = sol.slices.iter().map(|s| s.mu.clone()).collect();
    let set = spec.control_set();
    let mesh = set.mesh_points(COST_MESH);
    let mut cost_max: f64 = 0.0;
    for (j, s) in sol.slices.iter().enumerate() {
        let past = PastMeasures {
            times: &sol.times[..=j],
            past: &mus[..j],
        };
        let ctx = context(spec, Some(&past), &mus[j])?;
        let frozen = FrozenModel::new(spec, &ctx)?;
        let grid = s.m.grid();
        for i in 0..grid.len() {
            let x = grid.coords(i);
            let own = [s.policy.values()[i], s.hjb.policy.values()[i]];
            for a in own.iter().chain(&mesh) {
                cost_max = cost_max.max(frozen.cost(&x, a).abs());
            }
        }
    }

    let dus: Vec<_> = sol.slices.iter().map(|s| s.hjb.gradient()).collect();
    let du_holder = holder_sup(&sol.times, MAX_PAIRS, |j, k| Ok(dus[j].sup_distance(&dus[k])))?;
    let m_holder = holder_sup(&sol.times, MAX_PAIRS, |j, k| {
        wasserstein1_state_with(&sol.slices[j].m, &sol.slices[k].m, ot)
    })?;
    let mu_holder = holder_sup(&sol.times, MAX_PAIRS, |j, k| wasserstein1_joint_with(&mus[j], &mus[k], ot))?;

    Ok(KsetReport {
        rho_u_max: sol.rho_u_max(),
        cost_max,
        k_bound: spec.constants().k,
        du_sup: dus.iter().map(|d| d.max_norm()).fold(0.0, f64::max),
        du_holder,
        m_holder,
        mu_holder,
        contraction_rate: sol.contraction_rate,
        max_hjb_residual: sol.max_hjb_residual(),
        max_mu_residual: sol.max_mu_residual(),
        max_fp_residual: sol.max_fp_residual(),
        max_mass_error: sol.max_mass_error(),
        min_density: sol
            .slices
            .iter()
            .flat_map(|s| s.m.values().iter().copied())
            .fold(f64::INFINITY, f64::min),
    })
}

/// `max_j |Du_a(t_j) - Du_b(t_j)|_inf + W1(m_a(t_j), m_b(t_j))`.
pub fn solution_distance(a: &TrajectorySolution, b: &TrajectorySolution, ot: &OtOptions) -> Result<f64> {
    if a.slices.len() != b.slices.len() {
        return Err(Error::param("solution", "time grids differ"));
    }
    let mut worst: f64 = 0.0;
    for (sa, sb) in a.slices.iter().zip(&b.slices) {
        let d = sa.hjb.gradient().sup_distance(&sb.hjb.gradient()) + wasserstein1_state_with(&sa.m, &sb.m, ot)?;
        worst = worst.max(d);
    }
    Ok(worst)
}
