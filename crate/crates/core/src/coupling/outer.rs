use rayon::prelude::*;

use super::mu::solve_mu_from;
use super::{
    context, fp_drift, CouplingConfig, MuSolution, OuterRecord, PastMeasures, Slice, Strategy, TrajectorySolution,
};
use crate::error::{Error, Result};
use crate::fp::{fp_step, fp_step_residual};
use crate::grid::{gradient_central, Grid, GridField, VectorField};
use crate::hjb::{solve_discounted, HjbSolution};
use crate::measure::{
    pushforward, wasserstein1_joint_with, wasserstein1_state_with, ControlField, DensityField, JointMeasure,
};
use crate::model::{ContextKind, ModelSpec};

/// Starting point of an outer iteration.
#[derive(Debug, Clone)]
pub enum InitialGuess<'a> {
    /// `Du = 0` and `m = m0` at every time node.
    Stationary,
    /// One gradient and one density per time node.
    Custom { du: Vec<VectorField>, m: Vec<DensityField> },
    /// A solution on the same time grid, including its policies and HJB
    /// warm starts.
    FromSolution(&'a TrajectorySolution),
}

impl InitialGuess<'_> {
    /// Custom guess from value functions instead of gradients.
    pub fn from_values(u: &[GridField], m: Vec<DensityField>) -> Self {
        InitialGuess::Custom {
            du: u.iter().map(gradient_central).collect(),
            m,
        }
    }
}

#[derive(Debug, Clone)]
struct SliceState {
    du: VectorField,
    m: DensityField,
    hjb: Option<HjbSolution>,
    /// Policy generating `mu`, also the start of the next measure solve.
    policy: Option<ControlField>,
    mu: Option<JointMeasure>,
    /// Policy of the last FP evolution, for damping.
    fp_policy: Option<ControlField>,
}

fn initial_state(m0: &DensityField, cfg: &CouplingConfig, guess: &InitialGuess<'_>) -> Result<Vec<SliceState>> {
    let len = cfg.steps() + 1;
    let grid = m0.grid();
    let state = match guess {
        InitialGuess::Stationary => (0..len)
            .map(|_| SliceState {
                du: VectorField::zeros(grid),
                m: m0.clone(),
                hjb: None,
                policy: None,
                mu: None,
                fp_policy: None,
            })
            .collect(),
        InitialGuess::Custom { du, m } => {
            if du.len() != len || m.len() != len {
                return Err(Error::param("initial_guess", format!("expected {len} time nodes")));
            }
            if du.iter().any(|d| d.grid() != grid) || m.iter().any(|d| d.grid() != grid) {
                return Err(Error::ContextMismatch("initial guess lives on a different grid"));
            }
            du.iter()
                .zip(m)
                .map(|(du, m)| SliceState {
                    du: du.clone(),
                    m: m.clone(),
                    hjb: None,
                    policy: None,
                    mu: None,
                    fp_policy: None,
                })
                .collect()
        }
        InitialGuess::FromSolution(sol) => {
            if sol.slices.len() != len || (sol.dt - cfg.dt).abs() > 1e-12 {
                return Err(Error::param("initial_guess", "solution uses a different time grid"));
            }
            if sol.slices[0].m.grid() != grid {
                return Err(Error::ContextMismatch("initial guess lives on a different grid"));
            }
            sol.slices
                .iter()
                .map(|s| SliceState {
                    du: s.hjb.gradient(),
                    m: s.m.clone(),
                    hjb: Some(s.hjb.clone()),
                    policy: Some(s.policy.clone()),
                    mu: Some(s.mu.clone()),
                    fp_policy: Some(s.policy.clone()),
                })
                .collect()
        }
    };
    Ok(state)
}

fn check_setup(spec: &dyn ModelSpec, m0: &DensityField, cfg: &CouplingConfig) -> Result<Grid> {
    cfg.validate()?;
    let grid = m0.grid();
    if grid.dim() != spec.state_dim() {
        return Err(Error::param("grid.dim", "must match the model's state dimension"));
    }
    Ok(grid)
}

/// Outer Picard on `(Du, m)` for instant-context models, from the
/// stationary guess.
pub fn gamma_iterate(spec: &dyn ModelSpec, m0: &DensityField, cfg: &CouplingConfig) -> Result<TrajectorySolution> {
    gamma_iterate_from(spec, m0, cfg, &InitialGuess::Stationary)
}

/// Each outer step solves the measure equation and the HJB equation on
/// every slice from the current `(Du, m)`, then evolves `m` with the new
/// policies blended into the previous ones. The error is
/// `max_j |Du_k - Du_{k-1}|_inf + W1(m_k, m_{k-1})`.
pub fn gamma_iterate_from(
    spec: &dyn ModelSpec,
    m0: &DensityField,
    cfg: &CouplingConfig,
    guess: &InitialGuess<'_>,
) -> Result<TrajectorySolution> {
    check_setup(spec, m0, cfg)?;
    gamma(spec, m0, cfg, cfg.rho, guess)
}

pub(crate) fn gamma(
    spec: &dyn ModelSpec,
    m0: &DensityField,
    cfg: &CouplingConfig,
    rho: f64,
    guess: &InitialGuess<'_>,
) -> Result<TrajectorySolution> {
    if spec.context_kind() == ContextKind::History {
        return Err(Error::ContextMismatch("the gamma iteration needs an instant-context model"));
    }
    let grid = m0.grid();
    let mut state = initial_state(m0, cfg, guess)?;
    let mut log = Vec::new();
    let mut rate: f64 = 0.0;
    let mut converged = false;
    for k in 1..=cfg.max_outer {
        let solved: Vec<(MuSolution, HjbSolution)> = state
            .par_iter()
            .map(|s| {
                let mu = solve_mu_from(spec, &s.m, &s.du, None, s.policy.as_ref(), cfg.inner_tol, cfg.max_inner, &cfg.ot)?;
                let ctx = context(spec, None, &mu.mu)?;
                let warm = s.hjb.as_ref().map(HjbSolution::warm_start);
                let hjb = solve_discounted(spec, &ctx, rho, grid, &cfg.hjb, warm.as_ref())?;
                Ok((mu, hjb))
            })
            .collect::<Result<_>>()?;

        let policies: Vec<ControlField> = solved
            .iter()
            .zip(&state)
            .map(|((_, hjb), s)| match &s.fp_policy {
                Some(prev) => hjb.policy.blend(prev, cfg.damping),
                None => hjb.policy.clone(),
            })
            .collect();
        let mut ms = vec![m0.clone()];
        for j in 0..state.len() - 1 {
            let g = fp_drift(spec, &context(spec, None, &solved[j].0.mu)?, &policies[j])?;
            ms.push(fp_step(&ms[j], &g, cfg.dt)?);
        }

        let dus: Vec<VectorField> = solved.iter().map(|(_, h)| h.gradient()).collect();
        let errs: Vec<(f64, f64)> = (0..state.len())
            .into_par_iter()
            .map(|j| Ok((dus[j].sup_distance(&state[j].du), wasserstein1_state_with(&ms[j], &state[j].m, &cfg.ot)?)))
            .collect::<Result<_>>()?;
        let error = errs.iter().map(|(a, b)| a + b).fold(0.0, f64::max);
        log.push(OuterRecord {
            iteration: k,
            error,
            du_error: Some(errs.iter().map(|e| e.0).fold(0.0, f64::max)),
            m_error: Some(errs.iter().map(|e| e.1).fold(0.0, f64::max)),
            mu_error: None,
        });

        for ((s, (mu, hjb)), ((du, m), policy)) in
            state.iter_mut().zip(solved).zip(dus.into_iter().zip(ms).zip(policies))
        {
            rate = rate.max(mu.rate);
            s.fp_policy = Some(policy);
            s.du = du;
            s.m = m;
            s.hjb = Some(hjb);
            s.policy = Some(mu.policy);
            s.mu = Some(mu.mu);
        }
        if error <= cfg.outer_tol {
            converged = true;
            break;
        }
    }
    finalize(spec, cfg, rho, Strategy::Gamma, state, log, converged, rate)
}

/// Outer Picard on the measure trajectory, from the stationary guess.
pub fn psi_iterate(spec: &dyn ModelSpec, m0: &DensityField, cfg: &CouplingConfig) -> Result<TrajectorySolution> {
    psi_iterate_from(spec, m0, cfg, &InitialGuess::Stationary)
}

/// Each outer step solves the HJB equation on every slice against the
/// current measures (aggregated over the past for memory models), evolves
/// `m`, and pushes it forward by the new policies blended into the
/// previous ones. The error is `max_j W1(mu_{k+1}(t_j), mu_k(t_j))`.
pub fn psi_iterate_from(
    spec: &dyn ModelSpec,
    m0: &DensityField,
    cfg: &CouplingConfig,
    guess: &InitialGuess<'_>,
) -> Result<TrajectorySolution> {
    check_setup(spec, m0, cfg)?;
    psi(spec, m0, cfg, cfg.rho, guess)
}

pub(crate) fn psi(
    spec: &dyn ModelSpec,
    m0: &DensityField,
    cfg: &CouplingConfig,
    rho: f64,
    guess: &InitialGuess<'_>,
) -> Result<TrajectorySolution> {
    let grid = m0.grid();
    let times = cfg.times();
    let mut state = initial_state(m0, cfg, guess)?;
    let blend_first = state[0].policy.is_some();
    if state[0].mu.is_none() {
        let nu_hat: Vec<JointMeasure> = state
            .iter()
            .map(|s| pushforward(&s.m, &ControlField::constant(grid, spec.control_set().reference())))
            .collect::<Result<_>>()?;
        for j in 0..state.len() {
            let past = PastMeasures {
                times: &times[..=j],
                past: &nu_hat[..j],
            };
            let policy = super::feedback(spec, &context(spec, Some(&past), &nu_hat[j])?, &state[j].du)?;
            state[j].mu = Some(pushforward(&state[j].m, &policy)?);
            state[j].policy = Some(policy);
        }
    }

    let mut log = Vec::new();
    let mut converged = false;
    for k in 1..=cfg.max_outer {
        let mus: Vec<JointMeasure> = state.iter().map(|s| s.mu.clone().expect("initialized")).collect();
        let solved: Vec<HjbSolution> = (0..state.len())
            .into_par_iter()
            .map(|j| {
                let past = PastMeasures {
                    times: &times[..=j],
                    past: &mus[..j],
                };
                let ctx = context(spec, Some(&past), &mus[j])?;
                let warm = state[j].hjb.as_ref().map(HjbSolution::warm_start);
                solve_discounted(spec, &ctx, rho, grid, &cfg.hjb, warm.as_ref())
            })
            .collect::<Result<_>>()?;

        let policies: Vec<ControlField> = solved
            .iter()
            .zip(&state)
            .map(|(hjb, s)| match (&s.policy, blend_first || k > 1) {
                (Some(prev), true) => hjb.policy.blend(prev, cfg.damping),
                _ => hjb.policy.clone(),
            })
            .collect();
        let mut ms = vec![m0.clone()];
        for j in 0..state.len() - 1 {
            let past = PastMeasures {
                times: &times[..=j],
                past: &mus[..j],
            };
            let g = fp_drift(spec, &context(spec, Some(&past), &mus[j])?, &policies[j])?;
            ms.push(fp_step(&ms[j], &g, cfg.dt)?);
        }
        let new_mus: Vec<JointMeasure> = ms
            .iter()
            .zip(&policies)
            .map(|(m, p)| pushforward(m, p))
            .collect::<Result<_>>()?;

        let dus: Vec<VectorField> = solved.iter().map(HjbSolution::gradient).collect();
        let errs: Vec<(f64, f64, f64)> = (0..state.len())
            .into_par_iter()
            .map(|j| {
                Ok((
                    wasserstein1_joint_with(&new_mus[j], &mus[j], &cfg.ot)?,
                    dus[j].sup_distance(&state[j].du),
                    wasserstein1_state_with(&ms[j], &state[j].m, &cfg.ot)?,
                ))
            })
            .collect::<Result<_>>()?;
        let error = errs.iter().map(|e| e.0).fold(0.0, f64::max);
        log.push(OuterRecord {
            iteration: k,
            error,
            du_error: Some(errs.iter().map(|e| e.1).fold(0.0, f64::max)),
            m_error: Some(errs.iter().map(|e| e.2).fold(0.0, f64::max)),
            mu_error: Some(error),
        });

        for (s, (((hjb, du), (m, policy)), mu)) in state
            .iter_mut()
            .zip(solved.into_iter().zip(dus).zip(ms.into_iter().zip(policies)).zip(new_mus))
        {
            s.du = du;
            s.m = m;
            s.hjb = Some(hjb);
            s.policy = Some(policy);
            s.mu = Some(mu);
        }
        if error <= cfg.outer_tol {
            converged = true;
            break;
        }
    }
    finalize(spec, cfg, rho, Strategy::Psi, state, log, converged, 0.0)
}

/// Dispatches on `cfg.strategy` with discount `cfg.rho`.
pub fn run(
    spec: &dyn ModelSpec,
    m0: &DensityField,
    cfg: &CouplingConfig,
    guess: &InitialGuess<'_>,
) -> Result<TrajectorySolution> {
    check_setup(spec, m0, cfg)?;
    run_at(spec, m0, cfg, cfg.rho, guess)
}

pub(crate) fn run_at(
    spec: &dyn ModelSpec,
    m0: &DensityField,
    cfg: &CouplingConfig,
    rho: f64,
    guess: &InitialGuess<'_>,
) -> Result<TrajectorySolution> {
    match cfg.strategy {
        Strategy::Gamma => gamma(spec, m0, cfg, rho, guess),
        Strategy::Psi => psi(spec, m0, cfg, rho, guess),
    }
}

struct Polished {
    hjb: HjbSolution,
    mu: MuSolution,
    hjb_residual: f64,
}

/// Alternates the measure and HJB solves on one slice with `m` fixed until
/// the HJB residual against the final measure is within tolerance.
fn polish(
    spec: &dyn ModelSpec,
    cfg: &CouplingConfig,
    rho: f64,
    m: &DensityField,
    mut hjb: HjbSolution,
    start: Option<&ControlField>,
    past: Option<&PastMeasures<'_>>,
) -> Result<Polished> {
    let grid = m.grid();
    let mut start = start.cloned();
    let mut round = 0;
    loop {
        let mu = solve_mu_from(spec, m, &hjb.gradient(), past, start.as_ref(), cfg.inner_tol, cfg.max_inner, &cfg.ot)?;
        let ctx = context(spec, past, &mu.mu)?;
        let r = hjb.residual_in(spec, &ctx)?;
        if r <= cfg.hjb.tol || round >= cfg.polish_rounds {
            return Ok(Polished {
                hjb,
                mu,
                hjb_residual: r,
            });
        }
        hjb = solve_discounted(spec, &ctx, rho, grid, &cfg.hjb, Some(&hjb.warm_start()))?;
        start = Some(mu.policy);
        round += 1;
    }
}

/// Final sweep in time: each slice is polished against the density
/// evolved from the already polished earlier slices, so the returned
/// trajectory solves the FP steps exactly with its own policies.
#[allow(clippy::too_many_arguments)]
fn finalize(
    spec: &dyn ModelSpec,
    cfg: &CouplingConfig,
    rho: f64,
    strategy: Strategy,
    state: Vec<SliceState>,
    log: Vec<OuterRecord>,
    outer_converged: bool,
    mut rate: f64,
) -> Result<TrajectorySolution> {
    let times = cfg.times();
    let mut slices: Vec<Slice> = Vec::with_capacity(state.len());
    let mut mus: Vec<JointMeasure> = Vec::with_capacity(state.len());
    let mut drift = None;
    for (j, s) in state.into_iter().enumerate() {
        let (m, fp_residual) = match (&drift, slices.last()) {
            (Some(g), Some(prev)) => {
                let m = fp_step(&prev.m, g, cfg.dt)?;
                let r = fp_step_residual(&prev.m, &m, g, cfg.dt);
                (m, r)
            }
            _ => (s.m, 0.0),
        };
        let past = PastMeasures {
            times: &times[..=j],
            past: &mus,
        };
        let hjb = s.hjb.expect("at least one outer iteration");
        let p = polish(spec, cfg, rho, &m, hjb, s.policy.as_ref(), Some(&past))?;
        drift = Some(fp_drift(spec, &context(spec, Some(&past), &p.mu.mu)?, &p.mu.policy)?);
        rate = rate.max(p.mu.rate);
        mus.push(p.mu.mu.clone());
        slices.push(Slice {
            t: times[j],
            hjb: p.hjb,
            m,
            mu: p.mu.mu,
            policy: p.mu.policy,
            mu_residual: p.mu.residual,
            mu_rate: p.mu.rate,
            mu_iterations: p.mu.iterations,
            mu_converged: p.mu.converged,
            hjb_residual: p.hjb_residual,
            fp_residual,
        });
    }
    let converged = outer_converged
        && slices
            .iter()
            .all(|s| s.mu_converged && s.mu_residual <= cfg.inner_tol && s.hjb_residual <= cfg.hjb.tol);
    Ok(TrajectorySolution {
        strategy,
        rho: Some(rho),
        dt: cfg.dt,
        times,
        slices,
        log,
        converged,
        contraction_rate: rate,
    })
}
