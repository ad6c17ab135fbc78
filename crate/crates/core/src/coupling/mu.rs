use super::{context, feedback};
use crate::error::Result;
use crate::grid::VectorField;
use crate::measure::{pushforward, wasserstein1_joint_with, ControlField, DensityField, JointMeasure, OtOptions};
use crate::model::ModelSpec;

/// Measures at the earlier time nodes, for models with memory.
/// `times` includes the current time, so `times.len() == past.len() + 1`.
#[derive(Debug, Clone, Copy)]
pub struct PastMeasures<'a> {
    pub times: &'a [f64],
    pub past: &'a [JointMeasure],
}

#[derive(Debug, Clone)]
pub struct MuSolution {
    pub mu: JointMeasure,
    /// Control field with `mu = (Id, policy) # m`.
    pub policy: ControlField,
    /// `W1(mu, (Id, alpha*(., Du; mu)) # m)`.
    pub residual: f64,
    /// Largest ratio of successive residuals; `0` when fewer than two
    /// residuals exceeded the noise floor.
    pub rate: f64,
    pub iterations: usize,
    /// Residual of every iterate, in order.
    pub steps: Vec<f64>,
    pub damped: bool,
    pub converged: bool,
}

/// Residuals below this are too close to rounding to form ratios.
const RATE_FLOOR: f64 = 1e-11;
const DAMPING: f64 = 0.5;
const DAMPED_BUDGET: usize = 10;

/// Picard iteration `mu_{k+1} = (Id, alpha*(., Du; mu_k)) # m` started from
/// the feedback against `m` paired with the reference control.
///
/// Stops at the first iterate whose residual is at most `tol`. When the
/// plain iteration fails with a measured ratio of at least one, it is
/// rerun with damping `0.5` on the policy and ten times the budget.
/// Non-convergence is reported in the result, not as an error.
pub fn solve_mu(
    spec: &dyn ModelSpec,
    m: &DensityField,
    du: &VectorField,
    past: Option<&PastMeasures<'_>>,
    tol: f64,
    max_iter: usize,
    ot: &OtOptions,
) -> Result<MuSolution> {
    solve_mu_from(spec, m, du, past, None, tol, max_iter, ot)
}

/// [`solve_mu`] started from `(Id, start) # m` when `start` is given.
#[allow(clippy::too_many_arguments)]
pub(crate) fn solve_mu_from(
    spec: &dyn ModelSpec,
    m: &DensityField,
    du: &VectorField,
    past: Option<&PastMeasures<'_>>,
    start: Option<&ControlField>,
    tol: f64,
    max_iter: usize,
    ot: &OtOptions,
) -> Result<MuSolution> {
    if du.grid() != m.grid() {
        return Err(crate::Error::ContextMismatch("density and gradient grids differ"));
    }
    if max_iter == 0 {
        return Err(crate::Error::param("max_iter", "must be positive"));
    }
    let initial = match start {
        Some(p) => p.clone(),
        None => {
            let nu_hat = pushforward(m, &ControlField::constant(m.grid(), spec.control_set().reference()))?;
            feedback(spec, &context(spec, past, &nu_hat)?, du)?
        }
    };
    let plain = picard(spec, m, du, past, initial.clone(), 1.0, tol, max_iter, ot)?;
    if plain.converged || plain.rate < 1.0 {
        return Ok(plain);
    }
    let mut damped = picard(spec, m, du, past, initial, DAMPING, tol, DAMPED_BUDGET * max_iter, ot)?;
    damped.rate = damped.rate.max(plain.rate);
    damped.damped = true;
    Ok(damped)
}

#[allow(clippy::too_many_arguments)]
fn picard(
    spec: &dyn ModelSpec,
    m: &DensityField,
    du: &VectorField,
    past: Option<&PastMeasures<'_>>,
    mut policy: ControlField,
    theta: f64,
    tol: f64,
    max_iter: usize,
    ot: &OtOptions,
) -> Result<MuSolution> {
    let mut mu = pushforward(m, &policy)?;
    let mut steps = Vec::new();
    let mut rate: f64 = 0.0;
    for it in 1..=max_iter {
        let next_policy = feedback(spec, &context(spec, past, &mu)?, du)?;
        let next = pushforward(m, &next_policy)?;
        let r = wasserstein1_joint_with(&mu, &next, ot)?;
        if let Some(&prev) = steps.last() {
            if prev > RATE_FLOOR && r > RATE_FLOOR {
                rate = rate.max(r / prev);
            }
        }
        steps.push(r);
        if r <= tol || it == max_iter {
            return Ok(MuSolution {
                mu,
                policy,
                residual: r,
                rate,
                iterations: it,
                steps,
                damped: false,
                converged: r <= tol,
            });
        }
        if theta < 1.0 {
            policy = next_policy.blend(&policy, theta);
            mu = pushforward(m, &policy)?;
        } else {
            policy = next_policy;
            mu = next;
        }
    }
    unreachable!("max_iter is positive")
}
