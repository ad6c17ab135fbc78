use serde::{Deserialize, Serialize};

use super::History;
use crate::error::{Error, Result};
use crate::measure::{Atom, JointMeasure};

/// Nonnegative memory kernel `K(tau)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Kernel {
    Zero,
    Constant { value: f64 },
    /// `K(tau) = slope * tau`.
    Linear { slope: f64 },
    /// `K(tau) = scale * exp(-rate * tau)`.
    Exponential { scale: f64, rate: f64 },
}

impl Kernel {
    pub fn eval(&self, tau: f64) -> f64 {
        match *self {
            Kernel::Zero => 0.0,
            Kernel::Constant { value } => value,
            Kernel::Linear { slope } => slope * tau,
            Kernel::Exponential { scale, rate } => scale * (-rate * tau).exp(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Kernel::Zero => true,
            Kernel::Constant { value } => value >= 0.0 && value.is_finite(),
            Kernel::Linear { slope } => slope >= 0.0 && slope.is_finite(),
            Kernel::Exponential { scale, rate } => scale >= 0.0 && scale.is_finite() && rate.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::param("kernel", "must be finite and nonnegative on [0, inf)"))
        }
    }

    /// `sup |K|` over `[0, t]`.
    pub fn sup_on(&self, t: f64) -> f64 {
        match *self {
            Kernel::Zero => 0.0,
            Kernel::Constant { value } => value,
            Kernel::Linear { slope } => slope * t,
            Kernel::Exponential { scale, rate } => scale * if rate >= 0.0 { 1.0 } else { (-rate * t).exp() },
        }
    }
}

/// `int_0^t K(tau) nu(tau) dtau` by the trapezoid rule on the history's
/// time grid. The result has mass equal to the trapezoid value of
/// `int_0^t K` when every slice is a probability measure.
pub fn memory_aggregate(history: &History<'_>, kernel: &Kernel) -> Result<JointMeasure> {
    let times = history.times;
    let steps = times.len();
    let mut atoms: Vec<Atom> = Vec::new();
    if steps < 2 || matches!(kernel, Kernel::Zero) {
        return Ok(JointMeasure::zero());
    }
    for k in 0..steps {
        let left = if k > 0 { times[k] - times[k - 1] } else { 0.0 };
        let right = if k + 1 < steps { times[k + 1] - times[k] } else { 0.0 };
        let weight = 0.5 * (left + right) * kernel.eval(times[k]);
        if weight == 0.0 {
            continue;
        }
        atoms.extend(history.measure(k).atoms().iter().map(|a| Atom { w: a.w * weight, ..*a }));
    }
    JointMeasure::new(atoms, history.current.grid())
}

/// History up to `t` drawn from a full trajectory on a uniform time grid.
pub fn history_until<'a>(times: &'a [f64], trajectory: &'a [JointMeasure], t: f64) -> Result<History<'a>> {
    let k = times.iter().position(|&s| (s - t).abs() <= 1e-12 * (1.0 + t.abs()));
    match k {
        Some(k) if k < trajectory.len() => History::new(&times[..=k], &trajectory[..k], &trajectory[k]),
        _ => Err(Error::TrajectoryTooShort {
            available: trajectory.len(),
            needed: times.iter().take_while(|&&s| s <= t).count() + 1,
        }),
    }
}
