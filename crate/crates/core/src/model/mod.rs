//! Control problem data: drift `b`, running cost `l`, the control set `A`,
//! the Hamiltonian `H(x, p; nu) = sup_a { -p.b(x, a; nu) - l(x, a; nu) }`
//! and its maximizer `alpha*`.
//!
//! A [`ModelSpec`] is frozen against a measure context into
//! [`Coefficients`]; the measure-dependent parts (moments, convolutions)
//! are computed once there so that per-node evaluation is cheap.

mod control;
pub mod examples;
mod memory;
pub mod validate;

use std::fmt::Debug;

use serde::{Deserialize, Serialize};

pub use control::{ControlSet, ControlShape, DEFAULT_MESH};
pub use memory::{history_until, memory_aggregate, Kernel};

use crate::error::{Error, Result};
use crate::grid::Point;
use crate::measure::JointMeasure;

/// The measure argument of the coefficients.
#[derive(Debug, Clone, Copy)]
pub enum MuContext<'a> {
    /// Instantaneous joint measure `mu(t)`.
    Instant(&'a JointMeasure),
    /// The trajectory `{mu(r)}_{r <= t}` on the solver time grid.
    History(History<'a>),
}

/// `times[k]` carries `past[k]` for `k < past.len()` and the last time
/// carries `current`.
#[derive(Debug, Clone, Copy)]
pub struct History<'a> {
    pub times: &'a [f64],
    pub past: &'a [JointMeasure],
    pub current: &'a JointMeasure,
}

impl<'a> History<'a> {
    pub fn new(times: &'a [f64], past: &'a [JointMeasure], current: &'a JointMeasure) -> Result<Self> {
        if times.len() != past.len() + 1 {
            return Err(Error::TrajectoryTooShort {
                available: past.len() + 1,
                needed: times.len(),
            });
        }
        Ok(Self { times, past, current })
    }

    pub fn time(&self) -> f64 {
        *self.times.last().expect("history has at least one time")
    }

    pub fn measure(&self, k: usize) -> &'a JointMeasure {
        if k < self.past.len() {
            &self.past[k]
        } else {
            self.current
        }
    }
}

impl<'a> MuContext<'a> {
    pub fn kind(&self) -> ContextKind {
        match self {
            MuContext::Instant(_) => ContextKind::Instant,
            MuContext::History(_) => ContextKind::History,
        }
    }

    /// The measure at the current time.
    pub fn current(&self) -> &'a JointMeasure {
        match self {
            MuContext::Instant(m) => m,
            MuContext::History(h) => h.current,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextKind {
    Instant,
    History,
}

/// Declared structural constants of a model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct ModelConstants {
    /// Bound on `|b|` and `|l|`.
    pub k: f64,
    /// Lipschitz constant of `b` and `l` in `x`.
    pub l: f64,
    /// Lipschitz constant of the coefficients in the measure (at `|p| <= 1`).
    pub l_mu: f64,
    /// Lipschitz constant of `alpha*` in the measure.
    pub lambda0: f64,
    /// Lipschitz constant of `alpha*` in `p`.
    pub lambda1: f64,
    /// Lipschitz constant of `b` in the control.
    pub big_lambda0: Option<f64>,
}

pub trait ModelSpec: Debug + Send + Sync {
    fn name(&self) -> &str;
    fn state_dim(&self) -> usize;
    fn control_set(&self) -> &ControlSet;
    fn constants(&self) -> ModelConstants;
    fn context_kind(&self) -> ContextKind {
        ContextKind::Instant
    }
    /// Evaluates the measure-dependent parts of `b` and `l` once.
    fn coefficients(&self, ctx: &MuContext<'_>) -> Result<Box<dyn Coefficients>>;
}

/// `b` and `l` at a fixed measure context.
pub trait Coefficients: Send + Sync {
    fn drift(&self, x: &Point, a: &Point) -> Point;
    fn cost(&self, x: &Point, a: &Point) -> f64;
    fn closed_form_control(&self, _x: &Point, _p: &Point) -> Option<Point> {
        None
    }
    fn closed_form_hamiltonian(&self, _x: &Point, _p: &Point) -> Option<f64> {
        None
    }
}

/// A model frozen against one measure context.
pub struct FrozenModel<'s> {
    spec: &'s dyn ModelSpec,
    coef: Box<dyn Coefficients>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HamiltonianEval {
    pub value: f64,
    /// Brute force settled on the boundary of `A` where the objective is
    /// steep relative to the mesh spacing; the sup may be inaccurate.
    pub mesh_too_coarse: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlEval {
    pub control: Point,
    /// Brute force found separated near-maximizers, violating uniqueness.
    pub non_unique: bool,
}

impl<'s> FrozenModel<'s> {
    pub fn new(spec: &'s dyn ModelSpec, ctx: &MuContext<'_>) -> Result<Self> {
        if spec.context_kind() != ctx.kind() {
            return Err(Error::ContextMismatch(match spec.context_kind() {
                ContextKind::Instant => "model expects an instantaneous measure",
                ContextKind::History => "model expects a measure history",
            }));
        }
        Ok(Self {
            spec,
            coef: spec.coefficients(ctx)?,
        })
    }

    pub fn spec(&self) -> &'s dyn ModelSpec {
        self.spec
    }

    pub fn control_set(&self) -> &ControlSet {
        self.spec.control_set()
    }

    pub fn drift(&self, x: &Point, a: &Point) -> Point {
        self.coef.drift(x, a)
    }

    pub fn cost(&self, x: &Point, a: &Point) -> f64 {
        self.coef.cost(x, a)
    }

    /// `-p.b(x, a) - l(x, a)`.
    pub fn objective(&self, x: &Point, p: &Point, a: &Point) -> f64 {
        -p.dot(&self.coef.drift(x, a)) - self.coef.cost(x, a)
    }

    pub fn has_closed_form(&self) -> bool {
        self.coef.closed_form_control(&Point::zeros(), &Point::zeros()).is_some()
    }

    /// Exhaustive maximization over the control mesh; ties go to the first
    /// mesh point.
    pub fn brute_force_argmax(&self, x: &Point, p: &Point, mesh: usize) -> Point {
        self.brute_force(x, p, mesh).0
    }

    /// Maximizer, maximum and a flag for separated near-maximizers.
    pub(crate) fn brute_force(&self, x: &Point, p: &Point, mesh: usize) -> (Point, f64, bool) {
        let set = self.control_set();
        let pts = set.mesh_points(mesh);
        let mut best = pts[0];
        let mut best_val = self.objective(x, p, &pts[0]);
        let vals: Vec<f64> = pts.iter().map(|a| self.objective(x, p, a)).collect();
        for (a, &v) in pts.iter().zip(&vals) {
            if v > best_val {
                best_val = v;
                best = *a;
            }
        }
        let spacing = set.mesh_spacing(mesh);
        let tie = 1e-12 * (1.0 + best_val.abs());
        let non_unique = pts
            .iter()
            .zip(&vals)
            .any(|(a, &v)| v >= best_val - tie && (a - best).norm() > 1.5 * spacing);
        (best, best_val, non_unique)
    }

    pub fn optimal_control(&self, x: &Point, p: &Point) -> Point {
        self.coef
            .closed_form_control(x, p)
            .unwrap_or_else(|| self.brute_force_argmax(x, p, self.control_set().mesh()))
    }

    pub fn optimal_control_checked(&self, x: &Point, p: &Point) -> ControlEval {
        match self.coef.closed_form_control(x, p) {
            Some(control) => ControlEval {
                control,
                non_unique: false,
            },
            None => {
                let (control, _, non_unique) = self.brute_force(x, p, self.control_set().mesh());
                ControlEval { control, non_unique }
            }
        }
    }

    pub fn hamiltonian(&self, x: &Point, p: &Point) -> f64 {
        self.hamiltonian_checked(x, p).value
    }

    pub fn hamiltonian_checked(&self, x: &Point, p: &Point) -> HamiltonianEval {
        if let Some(value) = self.coef.closed_form_hamiltonian(x, p) {
            return HamiltonianEval {
                value,
                mesh_too_coarse: false,
            };
        }
        let set = *self.control_set();
        let (a, value, _) = self.brute_force(x, p, set.mesh());
        let spacing = set.mesh_spacing(set.mesh());
        let mut mesh_too_coarse = false;
        if set.on_boundary(&a, 0.5 * spacing) {
            // Largest one-sided slope of the objective at the maximizer.
            let step = 0.5 * spacing;
            let mut slope = 0.0f64;
            for k in 0..set.dim() {
                let mut e = Point::zeros();
                e[k] = step;
                for s in [-1.0, 1.0] {
                    let q = a + e * s;
                    slope = slope.max((self.objective(x, p, &q) - value).abs() / step);
                }
            }
            mesh_too_coarse = slope * spacing > 1e-3 * (1.0 + value.abs());
        }
        HamiltonianEval {
            value,
            mesh_too_coarse,
        }
    }

    /// `H_p = -b(x, alpha*)`.
    pub fn hamiltonian_gradient_p(&self, x: &Point, p: &Point) -> Point {
        let a = self.optimal_control(x, p);
        -self.coef.drift(x, &a)
    }
}

/// `H(x, p; ctx)`.
pub fn hamiltonian_value(spec: &dyn ModelSpec, x: &Point, p: &Point, ctx: &MuContext<'_>) -> Result<HamiltonianEval> {
    Ok(FrozenModel::new(spec, ctx)?.hamiltonian_checked(x, p))
}

/// `alpha*(x, p; ctx)`.
pub fn optimal_control(spec: &dyn ModelSpec, x: &Point, p: &Point, ctx: &MuContext<'_>) -> Result<ControlEval> {
    Ok(FrozenModel::new(spec, ctx)?.optimal_control_checked(x, p))
}

/// `H_p(x, p; ctx) = -b(x, alpha*; ctx)`.
pub fn hamiltonian_gradient_p(spec: &dyn ModelSpec, x: &Point, p: &Point, ctx: &MuContext<'_>) -> Result<Point> {
    Ok(FrozenModel::new(spec, ctx)?.hamiltonian_gradient_p(x, p))
}

pub fn brute_force_argmax(
    spec: &dyn ModelSpec,
    x: &Point,
    p: &Point,
    ctx: &MuContext<'_>,
    mesh: usize,
) -> Result<Point> {
    if mesh < 2 {
        return Err(Error::param("mesh", "need at least 2 points per axis"));
    }
    Ok(FrozenModel::new(spec, ctx)?.brute_force_argmax(x, p, mesh))
}
