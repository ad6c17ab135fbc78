//! Built-in models.
//!
//! * [`Example1`]: `b = b0(x; nu) - a`, `l = |a|^2 / (2 l0(x; nu))` on the
//!   ball of radius `R`, with
//!   `l0(nu) = clamp(delta + eps |int a dnu|, delta, delta + eps R)` and
//!   `b0(x; nu) = kappa int a phi_sigma(x - y) dnu(y, a)`.
//!   `alpha*` is Lipschitz in `nu` with constant `R eps / delta`.
//! * [`MemoryModel`]: the same coefficients evaluated on the normalized
//!   memory aggregate `int_0^t K(tau) mu(tau) dtau`.
//! * [`SeparatedModel`]: `b = beta(x) - a`,
//!   `l = |a|^2 / 2 + V(x) - l1(nu)`, so the measure only shifts `H`.
//! * [`ConstantModel`]: `b = 0`, `l = c`.

use std::collections::HashMap;
use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use super::{memory_aggregate, Coefficients, ContextKind, ControlSet, Kernel, ModelConstants, ModelSpec, MuContext};
use crate::error::{Error, Result};
use crate::grid::Point;
use crate::measure::JointMeasure;

fn check_dim(dim: usize) -> Result<()> {
    if (1..=2).contains(&dim) {
        Ok(())
    } else {
        Err(Error::param("dim", "must be 1 or 2"))
    }
}

fn positive(field: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::param(field, "must be positive and finite"))
    }
}

fn nonnegative(field: &'static str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::param(field, "must be nonnegative and finite"))
    }
}

/// Periodic von Mises bump with peak 1 and width `sigma` per axis.
fn bump(z: &Point, dim: usize, sigma: f64) -> f64 {
    let s = 1.0 / (4.0 * PI * PI * sigma * sigma);
    (0..dim).map(|k| ((TAU * z[k]).cos() - 1.0) * s).sum::<f64>().exp()
}

/// `sup |phi'|` of the one-axis bump, by dense sampling.
fn bump_lipschitz(sigma: f64) -> f64 {
    let s = 1.0 / (4.0 * PI * PI * sigma * sigma);
    (0..=20_000)
        .map(|i| {
            let z = 0.5 * i as f64 / 20_000.0;
            (((TAU * z).cos() - 1.0) * s).exp() * TAU * s * (TAU * z).sin().abs()
        })
        .fold(0.0, f64::max)
        * 1.001
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Example1Params {
    pub dim: usize,
    pub radius: f64,
    pub delta: f64,
    pub epsilon: f64,
    pub kappa: f64,
    pub sigma: f64,
    /// Amplitude of the state cost `V(x) = potential sum_k cos(2 pi x_k)`
    /// added to `l`; zero gives the pure control cost.
    pub potential: f64,
    pub mesh: usize,
}

impl Default for Example1Params {
    fn default() -> Self {
        Self {
            dim: 1,
            radius: 1.0,
            delta: 0.5,
            epsilon: 0.25,
            kappa: 0.2,
            sigma: 0.15,
            potential: 0.0,
            mesh: super::DEFAULT_MESH,
        }
    }
}

impl Example1Params {
    pub fn validate(&self) -> Result<()> {
        check_dim(self.dim)?;
        positive("radius", self.radius)?;
        positive("delta", self.delta)?;
        nonnegative("epsilon", self.epsilon)?;
        nonnegative("kappa", self.kappa)?;
        positive("sigma", self.sigma)?;
        if !self.potential.is_finite() {
            return Err(Error::param("potential", "must be finite"));
        }
        if self.mesh < 2 {
            return Err(Error::param("mesh", "need at least 2 points per axis"));
        }
        Ok(())
    }

    /// `R eps / delta`.
    pub fn lambda0(&self) -> f64 {
        self.radius * self.epsilon / self.delta
    }

    fn constants(&self) -> ModelConstants {
        let r = self.radius;
        let lip_phi = if self.kappa > 0.0 { bump_lipschitz(self.sigma) } else { 0.0 };
        let l_b_mu = self.kappa * f64::max(1.0, r * lip_phi) * (self.dim as f64).sqrt();
        let l_l_mu = self.epsilon * r * r / (2.0 * self.delta * self.delta);
        let v_max = self.potential.abs() * self.dim as f64;
        let v_lip = TAU * self.potential.abs() * (self.dim as f64).sqrt();
        ModelConstants {
            k: f64::max(self.kappa * r + r, r * r / (2.0 * self.delta) + v_max),
            l: f64::max(self.kappa * r * lip_phi * (self.dim as f64).sqrt(), v_lip),
            l_mu: l_b_mu.max(l_l_mu),
            lambda0: self.lambda0(),
            lambda1: self.delta + self.epsilon * r,
            big_lambda0: Some(1.0),
        }
    }

    fn freeze(&self, nu: Option<&JointMeasure>) -> Example1Coefficients {
        let (l0, sources) = match nu {
            Some(nu) if nu.mass() > 0.0 => {
                let mass = nu.mass();
                let moment = nu.control_moment() / mass;
                let l0 = (self.delta + self.epsilon * moment.norm())
                    .clamp(self.delta, self.delta + self.epsilon * self.radius);
                let sources = if self.kappa > 0.0 { collapse(nu, 1.0 / mass) } else { Vec::new() };
                (l0, sources)
            }
            _ => (self.delta, Vec::new()),
        };
        Example1Coefficients {
            dim: self.dim,
            radius: self.radius,
            kappa: self.kappa,
            sigma: self.sigma,
            potential: self.potential,
            l0,
            sources,
        }
    }
}

/// Sums `a w` over atoms sharing a state position.
fn collapse(nu: &JointMeasure, scale: f64) -> Vec<(Point, Point)> {
    let mut index: HashMap<(u64, u64), usize> = HashMap::new();
    let mut out: Vec<(Point, Point)> = Vec::new();
    for at in nu.atoms() {
        let key = (at.x[0].to_bits(), at.x[1].to_bits());
        let k = *index.entry(key).or_insert_with(|| {
            out.push((at.x, Point::zeros()));
            out.len() - 1
        });
        out[k].1 += at.a * (at.w * scale);
    }
    out.retain(|(_, aw)| aw.norm() > 0.0);
    out
}

#[derive(Debug, Clone)]
struct Example1Coefficients {
    dim: usize,
    radius: f64,
    kappa: f64,
    sigma: f64,
    potential: f64,
    l0: f64,
    sources: Vec<(Point, Point)>,
}

impl Example1Coefficients {
    fn b0(&self, x: &Point) -> Point {
        let mut acc = Point::zeros();
        for (y, aw) in &self.sources {
            acc += aw * bump(&(x - y), self.dim, self.sigma);
        }
        acc * self.kappa
    }

    fn v(&self, x: &Point) -> f64 {
        if self.potential == 0.0 {
            return 0.0;
        }
        self.potential * (0..self.dim).map(|k| (TAU * x[k]).cos()).sum::<f64>()
    }
}

impl Coefficients for Example1Coefficients {
    fn drift(&self, x: &Point, a: &Point) -> Point {
        self.b0(x) - a
    }

    fn cost(&self, x: &Point, a: &Point) -> f64 {
        a.norm_squared() / (2.0 * self.l0) + self.v(x)
    }

    fn closed_form_control(&self, _x: &Point, p: &Point) -> Option<Point> {
        let np = p.norm();
        if np <= self.radius / self.l0 {
            Some(p * self.l0)
        } else {
            Some(p * (self.radius / np))
        }
    }

    fn closed_form_hamiltonian(&self, x: &Point, p: &Point) -> Option<f64> {
        let np = p.norm();
        let shift = if self.sources.is_empty() { 0.0 } else { self.b0(x).dot(p) } + self.v(x);
        if np <= self.radius / self.l0 {
            Some(self.l0 * np * np / 2.0 - shift)
        } else {
            Some(self.radius * np - self.radius * self.radius / (2.0 * self.l0) - shift)
        }
    }
}

#[derive(Debug, Clone)]
pub struct Example1 {
    params: Example1Params,
    control: ControlSet,
}

impl Example1 {
    pub fn new(params: Example1Params) -> Result<Self> {
        params.validate()?;
        let control = ControlSet::ball(params.dim, params.radius).with_mesh(params.mesh)?;
        Ok(Self { params, control })
    }

    /// `l0` constant and `b0 = 0`: no dependence on the measure.
    pub fn decoupled(dim: usize, l0: f64, radius: f64) -> Self {
        Self::new(Example1Params {
            dim,
            radius,
            delta: l0,
            epsilon: 0.0,
            kappa: 0.0,
            ..Example1Params::default()
        })
        .expect("valid decoupled parameters")
    }

    pub fn params(&self) -> &Example1Params {
        &self.params
    }
}

impl ModelSpec for Example1 {
    fn name(&self) -> &str {
        "example1"
    }

    fn state_dim(&self) -> usize {
        self.params.dim
    }

    fn control_set(&self) -> &ControlSet {
        &self.control
    }

    fn constants(&self) -> ModelConstants {
        self.params.constants()
    }

    fn coefficients(&self, ctx: &MuContext<'_>) -> Result<Box<dyn Coefficients>> {
        Ok(Box::new(self.params.freeze(Some(ctx.current()))))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryParams {
    #[serde(flatten)]
    pub base: Example1Params,
    pub kernel: Kernel,
}

/// Example 1 coefficients driven by the memory aggregate of the past
/// trajectory. A vanishing aggregate gives `l0 = delta`, `b0 = 0`.
#[derive(Debug, Clone)]
pub struct MemoryModel {
    params: MemoryParams,
    control: ControlSet,
}

impl MemoryModel {
    pub fn new(params: MemoryParams) -> Result<Self> {
        params.base.validate()?;
        params.kernel.validate()?;
        let control = ControlSet::ball(params.base.dim, params.base.radius).with_mesh(params.base.mesh)?;
        Ok(Self { params, control })
    }

    pub fn params(&self) -> &MemoryParams {
        &self.params
    }
}

impl ModelSpec for MemoryModel {
    fn name(&self) -> &str {
        "example2"
    }

    fn state_dim(&self) -> usize {
        self.params.base.dim
    }

    fn control_set(&self) -> &ControlSet {
        &self.control
    }

    fn constants(&self) -> ModelConstants {
        self.params.base.constants()
    }

    fn context_kind(&self) -> ContextKind {
        ContextKind::History
    }

    fn coefficients(&self, ctx: &MuContext<'_>) -> Result<Box<dyn Coefficients>> {
        let MuContext::History(history) = ctx else {
            return Err(Error::ContextMismatch("model expects a measure history"));
        };
        let agg = memory_aggregate(history, &self.params.kernel)?;
        Ok(Box::new(self.params.base.freeze(Some(&agg))))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeparatedParams {
    pub dim: usize,
    pub radius: f64,
    /// Amplitude of `beta(x) = beta sin(2 pi x_k)`.
    pub beta: f64,
    /// Amplitude of `V(x) = v sum_k cos(2 pi x_k)`.
    pub v: f64,
    /// `l1(nu) = gamma int (sum_k a_k + cos(2 pi x_0)) dnu`.
    pub gamma: f64,
    pub mesh: usize,
}

impl Default for SeparatedParams {
    fn default() -> Self {
        Self {
            dim: 1,
            radius: 1.0,
            beta: 0.3,
            v: 0.5,
            gamma: 0.4,
            mesh: super::DEFAULT_MESH,
        }
    }
}

/// `H(x, p; nu) = H0(x, p) + l1(nu)`.
#[derive(Debug, Clone)]
pub struct SeparatedModel {
    params: SeparatedParams,
    control: ControlSet,
}

impl SeparatedModel {
    pub fn new(params: SeparatedParams) -> Result<Self> {
        check_dim(params.dim)?;
        positive("radius", params.radius)?;
        for (f, v) in [("beta", params.beta), ("v", params.v), ("gamma", params.gamma)] {
            if !v.is_finite() {
                return Err(Error::param(f, "must be finite"));
            }
        }
        let control = ControlSet::ball(params.dim, params.radius).with_mesh(params.mesh)?;
        Ok(Self { params, control })
    }

    pub fn params(&self) -> &SeparatedParams {
        &self.params
    }

    /// `l1(nu)`.
    pub fn l1(&self, nu: &JointMeasure) -> f64 {
        let dim = self.params.dim;
        self.params.gamma * nu.integrate(|x, a| (0..dim).map(|k| a[k]).sum::<f64>() + (TAU * x[0]).cos())
    }
}

#[derive(Debug, Clone)]
struct SeparatedCoefficients {
    params: SeparatedParams,
    l1: f64,
}

impl SeparatedCoefficients {
    fn beta(&self, x: &Point) -> Point {
        let mut b = Point::zeros();
        for k in 0..self.params.dim {
            b[k] = self.params.beta * (TAU * x[k]).sin();
        }
        b
    }

    fn potential(&self, x: &Point) -> f64 {
        self.params.v * (0..self.params.dim).map(|k| (TAU * x[k]).cos()).sum::<f64>()
    }
}

impl Coefficients for SeparatedCoefficients {
    fn drift(&self, x: &Point, a: &Point) -> Point {
        self.beta(x) - a
    }

    fn cost(&self, x: &Point, a: &Point) -> f64 {
        a.norm_squared() / 2.0 + self.potential(x) - self.l1
    }

    fn closed_form_control(&self, _x: &Point, p: &Point) -> Option<Point> {
        let np = p.norm();
        let r = self.params.radius;
        Some(if np <= r { *p } else { p * (r / np) })
    }

    fn closed_form_hamiltonian(&self, x: &Point, p: &Point) -> Option<f64> {
        let np = p.norm();
        let r = self.params.radius;
        let sup = if np <= r { np * np / 2.0 } else { r * np - r * r / 2.0 };
        Some(sup - p.dot(&self.beta(x)) - self.potential(x) + self.l1)
    }
}

impl ModelSpec for SeparatedModel {
    fn name(&self) -> &str {
        "separated"
    }

    fn state_dim(&self) -> usize {
        self.params.dim
    }

    fn control_set(&self) -> &ControlSet {
        &self.control
    }

    fn constants(&self) -> ModelConstants {
        let p = &self.params;
        let d = p.dim as f64;
        let r = p.radius;
        ModelConstants {
            k: f64::max(
                p.beta.abs() * d.sqrt() + r,
                r * r / 2.0 + p.v.abs() * d + p.gamma.abs() * (d.sqrt() * r + 1.0),
            ),
            l: TAU * f64::max(p.beta.abs(), p.v.abs()) * d.sqrt(),
            l_mu: p.gamma.abs() * TAU.max(d.sqrt()),
            lambda0: 0.0,
            lambda1: 1.0,
            big_lambda0: Some(1.0),
        }
    }

    fn coefficients(&self, ctx: &MuContext<'_>) -> Result<Box<dyn Coefficients>> {
        Ok(Box::new(SeparatedCoefficients {
            params: self.params,
            l1: self.l1(ctx.current()),
        }))
    }
}

/// `b = 0`, `l = c` on the unit ball.
#[derive(Debug, Clone)]
pub struct ConstantModel {
    dim: usize,
    c: f64,
    control: ControlSet,
}

impl ConstantModel {
    pub fn new(dim: usize, c: f64) -> Self {
        Self {
            dim,
            c,
            control: ControlSet::ball(dim, 1.0),
        }
    }

    pub fn cost_value(&self) -> f64 {
        self.c
    }
}

#[derive(Debug, Clone, Copy)]
struct ConstantCoefficients {
    c: f64,
}

impl Coefficients for ConstantCoefficients {
    fn drift(&self, _x: &Point, _a: &Point) -> Point {
        Point::zeros()
    }

    fn cost(&self, _x: &Point, _a: &Point) -> f64 {
        self.c
    }

    fn closed_form_control(&self, _x: &Point, _p: &Point) -> Option<Point> {
        Some(Point::zeros())
    }

    fn closed_form_hamiltonian(&self, _x: &Point, _p: &Point) -> Option<f64> {
        Some(-self.c)
    }
}

impl ModelSpec for ConstantModel {
    fn name(&self) -> &str {
        "constant"
    }

    fn state_dim(&self) -> usize {
        self.dim
    }

    fn control_set(&self) -> &ControlSet {
        &self.control
    }

    fn constants(&self) -> ModelConstants {
        ModelConstants {
            k: self.c.abs(),
            ..ModelConstants::default()
        }
    }

    fn coefficients(&self, _ctx: &MuContext<'_>) -> Result<Box<dyn Coefficients>> {
        Ok(Box::new(ConstantCoefficients { c: self.c }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::Atom;

    #[test]
    fn bump_peaks_at_one_and_is_periodic() {
        assert_eq!(bump(&Point::zeros(), 1, 0.1), 1.0);
        let a = bump(&Point::new(0.3, 0.0), 1, 0.2);
        let b = bump(&Point::new(-0.7, 0.0), 1, 0.2);
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn bump_lipschitz_bounds_difference_quotients() {
        let sigma = 0.1;
        let lip = bump_lipschitz(sigma);
        for i in 0..1000 {
            let z = i as f64 / 1000.0;
            let q = (bump(&Point::new(z + 1e-4, 0.0), 1, sigma) - bump(&Point::new(z, 0.0), 1, sigma)) / 1e-4;
            assert!(q.abs() <= lip);
        }
    }

    #[test]
    fn ell0_follows_control_moment() {
        let params = Example1Params {
            delta: 0.5,
            epsilon: 0.25,
            ..Default::default()
        };
        let nu = JointMeasure::probability(
            vec![
                Atom { x: Point::new(0.1, 0.0), a: Point::new(0.8, 0.0), w: 0.5 },
                Atom { x: Point::new(0.6, 0.0), a: Point::new(0.4, 0.0), w: 0.5 },
            ],
            None,
        )
        .unwrap();
        let c = params.freeze(Some(&nu));
        assert!((c.l0 - (0.5 + 0.25 * 0.6)).abs() < 1e-15);
        assert_eq!(c.sources.len(), 2);
    }

    #[test]
    fn aggregate_with_repeated_positions_collapses() {
        let nu = JointMeasure::new(
            vec![
                Atom { x: Point::new(0.1, 0.0), a: Point::new(0.8, 0.0), w: 0.25 },
                Atom { x: Point::new(0.1, 0.0), a: Point::new(0.4, 0.0), w: 0.25 },
            ],
            None,
        )
        .unwrap();
        let s = collapse(&nu, 2.0);
        assert_eq!(s.len(), 1);
        assert!((s[0].1[0] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn separated_cost_shifts_hamiltonian_only() {
        let spec = SeparatedModel::new(SeparatedParams::default()).unwrap();
        let n1 = JointMeasure::dirac(Point::new(0.0, 0.0), Point::new(0.5, 0.0));
        let n2 = JointMeasure::dirac(Point::new(0.5, 0.0), Point::new(-0.5, 0.0));
        let c1 = spec.coefficients(&MuContext::Instant(&n1)).unwrap();
        let c2 = spec.coefficients(&MuContext::Instant(&n2)).unwrap();
        let x = Point::new(0.3, 0.0);
        let p = Point::new(0.7, 0.0);
        let dh = c1.closed_form_hamiltonian(&x, &p).unwrap() - c2.closed_form_hamiltonian(&x, &p).unwrap();
        assert!((dh - (spec.l1(&n1) - spec.l1(&n2))).abs() < 1e-15);
        assert_eq!(c1.closed_form_control(&x, &p), c2.closed_form_control(&x, &p));
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(Example1::new(Example1Params { delta: 0.0, ..Default::default() }).is_err());
        assert!(Example1::new(Example1Params { dim: 3, ..Default::default() }).is_err());
        assert!(MemoryModel::new(MemoryParams {
            base: Example1Params::default(),
            kernel: Kernel::Constant { value: -1.0 },
        })
        .is_err());
    }
}
