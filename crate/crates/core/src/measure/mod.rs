//! State densities, graph-supported joint state-control measures and
//! Wasserstein-1 distances between them.
//!
//! Joint measures live on `T^d x A` with the sum metric
//! `dist_torus(x, x') + |a - a'|`. Exact distances come from the network
//! simplex in [`simplex`]; an entropic approximation is available through
//! [`sinkhorn`] when speed matters more than exactness.

pub mod simplex;
pub mod sinkhorn;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{torus_distance, wrap_unit, Grid, GridField, Point};
use crate::model::ControlSet;

/// Tolerance on the unit-mass invariant.
pub const MASS_TOL: f64 = 1e-12;

/// Nonnegative grid density with unit integral.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    grid: Grid,
    values: Vec<f64>,
}

impl DensityField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        let f = GridField::new(grid, values)?;
        let values = f.into_values();
        if let Some(v) = values.iter().find(|v| **v < 0.0) {
            return Err(Error::InvalidDensity(format!("negative value {v:e}")));
        }
        let mass: f64 = values.iter().sum::<f64>() * grid.cell_volume();
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidDensity(format!("mass {mass} differs from 1")));
        }
        Ok(Self { grid, values })
    }

    /// Rescales nonnegative values to unit mass.
    pub fn normalized(grid: Grid, values: Vec<f64>) -> Result<Self> {
        let f = GridField::new(grid, values)?;
        let mut values = f.into_values();
        if values.iter().any(|v| *v < 0.0) {
            return Err(Error::InvalidDensity("negative values".into()));
        }
        let mass: f64 = values.iter().sum::<f64>() * grid.cell_volume();
        if mass <= 0.0 {
            return Err(Error::InvalidDensity("zero mass".into()));
        }
        values.iter_mut().for_each(|v| *v /= mass);
        Ok(Self { grid, values })
    }

    pub fn uniform(grid: Grid) -> Self {
        Self {
            grid,
            values: vec![1.0; grid.len()],
        }
    }

    /// All mass on one node.
    pub fn delta(grid: Grid, node: usize) -> Self {
        let mut values = vec![0.0; grid.len()];
        values[node] = 1.0 / grid.cell_volume();
        Self { grid, values }
    }

    /// Product von Mises bump `exp(kappa * sum cos 2 pi (x - c))`, normalized.
    pub fn von_mises(grid: Grid, center: Point, concentration: f64) -> Self {
        let values = von_mises_values(grid, center, concentration);
        Self::normalized(grid, values).expect("von Mises bump is positive")
    }

    /// Mixture `w * bump(c1) + (1 - w) * bump(c2)`.
    pub fn two_bump(grid: Grid, c1: Point, c2: Point, concentration: f64, weight: f64) -> Self {
        let a = Self::von_mises(grid, c1, concentration);
        let b = Self::von_mises(grid, c2, concentration);
        let values = a
            .values
            .iter()
            .zip(&b.values)
            .map(|(x, y)| weight * x + (1.0 - weight) * y)
            .collect();
        Self::normalized(grid, values).expect("mixture is positive")
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    /// Node weights `m_i h^d`.
    pub fn weights(&self) -> Vec<f64> {
        let vol = self.grid.cell_volume();
        self.values.iter().map(|v| v * vol).collect()
    }

    pub fn as_field(&self) -> GridField {
        GridField::new(self.grid, self.values.clone()).expect("density values are finite")
    }

    /// Wraps values produced by a conservative solver. Negative values down
    /// to `-neg_tol` are clamped to zero and only then is the mass restored;
    /// otherwise the values are kept as computed.
    pub(crate) fn from_solver(grid: Grid, mut values: Vec<f64>, neg_tol: f64) -> Result<Self> {
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        if min < -neg_tol || !min.is_finite() {
            return Err(Error::Positivity(min));
        }
        if min < 0.0 {
            let before: f64 = values.iter().sum();
            values.iter_mut().for_each(|v| *v = v.max(0.0));
            let after: f64 = values.iter().sum();
            values.iter_mut().for_each(|v| *v *= before / after);
        }
        Ok(Self { grid, values })
    }
}

pub(crate) fn von_mises_values(grid: Grid, center: Point, concentration: f64) -> Vec<f64> {
    use std::f64::consts::TAU;
    (0..grid.len())
        .map(|i| {
            let x = grid.coords(i);
            let mut e = 0.0;
            for axis in 0..grid.dim() {
                e += (TAU * (x[axis] - center[axis])).cos() - 1.0;
            }
            (concentration * e).exp()
        })
        .collect()
}

/// One control per node, each inside the control set.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlField {
    grid: Grid,
    values: Vec<Point>,
}

/// Controls outside `A` by less than this are projected back.
pub const CONTROL_SLACK: f64 = 1e-12;

impl ControlField {
    pub fn new(grid: Grid, values: Vec<Point>, set: &ControlSet) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        let mut out = Vec::with_capacity(values.len());
        for (i, a) in values.into_iter().enumerate() {
            if !(a[0].is_finite() && a[1].is_finite()) {
                return Err(Error::NonFinite(i));
            }
            if set.contains(&a, 0.0) {
                out.push(a);
            } else if set.contains(&a, CONTROL_SLACK) {
                out.push(set.project(&a));
            } else {
                return Err(Error::param("control", format!("node {i}: {a:?} lies outside A")));
            }
        }
        Ok(Self { grid, values: out })
    }

    pub fn constant(grid: Grid, a: Point) -> Self {
        Self {
            grid,
            values: vec![a; grid.len()],
        }
    }

    pub(crate) fn from_raw(grid: Grid, values: Vec<Point>) -> Self {
        Self { grid, values }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn values(&self) -> &[Point] {
        &self.values
    }

    pub fn sup_distance(&self, other: &ControlField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).norm()))
    }

    /// Convex combination `theta * self + (1 - theta) * other`.
    pub fn blend(&self, other: &ControlField, theta: f64) -> ControlField {
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * theta + b * (1.0 - theta))
            .collect();
        ControlField {
            grid: self.grid,
            values,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub x: Point,
    pub a: Point,
    pub w: f64,
}

/// Weighted atoms `(x_i, a_i, w_i)` on `T^d x A`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointMeasure {
    atoms: Vec<Atom>,
    grid: Option<Grid>,
}

impl JointMeasure {
    pub fn new(atoms: Vec<Atom>, grid: Option<Grid>) -> Result<Self> {
        if let Some(i) = atoms.iter().position(|a| !(a.w >= 0.0 && a.w.is_finite())) {
            return Err(Error::InvalidDensity(format!("atom {i} has invalid weight")));
        }
        let atoms = atoms
            .into_iter()
            .map(|a| Atom {
                x: Point::new(wrap_unit(a.x[0]), wrap_unit(a.x[1])),
                ..a
            })
            .collect();
        Ok(Self { atoms, grid })
    }

    /// A probability measure: weights must sum to one.
    pub fn probability(atoms: Vec<Atom>, grid: Option<Grid>) -> Result<Self> {
        let m = Self::new(atoms, grid)?;
        if (m.mass() - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidDensity(format!("mass {} differs from 1", m.mass())));
        }
        Ok(m)
    }

    pub fn dirac(x: Point, a: Point) -> Self {
        Self {
            atoms: vec![Atom { x, a, w: 1.0 }],
            grid: None,
        }
    }

    pub fn zero() -> Self {
        Self {
            atoms: Vec::new(),
            grid: None,
        }
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn grid(&self) -> Option<Grid> {
        self.grid
    }

    pub fn mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.w).sum()
    }

    /// `sum phi(x_i, a_i) w_i`.
    pub fn integrate(&self, phi: impl Fn(&Point, &Point) -> f64) -> f64 {
        self.atoms.iter().map(|at| phi(&at.x, &at.a) * at.w).sum()
    }

    /// `sum a_i w_i`.
    pub fn control_moment(&self) -> Point {
        self.atoms.iter().fold(Point::zeros(), |acc, at| acc + at.a * at.w)
    }

    pub fn scaled(&self, factor: f64) -> JointMeasure {
        JointMeasure {
            atoms: self
                .atoms
                .iter()
                .map(|a| Atom { w: a.w * factor, ..*a })
                .collect(),
            grid: self.grid,
        }
    }

    /// First marginal on the source grid (atoms snapped to nodes).
    pub fn state_marginal(&self) -> Result<DensityField> {
        let grid = self
            .grid
            .ok_or(Error::ContextMismatch("marginal needs a source grid"))?;
        let n = grid.n() as f64;
        let mut values = vec![0.0; grid.len()];
        for at in &self.atoms {
            let i = (at.x[0] * n).round() as usize % grid.n();
            let j = (at.x[1] * n).round() as usize % grid.n();
            values[grid.flat_index([i, j])] += at.w / grid.cell_volume();
        }
        DensityField::normalized(grid, values)
    }

    /// CSV rows `x..., a..., weight` with 17 significant digits.
    pub fn to_csv(&self, state_dim: usize, control_dim: usize) -> String {
        let mut out = String::new();
        let xs: Vec<String> = (0..state_dim).map(|k| format!("x{k}")).collect();
        let as_: Vec<String> = (0..control_dim).map(|k| format!("a{k}")).collect();
        let _ = writeln!(out, "{},{},weight", xs.join(","), as_.join(","));
        for at in &self.atoms {
            for k in 0..state_dim {
                let _ = write!(out, "{:.16e},", at.x[k]);
            }
            for k in 0..control_dim {
                let _ = write!(out, "{:.16e},", at.a[k]);
            }
            let _ = writeln!(out, "{:.16e}", at.w);
        }
        out
    }

    pub fn from_csv(text: &str, state_dim: usize, control_dim: usize, grid: Option<Grid>) -> Result<Self> {
        let mut atoms = Vec::new();
        for (lineno, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let vals: std::result::Result<Vec<f64>, _> = line.split(',').map(|c| c.trim().parse::<f64>()).collect();
            let vals = vals.map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
            if vals.len() != state_dim + control_dim + 1 {
                return Err(Error::Parse(format!("line {}: wrong column count", lineno + 1)));
            }
            let mut x = Point::zeros();
            let mut a = Point::zeros();
            x.as_mut_slice()[..state_dim].copy_from_slice(&vals[..state_dim]);
            a.as_mut_slice()[..control_dim].copy_from_slice(&vals[state_dim..state_dim + control_dim]);
            atoms.push(Atom { x, a, w: vals[state_dim + control_dim] });
        }
        Self::new(atoms, grid)
    }
}

/// `mu = (Id, a) # m`: one atom per node with weight `m_i h^d`.
pub fn pushforward(m: &DensityField, a: &ControlField) -> Result<JointMeasure> {
    if m.grid != a.grid {
        return Err(Error::ContextMismatch("density and control field grids differ"));
    }
    let grid = m.grid;
    let vol = grid.cell_volume();
    let atoms = (0..grid.len())
        .map(|i| Atom {
            x: grid.coords(i),
            a: a.values[i],
            w: m.values[i] * vol,
        })
        .collect();
    Ok(JointMeasure {
        atoms,
        grid: Some(grid),
    })
}

/// Ground metric on `T^d x A`.
pub fn joint_distance(p: &Atom, q: &Atom) -> f64 {
    torus_distance(&p.x, &q.x) + (p.a - q.a).norm()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OtMethod {
    /// Network simplex, exact up to rounding.
    Exact,
    /// Log-domain entropic transport; biased upward by roughly
    /// `epsilon * log(atoms)`.
    Sinkhorn { epsilon: f64, max_iter: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OtOptions {
    pub method: OtMethod,
    /// Largest number of nonzero atoms per side.
    pub max_atoms: usize,
    pub max_pivots: usize,
}

impl Default for OtOptions {
    fn default() -> Self {
        Self {
            method: OtMethod::Exact,
            max_atoms: 2048,
            max_pivots: 50_000_000,
        }
    }
}

fn transport(
    p: &[Atom],
    q: &[Atom],
    metric: impl Fn(&Atom, &Atom) -> f64,
    opts: &OtOptions,
) -> Result<f64> {
    let p: Vec<&Atom> = p.iter().filter(|a| a.w > 0.0).collect();
    let q: Vec<&Atom> = q.iter().filter(|a| a.w > 0.0).collect();
    let atoms = p.len().max(q.len());
    if atoms > opts.max_atoms {
        return Err(Error::TooManyAtoms {
            atoms,
            cap: opts.max_atoms,
        });
    }
    let mp: f64 = p.iter().map(|a| a.w).sum();
    let mq: f64 = q.iter().map(|a| a.w).sum();
    if (mp - mq).abs() > 1e-10 {
        return Err(Error::MassMismatch(mp, mq));
    }
    if mp == 0.0 {
        return Ok(0.0);
    }
    let supply: Vec<f64> = p.iter().map(|a| a.w).collect();
    let scale = mp / mq;
    let demand: Vec<f64> = q.iter().map(|a| a.w * scale).collect();
    let costs: Vec<f64> = p
        .iter()
        .flat_map(|a| q.iter().map(|b| metric(a, b)).collect::<Vec<_>>())
        .collect();
    match opts.method {
        OtMethod::Exact => Ok(simplex::solve_transport(&supply, &demand, &costs, opts.max_pivots)?.cost),
        OtMethod::Sinkhorn { epsilon, max_iter } => {
            sinkhorn::entropic_cost(&supply, &demand, &costs, epsilon, max_iter)
        }
    }
}

/// Exact W1 on `T^d x A` with the sum ground metric.
pub fn wasserstein1_joint(nu1: &JointMeasure, nu2: &JointMeasure) -> Result<f64> {
    wasserstein1_joint_with(nu1, nu2, &OtOptions::default())
}

pub fn wasserstein1_joint_with(nu1: &JointMeasure, nu2: &JointMeasure, opts: &OtOptions) -> Result<f64> {
    transport(&nu1.atoms, &nu2.atoms, joint_distance, opts)
}

/// W1 between two densities on `T^d`. In one dimension this is the exact
/// circle formula; in two it is the atom LP on the node weights.
pub fn wasserstein1_state(m1: &DensityField, m2: &DensityField) -> Result<f64> {
    wasserstein1_state_with(m1, m2, &OtOptions::default())
}

pub fn wasserstein1_state_with(m1: &DensityField, m2: &DensityField, opts: &OtOptions) -> Result<f64> {
    if m1.grid != m2.grid {
        return Err(Error::ContextMismatch("densities live on different grids"));
    }
    if m1.grid.dim() == 1 {
        Ok(circle_w1(&m1.weights(), &m2.weights(), m1.grid.h()))
    } else {
        wasserstein1_state_lp(m1, m2, opts)
    }
}

/// Atom-LP W1 between densities regardless of dimension.
pub fn wasserstein1_state_lp(m1: &DensityField, m2: &DensityField, opts: &OtOptions) -> Result<f64> {
    let to_atoms = |m: &DensityField| -> Vec<Atom> {
        m.weights()
            .into_iter()
            .enumerate()
            .map(|(i, w)| Atom {
                x: m.grid.coords(i),
                a: Point::zeros(),
                w,
            })
            .collect()
    };
    transport(&to_atoms(m1), &to_atoms(m2), |p, q| torus_distance(&p.x, &q.x), opts)
}

/// W1 on the circle between node weights at spacing `h`:
/// `min_c sum_i h |F_i - c|`, `F` the cumulative difference, minimized at
/// a median of `F`.
pub fn circle_w1(w1: &[f64], w2: &[f64], h: f64) -> f64 {
    let mut acc = 0.0;
    let mut cdf: Vec<f64> = w1
        .iter()
        .zip(w2)
        .map(|(a, b)| {
            acc += a - b;
            acc
        })
        .collect();
    let mut sorted = cdf.clone();
    sorted.sort_by(f64::total_cmp);
    let c = sorted[sorted.len() / 2];
    cdf.iter_mut().map(|f| h * (*f - c).abs()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ControlSet;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn atom(x: f64, a: f64, w: f64) -> Atom {
        Atom {
            x: Point::new(x, 0.0),
            a: Point::new(a, 0.0),
            w,
        }
    }

    fn random_density(grid: Grid, rng: &mut ChaCha8Rng) -> DensityField {
        let v: Vec<f64> = (0..grid.len()).map(|_| rng.gen_range(0.0..1.0f64).powi(3)).collect();
        DensityField::normalized(grid, v).unwrap()
    }

    #[test]
    fn identical_measures_have_zero_distance() {
        let nu = JointMeasure::new(vec![atom(0.1, 0.2, 0.5), atom(0.7, -0.3, 0.5)], None).unwrap();
        assert_eq!(wasserstein1_joint(&nu, &nu).unwrap(), 0.0);
    }

    #[test]
    fn two_dirac_cases() {
        let a = JointMeasure::dirac(Point::new(0.1, 0.0), Point::zeros());
        let b = JointMeasure::dirac(Point::new(0.35, 0.0), Point::zeros());
        assert!((wasserstein1_joint(&a, &b).unwrap() - 0.25).abs() < 1e-15);
        let a = JointMeasure::dirac(Point::new(0.9, 0.0), Point::new(0.2, 0.0));
        let b = JointMeasure::dirac(Point::new(0.1, 0.0), Point::new(0.5, 0.0));
        assert!((wasserstein1_joint(&a, &b).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn mass_mismatch_is_rejected() {
        let a = JointMeasure::new(vec![atom(0.1, 0.0, 1.0)], None).unwrap();
        let b = JointMeasure::new(vec![atom(0.1, 0.0, 0.5)], None).unwrap();
        assert!(matches!(wasserstein1_joint(&a, &b), Err(Error::MassMismatch(..))));
    }

    #[test]
    fn atom_cap_is_enforced() {
        let g = Grid::new(1, 64).unwrap();
        let m = DensityField::uniform(g);
        let mu = pushforward(&m, &ControlField::constant(g, Point::zeros())).unwrap();
        let opts = OtOptions {
            max_atoms: 10,
            ..OtOptions::default()
        };
        assert!(matches!(
            wasserstein1_joint_with(&mu, &mu, &opts),
            Err(Error::TooManyAtoms { atoms: 64, cap: 10 })
        ));
    }

    #[test]
    fn state_distance_examples() {
        let g = Grid::new(1, 64).unwrap();
        let m = DensityField::von_mises(g, Point::new(0.3, 0.0), 2.0);
        assert_eq!(wasserstein1_state(&m, &m).unwrap(), 0.0);
        let d0 = DensityField::delta(g, 0);
        let d1 = DensityField::delta(g, 32);
        assert!((wasserstein1_state(&d0, &d1).unwrap() - 0.5).abs() < 1e-14);

        // Uniform versus a point mass: integral of dist(x, 0) is 1/4; on
        // nodes it is sum_i h * dist(ih, 0), exactly 1/4 for even n.
        let g = Grid::new(1, 128).unwrap();
        let u = DensityField::uniform(g);
        let d = DensityField::delta(g, 0);
        let w = wasserstein1_state(&u, &d).unwrap();
        assert!((w - 0.25).abs() <= 2.0 * g.h());
        let lp = wasserstein1_state_lp(&u, &d, &OtOptions::default()).unwrap();
        assert!((w - lp).abs() < 1e-12);
    }

    #[test]
    fn pushforward_examples() {
        let g = Grid::new(1, 16).unwrap();
        let m = DensityField::uniform(g);
        let a0 = Point::new(0.3, 0.0);
        let mu = pushforward(&m, &ControlField::constant(g, a0)).unwrap();
        assert_eq!(mu.atoms().len(), 16);
        for at in mu.atoms() {
            assert_eq!(at.a, a0);
            assert!((at.w - 1.0 / 16.0).abs() < 1e-16);
        }
        let m = DensityField::delta(g, 5);
        let set = ControlSet::ball(1, 1.0);
        let controls: Vec<Point> = (0..16).map(|i| Point::new(i as f64 / 32.0, 0.0)).collect();
        let a = ControlField::new(g, controls, &set).unwrap();
        let mu = pushforward(&m, &a).unwrap();
        let live: Vec<&Atom> = mu.atoms().iter().filter(|a| a.w > 0.0).collect();
        assert_eq!(live.len(), 1);
        assert_eq!(live[0].x, g.coords(5));
        assert_eq!(live[0].a, a.values()[5]);
        assert!((live[0].w - 1.0).abs() < 1e-15);
    }

    #[test]
    fn pushforward_integrates_test_functions() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = Grid::new(2, 8).unwrap();
        let m = random_density(g, &mut rng);
        let set = ControlSet::ball(2, 1.0);
        let a = ControlField::new(
            g,
            (0..g.len())
                .map(|_| Point::new(rng.gen_range(-0.7..0.7), rng.gen_range(-0.7..0.7)))
                .collect(),
            &set,
        )
        .unwrap();
        let mu = pushforward(&m, &a).unwrap();
        let phi = |x: &Point, a: &Point| (x[0] * 3.0).sin() + x[1] * a[0] - a[1].powi(2);
        let lhs = mu.integrate(phi);
        let rhs: f64 = (0..g.len())
            .map(|i| phi(&g.coords(i), &a.values()[i]) * m.values()[i] * g.cell_volume())
            .sum();
        assert_eq!(lhs, rhs);
        assert_eq!(mu.state_marginal().unwrap().values().len(), m.values().len());
        let back = mu.state_marginal().unwrap();
        for (p, q) in back.values().iter().zip(m.values()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn control_field_projects_tiny_excursions() {
        let g = Grid::new(1, 8).unwrap();
        let set = ControlSet::ball(1, 1.0);
        let f = ControlField::new(g, vec![Point::new(1.0 + 1e-13, 0.0); 8], &set).unwrap();
        assert!(f.values().iter().all(|a| a[0] <= 1.0));
        assert!(ControlField::new(g, vec![Point::new(1.1, 0.0); 8], &set).is_err());
    }

    #[test]
    fn joint_csv_round_trip() {
        let nu = JointMeasure::new(
            vec![atom(0.123456789, -0.3, 0.25), atom(0.5, 1.0 / 3.0, 0.75)],
            None,
        )
        .unwrap();
        let back = JointMeasure::from_csv(&nu.to_csv(1, 1), 1, 1, None).unwrap();
        assert_eq!(back, nu);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        fn weights(n: usize) -> impl Strategy<Value = Vec<f64>> {
            proptest::collection::vec(0.0f64..1.0, n)
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn circle_formula_matches_lp(w1 in weights(24), w2 in weights(24)) {
                prop_assume!(w1.iter().sum::<f64>() > 1e-3 && w2.iter().sum::<f64>() > 1e-3);
                let g = Grid::new(1, 24).unwrap();
                let m1 = DensityField::normalized(g, w1).unwrap();
                let m2 = DensityField::normalized(g, w2).unwrap();
                let c = wasserstein1_state(&m1, &m2).unwrap();
                let lp = wasserstein1_state_lp(&m1, &m2, &OtOptions::default()).unwrap();
                prop_assert!((c - lp).abs() < 1e-8, "{} vs {}", c, lp);
            }

            #[test]
            fn joint_dominates_marginal_and_diagonal_bound(w in weights(16), a1 in weights(16), a2 in weights(16)) {
                prop_assume!(w.iter().sum::<f64>() > 1e-3);
                let g = Grid::new(1, 16).unwrap();
                let set = ControlSet::ball(1, 1.0);
                let m = DensityField::normalized(g, w).unwrap();
                let f1 = ControlField::new(g, a1.iter().map(|&v| Point::new(v, 0.0)).collect(), &set).unwrap();
                let f2 = ControlField::new(g, a2.iter().map(|&v| Point::new(-v, 0.0)).collect(), &set).unwrap();
                let mu1 = pushforward(&m, &f1).unwrap();
                let mu2 = pushforward(&m, &f2).unwrap();
                let joint = wasserstein1_joint(&mu1, &mu2).unwrap();
                prop_assert!(joint <= f1.sup_distance(&f2) + 1e-9);
                prop_assert!(joint >= -1e-15);

                let m2 = DensityField::von_mises(g, Point::new(0.4, 0.0), 1.5);
                let mu3 = pushforward(&m2, &f2).unwrap();
                let joint = wasserstein1_joint(&mu1, &mu3).unwrap();
                let marg = wasserstein1_state(&m, &m2).unwrap();
                prop_assert!(joint >= marg - 1e-9);
            }

            #[test]
            fn joint_metric_axioms(seed in 0u64..1000) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut make = || {
                    let k = rng.gen_range(1..8);
                    let atoms: Vec<Atom> = (0..k)
                        .map(|_| atom(rng.gen_range(0.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.05..1.0)))
                        .collect();
                    let m = JointMeasure::new(atoms, None).unwrap();
                    let mass = m.mass();
                    m.scaled(1.0 / mass)
                };
                let (p, q, r) = (make(), make(), make());
                let pq = wasserstein1_joint(&p, &q).unwrap();
                let qp = wasserstein1_joint(&q, &p).unwrap();
                let qr = wasserstein1_joint(&q, &r).unwrap();
                let pr = wasserstein1_joint(&p, &r).unwrap();
                prop_assert!((pq - qp).abs() < 1e-12);
                prop_assert!(pr <= pq + qr + 1e-9);
            }
        }
    }
}
