//! Stationary HJB solves by policy iteration.
//!
//! For a policy `a(.)` the linear equation
//! `rho u - Lap_h u - b(x, a) . Grad_up u - l(x, a) = 0` is assembled with
//! upwind advection, which makes the matrix an M-matrix. The policy is then
//! improved pointwise, `a = alpha*(x, Grad_c u)`, with central gradients.
//! The reported residual is the linear equation of the improved policy
//! evaluated at the current `u`, so a fixed point of the iteration has zero
//! residual.
//!
//! Internally `u = c + v` with a scalar offset `c` near `lambda / rho`;
//! differences of `u` never touch `c`, which keeps the small-`rho` solves
//! free of cancellation.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{gradient_central, Grid, GridField, Point, VectorField};
use crate::linalg::{self, SparseMatrix};
use crate::measure::ControlField;
use crate::model::{FrozenModel, ModelSpec, MuContext};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HjbOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for HjbOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 60,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HjbSolution {
    /// Full solution `u`.
    pub u: GridField,
    /// Ergodic constant, for ergodic solves.
    pub lambda: Option<f64>,
    /// Discount, for discounted solves.
    pub rho: Option<f64>,
    pub residual: f64,
    pub policy: ControlField,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    offset: f64,
    deviation: GridField,
}

impl HjbSolution {
    /// `u - u(x0)`, computed without the offset.
    pub fn normalized(&self) -> GridField {
        let v0 = self.deviation.values()[self.deviation.grid().origin()];
        self.deviation.map(|v| v - v0)
    }

    /// `rho u(x0)` for discounted solves, `lambda` for ergodic ones.
    pub fn lambda_estimate(&self) -> f64 {
        match (self.lambda, self.rho) {
            (Some(l), _) => l,
            (None, Some(rho)) => rho * self.offset + rho * self.deviation.values()[self.deviation.grid().origin()],
            (None, None) => f64::NAN,
        }
    }

    /// `Grad_c u`.
    pub fn gradient(&self) -> VectorField {
        gradient_central(&self.deviation)
    }

    pub fn residual_history_csv(&self) -> String {
        let mut out = String::from("iteration,residual\n");
        for (k, r) in self.residual_history.iter().enumerate() {
            let _ = writeln!(out, "{},{:.16e}", k + 1, r);
        }
        out
    }

    /// Scheme residual of this solution with the measure replaced by `ctx`:
    /// the discounted equation when `rho` is set, the ergodic one otherwise.
    pub fn residual_in(&self, spec: &dyn ModelSpec, ctx: &MuContext<'_>) -> Result<f64> {
        let grid = self.deviation.grid();
        let frozen = FrozenModel::new(spec, ctx)?;
        let policy = improve(&frozen, grid, &self.deviation);
        let data = policy_data(&frozen, grid, &policy);
        let rho = self.rho.unwrap_or(0.0);
        let shift = match self.rho {
            Some(rho) => -rho * self.offset,
            None => -self.lambda.unwrap_or(0.0),
        };
        let lv = apply_rows(&assemble_rows(grid, &data.drift, rho), self.deviation.values());
        Ok(sup_norm(
            &lv.iter().zip(&data.cost).map(|(a, l)| a - (l + shift)).collect::<Vec<_>>(),
        ))
    }

    /// Sets `lambda = rho u(x0)` and replaces `u` by `u - u(x0)`.
    pub fn into_limit(mut self) -> Self {
        self.lambda = Some(self.lambda_estimate());
        self.u = self.normalized();
        self
    }

    /// Guess for a discounted solve at a different `rho`.
    pub fn warm_start(&self) -> WarmStart {
        WarmStart {
            policy: self.policy.clone(),
            lambda: Some(self.lambda_estimate()),
            shape: Some(self.normalized()),
        }
    }
}

/// Initial data for policy iteration.
#[derive(Debug, Clone)]
pub struct WarmStart {
    pub policy: ControlField,
    /// Estimate of `rho u(x0)` (or `lambda`); sets the internal offset.
    pub lambda: Option<f64>,
    /// Estimate of `u - u(x0)`; seeds the iterative linear solver.
    pub shape: Option<GridField>,
}

impl WarmStart {
    pub fn from_policy(policy: ControlField) -> Self {
        Self {
            policy,
            lambda: None,
            shape: None,
        }
    }
}

/// Drift and cost of a policy at every node.
struct PolicyData {
    drift: Vec<Point>,
    cost: Vec<f64>,
}

fn policy_data(frozen: &FrozenModel<'_>, grid: Grid, policy: &[Point]) -> PolicyData {
    let (drift, cost) = (0..grid.len())
        .map(|i| {
            let x = grid.coords(i);
            (frozen.drift(&x, &policy[i]), frozen.cost(&x, &policy[i]))
        })
        .unzip();
    PolicyData { drift, cost }
}

/// `-Lap_h - b . Grad_up` as per-row `(column, value)` lists, plus `rho` on
/// the diagonal.
fn assemble_rows(grid: Grid, drift: &[Point], rho: f64) -> Vec<Vec<(usize, f64)>> {
    let h = grid.h();
    let ih2 = 1.0 / (h * h);
    (0..grid.len())
        .map(|i| {
            let mut row = Vec::with_capacity(1 + 2 * grid.dim());
            let mut diag = rho;
            for axis in 0..grid.dim() {
                let b = drift[i][axis];
                diag += 2.0 * ih2 + b.abs() / h;
                row.push((grid.neighbor(i, axis, 1), -ih2 - b.max(0.0) / h));
                row.push((grid.neighbor(i, axis, -1), -ih2 - (-b).max(0.0) / h));
            }
            row.push((i, diag));
            row
        })
        .collect()
}

fn apply_rows(rows: &[Vec<(usize, f64)>], v: &[f64]) -> Vec<f64> {
    rows.iter().map(|r| r.iter().map(|&(j, a)| a * v[j]).sum()).collect()
}

fn improve(frozen: &FrozenModel<'_>, grid: Grid, v: &GridField) -> Vec<Point> {
    let g = gradient_central(v);
    (0..grid.len())
        .map(|i| frozen.optimal_control(&grid.coords(i), &g.values()[i]))
        .collect()
}

fn sup_norm(r: &[f64]) -> f64 {
    r.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn check_grid(spec: &dyn ModelSpec, grid: Grid) -> Result<()> {
    if grid.dim() != spec.state_dim() {
        return Err(Error::param("grid.dim", "must match the model's state dimension"));
    }
    Ok(())
}

/// Policy iteration for `-Lap u + H(x, Du; ctx) + rho u = 0`.
pub fn solve_discounted(
    spec: &dyn ModelSpec,
    ctx: &MuContext<'_>,
    rho: f64,
    grid: Grid,
    opts: &HjbOptions,
    warm: Option<&WarmStart>,
) -> Result<HjbSolution> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::param("rho", "must be positive"));
    }
    check_grid(spec, grid)?;
    let frozen = FrozenModel::new(spec, ctx)?;
    let mut policy: Vec<Point> = match warm {
        Some(w) => w.policy.values().to_vec(),
        None => improve(&frozen, grid, &GridField::zeros(grid)),
    };
    let mut data = policy_data(&frozen, grid, &policy);
    let offset = match warm.and_then(|w| w.lambda) {
        Some(l) => l / rho,
        None => data.cost.iter().sum::<f64>() / grid.len() as f64 / rho,
    };
    let mut guess: Option<Vec<f64>> = warm.and_then(|w| w.shape.as_ref()).map(|s| s.values().to_vec());
    let mut history = Vec::new();
    for it in 1..=opts.max_iter {
        let rows = assemble_rows(grid, &data.drift, rho);
        let rhs: Vec<f64> = data.cost.iter().map(|l| l - rho * offset).collect();
        let v = linalg::solve(&SparseMatrix::from_rows(rows), &rhs, guess.as_deref())?;
        let v = GridField::new(grid, v)?;
        let new_policy = improve(&frozen, grid, &v);
        let new_data = policy_data(&frozen, grid, &new_policy);
        let rows = assemble_rows(grid, &new_data.drift, rho);
        let lv = apply_rows(&rows, v.values());
        let r: Vec<f64> = lv
            .iter()
            .zip(&new_data.cost)
            .map(|(a, l)| a - (l - rho * offset))
            .collect();
        let residual = sup_norm(&r);
        history.push(residual);
        policy = new_policy;
        data = new_data;
        if residual <= opts.tol {
            return Ok(finish(grid, offset, v, None, Some(rho), residual, policy, spec, it, history));
        }
        guess = Some(v.into_values());
    }
    Err(Error::NoConvergence {
        what: "HJB policy iteration",
        iterations: opts.max_iter,
        residual: *history.last().unwrap_or(&f64::NAN),
    })
}

#[allow(clippy::too_many_arguments)]
fn finish(
    grid: Grid,
    offset: f64,
    v: GridField,
    lambda: Option<f64>,
    rho: Option<f64>,
    residual: f64,
    policy: Vec<Point>,
    spec: &dyn ModelSpec,
    iterations: usize,
    residual_history: Vec<f64>,
) -> HjbSolution {
    let u = v.map(|x| x + offset);
    let set = spec.control_set();
    let policy = policy.iter().map(|a| set.project(a)).collect();
    HjbSolution {
        u,
        lambda,
        rho,
        residual,
        policy: ControlField::from_raw(grid, policy),
        iterations,
        residual_history,
        offset,
        deviation: v,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ErgodicMode {
    /// Discounted solves at `rho_k = rho0 2^-k` until the Cauchy increment
    /// `|w_k - w_{k+1}|_inf + |lambda_k - lambda_{k+1}|` drops below `tol`.
    VanishingDiscount { rho0: f64, max_levels: usize },
    /// Policy iteration on `(u, lambda)` with `u(x0) = 0`.
    Direct,
}

impl Default for ErgodicMode {
    fn default() -> Self {
        ErgodicMode::Direct
    }
}

/// One level of a vanishing-discount sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscountLevel {
    pub rho: f64,
    pub lambda: f64,
    /// Increment to the previous level; `None` on the first.
    pub increment: Option<f64>,
}

/// `-Lap u + H(x, Du; ctx) + lambda = 0`, `u(x0) = 0`.
pub fn solve_ergodic(
    spec: &dyn ModelSpec,
    ctx: &MuContext<'_>,
    grid: Grid,
    tol: f64,
    mode: ErgodicMode,
    opts: &HjbOptions,
    warm: Option<&WarmStart>,
) -> Result<HjbSolution> {
    match mode {
        ErgodicMode::Direct => solve_ergodic_direct(spec, ctx, grid, opts, warm),
        ErgodicMode::VanishingDiscount { rho0, max_levels } => {
            vanishing_discount(spec, ctx, grid, tol, rho0, max_levels, opts, warm).map(|(s, _)| s)
        }
    }
}

/// Runs the discounted sweep and returns the final solution (with `lambda`
/// set and `u` normalized) together with the per-level record.
#[allow(clippy::too_many_arguments)]
pub fn vanishing_discount(
    spec: &dyn ModelSpec,
    ctx: &MuContext<'_>,
    grid: Grid,
    tol: f64,
    rho0: f64,
    max_levels: usize,
    opts: &HjbOptions,
    warm: Option<&WarmStart>,
) -> Result<(HjbSolution, Vec<DiscountLevel>)> {
    if !(rho0 > 0.0) {
        return Err(Error::param("rho0", "must be positive"));
    }
    let mut levels = Vec::new();
    let mut prev: Option<HjbSolution> = None;
    let mut last_inc = f64::INFINITY;
    for k in 0..max_levels.max(1) {
        let rho = rho0 * 0.5f64.powi(k as i32);
        let ws = prev.as_ref().map(HjbSolution::warm_start);
        let sol = solve_discounted(spec, ctx, rho, grid, opts, ws.as_ref().or(warm))?;
        let lambda = sol.lambda_estimate();
        let increment = prev
            .as_ref()
            .map(|p| p.normalized().sup_distance(&sol.normalized()) + (p.lambda_estimate() - lambda).abs());
        levels.push(DiscountLevel { rho, lambda, increment });
        prev = Some(sol);
        if let Some(inc) = increment {
            last_inc = inc;
            if inc < tol {
                return Ok((prev.unwrap().into_limit(), levels));
            }
        }
    }
    Err(Error::NoConvergence {
        what: "vanishing-discount sweep",
        iterations: levels.len(),
        residual: last_inc,
    })
}

fn solve_ergodic_direct(
    spec: &dyn ModelSpec,
    ctx: &MuContext<'_>,
    grid: Grid,
    opts: &HjbOptions,
    warm: Option<&WarmStart>,
) -> Result<HjbSolution> {
    check_grid(spec, grid)?;
    let frozen = FrozenModel::new(spec, ctx)?;
    let x0 = grid.origin();
    let mut policy: Vec<Point> = match warm {
        Some(w) => w.policy.values().to_vec(),
        None => improve(&frozen, grid, &GridField::zeros(grid)),
    };
    let mut data = policy_data(&frozen, grid, &policy);
    let mut history = Vec::new();
    for it in 1..=opts.max_iter {
        // Column x0 multiplies u(x0) = 0 and is reused for lambda.
        let mut rows = assemble_rows(grid, &data.drift, 0.0);
        for row in rows.iter_mut() {
            for e in row.iter_mut() {
                if e.0 == x0 {
                    e.1 = 0.0;
                }
            }
            row.push((x0, 1.0));
        }
        let z = linalg::solve(&SparseMatrix::from_rows(rows), &data.cost, None)?;
        let lambda = z[x0];
        let mut v = z;
        v[x0] = 0.0;
        let v = GridField::new(grid, v)?;
        let new_policy = improve(&frozen, grid, &v);
        let new_data = policy_data(&frozen, grid, &new_policy);
        let lv = apply_rows(&assemble_rows(grid, &new_data.drift, 0.0), v.values());
        let residual = sup_norm(
            &lv.iter()
                .zip(&new_data.cost)
                .map(|(a, l)| a - l + lambda)
                .collect::<Vec<_>>(),
        );
        history.push(residual);
        policy = new_policy;
        data = new_data;
        if residual <= opts.tol {
            return Ok(finish(grid, 0.0, v, Some(lambda), None, residual, policy, spec, it, history));
        }
    }
    Err(Error::NoConvergence {
        what: "ergodic policy iteration",
        iterations: opts.max_iter,
        residual: *history.last().unwrap_or(&f64::NAN),
    })
}

/// Sensitivity of the discounted solution to the measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DependenceReport {
    /// `|(u1 - u1(x0)) - (u2 - u2(x0))|_inf + |Du1 - Du2|_inf`.
    pub normalized_difference: f64,
    pub shape_difference: f64,
    pub gradient_difference: f64,
    /// `rho |u1 - u2|_inf`.
    pub rho_sup_difference: f64,
    /// `max |b1 - b2|` over nodes and control mesh points.
    pub drift_data_difference: f64,
    /// `max |l1 - l2|` over nodes and control mesh points.
    pub cost_data_difference: f64,
}

pub fn continuous_dependence_report(
    spec: &dyn ModelSpec,
    ctx1: &MuContext<'_>,
    ctx2: &MuContext<'_>,
    rho: f64,
    grid: Grid,
    opts: &HjbOptions,
) -> Result<DependenceReport> {
    let s1 = solve_discounted(spec, ctx1, rho, grid, opts, None)?;
    let s2 = solve_discounted(spec, ctx2, rho, grid, opts, None)?;
    let f1 = FrozenModel::new(spec, ctx1)?;
    let f2 = FrozenModel::new(spec, ctx2)?;
    let set = spec.control_set();
    let mesh = set.mesh().min(41);
    let pts = set.mesh_points(mesh);
    let (mut db, mut dl) = (0.0f64, 0.0f64);
    for i in 0..grid.len() {
        let x = grid.coords(i);
        for a in &pts {
            db = db.max((f1.drift(&x, a) - f2.drift(&x, a)).norm());
            dl = dl.max((f1.cost(&x, a) - f2.cost(&x, a)).abs());
        }
    }
    let shape = s1.normalized().sup_distance(&s2.normalized());
    let grad = s1.gradient().sup_distance(&s2.gradient());
    let rho_sup = rho
        * s1
            .deviation
            .values()
            .iter()
            .zip(s2.deviation.values())
            .map(|(a, b)| (a - b + s1.offset - s2.offset).abs())
            .fold(0.0, f64::max);
    Ok(DependenceReport {
        normalized_difference: shape + grad,
        shape_difference: shape,
        gradient_difference: grad,
        rho_sup_difference: rho_sup,
        drift_data_difference: db,
        cost_data_difference: dl,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::JointMeasure;
    use crate::model::examples::{ConstantModel, Example1, Example1Params};

    fn dirac() -> JointMeasure {
        JointMeasure::dirac(Point::new(0.3, 0.0), Point::new(0.4, 0.0))
    }

    #[test]
    fn constants_solve_the_constant_model() {
        let spec = ConstantModel::new(1, 0.7);
        let nu = dirac();
        let grid = Grid::new(1, 32).unwrap();
        let s = solve_discounted(&spec, &MuContext::Instant(&nu), 0.5, grid, &HjbOptions::default(), None).unwrap();
        assert!(s.u.values().iter().all(|&u| (u - 1.4).abs() < 1e-13));
        assert!(s.residual < 1e-15);
        let e = solve_ergodic(&spec, &MuContext::Instant(&nu), grid, 1e-10, ErgodicMode::Direct, &HjbOptions::default(), None)
            .unwrap();
        assert!((e.lambda.unwrap() - 0.7).abs() < 1e-13);
        assert!(e.u.max_abs() < 1e-13);
    }

    #[test]
    fn residual_history_is_nonincreasing() {
        let spec = Example1::new(Example1Params::default()).unwrap();
        let nu = dirac();
        let grid = Grid::new(1, 64).unwrap();
        let s = solve_discounted(&spec, &MuContext::Instant(&nu), 1.0, grid, &HjbOptions::default(), None).unwrap();
        for w in s.residual_history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-15, "{:?}", s.residual_history);
        }
        assert!(s.residual <= 1e-10);
        assert!(s.residual_history_csv().starts_with("iteration,residual\n1,"));
    }

    #[test]
    fn rejects_nonpositive_rho() {
        let spec = ConstantModel::new(1, 0.7);
        let nu = dirac();
        let grid = Grid::new(1, 16).unwrap();
        let err = solve_discounted(&spec, &MuContext::Instant(&nu), 0.0, grid, &HjbOptions::default(), None).unwrap_err();
        assert!(matches!(err, Error::InvalidParameter { field: "rho", .. }));
    }

    #[test]
    fn matrix_is_an_m_matrix() {
        let grid = Grid::new(1, 16).unwrap();
        let drift: Vec<Point> = (0..16).map(|i| Point::new((i as f64 - 7.5) * 0.7, 0.0)).collect();
        let rows = assemble_rows(grid, &drift, 0.3);
        for (i, row) in rows.iter().enumerate() {
            let mut sum = 0.0;
            for &(j, a) in row {
                if j == i {
                    assert!(a > 0.0);
                } else {
                    assert!(a <= 0.0);
                }
                sum += a;
            }
            assert!((sum - 0.3).abs() < 1e-9);
        }
    }
}
