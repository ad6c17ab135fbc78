//! Periodic grids on the unit torus and the finite-difference operators
//! shared by the HJB and Fokker-Planck discretizations.
//!
//! Nodes sit at `x_i = i h` with `h = 1/n`; every index wraps modulo `n`.
//! Two-dimensional fields are stored with axis 0 varying fastest.

use std::fmt::Write as _;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point (or vector) of `R^d`, `d <= 2`. Unused components are zero.
pub type Point = Vector2<f64>;

/// Smallest admissible number of nodes per axis.
pub const MIN_NODES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    n: usize,
}

impl Grid {
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dimension {dim} not in {{1, 2}}")));
        }
        if n < MIN_NODES {
            return Err(Error::InvalidGrid(format!(
                "{n} nodes per axis, need at least {MIN_NODES}"
            )));
        }
        Ok(Self { dim, n })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Nodes per axis.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Total node count `n^d`.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Volume element `h^d`.
    pub fn cell_volume(&self) -> f64 {
        self.h().powi(self.dim as i32)
    }

    /// Per-axis integer coordinates of a flat index.
    pub fn multi_index(&self, idx: usize) -> [usize; 2] {
        match self.dim {
            1 => [idx, 0],
            _ => [idx % self.n, idx / self.n],
        }
    }

    pub fn flat_index(&self, mi: [usize; 2]) -> usize {
        match self.dim {
            1 => mi[0] % self.n,
            _ => (mi[0] % self.n) + self.n * (mi[1] % self.n),
        }
    }

    pub fn coords(&self, idx: usize) -> Point {
        let mi = self.multi_index(idx);
        let h = self.h();
        match self.dim {
            1 => Point::new(mi[0] as f64 * h, 0.0),
            _ => Point::new(mi[0] as f64 * h, mi[1] as f64 * h),
        }
    }

    /// Index of the neighbour `offset` nodes away along `axis`, with wrap.
    pub fn neighbor(&self, idx: usize, axis: usize, offset: isize) -> usize {
        let mut mi = self.multi_index(idx);
        let n = self.n as isize;
        mi[axis] = (mi[axis] as isize + offset).rem_euclid(n) as usize;
        self.flat_index(mi)
    }

    /// The normalization node `x_0 = 0`.
    pub fn origin(&self) -> usize {
        0
    }
}

/// Wraps a coordinate into `[0, 1)`.
pub fn wrap_unit(x: f64) -> f64 {
    let w = x.rem_euclid(1.0);
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

/// One-axis periodic distance `min(|x - y|, 1 - |x - y|)`.
pub fn periodic_gap(x: f64, y: f64) -> f64 {
    let d = (x - y).rem_euclid(1.0);
    d.min(1.0 - d)
}

/// Torus metric: sum over axes of the periodic gap.
pub fn torus_distance(x: &Point, y: &Point) -> f64 {
    periodic_gap(x[0], y[0]) + periodic_gap(x[1], y[1])
}

/// Real values on the nodes of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    grid: Grid,
    values: Vec<f64>,
}

impl GridField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.len()],
        }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(Point) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(grid.coords(i))).collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn sup_distance(&self, other: &GridField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// `alpha * self + beta * other`.
    pub fn combine(&self, alpha: f64, other: &GridField, beta: f64) -> GridField {
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| alpha * a + beta * b)
            .collect();
        GridField {
            grid: self.grid,
            values,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridField {
        GridField {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Shifts the field by one node along `axis`: `out(x) = f(x - h e_axis)`.
    pub fn shifted(&self, axis: usize, offset: isize) -> GridField {
        let values = (0..self.grid.len())
            .map(|i| self.values[self.grid.neighbor(i, axis, -offset)])
            .collect();
        GridField {
            grid: self.grid,
            values,
        }
    }

    /// CSV with one row per node: integer coordinates, then the value
    /// printed with 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        if self.grid.dim == 1 {
            out.push_str("i,value\n");
        } else {
            out.push_str("i,j,value\n");
        }
        for (idx, v) in self.values.iter().enumerate() {
            let mi = self.grid.multi_index(idx);
            if self.grid.dim == 1 {
                let _ = writeln!(out, "{},{:.16e}", mi[0], v);
            } else {
                let _ = writeln!(out, "{},{},{:.16e}", mi[0], mi[1], v);
            }
        }
        out
    }

    pub fn from_csv(grid: Grid, text: &str) -> Result<Self> {
        let mut values = vec![f64::NAN; grid.len()];
        let mut seen = 0usize;
        for (lineno, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != grid.dim + 1 {
                return Err(Error::Parse(format!("line {}: expected {} columns", lineno + 1, grid.dim + 1)));
            }
            let mut mi = [0usize; 2];
            for (axis, c) in cols[..grid.dim].iter().enumerate() {
                mi[axis] = c
                    .parse()
                    .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
                if mi[axis] >= grid.n {
                    return Err(Error::Parse(format!("line {}: index out of range", lineno + 1)));
                }
            }
            let v: f64 = cols[grid.dim]
                .parse()
                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
            values[grid.flat_index(mi)] = v;
            seen += 1;
        }
        if seen != grid.len() {
            return Err(Error::ShapeMismatch {
                expected: grid.len(),
                got: seen,
            });
        }
        Self::new(grid, values)
    }

    /// JSON array of node values in flat-index order.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.values).expect("finite floats always serialize")
    }

    pub fn from_json(grid: Grid, text: &str) -> Result<Self> {
        let values: Vec<f64> = serde_json::from_str(text)?;
        Self::new(grid, values)
    }
}

/// A `d`-vector per node (gradients, drifts).
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: Grid,
    values: Vec<Point>,
}

impl VectorField {
    pub fn new(grid: Grid, values: Vec<Point>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !(v[0].is_finite() && v[1].is_finite())) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self::constant(grid, Point::zeros())
    }

    pub fn constant(grid: Grid, v: Point) -> Self {
        Self {
            grid,
            values: vec![v; grid.len()],
        }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(Point) -> Point) -> Self {
        let values = (0..grid.len()).map(|i| f(grid.coords(i))).collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn values(&self) -> &[Point] {
        &self.values
    }

    pub fn component(&self, axis: usize) -> GridField {
        GridField {
            grid: self.grid,
            values: self.values.iter().map(|v| v[axis]).collect(),
        }
    }

    /// Largest Euclidean norm over the nodes.
    pub fn max_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.norm()))
    }

    /// Largest componentwise difference over the nodes.
    pub fn sup_distance(&self, other: &VectorField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).amax()))
    }
}

/// Second-order central Laplacian with periodic wrap.
pub fn laplacian(f: &GridField) -> GridField {
    let grid = f.grid;
    let inv_h2 = 1.0 / (grid.h() * grid.h());
    let values = (0..grid.len())
        .map(|i| {
            let mut acc = 0.0;
            for axis in 0..grid.dim {
                let l = f.values[grid.neighbor(i, axis, -1)];
                let r = f.values[grid.neighbor(i, axis, 1)];
                acc += (l - 2.0 * f.values[i] + r) * inv_h2;
            }
            acc
        })
        .collect();
    GridField { grid, values }
}

/// Second-order central gradient with periodic wrap.
pub fn gradient_central(f: &GridField) -> VectorField {
    let grid = f.grid;
    let inv_2h = 0.5 / grid.h();
    let values = (0..grid.len())
        .map(|i| {
            let mut g = Point::zeros();
            for axis in 0..grid.dim {
                let l = f.values[grid.neighbor(i, axis, -1)];
                let r = f.values[grid.neighbor(i, axis, 1)];
                g[axis] = (r - l) * inv_2h;
            }
            g
        })
        .collect();
    VectorField { grid, values }
}

/// One-sided differences chosen by the sign of `drift`: forward where the
/// drift component is positive, backward where negative, central where zero.
pub fn gradient_upwind(f: &GridField, drift: &VectorField) -> VectorField {
    let grid = f.grid;
    let h = grid.h();
    let values = (0..grid.len())
        .map(|i| {
            let mut g = Point::zeros();
            for axis in 0..grid.dim {
                let c = f.values[i];
                let l = f.values[grid.neighbor(i, axis, -1)];
                let r = f.values[grid.neighbor(i, axis, 1)];
                let b = drift.values[i][axis];
                g[axis] = if b > 0.0 {
                    (r - c) / h
                } else if b < 0.0 {
                    (c - l) / h
                } else {
                    (r - l) / (2.0 * h)
                };
            }
            g
        })
        .collect();
    VectorField { grid, values }
}
