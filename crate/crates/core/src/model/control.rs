use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Point;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControlShape {
    Ball { radius: f64 },
    Box { lo: [f64; 2], hi: [f64; 2] },
}

/// Compact control set `A` in `R^k`, `k <= 2`, together with the mesh
/// resolution used for brute-force maximization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlSet {
    shape: ControlShape,
    dim: usize,
    mesh: usize,
}

/// Default brute-force points per control axis.
pub const DEFAULT_MESH: usize = 201;

impl ControlSet {
    pub fn ball(dim: usize, radius: f64) -> Self {
        Self::new(ControlShape::Ball { radius }, dim, DEFAULT_MESH).expect("valid ball")
    }

    pub fn new(shape: ControlShape, dim: usize, mesh: usize) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::param("control_dim", "must be 1 or 2"));
        }
        if mesh < 2 {
            return Err(Error::param("mesh", "need at least 2 points per axis"));
        }
        match shape {
            ControlShape::Ball { radius } if !(radius > 0.0 && radius.is_finite()) => {
                return Err(Error::param("radius", "must be positive"));
            }
            ControlShape::Box { lo, hi } if (0..dim).any(|k| !(lo[k] < hi[k])) => {
                return Err(Error::param("box", "need lo < hi componentwise"));
            }
            _ => {}
        }
        Ok(Self { shape, dim, mesh })
    }

    pub fn with_mesh(mut self, mesh: usize) -> Result<Self> {
        if mesh < 2 {
            return Err(Error::param("mesh", "need at least 2 points per axis"));
        }
        self.mesh = mesh;
        Ok(self)
    }

    pub fn shape(&self) -> ControlShape {
        self.shape
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mesh(&self) -> usize {
        self.mesh
    }

    /// Largest `|a|` over `A`.
    pub fn max_norm(&self) -> f64 {
        match self.shape {
            ControlShape::Ball { radius } => radius,
            ControlShape::Box { lo, hi } => (0..self.dim)
                .map(|k| lo[k].abs().max(hi[k].abs()).powi(2))
                .sum::<f64>()
                .sqrt(),
        }
    }

    pub fn contains(&self, a: &Point, slack: f64) -> bool {
        if (self.dim..2).any(|k| a[k] != 0.0) {
            return false;
        }
        match self.shape {
            ControlShape::Ball { radius } => a.norm() <= radius + slack,
            ControlShape::Box { lo, hi } => {
                (0..self.dim).all(|k| a[k] >= lo[k] - slack && a[k] <= hi[k] + slack)
            }
        }
    }

    /// Euclidean projection onto `A`.
    pub fn project(&self, a: &Point) -> Point {
        let mut p = *a;
        for k in self.dim..2 {
            p[k] = 0.0;
        }
        match self.shape {
            ControlShape::Ball { radius } => {
                let n = p.norm();
                if n > radius {
                    p *= radius / n;
                }
                p
            }
            ControlShape::Box { lo, hi } => {
                for k in 0..self.dim {
                    p[k] = p[k].clamp(lo[k], hi[k]);
                }
                p
            }
        }
    }

    /// The control closest to the origin.
    pub fn reference(&self) -> Point {
        self.project(&Point::zeros())
    }

    fn axis_range(&self, k: usize) -> (f64, f64) {
        match self.shape {
            ControlShape::Ball { radius } => (-radius, radius),
            ControlShape::Box { lo, hi } => (lo[k], hi[k]),
        }
    }

    /// Spacing of the per-axis brute-force mesh (largest over axes).
    pub fn mesh_spacing(&self, mesh: usize) -> f64 {
        (0..self.dim)
            .map(|k| {
                let (lo, hi) = self.axis_range(k);
                (hi - lo) / (mesh - 1) as f64
            })
            .fold(0.0, f64::max)
    }

    /// Candidate controls for brute-force maximization. Meshes with `k` and
    /// `2k - 1` points per axis are nested. Balls in two dimensions add
    /// `4 (k - 1)` equally spaced boundary points.
    pub fn mesh_points(&self, mesh: usize) -> Vec<Point> {
        let axis = |k: usize| -> Vec<f64> {
            let (lo, hi) = self.axis_range(k);
            (0..mesh)
                .map(|i| lo + (hi - lo) * i as f64 / (mesh - 1) as f64)
                .collect()
        };
        match self.dim {
            1 => axis(0).into_iter().map(|v| Point::new(v, 0.0)).collect(),
            _ => {
                let xs = axis(0);
                let ys = axis(1);
                let mut pts = Vec::with_capacity(mesh * mesh);
                for &y in &ys {
                    for &x in &xs {
                        let p = Point::new(x, y);
                        if self.contains(&p, 1e-12) {
                            pts.push(self.project(&p));
                        }
                    }
                }
                if let ControlShape::Ball { radius } = self.shape {
                    let count = 4 * (mesh - 1);
                    for k in 0..count {
                        let th = std::f64::consts::TAU * k as f64 / count as f64;
                        pts.push(Point::new(radius * th.cos(), radius * th.sin()));
                    }
                }
                pts
            }
        }
    }

    /// Whether `a` lies within `tol` of the boundary of `A`.
    pub fn on_boundary(&self, a: &Point, tol: f64) -> bool {
        match self.shape {
            ControlShape::Ball { radius } => a.norm() >= radius - tol,
            ControlShape::Box { lo, hi } => {
                (0..self.dim).any(|k| a[k] <= lo[k] + tol || a[k] >= hi[k] - tol)
            }
        }
    }
}
