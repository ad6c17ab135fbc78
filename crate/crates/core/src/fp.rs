//! Implicit Euler for `dm/dt = Lap m + div(m g)` in conservative form.
//!
//! With `v = -g` the face flux is
//! `J_{i+1/2} = -(m_{i+1} - m_i)/h + v_i^+ m_i - v_{i+1}^- m_{i+1}`,
//! the transpose of the upwind HJB operator. The step matrix
//! `I - dt G` has unit column sums and nonpositive off-diagonals, so mass is
//! conserved and positivity is preserved for every `dt`.

use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, VectorField};
use crate::linalg::{self, SparseMatrix};
use crate::measure::{wasserstein1_state, DensityField};

/// Negative values below this are treated as a solver failure.
pub const NEGATIVITY_TOL: f64 = 1e-13;

fn step_matrix(grid: Grid, g: &VectorField, dt: f64) -> SparseMatrix {
    let h = grid.h();
    let ih2 = 1.0 / (h * h);
    let mut rows: Vec<Vec<(usize, f64)>> = (0..grid.len()).map(|i| vec![(i, 1.0)]).collect();
    for i in 0..grid.len() {
        for axis in 0..grid.dim() {
            let j = grid.neighbor(i, axis, 1);
            let vi = -g.values()[i][axis];
            let vj = -g.values()[j][axis];
            // Flux through the face between i and j.
            let out_i = dt * (ih2 + vi.max(0.0) / h);
            let out_j = dt * (ih2 + (-vj).max(0.0) / h);
            rows[i].push((i, out_i));
            rows[i].push((j, -out_j));
            rows[j].push((j, out_j));
            rows[j].push((i, -out_i));
        }
    }
    SparseMatrix::from_rows(rows)
}

/// One implicit Euler step with drift `g = H_p` held fixed.
pub fn fp_step(m: &DensityField, g: &VectorField, dt: f64) -> Result<DensityField> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::param("dt", "must be positive"));
    }
    let grid = m.grid();
    if g.grid() != grid {
        return Err(Error::ContextMismatch("drift and density grids differ"));
    }
    let a = step_matrix(grid, g, dt);
    let next = linalg::solve(&a, m.values(), Some(m.values()))?;
    DensityField::from_solver(grid, next, NEGATIVITY_TOL)
}

/// `|(I - dt G(g)) next - prev|_inf`: how well `next` solves the implicit
/// step from `prev` under drift `g`.
pub fn fp_step_residual(prev: &DensityField, next: &DensityField, g: &VectorField, dt: f64) -> f64 {
    let a = step_matrix(prev.grid(), g, dt);
    a.matvec(next.values())
        .iter()
        .zip(prev.values())
        .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Densities `m_j` at `t_j = j dt` and the drifts `g_j` used on
/// `[t_j, t_{j+1})`.
#[derive(Debug, Clone)]
pub struct FpTrajectory {
    pub dt: f64,
    pub times: Vec<f64>,
    pub densities: Vec<DensityField>,
    pub drifts: Vec<VectorField>,
}

/// Number of steps for horizon `t_final`; must be an integer multiple of `dt`.
pub fn step_count(t_final: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::param("dt", "must be positive"));
    }
    if !(t_final >= 0.0 && t_final.is_finite()) {
        return Err(Error::param("t_final", "must be nonnegative"));
    }
    let steps = (t_final / dt).round();
    if (steps * dt - t_final).abs() > 1e-9 * t_final.max(1.0) {
        return Err(Error::param("t_final", "must be a multiple of dt"));
    }
    Ok(steps as usize)
}

/// Sequential implicit Euler from `m0`. `drift(j, t_j, m_j)` supplies the
/// drift on step `j`.
pub fn fp_evolve(
    m0: &DensityField,
    mut drift: impl FnMut(usize, f64, &DensityField) -> Result<VectorField>,
    t_final: f64,
    dt: f64,
) -> Result<FpTrajectory> {
    let steps = step_count(t_final, dt)?;
    let mut times = vec![0.0];
    let mut densities = vec![m0.clone()];
    let mut drifts = Vec::with_capacity(steps);
    for j in 0..steps {
        let t = j as f64 * dt;
        let g = drift(j, t, &densities[j])?;
        let next = fp_step(&densities[j], &g, dt)?;
        drifts.push(g);
        densities.push(next);
        times.push((j + 1) as f64 * dt);
    }
    Ok(FpTrajectory {
        dt,
        times,
        densities,
        drifts,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BinaryHeader {
    dim: usize,
    n: usize,
    dt: f64,
    t_final: f64,
    steps: usize,
}

impl FpTrajectory {
    pub fn grid(&self) -> Grid {
        self.densities[0].grid()
    }

    pub fn t_final(&self) -> f64 {
        *self.times.last().expect("trajectory has an initial density")
    }

    /// Rows `t,node,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,node,value\n");
        for (t, m) in self.times.iter().zip(&self.densities) {
            for (i, v) in m.values().iter().enumerate() {
                let _ = writeln!(out, "{:.16e},{},{:.16e}", t, i, v);
            }
        }
        out
    }

    /// `u64` little-endian header length, JSON header, then the densities
    /// as little-endian `f64`, step-major.
    pub fn write_binary(&self, w: &mut impl Write) -> Result<()> {
        let grid = self.grid();
        let header = serde_json::to_vec(&BinaryHeader {
            dim: grid.dim(),
            n: grid.n(),
            dt: self.dt,
            t_final: self.t_final(),
            steps: self.densities.len() - 1,
        })?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        for m in &self.densities {
            for v in m.values() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Reads densities written by [`FpTrajectory::write_binary`]; drifts are
    /// not stored and come back empty.
    pub fn read_binary(r: &mut impl Read) -> Result<Self> {
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let mut header = vec![0u8; u64::from_le_bytes(len) as usize];
        r.read_exact(&mut header)?;
        let header: BinaryHeader = serde_json::from_slice(&header)?;
        let grid = Grid::new(header.dim, header.n)?;
        let mut densities = Vec::with_capacity(header.steps + 1);
        let mut buf = [0u8; 8];
        for _ in 0..=header.steps {
            let mut values = Vec::with_capacity(grid.len());
            for _ in 0..grid.len() {
                r.read_exact(&mut buf)?;
                values.push(f64::from_le_bytes(buf));
            }
            densities.push(DensityField::from_solver(grid, values, 0.0)?);
        }
        Ok(Self {
            dt: header.dt,
            times: (0..=header.steps).map(|j| j as f64 * header.dt).collect(),
            densities,
            drifts: Vec::new(),
        })
    }
}

/// Largest `dist(j, k) / |t_j - t_k|^(1/2)` over time pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HolderReport {
    pub constant: f64,
    pub pairs: usize,
    pub worst_pair: Option<(usize, usize)>,
}

/// Time pairs examined for Hölder ratios: all of them when there are at
/// most `max_pairs`, otherwise every start with gaps `1, 2, 3, 4, 6, 8, ...`.
pub fn holder_pairs(len: usize, max_pairs: usize) -> Vec<(usize, usize)> {
    let total = len * len.saturating_sub(1) / 2;
    if total <= max_pairs {
        return (0..len).flat_map(|j| (j + 1..len).map(move |k| (j, k))).collect();
    }
    let mut gaps = Vec::new();
    let mut g = 1;
    while g < len {
        gaps.push(g);
        if g >= 2 && g + g / 2 < len {
            gaps.push(g + g / 2);
        }
        g *= 2;
    }
    gaps.iter()
        .flat_map(|&g| (0..len - g).map(move |j| (j, j + g)))
        .collect()
}

pub fn holder_sup(
    times: &[f64],
    max_pairs: usize,
    mut dist: impl FnMut(usize, usize) -> Result<f64>,
) -> Result<HolderReport> {
    let pairs = holder_pairs(times.len(), max_pairs);
    let mut best = 0.0;
    let mut worst_pair = None;
    for &(j, k) in &pairs {
        let ratio = dist(j, k)? / (times[k] - times[j]).abs().sqrt();
        if ratio > best {
            best = ratio;
            worst_pair = Some((j, k));
        }
    }
    Ok(HolderReport {
        constant: best,
        pairs: pairs.len(),
        worst_pair,
    })
}

/// Empirical `sup W1(m_j, m_k) / |t_j - t_k|^(1/2)`.
pub fn holder_report(traj: &FpTrajectory) -> Result<HolderReport> {
    if traj.densities.len() < 2 {
        return Err(Error::TrajectoryTooShort {
            available: traj.densities.len(),
            needed: 2,
        });
    }
    holder_sup(&traj.times, 5000, |j, k| wasserstein1_state(&traj.densities[j], &traj.densities[k]))
}

/// `sum_j dt sum_i h^d (m_i^2 + |Grad_+ m|_i^2)` over steps `1..=N`.
pub fn sobolev_surrogate(traj: &FpTrajectory) -> f64 {
    let grid = traj.grid();
    let h = grid.h();
    let vol = grid.cell_volume();
    traj.densities
        .iter()
        .skip(1)
        .map(|m| {
            let v = m.values();
            let s: f64 = (0..grid.len())
                .map(|i| {
                    let grad2: f64 = (0..grid.dim())
                        .map(|axis| ((v[grid.neighbor(i, axis, 1)] - v[i]) / h).powi(2))
                        .sum();
                    v[i] * v[i] + grad2
                })
                .sum();
            traj.dt * vol * s
        })
        .sum()
}
