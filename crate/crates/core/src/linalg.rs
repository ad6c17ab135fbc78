//! Sparse linear algebra for the periodic stencil systems.
//!
//! One-dimensional periodic operators are cyclic tridiagonal and go through
//! a Sherman-Morrison corrected Thomas sweep. Everything else is handled by
//! dense LU when small and Jacobi-preconditioned BiCGSTAB otherwise.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Above this size general systems are solved iteratively.
const DENSE_LIMIT: usize = 400;

/// Compressed sparse row matrix, square.
#[derive(Debug, Clone)]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from per-row `(column, value)` lists; repeated columns are summed.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            let start = cols.len();
            for (c, v) in row {
                debug_assert!(c < n);
                if cols.len() > start && *cols.last().unwrap() == c {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        Self {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|e| e.0 == j).map_or(0.0, |e| e.1)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    /// Column sums, used to verify conservative assembly.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.n];
        for (&c, &v) in self.cols.iter().zip(&self.vals) {
            s[c] += v;
        }
        s
    }

    fn is_cyclic_tridiagonal(&self) -> bool {
        let n = self.n;
        n >= 3
            && (0..n).all(|i| {
                self.row(i)
                    .all(|(j, _)| j == i || j == (i + 1) % n || j == (i + n - 1) % n)
            })
    }

    fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m[(i, j)] += v;
            }
        }
        m
    }
}

/// Solves `a x = b`. `guess` seeds the iterative path.
pub fn solve(a: &SparseMatrix, b: &[f64], guess: Option<&[f64]>) -> Result<Vec<f64>> {
    if a.is_cyclic_tridiagonal() {
        let n = a.n;
        let sub: Vec<f64> = (0..n).map(|i| a.get(i, (i + n - 1) % n)).collect();
        let diag = a.diagonal();
        let sup: Vec<f64> = (0..n).map(|i| a.get(i, (i + 1) % n)).collect();
        return solve_cyclic_tridiagonal(&sub, &diag, &sup, b);
    }
    if a.n <= DENSE_LIMIT {
        return dense_solve(a, b);
    }
    match bicgstab(a, b, guess, 1e-14, 20 * a.n) {
        Ok((x, _)) => Ok(x),
        Err(e) if a.n <= 4 * DENSE_LIMIT => dense_solve(a, b).map_err(|_| e),
        Err(e) => Err(e),
    }
}

pub fn dense_solve(a: &SparseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let lu = a.to_dense().lu();
    lu.solve(&DVector::from_column_slice(b))
        .map(|x| x.iter().copied().collect())
        .ok_or_else(|| Error::LinearSolve("singular matrix".into()))
}

fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut piv = diag[0];
    if piv == 0.0 {
        return Err(Error::LinearSolve("zero pivot".into()));
    }
    c[0] = sup[0] / piv;
    d[0] = rhs[0] / piv;
    for i in 1..n {
        piv = diag[i] - sub[i] * c[i - 1];
        if piv == 0.0 || !piv.is_finite() {
            return Err(Error::LinearSolve(format!("zero pivot at row {i}")));
        }
        c[i] = sup[i] / piv;
        d[i] = (rhs[i] - sub[i] * d[i - 1]) / piv;
    }
    let mut x = d;
    for i in (0..n - 1).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    Ok(x)
}

/// Cyclic tridiagonal solve. `sub[i]` multiplies `x[i-1]` and `sup[i]`
/// multiplies `x[i+1]`, both with periodic wrap.
pub fn solve_cyclic_tridiagonal(
    sub: &[f64],
    diag: &[f64],
    sup: &[f64],
    rhs: &[f64],
) -> Result<Vec<f64>> {
    let n = diag.len();
    let alpha = sup[n - 1];
    let beta = sub[0];
    let gamma = -diag[0];
    let mut bb = diag.to_vec();
    bb[0] -= gamma;
    bb[n - 1] -= alpha * beta / gamma;
    let mut a = sub.to_vec();
    a[0] = 0.0;
    let mut c = sup.to_vec();
    c[n - 1] = 0.0;
    let mut x = solve_tridiagonal(&a, &bb, &c, rhs)?;
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = alpha;
    let z = solve_tridiagonal(&a, &bb, &c, &u)?;
    let denom = 1.0 + z[0] + beta * z[n - 1] / gamma;
    if denom == 0.0 {
        return Err(Error::LinearSolve("singular cyclic system".into()));
    }
    let fact = (x[0] + beta * x[n - 1] / gamma) / denom;
    for (xi, zi) in x.iter_mut().zip(&z) {
        *xi -= fact * zi;
    }
    Ok(x)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Jacobi-preconditioned BiCGSTAB. Returns the solution and iteration count.
pub fn bicgstab(
    a: &SparseMatrix,
    b: &[f64],
    guess: Option<&[f64]>,
    rel_tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, usize)> {
    let n = a.n;
    let inv_diag: Vec<f64> = a
        .diagonal()
        .iter()
        .map(|&d| if d != 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let precond = |v: &[f64]| -> Vec<f64> { v.iter().zip(&inv_diag).map(|(x, d)| x * d).collect() };
    let mut x = guess.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    let ax = a.matvec(&x);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let r_hat = r.clone();
    let b_norm = norm(b).max(f64::MIN_POSITIVE);
    let target = rel_tol * b_norm;
    if norm(&r) <= target {
        return Ok((x, 0));
    }
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    for it in 1..=max_iter {
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        let y = precond(&p);
        v = a.matvec(&y);
        alpha = rho / dot(&r_hat, &v);
        let s: Vec<f64> = r.iter().zip(&v).map(|(ri, vi)| ri - alpha * vi).collect();
        if norm(&s) <= target {
            for i in 0..n {
                x[i] += alpha * y[i];
            }
            return Ok((x, it));
        }
        let z = precond(&s);
        let t = a.matvec(&z);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * y[i] + omega * z[i];
            r[i] = s[i] - omega * t[i];
        }
        if norm(&r) <= target {
            return Ok((x, it));
        }
        if omega == 0.0 || !omega.is_finite() {
            break;
        }
    }
    let res = {
        let ax = a.matvec(&x);
        norm(&b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect::<Vec<_>>()) / b_norm
    };
    Err(Error::NoConvergence {
        what: "BiCGSTAB",
        iterations: max_iter,
        residual: res,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn periodic_matrix(n: usize, shift: f64) -> SparseMatrix {
        let rows = (0..n)
            .map(|i| {
                vec![
                    (i, 2.0 + shift + 0.1 * i as f64),
                    ((i + 1) % n, -1.0 - 0.01 * i as f64),
                    ((i + n - 1) % n, -0.9),
                ]
            })
            .collect();
        SparseMatrix::from_rows(rows)
    }

    fn residual(a: &SparseMatrix, x: &[f64], b: &[f64]) -> f64 {
        a.matvec(x)
            .iter()
            .zip(b)
            .fold(0.0, |m, (l, r)| f64::max(m, (l - r).abs()))
    }

    #[test]
    fn cyclic_thomas_solves_periodic_system() {
        let a = periodic_matrix(17, 0.3);
        let b: Vec<f64> = (0..17).map(|i| (i as f64).sin()).collect();
        let x = solve(&a, &b, None).unwrap();
        assert!(residual(&a, &x, &b) < 1e-12);
        let xd = dense_solve(&a, &b).unwrap();
        for (p, q) in x.iter().zip(&xd) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn bicgstab_matches_dense() {
        let n = 50;
        let rows = (0..n)
            .map(|i| {
                vec![
                    (i, 4.5),
                    ((i + 1) % n, -1.0),
                    ((i + n - 1) % n, -1.2),
                    ((i + 7) % n, -0.8),
                    ((i + n - 7) % n, -1.0),
                ]
            })
            .collect();
        let a = SparseMatrix::from_rows(rows);
        let b: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64 * 0.3).cos()).collect();
        let (x, _) = bicgstab(&a, &b, None, 1e-14, 500).unwrap();
        let xd = dense_solve(&a, &b).unwrap();
        for (p, q) in x.iter().zip(&xd) {
            assert!((p - q).abs() < 1e-11);
        }
    }

    #[test]
    fn duplicate_entries_are_summed() {
        let a = SparseMatrix::from_rows(vec![vec![(0, 1.0), (0, 2.0)], vec![(1, 1.0)]]);
        assert_eq!(a.get(0, 0), 3.0);
        assert_eq!(a.column_sums(), vec![3.0, 1.0]);
    }
}
