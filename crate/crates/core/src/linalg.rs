//! Symmetric sparse matrices assembled from element blocks, and the SPD solvers.

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Par, Side};

use crate::error::{DpgError, Result};

/// Compressed sparse rows with the full symmetric pattern stored.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Sums duplicate (row, col) entries in input order, so the result depends
    /// only on the order of `entries`.
    pub fn from_triplets(n: usize, mut entries: Vec<(usize, usize, f64)>) -> Self {
        entries.sort_by_key(|e| (e.0, e.1));
        let mut row_ptr = vec![0; n + 1];
        let mut cols = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in entries {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                cols.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix { n, row_ptr, cols, values }
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix::from_triplets(n, (0..n).map(|i| (i, i, 1.0)).collect())
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let row = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.cols[row.clone()].binary_search(&c) {
            Ok(k) => self.values[row.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|r| (self.row_ptr[r]..self.row_ptr[r + 1]).map(|k| self.values[k] * x[self.cols[k]]).sum())
            .collect()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// max |a_ij − a_ji| / max |a_ij|.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut worst = 0.0f64;
        for r in 0..self.n {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                worst = worst.max((self.values[k] - self.get(self.cols[k], r)).abs());
            }
        }
        if scale > 0.0 {
            worst / scale
        } else {
            0.0
        }
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let mut m = Mat::zeros(self.n, self.n);
        for r in 0..self.n {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                m[(r, self.cols[k])] = self.values[k];
            }
        }
        m
    }

    fn to_faer(&self) -> Result<SparseColMat<usize, f64>> {
        // Symmetric, so the row layout doubles as the column layout.
        let mut trip = Vec::with_capacity(self.nnz());
        for r in 0..self.n {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                trip.push(Triplet::new(self.cols[k], r, self.values[k]));
            }
        }
        SparseColMat::try_new_from_triplets(self.n, self.n, &trip)
            .map_err(|e| DpgError::InvalidParameter(format!("sparse matrix: {e:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolverKind {
    Cholesky,
    ConjugateGradient,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveInfo {
    pub method: SolverKind,
    pub iterations: usize,
    pub residual: f64,
}

/// Systems above this size go to preconditioned CG instead of Cholesky.
pub const CHOLESKY_LIMIT: usize = 400_000;

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn relative_residual(a: &CsrMatrix, x: &[f64], b: &[f64]) -> f64 {
    let ax = a.mul_vec(x);
    let r: Vec<f64> = ax.iter().zip(b).map(|(p, q)| p - q).collect();
    let nb = norm(b);
    if nb == 0.0 {
        norm(&r)
    } else {
        norm(&r) / nb
    }
}

/// Sparse Cholesky with fill-reducing ordering. Fails with the index of the
/// first non-positive pivot when `a` is not positive definite.
pub fn cholesky_solve(a: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>> {
    if a.n == 0 {
        return Ok(Vec::new());
    }
    faer::set_global_parallelism(Par::Seq);
    let fa = a.to_faer()?;
    let llt = fa.sp_cholesky(Side::Lower).map_err(|e| match e {
        faer::sparse::linalg::LltError::Numeric(faer::linalg::cholesky::llt::factor::LltError::NonPositivePivot {
            index,
        }) => DpgError::NotPositiveDefinite { pivot: index },
        other => DpgError::InvalidParameter(format!("sparse Cholesky: {other:?}")),
    })?;
    let mut rhs = Mat::from_fn(a.n, 1, |i, _| b[i]);
    llt.solve_in_place(&mut rhs);
    Ok((0..a.n).map(|i| rhs[(i, 0)]).collect())
}

/// Jacobi-preconditioned conjugate gradients from the starting guess `x`.
pub fn pcg(a: &CsrMatrix, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> Result<SolveInfo> {
    let n = a.n;
    let diag = a.diagonal();
    if let Some(i) = diag.iter().position(|d| !(*d > 0.0)) {
        return Err(DpgError::NotPositiveDefinite { pivot: i });
    }
    let nb = norm(b).max(f64::MIN_POSITIVE);
    let ax = a.mul_vec(x);
    let mut r: Vec<f64> = (0..n).map(|i| b[i] - ax[i]).collect();
    let mut z: Vec<f64> = (0..n).map(|i| r[i] / diag[i]).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut res = norm(&r) / nb;
    let mut it = 0;
    while res > tol && it < max_iter {
        let ap = a.mul_vec(&p);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if !(pap > 0.0) {
            return Err(DpgError::NotPositiveDefinite { pivot: it });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        res = norm(&r) / nb;
        it += 1;
    }
    // Recompute from scratch; the recursive residual drifts.
    let res = relative_residual(a, x, b);
    if res > tol {
        return Err(DpgError::NoConvergence(res));
    }
    Ok(SolveInfo { method: SolverKind::ConjugateGradient, iterations: it, residual: res })
}

/// Solves the SPD system to relative residual `tol`: Cholesky for moderate
/// sizes, with a CG polish if rounding leaves the residual above `tol`.
pub fn solve_spd(a: &CsrMatrix, b: &[f64], tol: f64) -> Result<(Vec<f64>, SolveInfo)> {
    if norm(b) == 0.0 {
        return Ok((vec![0.0; a.n], SolveInfo { method: SolverKind::Cholesky, iterations: 0, residual: 0.0 }));
    }
    if a.n > CHOLESKY_LIMIT {
        let mut x = vec![0.0; a.n];
        let info = pcg(a, b, &mut x, tol, 20 * a.n)?;
        return Ok((x, info));
    }
    let mut x = cholesky_solve(a, b)?;
    let res = relative_residual(a, &x, b);
    if res <= tol {
        return Ok((x, SolveInfo { method: SolverKind::Cholesky, iterations: 0, residual: res }));
    }
    let info = pcg(a, b, &mut x, tol, 10 * a.n)?;
    Ok((x, SolveInfo { method: SolverKind::Cholesky, ..info }))
}
