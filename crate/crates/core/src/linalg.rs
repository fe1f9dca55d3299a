//! Sparse matrix helpers and a banded LU factorization for the time stepper.

use sprs::{CsMat, TriMat};

use crate::error::{Error, Result};

pub type SparseMatrix = CsMat<f64>;

/// Builds a CSR matrix from triplets; duplicate entries are summed.
pub fn csr_from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> SparseMatrix {
    let mut tri = TriMat::with_capacity((rows, cols), triplets.len());
    for &(r, c, v) in triplets {
        tri.add_triplet(r, c, v);
    }
    tri.to_csr()
}

/// `y = A x` for a CSR matrix.
pub fn matvec(a: &SparseMatrix, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; a.rows()];
    matvec_into(a, x, &mut y);
    y
}

pub fn matvec_into(a: &SparseMatrix, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(a.cols(), x.len());
    for (r, row) in a.outer_iterator().enumerate() {
        let mut s = 0.0;
        for (c, &v) in row.iter() {
            s += v * x[c];
        }
        y[r] = s;
    }
}

pub fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `alpha * I + beta * A` for a square CSR matrix.
pub fn shifted(a: &SparseMatrix, alpha: f64, beta: f64) -> SparseMatrix {
    let n = a.rows();
    let mut trip = Vec::with_capacity(a.nnz() + n);
    for (r, row) in a.outer_iterator().enumerate() {
        for (c, &v) in row.iter() {
            trip.push((r, c, beta * v));
        }
        trip.push((r, r, alpha));
    }
    csr_from_triplets(n, n, &trip)
}

/// `(A + Aᵀ) / 2`.
pub fn symmetric_part(a: &SparseMatrix) -> SparseMatrix {
    let n = a.rows();
    let mut trip = Vec::with_capacity(2 * a.nnz());
    for (r, row) in a.outer_iterator().enumerate() {
        for (c, &v) in row.iter() {
            trip.push((r, c, 0.5 * v));
            trip.push((c, r, 0.5 * v));
        }
    }
    csr_from_triplets(n, n, &trip)
}

/// Largest `|A_ij - A_ji|` relative to the largest `|A_ij|`.
pub fn asymmetry(a: &SparseMatrix) -> f64 {
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    for (r, row) in a.outer_iterator().enumerate() {
        for (c, &v) in row.iter() {
            scale = scale.max(v.abs());
            let t = a.get(c, r).copied().unwrap_or(0.0);
            worst = worst.max((v - t).abs());
        }
    }
    if scale == 0.0 {
        0.0
    } else {
        worst / scale
    }
}

/// LU factorization without pivoting in band storage.
///
/// The matrices factored here are diagonally dominant or symmetric positive
/// definite, for which elimination without pivoting is stable.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    lower: usize,
    upper: usize,
    /// Row-major band: row `i` stores columns `i - lower ..= i + upper`.
    band: Vec<f64>,
}

impl BandedLu {
    pub fn factor(a: &SparseMatrix) -> Result<Self> {
        let n = a.rows();
        if n != a.cols() {
            return Err(Error::SolverDiverged("matrix is not square".into()));
        }
        let (mut lower, mut upper) = (0usize, 0usize);
        for (r, row) in a.outer_iterator().enumerate() {
            for (c, _) in row.iter() {
                if c < r {
                    lower = lower.max(r - c);
                } else {
                    upper = upper.max(c - r);
                }
            }
        }
        let width = lower + upper + 1;
        let mut band = vec![0.0; n * width];
        for (r, row) in a.outer_iterator().enumerate() {
            for (c, &v) in row.iter() {
                band[r * width + (c + lower - r)] = v;
            }
        }
        let scale = band.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tiny = scale * 1e-14;
        for k in 0..n {
            let pivot = band[k * width + lower];
            if !(pivot.abs() > tiny) || !pivot.is_finite() {
                return Err(Error::SolverDiverged(format!("zero pivot at row {k}")));
            }
            let last_row = (k + lower).min(n - 1);
            let last_col = (k + upper).min(n - 1);
            for i in k + 1..=last_row {
                let ik = i * width + (k + lower - i);
                let factor = band[ik] / pivot;
                if factor == 0.0 {
                    continue;
                }
                band[ik] = factor;
                // row i -= factor * row k over columns k+1..=last_col
                let ri = i * width + lower - i;
                let rk = k * width + lower - k;
                for j in k + 1..=last_col {
                    band[ri + j] -= factor * band[rk + j];
                }
            }
        }
        Ok(BandedLu { n, lower, upper, band })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let (n, lo, up) = (self.n, self.lower, self.upper);
        let width = lo + up + 1;
        for i in 0..n {
            let base = i * width + lo - i;
            let mut s = x[i];
            for j in i.saturating_sub(lo)..i {
                s -= self.band[base + j] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let base = i * width + lo - i;
            let mut s = x[i];
            for j in i + 1..(i + up + 1).min(n) {
                s -= self.band[base + j] * x[j];
            }
            x[i] = s / self.band[base + i];
        }
    }
}

/// Linear solver with a residual check at a fixed relative tolerance.
#[derive(Debug, Clone)]
pub struct CheckedSolver {
    matrix: SparseMatrix,
    lu: BandedLu,
    tol: f64,
}

pub const SOLVE_TOLERANCE: f64 = 1e-10;

impl CheckedSolver {
    pub fn new(matrix: SparseMatrix) -> Result<Self> {
        let lu = BandedLu::factor(&matrix)?;
        Ok(CheckedSolver { matrix, lu, tol: SOLVE_TOLERANCE })
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }

    /// Solves `A x = b`, refining once if the relative residual exceeds the tolerance.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let mut x = b.to_vec();
        self.lu.solve_in_place(&mut x);
        let bnorm = norm2(b);
        if bnorm == 0.0 {
            return Ok(x);
        }
        let mut r = self.residual(&x, b);
        if norm2(&r) > self.tol * bnorm {
            self.lu.solve_in_place(&mut r);
            for (xi, di) in x.iter_mut().zip(&r) {
                *xi += di;
            }
            let rel = norm2(&self.residual(&x, b)) / bnorm;
            if !(rel <= self.tol) {
                return Err(Error::SolverDiverged(format!("relative residual {rel:e} above {:e}", self.tol)));
            }
        }
        Ok(x)
    }

    fn residual(&self, x: &[f64], b: &[f64]) -> Vec<f64> {
        let ax = matvec(&self.matrix, x);
        b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect()
    }
}

/// Smallest eigenvalue of a symmetric positive definite matrix by inverse iteration.
pub fn smallest_eigenvalue_spd(a: &SparseMatrix) -> Result<f64> {
    let lu = BandedLu::factor(a)?;
    let n = a.rows();
    // deterministic, non-symmetric start vector
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * ((i * 7919) % 13) as f64).collect();
    let mut lambda = f64::NAN;
    for _ in 0..500 {
        let nrm = norm2(&v);
        v.iter_mut().for_each(|x| *x /= nrm);
        let av = matvec(a, &v);
        let rq: f64 = v.iter().zip(&av).map(|(p, q)| p * q).sum();
        let converged = (rq - lambda).abs() <= 1e-13 * rq.abs();
        lambda = rq;
        if converged {
            break;
        }
        lu.solve_in_place(&mut v);
    }
    Ok(lambda)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tridiag(n: usize, d: f64, o: f64) -> SparseMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, d));
            if i > 0 {
                t.push((i, i - 1, o));
            }
            if i + 1 < n {
                t.push((i, i + 1, o * 0.5));
            }
        }
        csr_from_triplets(n, n, &t)
    }

    #[test]
    fn banded_lu_solves_nonsymmetric_system() {
        let a = tridiag(50, 4.0, -1.0);
        let x_true: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
        let b = matvec(&a, &x_true);
        let x = CheckedSolver::new(a).unwrap().solve(&b).unwrap();
        for (p, q) in x.iter().zip(&x_true) {
            assert!((p - q).abs() < 1e-13);
        }
    }

    #[test]
    fn singular_matrix_reports_divergence() {
        let a = csr_from_triplets(2, 2, &[(0, 0, 0.0), (1, 1, 1.0)]);
        assert!(matches!(BandedLu::factor(&a), Err(Error::SolverDiverged(_))));
    }

    #[test]
    fn inverse_iteration_on_1d_laplacian() {
        let n = 30;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i > 0 {
                t.push((i, i - 1, -1.0));
                t.push((i - 1, i, -1.0));
            }
        }
        let a = csr_from_triplets(n, n, &t);
        let exact = 2.0 - 2.0 * (std::f64::consts::PI / (n + 1) as f64).cos();
        let got = smallest_eigenvalue_spd(&a).unwrap();
        assert!((got - exact).abs() < 1e-10 * exact.max(1.0), "{got} vs {exact}");
    }
}
