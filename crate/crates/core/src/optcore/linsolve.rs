use nalgebra::{DMatrix, DVector};

use crate::{DualError, Result};

/// Systems up to this size are factored densely; larger ones go to MINRES.
pub const DENSE_LIMIT: usize = 2000;

/// Symmetric sparse matrix holding only its upper triangle (diagonal included)
/// in compressed row form. Every row stores its diagonal entry, possibly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix {
    dim: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SymmetricMatrix {
    /// Zero matrix with the given upper-triangle pattern. `rows[i]` lists the
    /// column indices of row `i`; entries below the diagonal are ignored.
    pub fn with_pattern(dim: usize, rows: &[Vec<usize>]) -> Self {
        assert_eq!(rows.len(), dim);
        let mut row_ptr = Vec::with_capacity(dim + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for (i, cols) in rows.iter().enumerate() {
            let mut c: Vec<usize> = cols.iter().copied().filter(|&j| j >= i && j < dim).collect();
            c.push(i);
            c.sort_unstable();
            c.dedup();
            col_idx.extend(c);
            row_ptr.push(col_idx.len());
        }
        let values = vec![0.0; col_idx.len()];
        Self { dim, row_ptr, col_idx, values }
    }

    /// Builds from `(i, j, v)` entries of either triangle; duplicates are summed.
    /// An entry `(i, j)` with `i != j` stands for both `(i, j)` and `(j, i)`.
    pub fn from_triplets(dim: usize, triplets: impl IntoIterator<Item = (usize, usize, f64)>) -> Self {
        let entries: Vec<(usize, usize, f64)> = triplets
            .into_iter()
            .map(|(i, j, v)| if i <= j { (i, j, v) } else { (j, i, v) })
            .collect();
        let mut rows = vec![Vec::new(); dim];
        for &(i, j, _) in &entries {
            rows[i].push(j);
        }
        let mut m = Self::with_pattern(dim, &rows);
        for (i, j, v) in entries {
            m.add(i, j, v);
        }
        m
    }

    /// Upper triangle of a dense matrix; fails if it is not symmetric to `1e-12` relative.
    pub fn from_dense(a: &DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(DualError::Dimension {
                context: "SymmetricMatrix::from_dense",
                expected: a.nrows(),
                got: a.ncols(),
            });
        }
        let scale = a.amax().max(1e-300);
        let n = a.nrows();
        let mut trip = Vec::new();
        for i in 0..n {
            for j in i..n {
                if (a[(i, j)] - a[(j, i)]).abs() > 1e-12 * scale {
                    return Err(DualError::invalid("matrix", format!("not symmetric at ({i}, {j})")));
                }
                if a[(i, j)] != 0.0 || i == j {
                    trip.push((i, j, a[(i, j)]));
                }
            }
        }
        Ok(Self::from_triplets(n, trip))
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_diagonal(&vec![1.0; dim])
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        Self::from_triplets(diag.len(), diag.iter().enumerate().map(|(i, &v)| (i, i, v)))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of stored (upper-triangle) entries.
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    fn position(&self, i: usize, j: usize) -> Option<usize> {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        let row = &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]];
        row.binary_search(&j).ok().map(|k| self.row_ptr[i] + k)
    }

    /// Adds `v` to entry `(i, j)` (and implicitly `(j, i)`).
    ///
    /// Panics if the entry is outside the stored pattern.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self
            .position(i, j)
            .unwrap_or_else(|| panic!("entry ({i}, {j}) outside the sparsity pattern"));
        self.values[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.position(i, j).map_or(0.0, |k| self.values[k])
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.values[self.row_ptr[i]]).collect()
    }

    pub fn add_diagonal(&mut self, shift: f64) {
        for i in 0..self.dim {
            // The diagonal is always the first entry of its row.
            self.values[self.row_ptr[i]] += shift;
        }
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.dim);
        assert_eq!(y.len(), self.dim);
        y.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..self.dim {
            let xi = x[i];
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k];
                let a = self.values[k];
                acc += a * x[j];
                if j != i {
                    y[j] += a * xi;
                }
            }
            y[i] += acc;
        }
    }

    pub fn matvec(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = DVector::zeros(self.dim);
        self.matvec_into(x.as_slice(), y.as_mut_slice());
        y
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.dim, self.dim);
        for i in 0..self.dim {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k];
                a[(i, j)] = self.values[k];
                a[(j, i)] = self.values[k];
            }
        }
        a
    }
}

/// Outcome of a symmetric solve. `residual` is the true `‖A x − b‖₂`.
#[derive(Debug, Clone)]
pub struct LinearSolve {
    pub x: DVector<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct MinresOptions {
    /// Relative tolerance on the (unpreconditioned) residual.
    pub rtol: f64,
    pub max_iter: usize,
    /// Restarts from the current iterate when the true residual misses the target.
    pub restarts: usize,
}

impl MinresOptions {
    pub fn for_dim(dim: usize, rtol: f64) -> Self {
        Self {
            rtol,
            max_iter: (10 * dim + 200).min(60_000),
            restarts: 4,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn residual_norm(mat: &SymmetricMatrix, x: &[f64], rhs: &[f64], work: &mut [f64]) -> f64 {
    mat.matvec_into(x, work);
    work.iter().zip(rhs).map(|(ax, b)| (b - ax).powi(2)).sum::<f64>().sqrt()
}

/// One Paige–Saunders MINRES pass with a positive diagonal preconditioner,
/// starting from `x`. Returns the iteration count.
fn minres_pass(mat: &SymmetricMatrix, rhs: &[f64], x: &mut [f64], inv_prec: &[f64], target: f64, max_iter: usize) -> usize {
    let n = mat.dim();
    let mut r1 = vec![0.0; n];
    mat.matvec_into(x, &mut r1);
    for i in 0..n {
        r1[i] = rhs[i] - r1[i];
    }
    let mut y: Vec<f64> = r1.iter().zip(inv_prec).map(|(r, p)| r * p).collect();
    let beta1_sq = dot(&r1, &y);
    if beta1_sq <= 0.0 {
        return 0;
    }
    let beta1 = beta1_sq.sqrt();
    // Scale between the preconditioned and plain residual estimates.
    let pscale = norm(&r1) / beta1;

    let mut r2 = r1.clone();
    let mut v = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut w1 = vec![0.0; n];
    let mut w2 = vec![0.0; n];
    let (mut oldb, mut beta) = (0.0, beta1);
    let (mut dbar, mut epsln, mut phibar) = (0.0, 0.0, beta1);
    let (mut cs, mut sn) = (-1.0_f64, 0.0_f64);

    for itn in 1..=max_iter {
        let s = 1.0 / beta;
        for i in 0..n {
            v[i] = s * y[i];
        }
        mat.matvec_into(&v, &mut y);
        if itn >= 2 {
            let f = beta / oldb;
            for i in 0..n {
                y[i] -= f * r1[i];
            }
        }
        let alfa = dot(&v, &y);
        let f = alfa / beta;
        for i in 0..n {
            y[i] -= f * r2[i];
        }
        std::mem::swap(&mut r1, &mut r2);
        r2.copy_from_slice(&y);
        for i in 0..n {
            y[i] = r2[i] * inv_prec[i];
        }
        oldb = beta;
        let bsq = dot(&r2, &y);
        beta = bsq.max(0.0).sqrt();

        let oldeps = epsln;
        let delta = cs * dbar + sn * alfa;
        let gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;
        let gamma = gbar.hypot(beta).max(f64::EPSILON);
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar *= sn;

        let denom = 1.0 / gamma;
        std::mem::swap(&mut w1, &mut w2);
        std::mem::swap(&mut w2, &mut w);
        for i in 0..n {
            w[i] = (v[i] - oldeps * w1[i] - delta * w2[i]) * denom;
            x[i] += phi * w[i];
        }
        if phibar * pscale <= target || beta <= f64::EPSILON * beta1 {
            return itn;
        }
    }
    max_iter
}

/// Preconditioned MINRES with restarts; tolerates indefinite and singular
/// consistent systems.
pub fn minres(mat: &SymmetricMatrix, rhs: &DVector<f64>, opts: MinresOptions) -> LinearSolve {
    let n = mat.dim();
    assert_eq!(rhs.len(), n);
    let b = rhs.as_slice();
    let bnorm = norm(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return LinearSolve { x: DVector::zeros(n), residual: 0.0, iterations: 0, converged: true };
    }
    let target = opts.rtol * bnorm;
    let inv_prec: Vec<f64> = mat
        .diagonal()
        .iter()
        .map(|d| if d.abs() > 0.0 { 1.0 / d.abs() } else { 1.0 })
        .collect();
    let mut work = vec![0.0; n];
    let mut iterations = 0;
    let mut best = (f64::INFINITY, x.clone());
    let mut previous = f64::INFINITY;
    for _ in 0..=opts.restarts {
        let remaining = opts.max_iter.saturating_sub(iterations).max(1);
        // Aim slightly below the target; the preconditioned estimate is loose.
        iterations += minres_pass(mat, b, &mut x, &inv_prec, 0.5 * target, remaining);
        let res = residual_norm(mat, &x, b, &mut work);
        if res < best.0 {
            best = (res, x.clone());
        }
        if res <= target || iterations >= opts.max_iter || res > 0.9 * previous {
            break;
        }
        previous = res;
    }
    let (residual, x) = best;
    LinearSolve {
        x: DVector::from_vec(x),
        residual,
        iterations,
        converged: residual <= target,
    }
}

/// Dense partial-pivot LU; `None` when the factorization is singular or non-finite.
fn dense_solve(mat: &SymmetricMatrix, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let x = mat.to_dense().lu().solve(rhs)?;
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Solve `mat · x = rhs` to `‖mat·x − rhs‖ ≤ tol·‖rhs‖`, returning the
/// achieved residual even when that target is missed.
pub fn solve_symmetric_detailed(mat: &SymmetricMatrix, rhs: &DVector<f64>, tol: f64) -> LinearSolve {
    let n = mat.dim();
    let bnorm = rhs.norm();
    if bnorm == 0.0 {
        return LinearSolve { x: DVector::zeros(n), residual: 0.0, iterations: 0, converged: true };
    }
    if n <= DENSE_LIMIT {
        if let Some(x) = dense_solve(mat, rhs) {
            let residual = (mat.matvec(&x) - rhs).norm();
            if residual <= tol * bnorm {
                return LinearSolve { x, residual, iterations: 1, converged: true };
            }
        }
    }
    minres(mat, rhs, MinresOptions::for_dim(n, tol))
}

/// Solve a symmetric, possibly indefinite system.
///
/// Systems up to [`DENSE_LIMIT`] unknowns are tried with a dense factorization
/// first; singular or larger systems go to preconditioned MINRES. An
/// inconsistent singular system yields [`DualError::Inconsistent`] carrying the
/// residual achieved.
pub fn solve_symmetric(mat: &SymmetricMatrix, rhs: &DVector<f64>, tol: f64) -> Result<DVector<f64>> {
    if rhs.len() != mat.dim() {
        return Err(DualError::Dimension { context: "solve_symmetric", expected: mat.dim(), got: rhs.len() });
    }
    let sol = solve_symmetric_detailed(mat, rhs, tol);
    if sol.converged {
        Ok(sol.x)
    } else {
        Err(DualError::Inconsistent { residual: sol.residual, target: tol * rhs.norm() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn identity() {
        let x = solve_symmetric(&SymmetricMatrix::identity(2), &v(&[1.0, 2.0]), 1e-12).unwrap();
        assert_relative_eq!(x, v(&[1.0, 2.0]), epsilon = 1e-14);
    }

    #[test]
    fn indefinite_diagonal() {
        let m = SymmetricMatrix::from_diagonal(&[2.0, -3.0]);
        let x = solve_symmetric(&m, &v(&[2.0, 3.0]), 1e-12).unwrap();
        assert_relative_eq!(x, v(&[1.0, -1.0]), epsilon = 1e-14);
    }

    #[test]
    fn singular_consistent_checks_residual() {
        let m = SymmetricMatrix::from_triplets(2, [(0, 0, 1.0), (0, 1, 1.0), (1, 1, 1.0)]);
        let rhs = v(&[2.0, 2.0]);
        let x = solve_symmetric(&m, &rhs, 1e-10).unwrap();
        assert!((m.matvec(&x) - &rhs).norm() <= 1e-10 * rhs.norm());
        assert_relative_eq!(x[0] + x[1], 2.0, epsilon = 1e-9);
    }

    #[test]
    fn singular_inconsistent_reports_residual() {
        let m = SymmetricMatrix::from_triplets(2, [(0, 0, 1.0), (0, 1, 1.0), (1, 1, 1.0)]);
        match solve_symmetric(&m, &v(&[1.0, -1.0]), 1e-10) {
            Err(DualError::Inconsistent { residual, .. }) => assert!(residual > 0.1),
            other => panic!("expected breakdown, got {other:?}"),
        }
    }

    #[test]
    fn large_indefinite_laplacian_shift() {
        // 1D Laplacian shifted into indefiniteness, above the dense limit.
        let n = 3000;
        let mut trip = Vec::new();
        for i in 0..n {
            trip.push((i, i, 2.0 - 0.05));
            if i + 1 < n {
                trip.push((i, i + 1, -1.0));
            }
        }
        let m = SymmetricMatrix::from_triplets(n, trip);
        let rhs = DVector::from_fn(n, |i, _| ((i as f64) * 0.01).sin());
        let x = solve_symmetric(&m, &rhs, 1e-8).unwrap();
        assert!((m.matvec(&x) - &rhs).norm() <= 1e-8 * rhs.norm());
    }

    #[test]
    fn triplets_mirror_lower_entries() {
        let m = SymmetricMatrix::from_triplets(3, [(2, 0, 4.0), (0, 2, 1.0), (1, 1, 3.0)]);
        assert_eq!(m.get(0, 2), 5.0);
        assert_eq!(m.get(2, 0), 5.0);
        let d = m.to_dense();
        assert_eq!(d, d.transpose());
    }
}
