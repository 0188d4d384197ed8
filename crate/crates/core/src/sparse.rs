//! Compressed-sparse-row matrices and Krylov solvers.
//!
//! Everything here is generic over [`Real`]; the FEM layer instantiates it
//! with `f64`.

use thiserror::Error;

use crate::scalar::{axpy, dot, norm2, Real};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SolverError<T: Real> {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("malformed CSR structure: {0}")]
    Malformed(String),

    #[error("ILU(0) breakdown: zero pivot in row {row}")]
    ZeroPivot { row: usize },

    #[error("no convergence after {iterations} iterations (relative residual {relative_residual:e})")]
    NotConverged { iterations: usize, relative_residual: T, best: Vec<T> },

    #[error("non-finite value in iterate after {iterations} iterations")]
    NonFinite { iterations: usize },
}

impl From<SolverError<f32>> for SolverError<f64> {
    fn from(e: SolverError<f32>) -> Self {
        match e {
            SolverError::DimensionMismatch { expected, got } => SolverError::DimensionMismatch { expected, got },
            SolverError::Malformed(m) => SolverError::Malformed(m),
            SolverError::ZeroPivot { row } => SolverError::ZeroPivot { row },
            SolverError::NotConverged { iterations, relative_residual, best } => SolverError::NotConverged {
                iterations,
                relative_residual: relative_residual as f64,
                best: best.into_iter().map(f64::from).collect(),
            },
            SolverError::NonFinite { iterations } => SolverError::NonFinite { iterations },
        }
    }
}

/// Square CSR matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix<T> {
    n: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<T>,
}

impl<T: Real> CsrMatrix<T> {
    /// Builds a matrix from raw CSR arrays, validating the structure.
    pub fn from_raw(
        n: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<T>,
    ) -> Result<Self, SolverError<T>> {
        if row_offsets.len() != n + 1 || row_offsets[0] != 0 {
            return Err(SolverError::Malformed("row_offsets must have length n + 1 and start at 0".into()));
        }
        if row_offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(SolverError::Malformed("row_offsets not monotone".into()));
        }
        let nnz = row_offsets[n];
        if col_indices.len() != nnz || values.len() != nnz {
            return Err(SolverError::Malformed("column/value arrays do not match row_offsets".into()));
        }
        for i in 0..n {
            let cols = &col_indices[row_offsets[i]..row_offsets[i + 1]];
            if cols.windows(2).any(|w| w[0] >= w[1]) || cols.iter().any(|&c| c >= n) {
                return Err(SolverError::Malformed(format!("row {i} columns not strictly increasing in range")));
            }
        }
        Ok(CsrMatrix { n, row_offsets, col_indices, values })
    }

    /// Builds a matrix from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, T)]) -> Result<Self, SolverError<T>> {
        let mut order: Vec<usize> = (0..triplets.len()).collect();
        for &(r, c, _) in triplets {
            if r >= n || c >= n {
                return Err(SolverError::Malformed(format!("entry ({r}, {c}) outside {n}x{n}")));
            }
        }
        order.sort_unstable_by_key(|&k| (triplets[k].0, triplets[k].1));
        let mut row_offsets = vec![0usize; n + 1];
        let mut col_indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<T> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for k in order {
            let (r, c, v) = triplets[k];
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_indices.push(c);
                values.push(v);
                row_offsets[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n {
            row_offsets[i + 1] += row_offsets[i];
        }
        Ok(CsrMatrix { n, row_offsets, col_indices, values })
    }

    /// Builds a matrix with the given pattern (sorted, deduplicated column lists per row) and zero values.
    pub fn from_pattern(rows: &[Vec<usize>]) -> Self {
        let n = rows.len();
        let mut row_offsets = Vec::with_capacity(n + 1);
        row_offsets.push(0);
        let mut col_indices = Vec::new();
        for cols in rows {
            debug_assert!(cols.windows(2).all(|w| w[0] < w[1]));
            col_indices.extend_from_slice(cols);
            row_offsets.push(col_indices.len());
        }
        let values = vec![T::zero(); col_indices.len()];
        CsrMatrix { n, row_offsets, col_indices, values }
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![T::one(); n],
        }
    }

    pub fn zeros(n: usize) -> Self {
        CsrMatrix { n, row_offsets: vec![0; n + 1], col_indices: Vec::new(), values: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn row(&self, i: usize) -> (&[usize], &[T]) {
        let r = self.row_offsets[i]..self.row_offsets[i + 1];
        (&self.col_indices[r.clone()], &self.values[r])
    }

    /// Position of entry `(i, j)` in the value array, if it is in the pattern.
    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let start = self.row_offsets[i];
        let cols = &self.col_indices[start..self.row_offsets[i + 1]];
        cols.binary_search(&j).ok().map(|k| start + k)
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.position(i, j).map_or(T::zero(), |p| self.values[p])
    }

    /// Adds `v` to entry `(i, j)`; returns false if it is not in the pattern.
    pub fn add_to(&mut self, i: usize, j: usize, v: T) -> bool {
        match self.position(i, j) {
            Some(p) => {
                self.values[p] += v;
                true
            }
            None => false,
        }
    }

    pub fn fill_zero(&mut self) {
        self.values.iter_mut().for_each(|v| *v = T::zero());
    }

    /// `y = A x`.
    pub fn spmv(&self, x: &[T]) -> Result<Vec<T>, SolverError<T>> {
        let mut y = vec![T::zero(); self.n];
        self.spmv_into(x, &mut y)?;
        Ok(y)
    }

    pub fn spmv_into(&self, x: &[T], y: &mut [T]) -> Result<(), SolverError<T>> {
        if x.len() != self.n {
            return Err(SolverError::DimensionMismatch { expected: self.n, got: x.len() });
        }
        if y.len() != self.n {
            return Err(SolverError::DimensionMismatch { expected: self.n, got: y.len() });
        }
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = T::zero();
            for p in self.row_offsets[i]..self.row_offsets[i + 1] {
                acc += self.values[p] * x[self.col_indices[p]];
            }
            *yi = acc;
        }
        Ok(())
    }

    /// Largest entrywise asymmetry `|a_ij - a_ji|`.
    pub fn max_asymmetry(&self) -> T {
        let mut worst = T::zero();
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Linear combination `alpha * self + beta * other` of two matrices with identical patterns.
    pub fn combine_same_pattern(&self, alpha: T, other: &Self, beta: T) -> Result<Self, SolverError<T>> {
        if self.row_offsets != other.row_offsets || self.col_indices != other.col_indices {
            return Err(SolverError::Malformed("patterns differ".into()));
        }
        let mut out = self.clone();
        for (o, &b) in out.values.iter_mut().zip(&other.values) {
            *o = alpha * *o + beta * b;
        }
        Ok(out)
    }

    pub fn to_dense(&self) -> Vec<Vec<T>> {
        let mut d = vec![vec![T::zero(); self.n]; self.n];
        for (i, row) in d.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                row[j] = v;
            }
        }
        d
    }

    fn diagonal_positions(&self) -> Result<Vec<usize>, SolverError<T>> {
        (0..self.n)
            .map(|i| self.position(i, i).ok_or(SolverError::ZeroPivot { row: i }))
            .collect()
    }
}

/// ILU(0) factors stored on the pattern of the source matrix.
///
/// The strictly lower part holds `L` (unit diagonal implied), the diagonal
/// and upper part hold `U`.
#[derive(Debug, Clone)]
pub struct IluFactors<T> {
    lu: CsrMatrix<T>,
    diag: Vec<usize>,
}

impl<T: Real> IluFactors<T> {
    pub fn factors(&self) -> &CsrMatrix<T> {
        &self.lu
    }

    /// Solves `L U z = r`.
    pub fn apply(&self, r: &[T], z: &mut [T]) {
        let lu = &self.lu;
        let n = lu.n;
        for i in 0..n {
            let mut acc = r[i];
            for p in lu.row_offsets[i]..self.diag[i] {
                acc -= lu.values[p] * z[lu.col_indices[p]];
            }
            z[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = z[i];
            for p in self.diag[i] + 1..lu.row_offsets[i + 1] {
                acc -= lu.values[p] * z[lu.col_indices[p]];
            }
            z[i] = acc / lu.values[self.diag[i]];
        }
    }

    /// `L` and `U` as dense matrices (test helper for small systems).
    pub fn dense_factors(&self) -> (Vec<Vec<T>>, Vec<Vec<T>>) {
        let n = self.lu.n;
        let mut l = vec![vec![T::zero(); n]; n];
        let mut u = vec![vec![T::zero(); n]; n];
        for i in 0..n {
            l[i][i] = T::one();
            let (cols, vals) = self.lu.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                if j < i {
                    l[i][j] = v;
                } else {
                    u[i][j] = v;
                }
            }
        }
        (l, u)
    }
}

/// Incomplete LU factorization with zero fill-in.
///
/// A zero (or missing) pivot is a hard error naming the row.
pub fn ilu0_factor<T: Real>(a: &CsrMatrix<T>) -> Result<IluFactors<T>, SolverError<T>> {
    let mut lu = a.clone();
    let diag = lu.diagonal_positions()?;
    let n = lu.n;
    // marker[j] = position of (i, j) in the current row, usize::MAX if absent.
    let mut marker = vec![usize::MAX; n];
    for i in 0..n {
        let (start, end) = (lu.row_offsets[i], lu.row_offsets[i + 1]);
        for p in start..end {
            marker[lu.col_indices[p]] = p;
        }
        for p in start..diag[i] {
            let k = lu.col_indices[p];
            let pivot = lu.values[diag[k]];
            if pivot == T::zero() {
                return Err(SolverError::ZeroPivot { row: k });
            }
            let lik = lu.values[p] / pivot;
            lu.values[p] = lik;
            for q in diag[k] + 1..lu.row_offsets[k + 1] {
                let j = lu.col_indices[q];
                let pos = marker[j];
                if pos != usize::MAX {
                    let ukj = lu.values[q];
                    lu.values[pos] -= lik * ukj;
                }
            }
        }
        if lu.values[diag[i]] == T::zero() || !lu.values[diag[i]].is_finite() {
            return Err(SolverError::ZeroPivot { row: i });
        }
        for p in start..end {
            marker[lu.col_indices[p]] = usize::MAX;
        }
    }
    Ok(IluFactors { lu, diag })
}

/// Stopping parameters shared by the Krylov solvers.
#[derive(Debug, Clone, Copy)]
pub struct KrylovOptions<T> {
    /// Relative residual target `||b - A x|| <= tol * ||b||`.
    pub tol: T,
    /// Iteration cap; `None` means `10 * n`.
    pub max_iter: Option<usize>,
    /// GMRES restart length.
    pub restart: usize,
}

impl<T: Real> KrylovOptions<T> {
    pub fn stationary() -> Self {
        KrylovOptions { tol: T::lit(1e-10), max_iter: None, restart: 30 }
    }

    pub fn time_step() -> Self {
        KrylovOptions { tol: T::lit(1e-8), max_iter: None, restart: 30 }
    }

    pub fn with_tol(mut self, tol: T) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = Some(max_iter);
        self
    }

    pub fn with_restart(mut self, restart: usize) -> Self {
        self.restart = restart.max(1);
        self
    }

    fn cap(&self, n: usize) -> usize {
        self.max_iter.unwrap_or(10 * n.max(1))
    }
}

impl<T: Real> Default for KrylovOptions<T> {
    fn default() -> Self {
        Self::stationary()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KrylovSolution<T> {
    pub x: Vec<T>,
    pub iterations: usize,
    pub relative_residual: T,
}

fn check_len<T: Real>(expected: usize, got: usize) -> Result<(), SolverError<T>> {
    if expected == got {
        Ok(())
    } else {
        Err(SolverError::DimensionMismatch { expected, got })
    }
}

/// Preconditioned conjugate gradients from a zero initial guess.
pub fn cg_solve<T: Real>(
    a: &CsrMatrix<T>,
    b: &[T],
    precond: Option<&IluFactors<T>>,
    opts: &KrylovOptions<T>,
) -> Result<KrylovSolution<T>, SolverError<T>> {
    cg_solve_from(a, b, None, precond, opts)
}

/// Preconditioned conjugate gradients with an optional initial guess.
pub fn cg_solve_from<T: Real>(
    a: &CsrMatrix<T>,
    b: &[T],
    x0: Option<&[T]>,
    precond: Option<&IluFactors<T>>,
    opts: &KrylovOptions<T>,
) -> Result<KrylovSolution<T>, SolverError<T>> {
    let n = a.dim();
    check_len(n, b.len())?;
    let mut x = match x0 {
        Some(x0) => {
            check_len(n, x0.len())?;
            x0.to_vec()
        }
        None => vec![T::zero(); n],
    };
    let b_norm = norm2(b);
    if b_norm == T::zero() {
        return Ok(KrylovSolution { x: vec![T::zero(); n], iterations: 0, relative_residual: T::zero() });
    }
    if !b_norm.is_finite() {
        return Err(SolverError::NonFinite { iterations: 0 });
    }
    let mut r = a.spmv(&x)?;
    for (ri, &bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let mut rel = norm2(&r) / b_norm;
    if rel <= opts.tol {
        return Ok(KrylovSolution { x, iterations: 0, relative_residual: rel });
    }
    let mut z = vec![T::zero(); n];
    let precondition = |r: &[T], z: &mut [T]| match precond {
        Some(m) => m.apply(r, z),
        None => z.copy_from_slice(r),
    };
    precondition(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![T::zero(); n];
    let max_iter = opts.cap(n);
    for it in 1..=max_iter {
        a.spmv_into(&p, &mut ap)?;
        let pap = dot(&p, &ap);
        let alpha = rz / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        rel = norm2(&r) / b_norm;
        if !rel.is_finite() {
            return Err(SolverError::NonFinite { iterations: it });
        }
        if rel <= opts.tol {
            return Ok(KrylovSolution { x, iterations: it, relative_residual: rel });
        }
        precondition(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, &zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    Err(SolverError::NotConverged { iterations: max_iter, relative_residual: rel, best: x })
}

/// Restarted GMRES with right preconditioning, so the monitored residual is
/// the true residual of the unpreconditioned system.
pub fn gmres_solve<T: Real>(
    a: &CsrMatrix<T>,
    b: &[T],
    precond: Option<&IluFactors<T>>,
    opts: &KrylovOptions<T>,
) -> Result<KrylovSolution<T>, SolverError<T>> {
    gmres_solve_from(a, b, None, precond, opts)
}

pub fn gmres_solve_from<T: Real>(
    a: &CsrMatrix<T>,
    b: &[T],
    x0: Option<&[T]>,
    precond: Option<&IluFactors<T>>,
    opts: &KrylovOptions<T>,
) -> Result<KrylovSolution<T>, SolverError<T>> {
    let n = a.dim();
    check_len(n, b.len())?;
    let mut x = match x0 {
        Some(x0) => {
            check_len(n, x0.len())?;
            x0.to_vec()
        }
        None => vec![T::zero(); n],
    };
    let b_norm = norm2(b);
    if b_norm == T::zero() {
        return Ok(KrylovSolution { x: vec![T::zero(); n], iterations: 0, relative_residual: T::zero() });
    }
    if !b_norm.is_finite() {
        return Err(SolverError::NonFinite { iterations: 0 });
    }
    let m = opts.restart.max(1).min(n.max(1));
    let max_iter = opts.cap(n);
    let precondition = |v: &[T], z: &mut [T]| match precond {
        Some(p) => p.apply(v, z),
        None => z.copy_from_slice(v),
    };

    let mut basis: Vec<Vec<T>> = vec![vec![T::zero(); n]; m + 1];
    // Column-major Hessenberg: h[j] holds column j (length m + 1).
    let mut h = vec![vec![T::zero(); m + 1]; m];
    let mut cs = vec![T::zero(); m];
    let mut sn = vec![T::zero(); m];
    let mut g = vec![T::zero(); m + 1];
    let mut z = vec![T::zero(); n];
    let mut w = vec![T::zero(); n];
    let mut total = 0usize;

    let mut r = residual(a, b, &x)?;
    let mut rel = norm2(&r) / b_norm;
    loop {
        if rel <= opts.tol {
            return Ok(KrylovSolution { x, iterations: total, relative_residual: rel });
        }
        if total >= max_iter {
            return Err(SolverError::NotConverged { iterations: total, relative_residual: rel, best: x });
        }
        let beta = norm2(&r);
        for (v, &ri) in basis[0].iter_mut().zip(&r) {
            *v = ri / beta;
        }
        g.iter_mut().for_each(|gi| *gi = T::zero());
        g[0] = beta;
        let mut k = 0;
        while k < m && total < max_iter {
            precondition(&basis[k], &mut z);
            a.spmv_into(&z, &mut w)?;
            // Modified Gram-Schmidt.
            for i in 0..=k {
                let hik = dot(&w, &basis[i]);
                h[k][i] = hik;
                axpy(-hik, &basis[i], &mut w);
            }
            let hnext = norm2(&w);
            h[k][k + 1] = hnext;
            for i in 0..k {
                let (c, s) = (cs[i], sn[i]);
                let (a0, a1) = (h[k][i], h[k][i + 1]);
                h[k][i] = c * a0 + s * a1;
                h[k][i + 1] = -s * a0 + c * a1;
            }
            let (c, s) = givens(h[k][k], h[k][k + 1]);
            cs[k] = c;
            sn[k] = s;
            h[k][k] = c * h[k][k] + s * h[k][k + 1];
            h[k][k + 1] = T::zero();
            g[k + 1] = -s * g[k];
            g[k] = c * g[k];
            total += 1;
            k += 1;
            let estimate = g[k].abs() / b_norm;
            if !estimate.is_finite() {
                return Err(SolverError::NonFinite { iterations: total });
            }
            // Happy breakdown: the Krylov space is invariant, solution is exact in it.
            let breakdown = hnext <= T::epsilon() * beta;
            if estimate <= opts.tol || breakdown {
                break;
            }
            for (v, &wi) in basis[k].iter_mut().zip(&w) {
                *v = wi / hnext;
            }
        }
        // Back substitution for y, then x += M^{-1} V y.
        let mut y = vec![T::zero(); k];
        for i in (0..k).rev() {
            let mut acc = g[i];
            for j in i + 1..k {
                acc -= h[j][i] * y[j];
            }
            y[i] = acc / h[i][i];
        }
        let mut update = vec![T::zero(); n];
        for (j, &yj) in y.iter().enumerate() {
            axpy(yj, &basis[j], &mut update);
        }
        precondition(&update, &mut z);
        axpy(T::one(), &z, &mut x);
        r = residual(a, b, &x)?;
        let new_rel = norm2(&r) / b_norm;
        if !new_rel.is_finite() {
            return Err(SolverError::NonFinite { iterations: total });
        }
        // A cycle that makes no progress will not make progress on restart either.
        if k == 0 || (new_rel >= rel && new_rel > opts.tol) {
            return Err(SolverError::NotConverged { iterations: total, relative_residual: new_rel, best: x });
        }
        rel = new_rel;
    }
}

fn residual<T: Real>(a: &CsrMatrix<T>, b: &[T], x: &[T]) -> Result<Vec<T>, SolverError<T>> {
    let mut r = a.spmv(x)?;
    for (ri, &bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    Ok(r)
}

fn givens<T: Real>(a: T, b: T) -> (T, T) {
    if b == T::zero() {
        (T::one(), T::zero())
    } else {
        let r = a.hypot(b);
        (a / r, b / r)
    }
}
