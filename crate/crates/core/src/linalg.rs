//! Small dense matrix kernel.
//!
//! Dimensions in this crate are tiny (a handful of rows), so everything is
//! stored row-major in a flat `Vec<f64>` and the symmetric eigensolver is a
//! plain cyclic Jacobi iteration.

use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

const JACOBI_REL_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Dense row-major matrix with finite entries.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    /// Builds a matrix from row vectors, rejecting ragged or non-finite input.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        if r == 0 {
            return Err(Error::InvalidInput("matrix needs at least one row".into()));
        }
        let c = rows[0].len();
        if c == 0 {
            return Err(Error::InvalidInput("matrix needs at least one column".into()));
        }
        let mut data = Vec::with_capacity(r * c);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != c {
                return Err(Error::InvalidInput(format!(
                    "row {i} has {} entries, expected {c}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        let m = Matrix {
            rows: r,
            cols: c,
            data,
        };
        m.check_finite()?;
        Ok(m)
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidInput(format!(
                "expected {} entries for a {rows}x{cols} matrix, got {}",
                rows * cols,
                data.len()
            )));
        }
        let m = Matrix { rows, cols, data };
        m.check_finite()?;
        Ok(m)
    }

    /// Rank-one matrix `a bᵀ`.
    pub fn outer(a: &[f64], b: &[f64]) -> Self {
        Matrix::from_fn(a.len(), b.len(), |i, j| a[i] * b[j])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn check_finite(&self) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidInput("matrix has non-finite entries".into()))
        }
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// Matrix product; panics on inner-dimension mismatch.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other[(k, j)];
                }
            }
        }
        out
    }

    /// `self · x`; panics on dimension mismatch.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len(), "matvec dimension mismatch");
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `selfᵀ · x`.
    pub fn matvec_t(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, x.len(), "matvec_t dimension mismatch");
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[j] += self[(i, j)] * x[i];
            }
        }
        out
    }

    pub fn scale(&self, c: f64) -> Matrix {
        self.map(|v| v * c)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        self.zip(other, |a, b| a - b)
    }

    /// `self + c·other`
    pub fn add_scaled(&self, other: &Matrix, c: f64) -> Matrix {
        self.zip(other, |a, b| a + c * b)
    }

    fn zip(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
        assert_eq!(
            (self.rows, self.cols),
            (other.rows, other.cols),
            "elementwise dimension mismatch"
        );
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// Frobenius inner product `tr(selfᵀ other)`.
    pub fn inner(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        dot(&self.data, &other.data)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

/// Square matrix whose entries satisfy `a[i][j] == a[j][i]` exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix(Matrix);

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        SymMatrix(Matrix::zeros(n, n))
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(Matrix::identity(n))
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        SymMatrix(Matrix::from_fn(
            n,
            n,
            |i, j| if i == j { values[i] } else { 0.0 },
        ))
    }

    /// Symmetrizes `(a + aᵀ)/2`. Fails on non-square input.
    pub fn from_matrix(a: &Matrix) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::InvalidInput(format!(
                "expected a square matrix, got {}x{}",
                a.rows(),
                a.cols()
            )));
        }
        a.check_finite()?;
        Ok(Self::symmetrize(a))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::from_matrix(&Matrix::from_rows(rows)?)
    }

    fn symmetrize(a: &Matrix) -> Self {
        let n = a.rows();
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            out[(i, i)] = a[(i, i)];
            for j in 0..i {
                let v = 0.5 * (a[(i, j)] + a[(j, i)]);
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        SymMatrix(out)
    }

    /// Outer product `v vᵀ`.
    pub fn rank_one(v: &[f64]) -> Self {
        SymMatrix(Matrix::outer(v, v))
    }

    pub fn dim(&self) -> usize {
        self.0.rows()
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        self.0.matvec(x)
    }

    /// `xᵀ A x`
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        dot(x, &self.0.matvec(x))
    }

    /// `xᵀ A y`
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        dot(x, &self.0.matvec(y))
    }

    pub fn scale(&self, c: f64) -> SymMatrix {
        SymMatrix(self.0.scale(c))
    }

    pub fn add(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix(self.0.add(&other.0))
    }

    pub fn sub(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix(self.0.sub(&other.0))
    }

    pub fn add_scaled(&self, other: &SymMatrix, c: f64) -> SymMatrix {
        SymMatrix(self.0.add_scaled(&other.0, c))
    }

    pub fn inner(&self, other: &SymMatrix) -> f64 {
        self.0.inner(&other.0)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.frobenius_norm()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.get(i, i)).sum()
    }

    pub fn lambda_min(&self) -> Result<f64> {
        let eig = sym_eig(self)?;
        Ok(*eig.eigenvalues.last().expect("nonempty spectrum"))
    }

    /// Inverse of a positive definite matrix via its eigendecomposition.
    pub fn inverse_pd(&self) -> Result<SymMatrix> {
        let eig = sym_eig(self)?;
        let top = eig.eigenvalues[0].abs().max(f64::MIN_POSITIVE);
        if eig.eigenvalues.iter().any(|&l| l <= top * 1e-14) {
            return Err(Error::Singular);
        }
        Ok(eig.recompose(|l| 1.0 / l))
    }

    /// A factor `L` with `L Lᵀ = A` for PSD `A` (negative eigenvalues clamped).
    pub fn psd_sqrt_factor(&self) -> Result<Matrix> {
        let eig = sym_eig(self)?;
        let n = self.dim();
        Ok(Matrix::from_fn(n, n, |i, j| {
            eig.eigenvectors[(i, j)] * eig.eigenvalues[j].max(0.0).sqrt()
        }))
    }
}

impl Index<(usize, usize)> for SymMatrix {
    type Output = f64;
    fn index(&self, idx: (usize, usize)) -> &f64 {
        &self.0[idx]
    }
}

/// Spectral decomposition `A = V Λ Vᵀ` with eigenvalues sorted descending.
#[derive(Clone, Debug)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<f64>,
    /// Orthonormal eigenvectors stored as columns, in eigenvalue order.
    pub eigenvectors: Matrix,
}

impl EigenDecomposition {
    /// `Σ f(λ_i) v_i v_iᵀ`
    pub fn recompose(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let n = self.eigenvalues.len();
        let weights: Vec<f64> = self.eigenvalues.iter().map(|&l| f(l)).collect();
        let v = &self.eigenvectors;
        let out = Matrix::from_fn(n, n, |i, j| {
            (0..n).map(|k| weights[k] * v[(i, k)] * v[(j, k)]).sum()
        });
        SymMatrix::symmetrize(&out)
    }

    pub fn eigenvector(&self, k: usize) -> Vec<f64> {
        self.eigenvectors.column(k)
    }
}

/// Cyclic Jacobi eigensolver for a symmetric matrix.
///
/// Stops once the off-diagonal Frobenius norm falls to `1e-12·‖A‖_F`
/// or after 100 sweeps. Eigenvalues come out descending (stable with
/// respect to the diagonal position on ties) and every eigenvector is
/// signed so that its largest-magnitude component is positive.
pub fn sym_eig(a: &SymMatrix) -> Result<EigenDecomposition> {
    let n = a.dim();
    if !a.as_matrix().is_finite() {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    let mut w = a.as_matrix().clone();
    let mut v = Matrix::identity(n);
    let scale = w.frobenius_norm();
    let target = JACOBI_REL_TOL * scale;

    for _ in 0..JACOBI_MAX_SWEEPS {
        if off_diagonal_norm(&w) <= target {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = w[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (w[(q, q)] - w[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate(&mut w, &mut v, p, q, c, s);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let diag: Vec<f64> = (0..n).map(|i| w[(i, i)]).collect();
    // stable sort keeps first occurrence first on ties
    order.sort_by(|&i, &j| diag[j].partial_cmp(&diag[i]).expect("finite eigenvalues"));

    let eigenvalues: Vec<f64> = order.iter().map(|&i| diag[i]).collect();
    let mut vecs = Matrix::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        let mut lead = 0;
        for r in 0..n {
            if v[(r, src)].abs() > v[(lead, src)].abs() {
                lead = r;
            }
        }
        let sign = if v[(lead, src)] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..n {
            vecs[(r, col)] = sign * v[(r, src)];
        }
    }
    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors: vecs,
    })
}

fn off_diagonal_norm(a: &Matrix) -> f64 {
    let n = a.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[(i, j)] * a[(i, j)];
            }
        }
    }
    s.sqrt()
}

// Applies the rotation J(p, q, θ): A ← Jᵀ A J, V ← V J.
fn rotate(a: &mut Matrix, v: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let n = a.rows();
    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = c * akp - s * akq;
        a[(k, q)] = s * akp + c * akq;
    }
    for k in 0..n {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = c * apk - s * aqk;
        a[(q, k)] = s * apk + c * aqk;
    }
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}

/// Frobenius projection onto the PSD cone: `Σ max{λ_i, 0} v_i v_iᵀ`.
pub fn project_psd(a: &SymMatrix) -> Result<SymMatrix> {
    let eig = sym_eig(a)?;
    if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
        return Ok(a.clone());
    }
    Ok(eig.recompose(|l| l.max(0.0)))
}

/// Symmetric-matrix derivative correction `A + Aᵀ − diag(A)`.
pub fn dsym(a: &Matrix) -> Result<SymMatrix> {
    if !a.is_square() {
        return Err(Error::InvalidInput(format!(
            "dsym needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    let n = a.rows();
    let m = Matrix::from_fn(n, n, |i, j| {
        if i == j {
            a[(i, i)]
        } else {
            a[(i, j)] + a[(j, i)]
        }
    });
    Ok(SymMatrix(m))
}

/// Largest singular value, via the top eigenvalue of `aᵀa`.
pub fn operator_norm(a: &Matrix) -> Result<f64> {
    if !a.is_finite() {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    let gram = SymMatrix::symmetrize(&a.transpose().matmul(a));
    let eig = sym_eig(&gram)?;
    Ok(eig.eigenvalues[0].max(0.0).sqrt())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

pub fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

pub fn sub_vec(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add_vec(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn scale_vec(a: &[f64], c: f64) -> Vec<f64> {
    a.iter().map(|x| x * c).collect()
}
