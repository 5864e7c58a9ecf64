//! Dense linear algebra for parameter-delta analysis.
//!
//! Everything here is deterministic and allocation-straightforward: the
//! matrices involved are desk-scale (a few thousand entries), so the full
//! spectrum is computed by cyclic Jacobi on the Gram matrix and the top
//! singular triplet by alternating power iteration. Internal arithmetic is
//! always f64 even when storage elsewhere is f32.

use thiserror::Error;

/// Element cap for [`full_svd`] (4096 x 4096). Energy ratios need the full
/// spectrum, so larger matrices are rejected rather than truncated.
pub const DEFAULT_SVD_ELEM_CAP: usize = 4096 * 4096;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix shape {rows}x{cols} does not match data length {len}")]
    ShapeMismatch { rows: usize, cols: usize, len: usize },
    #[error("matrix dimensions must be positive, got {rows}x{cols}")]
    EmptyShape { rows: usize, cols: usize },
    #[error("non-finite entry at index {index}")]
    NonFinite { index: usize },
    #[error("matrix has {elems} elements, exceeding the SVD cap of {cap}")]
    SizeExceeded { elems: usize, cap: usize },
    #[error("power iteration did not converge after {iters} iterations (residual {residual:.3e})")]
    NotConverged { iters: usize, residual: f64 },
    #[error("operation undefined on a zero matrix")]
    DegenerateMatrix,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Dense row-major matrix of f64. Entries are validated finite at
/// construction, so every `Matrix` in circulation is safe to operate on.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if rows == 0 || cols == 0 {
            return Err(LinalgError::EmptyShape { rows, cols });
        }
        if data.len() != rows * cols {
            return Err(LinalgError::ShapeMismatch { rows, cols, len: data.len() });
        }
        if let Some(index) = data.iter().position(|x| !x.is_finite()) {
            return Err(LinalgError::NonFinite { index });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        debug_assert!(rows > 0 && cols > 0);
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self, LinalgError> {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix::new(rows, cols, data)
    }

    /// sigma * u * v^T.
    pub fn outer(sigma: f64, u: &[f64], v: &[f64]) -> Self {
        let mut data = Vec::with_capacity(u.len() * v.len());
        for &ur in u {
            for &vc in v {
                data.push(sigma * ur * vc);
            }
        }
        Matrix { rows: u.len(), cols: v.len(), data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// y = M x  (x has length cols, y has length rows).
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        let mut y = vec![0.0; self.rows];
        for r in 0..self.rows {
            let row = self.row(r);
            let mut acc = 0.0;
            for c in 0..self.cols {
                acc += row[c] * x[c];
            }
            y[r] = acc;
        }
        y
    }

    /// y = M^T x  (x has length rows, y has length cols).
    pub fn matvec_t(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.rows);
        let mut y = vec![0.0; self.cols];
        for r in 0..self.rows {
            let row = self.row(r);
            let xr = x[r];
            for c in 0..self.cols {
                y[c] += row[c] * xr;
            }
        }
        y
    }

    /// self * other.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        if self.cols != other.rows {
            return Err(LinalgError::DimensionMismatch { expected: self.cols, got: other.rows });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[r * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                let dst = &mut out.data[r * other.cols..(r + 1) * other.cols];
                for c in 0..other.cols {
                    dst[c] += a * orow[c];
                }
            }
        }
        Ok(out)
    }

    /// self - other, elementwise.
    pub fn sub(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        if self.shape() != other.shape() {
            return Err(LinalgError::DimensionMismatch { expected: self.data.len(), got: other.data.len() });
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Matrix { rows: self.rows, cols: self.cols, data })
    }

    /// self + alpha * other, elementwise.
    pub fn add_scaled(&self, other: &Matrix, alpha: f64) -> Result<Matrix, LinalgError> {
        if self.shape() != other.shape() {
            return Err(LinalgError::DimensionMismatch { expected: self.data.len(), got: other.data.len() });
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + alpha * b).collect();
        Ok(Matrix { rows: self.rows, cols: self.cols, data })
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        debug_assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

// ---- vector helpers -------------------------------------------------------

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Normalize in place; returns the original norm.
pub fn normalize(v: &mut [f64]) -> f64 {
    let n = norm2(v);
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
    n
}

// ---- batch-major dense layers ----------------------------------------------
// rows are examples, weights are (out x in); shared by the toy trainer and
// the predictor

/// z[b][j] = sum_k x[b][k] w[j][k] + bias[j]
pub(crate) fn batch_linear(x: &Matrix, w: &Matrix, bias: &[f64]) -> Matrix {
    let (batch, n_in) = x.shape();
    let n_out = w.rows();
    debug_assert_eq!(w.cols(), n_in);
    debug_assert_eq!(bias.len(), n_out);
    let mut out = Matrix::zeros(batch, n_out);
    for b in 0..batch {
        let xrow = x.row(b);
        let dst = &mut out.data[b * n_out..(b + 1) * n_out];
        for j in 0..n_out {
            let wrow = w.row(j);
            let mut acc = bias[j];
            for k in 0..n_in {
                acc += xrow[k] * wrow[k];
            }
            dst[j] = acc;
        }
    }
    out
}

/// dW[j][k] = sum_b grad[b][j] x[b][k]
pub(crate) fn batch_grad_weights(grad: &Matrix, x: &Matrix) -> Matrix {
    let (batch, n_out) = grad.shape();
    let n_in = x.cols();
    let mut dw = Matrix::zeros(n_out, n_in);
    for b in 0..batch {
        let grow = grad.row(b).to_vec();
        let xrow = x.row(b).to_vec();
        for (j, g) in grow.iter().enumerate() {
            if *g == 0.0 {
                continue;
            }
            let dst = &mut dw.data[j * n_in..(j + 1) * n_in];
            for (k, xv) in xrow.iter().enumerate() {
                dst[k] += g * xv;
            }
        }
    }
    dw
}

/// dx[b][k] = sum_j grad[b][j] w[j][k]
pub(crate) fn batch_grad_inputs(grad: &Matrix, w: &Matrix) -> Matrix {
    let batch = grad.rows();
    let n_in = w.cols();
    let mut dx = Matrix::zeros(batch, n_in);
    for b in 0..batch {
        let grow = grad.row(b).to_vec();
        for (j, g) in grow.iter().enumerate() {
            if *g == 0.0 {
                continue;
            }
            let wrow = w.row(j);
            let dst = &mut dx.data[b * n_in..(b + 1) * n_in];
            for k in 0..n_in {
                dst[k] += g * wrow[k];
            }
        }
    }
    dx
}

// ---- rank-1 factor --------------------------------------------------------

/// The top singular triplet (sigma, u, v) of a matrix, with u and v unit
/// vectors and a canonical sign: the first component of u larger than 1e-12
/// in magnitude is positive. `degenerate` marks factors extracted from a
/// zero matrix, which get the (0, e1, e1) convention.
#[derive(Debug, Clone, PartialEq)]
pub struct Rank1Factor {
    pub sigma: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub degenerate: bool,
}

impl Rank1Factor {
    /// Zero-matrix convention: sigma = 0, u = e1, v = e1.
    pub fn degenerate(rows: usize, cols: usize) -> Self {
        let mut u = vec![0.0; rows];
        u[0] = 1.0;
        let mut v = vec![0.0; cols];
        v[0] = 1.0;
        Rank1Factor { sigma: 0.0, u, v, degenerate: true }
    }

    /// Flip (u, v) together so the first |u_i| > 1e-12 is positive.
    pub fn canonicalize_sign(&mut self) {
        if let Some(&lead) = self.u.iter().find(|x| x.abs() > 1e-12) {
            if lead < 0.0 {
                for x in self.u.iter_mut() {
                    *x = -*x;
                }
                for x in self.v.iter_mut() {
                    *x = -*x;
                }
            }
        }
    }
}

/// Full spectrum of a matrix: singular values sorted descending.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumSummary {
    pub singular_values: Vec<f64>,
}

impl SpectrumSummary {
    /// Sum of all singular values.
    pub fn nuclear_norm(&self) -> f64 {
        self.singular_values.iter().sum()
    }

    /// Sum of squared singular values; equals the squared Frobenius norm of
    /// the source matrix up to rounding.
    pub fn energy(&self) -> f64 {
        self.singular_values.iter().map(|s| s * s).sum()
    }
}

// ---- operations -----------------------------------------------------------

pub fn frobenius_norm(m: &Matrix) -> f64 {
    m.frobenius_norm()
}

/// All min(rows, cols) singular values, descending, via cyclic Jacobi
/// eigendecomposition of the smaller Gram matrix (M^T M or M M^T).
///
/// Jacobi sweeps run to an off-diagonal norm of 1e-12 relative, at most 60
/// sweeps. Eigenvalues below dim * eps relative to the largest are snapped
/// to zero: the Gram route cannot resolve singular values below sqrt(eps)
/// relative anyway, and exact zeros keep rank-deficient spectra clean.
pub fn full_svd(m: &Matrix) -> Result<SpectrumSummary, LinalgError> {
    full_svd_capped(m, DEFAULT_SVD_ELEM_CAP)
}

/// [`full_svd`] with an explicit element cap.
pub fn full_svd_capped(m: &Matrix, cap: usize) -> Result<SpectrumSummary, LinalgError> {
    let elems = m.rows() * m.cols();
    if elems > cap {
        return Err(LinalgError::SizeExceeded { elems, cap });
    }
    let gram = gram_smaller(m);
    let mut eig = jacobi_eigenvalues(gram)?;
    let lam_max = eig.iter().cloned().fold(0.0, f64::max);
    let clamp = lam_max * eig.len() as f64 * f64::EPSILON;
    for lam in eig.iter_mut() {
        if *lam <= clamp {
            *lam = 0.0;
        }
    }
    let mut singular_values: Vec<f64> = eig.into_iter().map(f64::sqrt).collect();
    singular_values.sort_by(|a, b| b.partial_cmp(a).unwrap());
    Ok(SpectrumSummary { singular_values })
}

/// The smaller of M^T M / M M^T as a dense symmetric matrix (dim, data).
fn gram_smaller(m: &Matrix) -> (usize, Vec<f64>) {
    let (rows, cols) = m.shape();
    if cols <= rows {
        // G = M^T M, cols x cols
        let n = cols;
        let mut g = vec![0.0; n * n];
        for r in 0..rows {
            let row = m.row(r);
            for i in 0..n {
                let ri = row[i];
                if ri == 0.0 {
                    continue;
                }
                for j in i..n {
                    g[i * n + j] += ri * row[j];
                }
            }
        }
        for i in 0..n {
            for j in 0..i {
                g[i * n + j] = g[j * n + i];
            }
        }
        (n, g)
    } else {
        // G = M M^T, rows x rows
        let n = rows;
        let mut g = vec![0.0; n * n];
        for i in 0..n {
            let ri = m.row(i);
            for j in i..n {
                g[i * n + j] = dot(ri, m.row(j));
            }
        }
        for i in 0..n {
            for j in 0..i {
                g[i * n + j] = g[j * n + i];
            }
        }
        (n, g)
    }
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
fn jacobi_eigenvalues((n, mut a): (usize, Vec<f64>)) -> Result<Vec<f64>, LinalgError> {
    const MAX_SWEEPS: usize = 60;
    const SWEEP_TOL: f64 = 1e-12;

    if n == 1 {
        return Ok(vec![a[0]]);
    }
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale == 0.0 {
        return Ok(vec![0.0; n]);
    }
    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += 2.0 * a[p * n + q] * a[p * n + q];
            }
        }
        if off.sqrt() <= SWEEP_TOL * scale {
            break;
        }
        for p in 0..(n - 1) {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // rotate rows/cols p and q
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    Ok((0..n).map(|i| a[i * n + i].max(0.0)).collect())
}

/// Largest singular triplet by alternating power iteration:
/// v <- normalize(M^T (M v)), u <- M v / |M v|, starting from the normalized
/// all-ones vector. Deterministic and exact enough for rank-1 use.
///
/// Near-ties between the top two singular values may stall the direction
/// without ever hurting the converged sigma; in that case the settled
/// triplet is returned rather than an error.
pub fn top_singular_triplet(m: &Matrix, tol: f64, max_iter: usize) -> Result<Rank1Factor, LinalgError> {
    let (rows, cols) = m.shape();
    let fro = m.frobenius_norm();
    if fro < 1e-300 {
        return Ok(Rank1Factor::degenerate(rows, cols));
    }

    let mut v = vec![1.0 / (cols as f64).sqrt(); cols];
    let mv0 = m.matvec(&v);
    if norm2(&mv0) < 1e-300 * fro {
        // the start vector happens to lie in the null space: nudge it
        v[0] += 1e-6;
        normalize(&mut v);
    }

    let mut sigma = 0.0f64;
    let mut converged = false;
    for _ in 0..max_iter {
        let mut w = m.matvec_t(&m.matvec(&v));
        if normalize(&mut w) == 0.0 {
            // M v fell into the null space; restart from the nudged vector
            w = vec![0.0; cols];
            w[0] = 1.0;
        }
        v = w;
        let sigma_new = norm2(&m.matvec(&v));
        let rel = (sigma_new - sigma).abs() / sigma_new.max(1e-300);
        sigma = sigma_new;
        if rel <= tol {
            converged = true;
            break;
        }
    }

    let mut u = m.matvec(&v);
    normalize(&mut u);
    if !converged {
        // the residual M^T u - sigma v measures how far v is from a true
        // right singular vector; ties keep it near zero, genuine
        // non-convergence does not
        let mtu = m.matvec_t(&u);
        let residual: f64 = mtu
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - sigma * b) * (a - sigma * b))
            .sum::<f64>()
            .sqrt();
        if residual > 1e-6 * sigma {
            return Err(LinalgError::NotConverged { iters: max_iter, residual });
        }
    }

    let mut factor = Rank1Factor { sigma, u, v, degenerate: false };
    factor.canonicalize_sign();
    Ok(factor)
}

/// [`top_singular_triplet`] with the default tolerance (1e-10) and
/// iteration budget (1000).
pub fn top_singular_triplet_default(m: &Matrix) -> Result<Rank1Factor, LinalgError> {
    top_singular_triplet(m, 1e-10, 1000)
}

/// sigma * u * v^T with shape (|u|, |v|).
pub fn rank1_reconstruct(f: &Rank1Factor) -> Matrix {
    Matrix::outer(f.sigma, &f.u, &f.v)
}

/// Energy ratio of the rank-1 subspace: sigma_1 / sum(sigma_i).
pub fn energy_ratio(m: &Matrix) -> Result<f64, LinalgError> {
    if m.frobenius_norm() == 0.0 {
        return Err(LinalgError::DegenerateMatrix);
    }
    let spectrum = full_svd(m)?;
    Ok(spectrum.singular_values[0] / spectrum.nuclear_norm())
}
