//! Dense row-major `f64` matrices, a Cholesky solver, and the two inverse
//! update identities (rank-1 Sherman-Morrison and block Woodbury) that keep
//! the regression state's inverse covariance current without refactoring it.

use std::fmt;
use std::ops::{Index, IndexMut};

use thiserror::Error;

/// Cholesky pivots at or below this value are treated as singular.
pub const PIVOT_TOL: f64 = 1e-12;

/// Relative asymmetry accepted by [`solve_spd`].
pub const SYMMETRY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MatrixError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("matrix is not positive definite: pivot {pivot:e} at row {row}")]
    Singular { row: usize, pivot: f64 },
    #[error("inverse update is unstable: denominator {denominator:e}")]
    Unstable { denominator: f64 },
    #[error("data length {len} does not match {rows}x{cols}")]
    Length { rows: usize, cols: usize, len: usize },
}

/// Row-major dense matrix.
#[derive(Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Mat {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

impl Mat {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, MatrixError> {
        if rows * cols != data.len() {
            return Err(MatrixError::Length {
                rows,
                cols,
                len: data.len(),
            });
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::scaled_identity(n, 1.0)
    }

    pub fn scaled_identity(n: usize, s: f64) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = s;
        }
        m
    }

    /// Builds a matrix from equal-length rows. Panics on ragged input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Mat {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn column(v: &[f64]) -> Self {
        Mat {
            rows: v.len(),
            cols: 1,
            data: v.to_vec(),
        }
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
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    /// Copies rows `start..end`.
    pub fn row_range(&self, start: usize, end: usize) -> Mat {
        Mat {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    /// Copies columns `start..end`.
    pub fn col_range(&self, start: usize, end: usize) -> Mat {
        let w = end - start;
        let mut out = Mat::zeros(self.rows, w);
        for r in 0..self.rows {
            out.row_mut(r).copy_from_slice(&self.row(r)[start..end]);
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest `|m[i][j] - m[j][i]|`; infinite for non-square input.
    pub fn asymmetry(&self) -> f64 {
        if self.rows != self.cols {
            return f64::INFINITY;
        }
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in i + 1..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    /// Replaces `self` with `(self + selfᵀ) / 2`.
    pub fn symmetrize(&mut self) {
        debug_assert_eq!(self.rows, self.cols);
        let n = self.rows;
        for i in 0..n {
            for j in i + 1..n {
                let v = 0.5 * (self.data[i * n + j] + self.data[j * n + i]);
                self.data[i * n + j] = v;
                self.data[j * n + i] = v;
            }
        }
    }

    pub fn add_diagonal(&mut self, s: f64) {
        let n = self.rows.min(self.cols);
        for i in 0..n {
            self.data[i * self.cols + i] += s;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn add_assign(&mut self, other: &Mat) -> Result<(), MatrixError> {
        self.same_shape("add", other)?;
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn sub_assign(&mut self, other: &Mat) -> Result<(), MatrixError> {
        self.same_shape("sub", other)?;
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a -= b);
        Ok(())
    }

    pub fn sub(&self, other: &Mat) -> Result<Mat, MatrixError> {
        let mut out = self.clone();
        out.sub_assign(other)?;
        Ok(out)
    }

    fn same_shape(&self, op: &'static str, other: &Mat) -> Result<(), MatrixError> {
        if self.shape() != other.shape() {
            return Err(MatrixError::Shape {
                op,
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        Ok(())
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

/// Dense product `a·b`. Each output entry is accumulated over the inner
/// index in ascending order.
pub fn matmul(a: &Mat, b: &Mat) -> Result<Mat, MatrixError> {
    if a.cols != b.rows {
        return Err(MatrixError::Shape {
            op: "matmul",
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let mut c = Mat::zeros(m, n);
    for i in 0..m {
        let out = &mut c.data[i * n..(i + 1) * n];
        for l in 0..k {
            let s = a.data[i * k + l];
            let brow = &b.data[l * n..(l + 1) * n];
            for (o, bv) in out.iter_mut().zip(brow) {
                *o += s * bv;
            }
        }
    }
    Ok(c)
}

/// `m·v` for a vector `v`.
pub fn matvec(m: &Mat, v: &[f64]) -> Result<Vec<f64>, MatrixError> {
    if m.cols != v.len() {
        return Err(MatrixError::Shape {
            op: "matvec",
            lhs: m.shape(),
            rhs: (v.len(), 1),
        });
    }
    Ok((0..m.rows)
        .map(|r| m.row(r).iter().zip(v).map(|(a, b)| a * b).sum())
        .collect())
}

/// `aᵀ·a`, filled symmetrically.
pub fn gram(a: &Mat) -> Mat {
    let n = a.cols;
    let mut g = Mat::zeros(n, n);
    for r in 0..a.rows {
        let row = a.row(r);
        for i in 0..n {
            for j in i..n {
                g.data[i * n + j] += row[i] * row[j];
            }
        }
    }
    for i in 0..n {
        for j in 0..i {
            g.data[i * n + j] = g.data[j * n + i];
        }
    }
    g
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(a: &Mat) -> Result<Mat, MatrixError> {
    if a.rows != a.cols {
        return Err(MatrixError::Shape {
            op: "cholesky",
            lhs: a.shape(),
            rhs: a.shape(),
        });
    }
    let asym = a.asymmetry();
    if asym > SYMMETRY_TOL * a.max_abs().max(1.0) {
        return Err(MatrixError::NotSymmetric { asymmetry: asym });
    }
    let n = a.rows;
    let mut l = Mat::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > PIVOT_TOL) {
            return Err(MatrixError::Singular { row: j, pivot: d });
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

/// Solves `a·x = b` for symmetric positive definite `a` via Cholesky.
pub fn solve_spd(a: &Mat, b: &Mat) -> Result<Mat, MatrixError> {
    if a.rows != b.rows {
        return Err(MatrixError::Shape {
            op: "solve_spd",
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    let l = cholesky(a)?;
    let n = a.rows;
    let m = b.cols;
    let mut x = b.clone();
    // forward: L·y = b
    for i in 0..n {
        for k in 0..i {
            let lik = l[(i, k)];
            for c in 0..m {
                x.data[i * m + c] -= lik * x.data[k * m + c];
            }
        }
        let d = l[(i, i)];
        for c in 0..m {
            x.data[i * m + c] /= d;
        }
    }
    // backward: Lᵀ·x = y
    for i in (0..n).rev() {
        for k in i + 1..n {
            let lki = l[(k, i)];
            for c in 0..m {
                x.data[i * m + c] -= lki * x.data[k * m + c];
            }
        }
        let d = l[(i, i)];
        for c in 0..m {
            x.data[i * m + c] /= d;
        }
    }
    Ok(x)
}

/// `(P + x·xᵀ)⁻¹` from `P⁻¹` by the Sherman-Morrison identity.
pub fn sm_rank1_inverse_update(p_inv: &Mat, x: &[f64]) -> Result<Mat, MatrixError> {
    if p_inv.rows != p_inv.cols {
        return Err(MatrixError::Shape {
            op: "sm_rank1_inverse_update",
            lhs: p_inv.shape(),
            rhs: (x.len(), 1),
        });
    }
    let px = matvec(p_inv, x)?;
    let denom = 1.0 + x.iter().zip(&px).map(|(a, b)| a * b).sum::<f64>();
    if !(denom > PIVOT_TOL) {
        return Err(MatrixError::Unstable { denominator: denom });
    }
    let n = x.len();
    let mut out = p_inv.clone();
    for i in 0..n {
        for j in 0..n {
            out.data[i * n + j] -= px[i] * px[j] / denom;
        }
    }
    out.symmetrize();
    Ok(out)
}

/// `(P + Xᵀ·X)⁻¹` from `P⁻¹` for a block of rows `X` (B×n), by the Woodbury
/// identity `P⁻¹ − P⁻¹Xᵀ(I + X·P⁻¹·Xᵀ)⁻¹X·P⁻¹`.
pub fn smw_block_inverse_update(p_inv: &Mat, xb: &Mat) -> Result<Mat, MatrixError> {
    let (px_t, y) = woodbury_parts(p_inv, xb)?;
    let mut out = p_inv.clone();
    out.sub_assign(&matmul(&px_t, &y)?)?;
    out.symmetrize();
    Ok(out)
}

/// Returns `(P⁻¹Xᵀ, G⁻¹·X·P⁻¹)` with `G = I + X·P⁻¹·Xᵀ`.
pub(crate) fn woodbury_parts(p_inv: &Mat, xb: &Mat) -> Result<(Mat, Mat), MatrixError> {
    if p_inv.rows != p_inv.cols || xb.cols != p_inv.rows {
        return Err(MatrixError::Shape {
            op: "smw_block_inverse_update",
            lhs: p_inv.shape(),
            rhs: xb.shape(),
        });
    }
    let px_t = matmul(p_inv, &xb.transpose())?;
    let mut g = matmul(xb, &px_t)?;
    g.add_diagonal(1.0);
    g.symmetrize();
    let y = solve_spd(&g, &px_t.transpose()).map_err(|e| match e {
        MatrixError::Singular { pivot, .. } => MatrixError::Unstable { denominator: pivot },
        other => other,
    })?;
    Ok((px_t, y))
}
