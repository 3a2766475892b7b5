//! Dense matrix primitives.
//!
//! Everything here is row-major `f64` storage. Centering is done by mean
//! subtraction; the centering matrix `I - J/n` is never materialized.

use std::fmt;

use crate::error::{Error, Result};

/// Absolute tolerance used when validating symmetry of an input matrix.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Dense row-major real matrix with finite entries.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows.min(8) {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        if self.rows > 8 {
            writeln!(f, "  ...")?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    /// Builds a matrix from row-major values, rejecting empty shapes and
    /// non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidMatrix(format!("empty shape {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                expected: format!("{} values for {rows}x{cols}", rows * cols),
                got: format!("{} values", data.len()),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidMatrix(format!(
                "non-finite entry at ({}, {})",
                pos / cols,
                pos % cols
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != m) {
            return Err(Error::ShapeMismatch {
                expected: format!("{m} columns"),
                got: format!("{} columns in row {i}", r.len()),
            });
        }
        Self::new(n, m, rows.concat())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
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
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch {
                expected: format!("{} rows on the right operand", self.cols),
                got: format!("{}", other.rows),
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn scaled(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a + b)
    }

    fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        check_same_shape(self, other)?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn frob_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (m, v) in means.iter_mut().zip(self.row(i)) {
                *m += v;
            }
        }
        let n = self.rows as f64;
        means.iter_mut().for_each(|m| *m /= n);
        means
    }

    /// Copies the first `cols` columns.
    pub fn leading_columns(&self, cols: usize) -> Matrix {
        Matrix::from_fn(self.rows, cols.min(self.cols), |i, j| self.get(i, j))
    }
}

pub(crate) fn check_same_shape(a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}", a.rows, a.cols),
            got: format!("{}x{}", b.rows, b.cols),
        });
    }
    Ok(())
}

/// Square symmetric matrix (Gram, kernel and distance matrices).
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix(Matrix);

impl SymMatrix {
    /// Validates squareness and symmetry within [`SYMMETRY_TOL`].
    pub fn new(m: Matrix) -> Result<Self> {
        if m.rows != m.cols {
            return Err(Error::ShapeMismatch {
                expected: "square matrix".into(),
                got: format!("{}x{}", m.rows, m.cols),
            });
        }
        let n = m.rows;
        for i in 0..n {
            for j in (i + 1)..n {
                let gap = (m.get(i, j) - m.get(j, i)).abs();
                if gap > SYMMETRY_TOL {
                    return Err(Error::NotSymmetric { row: i, col: j, gap });
                }
            }
        }
        Ok(Self(m))
    }

    /// Evaluates `f` on the upper triangle and mirrors it, so the result is
    /// exactly symmetric.
    pub fn from_upper(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = f(i, j);
                m.data[i * n + j] = v;
                m.data[j * n + i] = v;
            }
        }
        Self(m)
    }

    pub fn zeros(n: usize) -> Self {
        Self(Matrix::zeros(n, n))
    }

    pub fn identity(n: usize) -> Self {
        Self(Matrix::identity(n))
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.0.rows
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn frob_norm(&self) -> f64 {
        self.0.frob_norm()
    }

    pub fn sub(&self, other: &SymMatrix) -> Result<SymMatrix> {
        Ok(Self(self.0.sub(&other.0)?))
    }

    pub fn add(&self, other: &SymMatrix) -> Result<SymMatrix> {
        Ok(Self(self.0.add(&other.0)?))
    }

    pub fn scaled(&self, s: f64) -> SymMatrix {
        Self(self.0.scaled(s))
    }

    /// Entry-wise map, applied symmetrically.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        SymMatrix::from_upper(self.size(), |i, j| f(self.get(i, j)))
    }

    /// `self * y` for an `n x d` right operand.
    pub fn mul_mat(&self, y: &Matrix) -> Result<Matrix> {
        self.0.matmul(y)
    }
}

/// Pairwise dissimilarity used by neighbor searches and distance matrices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Metric {
    /// Squared Euclidean distance.
    #[default]
    EuclideanSq,
    /// Manhattan distance.
    L1,
}

impl Metric {
    #[inline]
    pub fn eval(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::EuclideanSq => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum(),
            Metric::L1 => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
        }
    }

    /// The metric as a length: Euclidean distances are square-rooted, L1 is
    /// already a length.
    #[inline]
    pub fn length(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::EuclideanSq => self.eval(a, b).sqrt(),
            Metric::L1 => self.eval(a, b),
        }
    }
}

/// `C X`: subtracts the column means.
pub fn center_rows(x: &Matrix) -> Matrix {
    let means = x.column_means();
    let mut out = x.clone();
    for i in 0..out.rows {
        for (v, m) in out.row_mut(i).iter_mut().zip(&means) {
            *v -= m;
        }
    }
    out
}

/// `X X^T`.
pub fn gram(x: &Matrix) -> SymMatrix {
    SymMatrix::from_upper(x.rows, |i, j| dot(x.row(i), x.row(j)))
}

pub fn sq_dist_matrix(x: &Matrix, metric: Metric) -> SymMatrix {
    SymMatrix::from_upper(x.rows, |i, j| {
        if i == j {
            0.0
        } else {
            metric.eval(x.row(i), x.row(j))
        }
    })
}

/// `C A C` via row, column and grand means.
pub fn double_center(a: &SymMatrix) -> SymMatrix {
    let n = a.size();
    let means: Vec<f64> = (0..n).map(|i| a.row(i).iter().sum::<f64>() / n as f64).collect();
    let grand = means.iter().sum::<f64>() / n as f64;
    SymMatrix::from_upper(n, |i, j| a.get(i, j) - (means[i] + means[j]) + grand)
}

/// `sum_ij a_ij b_ij`.
pub fn frob_inner(a: &Matrix, b: &Matrix) -> Result<f64> {
    check_same_shape(a, b)?;
    Ok(dot(a.as_slice(), b.as_slice()))
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Which end of the spectrum [`sym_eigh`] returns.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpectrumEnd {
    Largest,
    Smallest,
}

/// Eigenvalues with matching unit-norm eigenvectors.
#[derive(Clone, Debug)]
pub struct EigenPairs {
    pub values: Vec<f64>,
    /// `n x count`; column `k` pairs with `values[k]`.
    pub vectors: Matrix,
}

impl EigenPairs {
    pub fn vector(&self, k: usize) -> Vec<f64> {
        self.vectors.column(k)
    }
}

pub const JACOBI_MAX_SWEEPS: usize = 100;
pub const JACOBI_REL_TOL: f64 = 1e-14;

/// Full eigendecomposition by cyclic Jacobi rotations. Eigenvalues are
/// returned in ascending order; `vectors` is stored transposed (row `k` is
/// the `k`-th eigenvector) because rotations then touch contiguous memory.
fn jacobi_full(a: &SymMatrix) -> Result<(Vec<f64>, Matrix)> {
    let n = a.size();
    let mut m = a.as_matrix().as_slice().to_vec();
    let mut vt = Matrix::identity(n);
    let scale = a.frob_norm();
    let tol = JACOBI_REL_TOL * scale;

    let off_norm = |m: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                s += 2.0 * m[i * n + j] * m[i * n + j];
            }
        }
        s.sqrt()
    };

    if scale == 0.0 || n == 1 {
        let values = (0..n).map(|i| m[i * n + i]).collect();
        return Ok(sort_eigen(values, vt));
    }

    let mut sweeps = 0;
    let mut off = off_norm(&m);
    while off > tol {
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(Error::NoConvergence {
                sweeps,
                residual: off,
            });
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                // negligible relative to both diagonal entries
                if apq.abs() <= f64::EPSILON * 1e-3 * (app.abs() + aqq.abs()).max(f64::MIN_POSITIVE)
                    || apq == 0.0
                {
                    m[p * n + q] = 0.0;
                    m[q * n + p] = 0.0;
                    continue;
                }
                let tau = (aqq - app) / (2.0 * apq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                rotate(&mut m, n, p, q, c, s);
                m[p * n + p] = app - t * apq;
                m[q * n + q] = aqq + t * apq;
                m[p * n + q] = 0.0;
                m[q * n + p] = 0.0;
                let (rp, rq) = two_rows(vt.as_mut_slice(), n, p, q);
                for (vp, vq) in rp.iter_mut().zip(rq.iter_mut()) {
                    let (a, b) = (*vp, *vq);
                    *vp = c * a - s * b;
                    *vq = s * a + c * b;
                }
            }
        }
        off = off_norm(&m);
    }
    let values = (0..n).map(|i| m[i * n + i]).collect();
    Ok(sort_eigen(values, vt))
}

/// Largest size handled by Jacobi rotations; bigger matrices go through
/// Householder tridiagonalization and implicit QL.
pub const JACOBI_MAX_N: usize = 256;
const QL_MAX_ITER: usize = 60;

/// Householder reduction to tridiagonal form followed by implicit QL
/// (EISPACK `tred2`/`tql2`). Same output layout as [`jacobi_full`].
fn tridiagonal_ql(a: &SymMatrix) -> Result<(Vec<f64>, Matrix)> {
    let n = a.size();
    let mut v: Vec<f64> = a.as_matrix().as_slice().to_vec();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    let at = |i: usize, j: usize| i * n + j;

    // tred2
    d.copy_from_slice(&v[at(n - 1, 0)..at(n - 1, 0) + n]);
    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for dk in &d[..i] {
            scale += dk.abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[at(i - 1, j)];
                v[at(i, j)] = 0.0;
                v[at(j, i)] = 0.0;
            }
        } else {
            for dk in &mut d[..i] {
                *dk /= scale;
                h += *dk * *dk;
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            e[..i].iter_mut().for_each(|x| *x = 0.0);
            for j in 0..i {
                f = d[j];
                v[at(j, i)] = f;
                g = e[j] + v[at(j, j)] * f;
                for k in (j + 1)..i {
                    g += v[at(k, j)] * d[k];
                    e[k] += v[at(k, j)] * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    v[at(k, j)] -= f * e[k] + g * d[k];
                }
                d[j] = v[at(i - 1, j)];
                v[at(i, j)] = 0.0;
            }
        }
        d[i] = h;
    }
    for i in 0..n - 1 {
        v[at(n - 1, i)] = v[at(i, i)];
        v[at(i, i)] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[at(k, i + 1)] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v[at(k, i + 1)] * v[at(k, j)];
                }
                for k in 0..=i {
                    v[at(k, j)] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[at(k, i + 1)] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[at(n - 1, j)];
        v[at(n - 1, j)] = 0.0;
    }
    v[at(n - 1, n - 1)] = 1.0;
    e[0] = 0.0;

    // tql2 on the transposed accumulator so rotations touch rows.
    let mut vt = Matrix::new(n, n, v).expect("finite input").transpose();
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
    let eps = f64::EPSILON;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 && e[m].abs() > eps * tst1 {
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > QL_MAX_ITER {
                    return Err(Error::NoConvergence {
                        sweeps: iter,
                        residual: e[l].abs(),
                    });
                }
                let g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let h = g - d[l];
                for di in &mut d[(l + 2)..n] {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    let g = c * e[i];
                    let h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    let (ri, ri1) = two_rows(vt.as_mut_slice(), n, i, i + 1);
                    for (x, y) in ri.iter_mut().zip(ri1.iter_mut()) {
                        let hy = *y;
                        *y = s * *x + c * hy;
                        *x = c * *x - s * hy;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(sort_eigen(d, vt))
}

fn full_eigen(a: &SymMatrix) -> Result<(Vec<f64>, Matrix)> {
    if a.size() <= JACOBI_MAX_N {
        jacobi_full(a)
    } else {
        tridiagonal_ql(a)
    }
}

/// Applies the rotation to rows/columns `p`, `q` of a symmetric matrix,
/// leaving the (p,p), (q,q), (p,q) entries to the caller.
#[inline]
fn rotate(m: &mut [f64], n: usize, p: usize, q: usize, c: f64, s: f64) {
    let (rp, rq) = two_rows(m, n, p, q);
    for k in 0..n {
        if k == p || k == q {
            continue;
        }
        let (a, b) = (rp[k], rq[k]);
        rp[k] = c * a - s * b;
        rq[k] = s * a + c * b;
    }
    for k in 0..n {
        if k == p || k == q {
            continue;
        }
        m[k * n + p] = m[p * n + k];
        m[k * n + q] = m[q * n + k];
    }
}

/// Mutable views of rows `p < q`.
#[inline]
fn two_rows(m: &mut [f64], n: usize, p: usize, q: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert!(p < q);
    let (head, tail) = m.split_at_mut(q * n);
    (&mut head[p * n..(p + 1) * n], &mut tail[..n])
}

fn sort_eigen(values: Vec<f64>, vt: Matrix) -> (Vec<f64>, Matrix) {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let sorted_values = order.iter().map(|&k| values[k]).collect();
    let mut sorted_vt = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        sorted_vt.row_mut(dst).copy_from_slice(vt.row(src));
    }
    (sorted_values, sorted_vt)
}

/// `count` eigenpairs of a symmetric matrix from the requested end of the
/// spectrum. Eigenvector signs are fixed so the first entry with magnitude
/// above `1e-12` is positive.
pub fn sym_eigh(a: &SymMatrix, count: usize, end: SpectrumEnd) -> Result<EigenPairs> {
    let n = a.size();
    if count > n {
        return Err(Error::InvalidParameter(format!(
            "requested {count} eigenpairs of a {n}x{n} matrix"
        )));
    }
    let (values, vt) = full_eigen(a)?;
    let picks: Vec<usize> = match end {
        SpectrumEnd::Smallest => (0..count).collect(),
        SpectrumEnd::Largest => (0..count).map(|k| n - 1 - k).collect(),
    };
    let mut vectors = Matrix::zeros(n, count);
    for (col, &k) in picks.iter().enumerate() {
        let v = vt.row(k);
        let sign = fixed_sign(v);
        for i in 0..n {
            vectors.set(i, col, sign * v[i]);
        }
    }
    Ok(EigenPairs {
        values: picks.iter().map(|&k| values[k]).collect(),
        vectors,
    })
}

/// `+1` or `-1` so that the first entry of `v` larger than `1e-12` in
/// magnitude becomes positive.
pub(crate) fn fixed_sign(v: &[f64]) -> f64 {
    match v.iter().find(|x| x.abs() > 1e-12) {
        Some(&x) if x < 0.0 => -1.0,
        _ => 1.0,
    }
}

/// Thin SVD of a small `p x q` matrix through the symmetric embedding
/// `[[0, A], [A^T, 0]]`, whose eigenpairs are `(+-sigma, [u; +-v]/sqrt 2)`.
/// Returns `(U, sigma, V)` with `min(p, q)` columns each.
fn small_svd(a: &Matrix) -> Result<(Matrix, Vec<f64>, Matrix)> {
    let (p, q) = a.shape();
    let size = p + q;
    let emb = SymMatrix::from_upper(size, |i, j| {
        if i < p && j >= p {
            a.get(i, j - p)
        } else {
            0.0
        }
    });
    let r = p.min(q);
    let pairs = sym_eigh(&emb, r, SpectrumEnd::Largest)?;
    let mut u = Matrix::zeros(p, r);
    let mut v = Matrix::zeros(q, r);
    let mut sigma = Vec::with_capacity(r);
    for k in 0..r {
        let col = pairs.vector(k);
        let nu = col[..p].iter().map(|x| x * x).sum::<f64>().sqrt();
        let nv = col[p..].iter().map(|x| x * x).sum::<f64>().sqrt();
        sigma.push(pairs.values[k].max(0.0));
        for i in 0..p {
            u.set(i, k, if nu > 0.0 { col[i] / nu } else { 0.0 });
        }
        for j in 0..q {
            v.set(j, k, if nv > 0.0 { col[p + j] / nv } else { 0.0 });
        }
    }
    Ok((u, sigma, v))
}

/// Relative misfit `min_O ||Y O - Yref||_F / ||Yref||_F` over orthogonal `O`.
/// Both inputs are expected to be centered already.
pub fn procrustes_residual(y: &Matrix, y_ref: &Matrix) -> Result<f64> {
    let o = procrustes_rotation(y, y_ref)?;
    let ref_norm = y_ref.frob_norm();
    if ref_norm == 0.0 {
        return Ok(if y.frob_norm() == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok(y.matmul(&o)?.sub(y_ref)?.frob_norm() / ref_norm)
}

/// The orthogonal `O` minimizing `||Y O - Yref||_F` (Kabsch form, `U V^T`
/// from the SVD of `Y^T Yref`).
pub fn procrustes_rotation(y: &Matrix, y_ref: &Matrix) -> Result<Matrix> {
    check_same_shape(y, y_ref)?;
    let cross = y.transpose().matmul(y_ref)?;
    let d = cross.rows();
    let (u, sigma, v) = small_svd(&cross)?;
    // Rank-deficient cross-covariance leaves zero columns; complete them.
    let u = complete_orthonormal(&u, &sigma);
    let v = complete_orthonormal(&v, &sigma);
    let mut o = Matrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            o.set(i, j, (0..d).map(|k| u.get(i, k) * v.get(j, k)).sum());
        }
    }
    Ok(o)
}

fn complete_orthonormal(basis: &Matrix, sigma: &[f64]) -> Matrix {
    let d = basis.rows();
    let tol = 1e-12 * sigma.iter().cloned().fold(0.0, f64::max).max(1e-300);
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for k in 0..basis.cols() {
        if sigma[k] > tol {
            cols.push(basis.column(k));
        }
    }
    let mut e = 0;
    while cols.len() < d && e < d {
        let mut cand: Vec<f64> = (0..d).map(|i| if i == e { 1.0 } else { 0.0 }).collect();
        for c in &cols {
            let proj = dot(&cand, c);
            cand.iter_mut().zip(c).for_each(|(x, y)| *x -= proj * y);
        }
        let norm = dot(&cand, &cand).sqrt();
        if norm > 1e-8 {
            cand.iter_mut().for_each(|x| *x /= norm);
            cols.push(cand);
        }
        e += 1;
    }
    Matrix::from_fn(d, d, |i, k| cols[k][i])
}
