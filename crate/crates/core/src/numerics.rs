//! Dense float64 linear algebra, activations and the matrix exponential.
//!
//! Everything here is a pure function over immutable inputs. Matrices are
//! row-major with their dimensions carried alongside the data.

use std::fmt;
use std::ops::{Deref, Index, IndexMut};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("non-finite value at position {0}")]
    NonFinite(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is singular to working precision")]
    Singular,
}

fn check_finite(data: &[f64]) -> Result<(), NumericsError> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(NumericsError::NonFinite(i)),
        None => Ok(()),
    }
}

/// A finite float64 column vector.
#[derive(Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(data: Vec<f64>) -> Result<Self, NumericsError> {
        check_finite(&data)?;
        Ok(Self(data))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn filled(len: usize, value: f64) -> Self {
        assert!(value.is_finite());
        Self(vec![value; len])
    }

    /// Wraps data already known to be finite (results of finite arithmetic
    /// on finite inputs inside this crate).
    pub(crate) fn from_vec_unchecked(data: Vec<f64>) -> Self {
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Self(data)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn inf_norm(&self) -> Result<f64, NumericsError> {
        inf_norm_vec(&self.0)
    }

    pub fn two_norm(&self) -> Result<f64, NumericsError> {
        two_norm_vec(&self.0)
    }
}

impl Deref for Vector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for Vector {
    type Error = NumericsError;
    fn try_from(data: Vec<f64>) -> Result<Self, Self::Error> {
        Vector::new(data)
    }
}

impl From<Vector> for Vec<f64> {
    fn from(v: Vector) -> Self {
        v.0
    }
}

impl fmt::Debug for Vector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.0.iter()).finish()
    }
}

#[derive(Deserialize)]
struct RawMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// A finite float64 matrix in row-major order.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<RawMatrix> for Matrix {
    type Error = NumericsError;
    fn try_from(raw: RawMatrix) -> Result<Self, Self::Error> {
        Matrix::new(raw.rows, raw.cols, raw.data)
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumericsError> {
        if rows * cols != data.len() {
            return Err(NumericsError::DimensionMismatch(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        check_finite(&data)?;
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NumericsError> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_cols) {
            return Err(NumericsError::DimensionMismatch("ragged rows".into()));
        }
        Self::new(n_rows, n_cols, rows.concat())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Result<Self, NumericsError> {
        check_finite(values)?;
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t[(c, r)] = self[(r, c)];
            }
        }
        t
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>, NumericsError> {
        if v.len() != self.cols {
            return Err(NumericsError::DimensionMismatch(format!(
                "{}x{} matrix times vector of length {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        let mut out = vec![0.0; self.rows];
        self.matvec_acc(v, &mut out);
        Ok(out)
    }

    /// `out += self * v`, dimensions assumed checked by the caller.
    #[inline]
    pub(crate) fn matvec_acc(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols.max(1))) {
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(v) {
                acc += a * b;
            }
            *o += acc;
        }
    }

    /// `out += selfᵀ * v`.
    #[inline]
    pub(crate) fn matvec_t_acc(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        if self.cols == 0 {
            return;
        }
        for (row, &vr) in self.data.chunks_exact(self.cols).zip(v) {
            if vr == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * vr;
            }
        }
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix, NumericsError> {
        if self.cols != other.rows {
            return Err(NumericsError::DimensionMismatch(format!(
                "{}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let src = other.row(k);
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix, NumericsError> {
        if self.shape() != other.shape() {
            return Err(NumericsError::DimensionMismatch(format!(
                "{:?} + {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Matrix { rows: self.rows, cols: self.cols, data })
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix, NumericsError> {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| v * s).collect() }
    }

    pub fn inf_norm(&self) -> Result<f64, NumericsError> {
        inf_norm_mat(self)
    }

    /// Absolute row sums, one per row.
    pub fn row_abs_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|r| self.row(r).iter().map(|v| v.abs()).sum()).collect()
    }

    /// Copies `block` into `self` with its top-left corner at `(r0, c0)`.
    pub fn set_block(&mut self, r0: usize, c0: usize, block: &Matrix) {
        assert!(r0 + block.rows <= self.rows && c0 + block.cols <= self.cols);
        for r in 0..block.rows {
            for c in 0..block.cols {
                self[(r0 + r, c0 + c)] = block[(r, c)];
            }
        }
    }

    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Matrix {
        assert!(r0 + rows <= self.rows && c0 + cols <= self.cols);
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                out[(r, c)] = self[(r0 + r, c0 + c)];
            }
        }
        out
    }

    /// Solves `self * x = b` by Gaussian elimination with partial pivoting.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, NumericsError> {
        if !self.is_square() {
            return Err(NumericsError::NotSquare { rows: self.rows, cols: self.cols });
        }
        let n = self.rows;
        if b.len() != n {
            return Err(NumericsError::DimensionMismatch(format!(
                "{n}x{n} system with right-hand side of length {}",
                b.len()
            )));
        }
        let mut a = self.data.clone();
        let mut x = b.to_vec();
        let scale = inf_norm_mat(self).unwrap_or(0.0).max(f64::MIN_POSITIVE);
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
                .unwrap();
            if a[pivot * n + col].abs() <= 1e-14 * scale {
                return Err(NumericsError::Singular);
            }
            if pivot != col {
                for c in 0..n {
                    a.swap(pivot * n + c, col * n + c);
                }
                x.swap(pivot, col);
            }
            let p = a[col * n + col];
            for r in col + 1..n {
                let factor = a[r * n + col] / p;
                if factor == 0.0 {
                    continue;
                }
                for c in col..n {
                    a[r * n + c] -= factor * a[col * n + c];
                }
                x[r] -= factor * x[col];
            }
        }
        for r in (0..n).rev() {
            let mut acc = x[r];
            for c in r + 1..n {
                acc -= a[r * n + c] * x[c];
            }
            x[r] = acc / a[r * n + r];
        }
        Ok(x)
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

/// Largest absolute entry.
pub fn inf_norm_vec(v: &[f64]) -> Result<f64, NumericsError> {
    if v.is_empty() {
        return Err(NumericsError::Empty("vector"));
    }
    Ok(v.iter().fold(0.0_f64, |m, x| m.max(x.abs())))
}

/// Largest absolute row sum.
pub fn inf_norm_mat(m: &Matrix) -> Result<f64, NumericsError> {
    if m.rows == 0 || m.cols == 0 {
        return Err(NumericsError::Empty("matrix"));
    }
    Ok(m.row_abs_sums().into_iter().fold(0.0_f64, f64::max))
}

pub fn two_norm_vec(v: &[f64]) -> Result<f64, NumericsError> {
    if v.is_empty() {
        return Err(NumericsError::Empty("vector"));
    }
    // scaled accumulation so huge or tiny entries do not overflow/underflow
    let scale = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if scale == 0.0 {
        return Ok(0.0);
    }
    let ss: f64 = v.iter().map(|x| (x / scale) * (x / scale)).sum();
    Ok(scale * ss.sqrt())
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn sigmoid_deriv(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 - s)
}

#[inline]
pub fn tanh_act(x: f64) -> f64 {
    x.tanh()
}

#[inline]
pub fn tanh_deriv(x: f64) -> f64 {
    let t = x.tanh();
    1.0 - t * t
}

/// Below this norm the Taylor core alone meets the accuracy contract.
const EXPM_TAYLOR_RADIUS: f64 = 0.5;
/// 0.5^19 / 19! is ~1.6e-23, well below double precision.
const EXPM_TAYLOR_ORDER: usize = 18;

/// `exp(scale * m)` by scaling and squaring around a truncated Taylor series.
pub fn mat_exp(m: &Matrix, scale: f64) -> Result<Matrix, NumericsError> {
    if !m.is_square() {
        return Err(NumericsError::NotSquare { rows: m.rows, cols: m.cols });
    }
    let n = m.rows;
    if n == 0 {
        return Ok(Matrix::zeros(0, 0));
    }
    let a = m.scale(scale);
    let norm = inf_norm_mat(&a)?;
    let squarings = if norm > EXPM_TAYLOR_RADIUS {
        (norm / EXPM_TAYLOR_RADIUS).log2().ceil() as i32
    } else {
        0
    };
    let x = a.scale(0.5_f64.powi(squarings));

    // Horner form: I + X(I + X/2(I + X/3(...)))
    let mut acc = Matrix::identity(n);
    for k in (1..=EXPM_TAYLOR_ORDER).rev() {
        acc = x.matmul(&acc)?.scale(1.0 / k as f64);
        for i in 0..n {
            acc[(i, i)] += 1.0;
        }
    }
    for _ in 0..squarings {
        acc = acc.matmul(&acc)?;
    }
    check_finite(&acc.data)?;
    Ok(acc)
}

/// Exact zero-order-hold discretization of `x' = A x + B u` over `period`:
/// returns `(exp(A T), ∫₀ᵀ exp(A s) ds · B)` from one augmented exponential.
pub fn zoh(a: &Matrix, b: &Matrix, period: f64) -> Result<(Matrix, Matrix), NumericsError> {
    if !a.is_square() {
        return Err(NumericsError::NotSquare { rows: a.rows, cols: a.cols });
    }
    if b.rows != a.rows {
        return Err(NumericsError::DimensionMismatch(format!(
            "state matrix {}x{} with input matrix {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let n = a.rows;
    let m = b.cols;
    let mut aug = Matrix::zeros(n + m, n + m);
    aug.set_block(0, 0, a);
    aug.set_block(0, n, b);
    let e = mat_exp(&aug, period)?;
    Ok((e.block(0, 0, n, n), e.block(0, n, n, m)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn vector_norms() {
        assert_eq!(inf_norm_vec(&[1.0, -3.0, 2.0]).unwrap(), 3.0);
        assert_eq!(inf_norm_vec(&[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(inf_norm_vec(&[-0.5]).unwrap(), 0.5);
        assert_eq!(two_norm_vec(&[3.0, 4.0]).unwrap(), 5.0);
        assert_eq!(two_norm_vec(&[1.0]).unwrap(), 1.0);
        assert_eq!(two_norm_vec(&[0.0, 0.0, 0.0]).unwrap(), 0.0);
        assert!(matches!(inf_norm_vec(&[]), Err(NumericsError::Empty(_))));
        assert!(matches!(two_norm_vec(&[]), Err(NumericsError::Empty(_))));
    }

    #[test]
    fn matrix_norms() {
        let m = Matrix::from_rows(&[vec![1.0, -2.0], vec![3.0, 0.5]]).unwrap();
        assert_eq!(m.inf_norm().unwrap(), 3.5);
        assert_eq!(Matrix::identity(3).inf_norm().unwrap(), 1.0);
        assert_eq!(Matrix::zeros(2, 2).inf_norm().unwrap(), 0.0);
        assert!(Matrix::zeros(0, 3).inf_norm().is_err());
    }

    #[test]
    fn construction_rejects_bad_input() {
        assert!(matches!(Vector::new(vec![1.0, f64::NAN]), Err(NumericsError::NonFinite(1))));
        assert!(Matrix::new(2, 2, vec![1.0; 3]).is_err());
        assert!(Matrix::new(1, 2, vec![1.0, f64::INFINITY]).is_err());
        assert!(Matrix::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn activations() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(1.7) - (1.0 - sigmoid(-1.7))).abs() < 1e-15);
        assert_eq!(sigmoid_deriv(0.0), 0.25);
        assert_eq!(tanh_act(0.0), 0.0);
        assert!(tanh_act(0.5).abs() <= 0.5);
        // tanh(0.5) from its exponential definition
        let e = 1.0_f64.exp();
        let reference = (e - 1.0) / (e + 1.0);
        assert!((tanh_act(0.5) - reference).abs() < 1e-15);
        assert!((tanh_act(0.5) - 0.462117).abs() < 1e-6);
        // saturation stays finite and inside the range
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!(sigmoid(-30.0) > 0.0 && sigmoid(30.0) < 1.0);
    }

    #[test]
    fn matmul_and_solve() {
        let a = Matrix::from_rows(&[vec![4.0, 1.0], vec![2.0, 3.0]]).unwrap();
        let x = a.solve(&[1.0, 2.0]).unwrap();
        let back = a.matvec(&x).unwrap();
        assert!((back[0] - 1.0).abs() < 1e-14 && (back[1] - 2.0).abs() < 1e-14);
        let i = a.matmul(&Matrix::identity(2)).unwrap();
        assert_eq!(i, a);
        let singular = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        assert_eq!(singular.solve(&[1.0, 1.0]), Err(NumericsError::Singular));
    }

    #[test]
    fn exp_of_zero_is_identity() {
        assert_eq!(mat_exp(&Matrix::zeros(3, 3), 1.0).unwrap(), Matrix::identity(3));
        assert!(matches!(mat_exp(&Matrix::zeros(2, 3), 1.0), Err(NumericsError::NotSquare { .. })));
    }

    #[test]
    fn exp_of_diagonal() {
        let m = Matrix::diag(&[-1.0 / 30.0]).unwrap();
        let e = mat_exp(&m, 30.0).unwrap();
        assert!((e[(0, 0)] - (-1.0_f64).exp()).abs() < 1e-9);
        assert!((e[(0, 0)] - 0.367879).abs() < 1e-6);
    }

    #[test]
    fn exp_inverse_property() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let mut data: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
            let m = Matrix::new(4, 4, data.clone()).unwrap();
            let norm = m.inf_norm().unwrap();
            data.iter_mut().for_each(|v| *v /= norm);
            let m = Matrix::new(4, 4, data).unwrap();
            let p = mat_exp(&m, 1.0).unwrap().matmul(&mat_exp(&m, -1.0).unwrap()).unwrap();
            let err = p.sub(&Matrix::identity(4)).unwrap().inf_norm().unwrap();
            assert!(err < 1e-9, "err {err}");
        }
    }

    #[test]
    fn exp_large_norm_matches_scalar_exponentials() {
        // diagonal with ‖scale·m‖∞ = 10
        let m = Matrix::diag(&[-10.0, -3.0, 2.5, 0.0]).unwrap();
        let e = mat_exp(&m, 1.0).unwrap();
        for (i, d) in [-10.0_f64, -3.0, 2.5, 0.0].iter().enumerate() {
            let rel = (e[(i, i)] - d.exp()).abs() / d.exp();
            assert!(rel < 1e-10, "rel {rel}");
        }
    }

    #[test]
    fn zoh_scalar_matches_closed_form() {
        // x' = -x/τ + u/τ: b_d = 1 - e^{-T/τ}
        let tau = 60.0;
        let a = Matrix::diag(&[-1.0 / tau]).unwrap();
        let b = Matrix::diag(&[1.0 / tau]).unwrap();
        let (ad, bd) = zoh(&a, &b, 30.0).unwrap();
        let expected = (-0.5_f64).exp();
        assert!((ad[(0, 0)] - expected).abs() < 1e-14);
        assert!((bd[(0, 0)] - (1.0 - expected)).abs() < 1e-14);
    }
}
