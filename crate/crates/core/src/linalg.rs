//! Dense symmetric linear algebra.
//!
//! Everything here works on small dense matrices: the principal submatrix of a
//! constraint on its support, or one block of a candidate solution. Positive
//! definiteness is decided by a full Cholesky factorization in machine
//! precision; the smallest eigenvalue is bracketed by bisection on shifted
//! factorizations, starting from the Gershgorin interval.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix entry ({row}, {col}) is not finite")]
    NonFinite { row: usize, col: usize },
    #[error("matrix is not symmetric at ({row}, {col})")]
    NotSymmetric { row: usize, col: usize },
    #[error("expected a {expected}x{expected} matrix, got {rows} rows")]
    BadShape { expected: usize, rows: usize },
}

/// Dense symmetric matrix stored in full row-major order.
///
/// `set` writes both triangles, so `values[i][j] == values[j][i]` holds for
/// every matrix built through this API.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSym {
    dim: usize,
    values: Vec<f64>,
}

impl DenseSym {
    pub fn zeros(dim: usize) -> Self {
        DenseSym { dim, values: vec![0.0; dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m.set(i, i, d);
        }
        m
    }

    /// Builds a matrix from rows, requiring exact symmetry.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, LinalgError> {
        let dim = rows.len();
        let mut values = Vec::with_capacity(dim * dim);
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(LinalgError::BadShape { expected: dim, rows: row.len() });
            }
            values.extend_from_slice(row);
        }
        for i in 0..dim {
            for j in (i + 1)..dim {
                if values[i * dim + j].to_bits() != values[j * dim + i].to_bits() {
                    return Err(LinalgError::NotSymmetric { row: i, col: j });
                }
            }
        }
        Ok(DenseSym { dim, values })
    }

    /// Builds a matrix from a function evaluated on the upper triangle.
    pub fn from_upper_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.dim + j] = v;
        self.values[j * self.dim + i] = v;
    }

    pub fn add_to(&mut self, i: usize, j: usize, v: f64) {
        let cur = self.get(i, j);
        self.set(i, j, cur + v);
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn negated(&self) -> Self {
        DenseSym { dim: self.dim, values: self.values.iter().map(|v| -v).collect() }
    }

    /// `self - t I`
    pub fn shifted(&self, t: f64) -> Self {
        let mut m = self.clone();
        for i in 0..self.dim {
            m.values[i * self.dim + i] -= t;
        }
        m
    }

    /// Principal submatrix on `idx` (in the order given).
    pub fn principal(&self, idx: &[usize]) -> Self {
        let mut m = Self::zeros(idx.len());
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate().skip(a) {
                m.set(a, b, self.get(i, j));
            }
        }
        m
    }

    /// Trace of the product, `Σ_ij a_ij b_ij`.
    pub fn inner(&self, other: &DenseSym) -> f64 {
        assert_eq!(self.dim, other.dim, "dimension mismatch in inner product");
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    pub fn matmul(&self, other: &DenseSym) -> Vec<f64> {
        let n = self.dim;
        assert_eq!(n, other.dim);
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out[i * n + j] += a * other.get(k, j);
                }
            }
        }
        out
    }

    fn check_finite(&self) -> Result<(), LinalgError> {
        for i in 0..self.dim {
            for j in 0..self.dim {
                if !self.get(i, j).is_finite() {
                    return Err(LinalgError::NonFinite { row: i, col: j });
                }
            }
        }
        Ok(())
    }
}

/// Lower-triangular Cholesky factor, row-major with zeros above the diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerFactor {
    dim: usize,
    values: Vec<f64>,
}

impl LowerFactor {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.dim + j]
    }

    /// Reconstructs `L Lᵀ`.
    pub fn reconstruct(&self) -> DenseSym {
        let n = self.dim;
        DenseSym::from_upper_fn(n, |i, j| (0..=i.min(j)).map(|k| self.get(i, k) * self.get(j, k)).sum())
    }
}

/// Cholesky factorization with a relative pivot threshold.
///
/// Each pivot must exceed `eps_pivot * max(1, max_i m_ii)`; otherwise the
/// matrix is reported as not positive definite (`Ok(None)`). With
/// `eps_pivot = 0` this is the plain "all pivots strictly positive" test.
pub fn cholesky(m: &DenseSym, eps_pivot: f64) -> Result<Option<LowerFactor>, LinalgError> {
    m.check_finite()?;
    let n = m.dim();
    let max_diag = (0..n).map(|i| m.get(i, i)).fold(f64::NEG_INFINITY, f64::max);
    let threshold = eps_pivot * max_diag.max(1.0);
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let lj = j * n;
        let mut pivot = m.get(j, j);
        for k in 0..j {
            pivot -= l[lj + k] * l[lj + k];
        }
        if !(pivot > threshold) {
            return Ok(None);
        }
        let d = pivot.sqrt();
        l[lj + j] = d;
        for i in (j + 1)..n {
            let li = i * n;
            let mut s = m.get(i, j);
            for k in 0..j {
                s -= l[li + k] * l[lj + k];
            }
            l[li + j] = s / d;
        }
    }
    Ok(Some(LowerFactor { dim: n, values: l }))
}

pub fn is_pd(m: &DenseSym, eps_pivot: f64) -> Result<bool, LinalgError> {
    Ok(cholesky(m, eps_pivot)?.is_some())
}

/// Diagonal blocks are PD iff every entry exceeds `eps_pivot`.
pub fn is_pd_diagonal(diag: &[f64], eps_pivot: f64) -> bool {
    diag.iter().all(|&d| d > eps_pivot)
}

/// Gershgorin interval `[min_i (m_ii - r_i), max_i (m_ii + r_i)]`.
pub fn gershgorin_bounds(m: &DenseSym) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..m.dim() {
        let r: f64 = m.row(i).iter().enumerate().filter(|&(j, _)| j != i).map(|(_, v)| v.abs()).sum();
        let d = m.get(i, i);
        lo = lo.min(d - r);
        hi = hi.max(d + r);
    }
    (lo, hi)
}

/// Smallest eigenvalue to within `tol`, returned as the lower end of the final
/// bracket.
///
/// Bisection on `t` using "M - tI is PD iff t < λ_min". The initial bracket is
/// the Gershgorin interval, with the upper end tightened to the smallest
/// diagonal entry. An empty matrix has no eigenvalues and yields `+∞`;
/// non-finite input yields NaN.
pub fn lambda_min_lower(m: &DenseSym, tol: f64) -> f64 {
    assert!(tol > 0.0, "tolerance must be positive");
    if m.dim() == 0 {
        return f64::INFINITY;
    }
    if m.check_finite().is_err() {
        return f64::NAN;
    }
    let (mut lo, hi) = gershgorin_bounds(m);
    let min_diag = m.diagonal().into_iter().fold(f64::INFINITY, f64::min);
    let mut hi = hi.min(min_diag);
    while hi - lo > tol {
        let mid = lo + 0.5 * (hi - lo);
        if mid <= lo || mid >= hi {
            break;
        }
        // finiteness was checked above
        if cholesky(&m.shifted(mid), 0.0).unwrap().is_some() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> DenseSym {
        DenseSym::from_rows(rows).unwrap()
    }

    #[test]
    fn identity_factors_to_identity() {
        let l = cholesky(&DenseSym::identity(3), 0.0).unwrap().unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(l.get(i, j), if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn two_by_two_factor() {
        let a = m(&[&[4.0, 2.0], &[2.0, 2.0]]);
        let l = cholesky(&a, 0.0).unwrap().unwrap();
        assert_eq!((l.get(0, 0), l.get(1, 0), l.get(1, 1)), (2.0, 1.0, 1.0));
        assert_eq!(l.get(0, 1), 0.0);
        // L Lᵀ multiplied out independently of `reconstruct`
        let back = [[l.get(0, 0) * l.get(0, 0), l.get(1, 0) * l.get(0, 0)],
            [l.get(1, 0) * l.get(0, 0), l.get(1, 0).powi(2) + l.get(1, 1).powi(2)]];
        assert_eq!(back, [[4.0, 2.0], [2.0, 2.0]]);
    }

    #[test]
    fn antidiagonal_is_not_pd() {
        let a = m(&[&[0.0, 0.0, 1.0], &[0.0, 1.0, 0.0], &[1.0, 0.0, 0.0]]);
        assert!(cholesky(&a, 0.0).unwrap().is_none());
        assert!(!is_pd(&a.negated(), 0.0).unwrap());
    }

    #[test]
    fn pd_examples() {
        assert!(is_pd(&m(&[&[2.0, 1.0], &[1.0, 2.0]]), 0.0).unwrap());
        assert!(!is_pd(&m(&[&[1.0, 2.0], &[2.0, 1.0]]), 0.0).unwrap());
        assert!(is_pd(&DenseSym::zeros(0), 0.0).unwrap());
    }

    #[test]
    fn pivot_threshold_is_relative_to_diagonal() {
        let a = DenseSym::from_diagonal(&[100.0, 1e-3]);
        assert!(is_pd(&a, 0.0).unwrap());
        assert!(is_pd(&a, 1e-6).unwrap());
        // threshold = 1e-4 * 100 = 1e-2 > 1e-3
        assert!(!is_pd(&a, 1e-4).unwrap());
    }

    #[test]
    fn non_finite_is_an_error() {
        let mut a = DenseSym::identity(2);
        a.set(0, 1, f64::NAN);
        assert_eq!(cholesky(&a, 0.0), Err(LinalgError::NonFinite { row: 0, col: 1 }));
    }

    #[test]
    fn asymmetric_rows_rejected() {
        assert!(matches!(
            DenseSym::from_rows(&[[1.0, 2.0], [3.0, 1.0]]),
            Err(LinalgError::NotSymmetric { .. })
        ));
    }

    #[test]
    fn diagonal_pd_test() {
        assert!(is_pd_diagonal(&[1.0, 2.0], 0.0));
        assert!(!is_pd_diagonal(&[1.0, 0.0], 0.0));
        assert!(is_pd_diagonal(&[], 0.0));
    }

    #[test]
    fn lambda_min_cases() {
        assert!((lambda_min_lower(&DenseSym::identity(2), 1e-10) - 1.0).abs() <= 1e-10);
        let d = DenseSym::from_diagonal(&[3.0, -2.0]);
        assert!((lambda_min_lower(&d, 1e-10) + 2.0).abs() <= 1e-10);
        let a = m(&[&[2.0, 1.0], &[1.0, 2.0]]);
        assert!((lambda_min_lower(&a, 1e-10) - 1.0).abs() <= 1e-10);
        assert_eq!(lambda_min_lower(&DenseSym::zeros(0), 1e-10), f64::INFINITY);
    }

    #[test]
    fn gershgorin_contains_result() {
        let a = m(&[&[1.0, -3.0, 0.5], &[-3.0, 2.0, 1.0], &[0.5, 1.0, -1.0]]);
        let (lo, hi) = gershgorin_bounds(&a);
        let l = lambda_min_lower(&a, 1e-12);
        assert!(lo <= l && l <= hi);
    }
}
