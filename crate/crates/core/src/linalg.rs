//! Dense/sparse linear algebra helpers shared by the estimators.
//!
//! Measurement Jacobians are mostly zeros (a flow row touches two buses), so
//! normal matrices are accumulated from per-row nonzero lists instead of
//! dense products.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Relative singular-value threshold used for every rank decision.
pub const RANK_RTOL: f64 = 1e-12;

/// Row-compressed matrix: each row is a list of `(column, value)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRows {
    ncols: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseRows {
    pub fn new(ncols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        debug_assert!(rows.iter().flatten().all(|&(c, _)| c < ncols));
        SparseRows { ncols, rows }
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let rows = (0..m.nrows())
            .map(|i| {
                (0..m.ncols())
                    .filter_map(|j| {
                        let v = m[(i, j)];
                        (v != 0.0).then_some((j, v))
                    })
                    .collect()
            })
            .collect();
        SparseRows { ncols: m.ncols(), rows }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows.len(), self.ncols);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                m[(i, j)] += v;
            }
        }
        m
    }

    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    /// Keeps rows `keep`, in that order.
    pub fn select(&self, keep: &[usize]) -> SparseRows {
        SparseRows {
            ncols: self.ncols,
            rows: keep.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.rows.len(),
            self.rows.iter().map(|row| row.iter().map(|&(j, v)| v * x[j]).sum::<f64>()),
        )
    }

    /// `Σ_i w_i h_i h_iᵀ`.
    pub fn weighted_gram(&self, weights: &[f64]) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.ncols, self.ncols);
        for (row, &w) in self.rows.iter().zip(weights) {
            for &(a, va) in row {
                for &(b, vb) in row {
                    g[(a, b)] += w * va * vb;
                }
            }
        }
        g
    }

    /// `Σ_i w_i v_i h_i`.
    pub fn weighted_transpose_mul(&self, weights: &[f64], v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.ncols);
        for ((row, &w), &vi) in self.rows.iter().zip(weights).zip(v.iter()) {
            let s = w * vi;
            for &(j, hv) in row {
                out[j] += s * hv;
            }
        }
        out
    }

    /// `h_iᵀ M h_i` for every row.
    pub fn row_quadratic_forms(&self, m: &DMatrix<f64>) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| {
                let mut acc = 0.0;
                for &(a, va) in row {
                    for &(b, vb) in row {
                        acc += va * m[(a, b)] * vb;
                    }
                }
                acc
            })
            .collect()
    }
}

/// Cholesky factorization of a symmetric positive definite normal matrix,
/// rejecting numerically singular ones.
pub fn spd_factor(g: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let n = g.nrows();
    if n == 0 {
        return Err(Error::Unobservable("empty state".into()));
    }
    let scale = g.diagonal().amax();
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::Unobservable("normal matrix is zero or non-finite".into()));
    }
    let chol = g
        .cholesky()
        .ok_or_else(|| Error::Unobservable("normal matrix is not positive definite".into()))?;
    let min_pivot = chol.l_dirty().diagonal().iter().fold(f64::INFINITY, |a, &v| a.min(v * v));
    if min_pivot < scale * 1e-13 {
        return Err(Error::Unobservable(format!(
            "normal matrix is numerically singular (pivot ratio {:.2e})",
            min_pivot / scale
        )));
    }
    Ok(chol)
}

fn padded_svd(m: &DMatrix<f64>) -> nalgebra::SVD<f64, Dyn, Dyn> {
    let (r, c) = m.shape();
    if r >= c {
        m.clone().svd(false, true)
    } else {
        let mut p = DMatrix::zeros(c, c);
        p.rows_mut(0, r).copy_from(m);
        p.svd(false, true)
    }
}

fn threshold(sv: &DVector<f64>, ncols: usize) -> f64 {
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    ncols as f64 * smax * RANK_RTOL
}

/// Numerical rank: singular values above `n · σ_max · 1e-12`.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let svd = m.clone().svd(false, false);
    let tol = threshold(&svd.singular_values, m.ncols());
    svd.singular_values.iter().filter(|&&s| s > tol && s > 0.0).count()
}

/// Orthonormal basis (columns) of the null space of `m`.
pub fn null_space_basis(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.ncols();
    if m.nrows() == 0 {
        return DMatrix::identity(n, n);
    }
    let svd = padded_svd(m);
    let tol = threshold(&svd.singular_values, n);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let cols: Vec<DVector<f64>> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| !(s > tol && s > 0.0))
        .map(|(k, _)| v_t.row(k).transpose())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Orthonormal basis of the column space of `m` (thin, rank-revealing).
pub fn orthonormal_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.ncols() == 0 {
        return DMatrix::zeros(m.nrows(), 0);
    }
    let svd = m.clone().svd(true, false);
    let tol = threshold(&svd.singular_values, m.ncols());
    let u = svd.u.expect("left singular vectors requested");
    let cols: Vec<DVector<f64>> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > tol && s > 0.0)
        .map(|(k, _)| u.column(k).into_owned())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(m.nrows(), 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Rows of `m` listed in `keep`, in that order.
pub fn select_rows(m: &DMatrix<f64>, keep: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(keep.len(), m.ncols(), |i, j| m[(keep[i], j)])
}

/// Copy of `m` with the listed rows set to zero.
pub fn zero_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    let mut out = m.clone();
    for &r in rows {
        out.row_mut(r).fill(0.0);
    }
    out
}

/// Row indices `0..m` that are not in `removed`.
pub fn complement(m: usize, removed: &[usize]) -> Vec<usize> {
    let mut mask = vec![true; m];
    for &r in removed {
        mask[r] = false;
    }
    (0..m).filter(|&i| mask[i]).collect()
}

/// Scale used for "relative" tolerances on a matrix: its largest absolute entry (at least 1).
pub fn scale_of(m: &DMatrix<f64>) -> f64 {
    m.amax().max(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sparse_gram_matches_dense() {
        let h = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 2.0, -1.0, 0.0, 3.0]);
        let w = [1.0, 0.5, 2.0];
        let sp = SparseRows::from_dense(&h);
        let d = DMatrix::from_diagonal(&DVector::from_row_slice(&w));
        let dense = h.transpose() * &d * &h;
        assert!((sp.weighted_gram(&w) - dense).amax() < 1e-14);
        assert_eq!(sp.to_dense(), h);
    }

    #[test]
    fn rank_and_null_space() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 0.0, 0.0, 1.0, 1.0]);
        assert_eq!(numerical_rank(&m), 2);
        let ns = null_space_basis(&m);
        assert_eq!(ns.ncols(), 1);
        assert!((&m * &ns).amax() < 1e-12);
        assert_eq!(null_space_basis(&DMatrix::<f64>::identity(3, 3)).ncols(), 0);
        assert_eq!(numerical_rank(&DMatrix::<f64>::zeros(0, 3)), 0);
        assert_eq!(null_space_basis(&DMatrix::<f64>::zeros(0, 3)).ncols(), 3);
    }

    #[test]
    fn singular_normal_matrix_rejected() {
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(spd_factor(g).is_err());
        assert!(spd_factor(DMatrix::identity(2, 2)).is_ok());
    }
}
