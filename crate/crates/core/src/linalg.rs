//! Small dense linear algebra helpers and deterministic row reductions.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Condition number above which a matrix is treated as singular.
pub const CONDITION_LIMIT: f64 = 1e12;

const BLOCK: usize = 256;
const PARALLEL_ROWS: usize = 8192;

/// 2-norm condition number from the singular values.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if !max.is_finite() || !min.is_finite() {
        return f64::INFINITY;
    }
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Inverse, refusing matrices whose condition number exceeds [`CONDITION_LIMIT`].
pub fn checked_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let condition = condition_number(m);
    if !(condition <= CONDITION_LIMIT) {
        return Err(Error::SingularJacobian { condition });
    }
    m.clone()
        .lu()
        .try_inverse()
        .ok_or(Error::SingularJacobian { condition })
}

pub fn checked_solve(m: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let condition = condition_number(m);
    if !(condition <= CONDITION_LIMIT) {
        return Err(Error::SingularJacobian { condition });
    }
    m.clone()
        .lu()
        .solve(rhs)
        .ok_or(Error::SingularJacobian { condition })
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn min_eigenvalue(sym: &DMatrix<f64>) -> f64 {
    sym.clone().symmetric_eigenvalues().min()
}

/// `true` when `m` is symmetric within `tol` (relative to its largest entry)
/// and its smallest eigenvalue is at least `-tol * |trace|`.
pub fn is_symmetric_psd(m: &DMatrix<f64>, tol: f64) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    let scale = m.amax().max(1e-300);
    if (m - m.transpose()).amax() > tol * scale {
        return false;
    }
    min_eigenvalue(&symmetrize(m)) >= -tol * m.trace().abs().max(scale)
}

/// Column-major flattening, matching the identification of a `p x q` matrix
/// with the stacked vector of its columns.
pub fn vec_col_major(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

pub fn relative_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let denom = b.norm();
    if denom == 0.0 {
        a.norm()
    } else {
        (a - b).norm() / denom
    }
}

/// Sums a per-row contribution over the dataset (optionally skipping one row)
/// with a fixed block partition and a pairwise tree over block results, so
/// the floating point result does not depend on the thread count.
///
/// `f(row, acc, scratch)` must add the row's contribution into `acc`.
pub fn row_sum<F>(data: &Dataset, skip: Option<usize>, len: usize, scratch_len: usize, f: F) -> Vec<f64>
where
    F: Fn(&[f64], &mut [f64], &mut [f64]) + Sync,
{
    let n = data.n();
    let n_blocks = n.div_ceil(BLOCK);
    let block = |b: usize| {
        let mut acc = vec![0.0; len];
        let mut scratch = vec![0.0; scratch_len];
        let end = ((b + 1) * BLOCK).min(n);
        for i in b * BLOCK..end {
            if Some(i) == skip {
                continue;
            }
            f(data.row(i), &mut acc, &mut scratch);
        }
        acc
    };
    let partials: Vec<Vec<f64>> = if n >= PARALLEL_ROWS {
        (0..n_blocks).into_par_iter().map(block).collect()
    } else {
        (0..n_blocks).map(block).collect()
    };
    tree_sum(partials, len)
}

fn tree_sum(mut parts: Vec<Vec<f64>>, len: usize) -> Vec<f64> {
    if parts.is_empty() {
        return vec![0.0; len];
    }
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
            }
            next.push(a);
        }
        parts = next;
    }
    parts.pop().unwrap()
}

/// Row mean of a per-row vector function.
pub fn row_mean<F>(data: &Dataset, skip: Option<usize>, len: usize, scratch_len: usize, f: F) -> Vec<f64>
where
    F: Fn(&[f64], &mut [f64], &mut [f64]) + Sync,
{
    let count = data.n() - usize::from(skip.is_some());
    let mut s = row_sum(data, skip, len, scratch_len, f);
    let inv = 1.0 / count as f64;
    s.iter_mut().for_each(|v| *v *= inv);
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_rejects_singular() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(matches!(checked_inverse(&m), Err(Error::SingularJacobian { .. })));
        let ok = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let inv = checked_inverse(&ok).unwrap();
        assert!((&ok * inv - DMatrix::identity(2, 2)).amax() < 1e-14);
    }

    #[test]
    fn row_sum_skips_and_is_blocked() {
        let rows: Vec<[f64; 1]> = (0..1000).map(|i| [i as f64]).collect();
        let ds = Dataset::from_rows(&rows).unwrap();
        let s = row_sum(&ds, Some(10), 1, 0, |r, acc, _| acc[0] += r[0]);
        assert_eq!(s[0], 999.0 * 1000.0 / 2.0 - 10.0);
    }

    #[test]
    fn psd_check() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        assert!(is_symmetric_psd(&m, 1e-8));
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(!is_symmetric_psd(&bad, 1e-8));
    }
}
