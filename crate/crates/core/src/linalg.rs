//! Small dense linear-algebra helpers shared by the analysis modules.

use nalgebra::{DMatrix, DVector};

/// Relative singular-value threshold used for every rank decision.
pub const RANK_RTOL: f64 = 1e-8;

/// Number of singular values above `RANK_RTOL` times the largest one.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let largest = sv.iter().cloned().fold(0.0, f64::max);
    if largest == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_RTOL * largest).count()
}

/// Orthonormal basis of the column span via modified Gram-Schmidt.
/// Returns `None` when a column is (numerically) dependent on the previous ones.
pub fn orthonormal_columns(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let mut q = DMatrix::zeros(a.nrows(), a.ncols());
    for j in 0..a.ncols() {
        let col = a.column(j);
        let scale = col.norm();
        if scale == 0.0 {
            return None;
        }
        let mut v: DVector<f64> = col.into_owned();
        // Two passes keep the basis orthogonal to working precision.
        for _ in 0..2 {
            for i in 0..j {
                let qi = q.column(i);
                let r = qi.dot(&v);
                v -= qi * r;
            }
        }
        let norm = v.norm();
        if norm <= RANK_RTOL * scale {
            return None;
        }
        q.set_column(j, &(v / norm));
    }
    Some(q)
}
