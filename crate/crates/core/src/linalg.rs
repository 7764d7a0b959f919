//! Small dense linear-algebra helpers shared by the moment and solver code.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

/// Relative eigenvalue threshold below which an eigenvalue counts as zero.
pub const RANK_REL_TOL: f64 = 1e-8;

pub fn eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    if m.nrows() == 0 {
        return DVector::zeros(0);
    }
    SymmetricEigen::new(m.clone()).eigenvalues
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    eigenvalues(m).iter().copied().fold(f64::INFINITY, f64::min)
}

/// Number of eigenvalues above `rel_tol * λ_max` (zero for a zero matrix).
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let ev = eigenvalues(m);
    let max = ev.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return 0;
    }
    ev.iter().filter(|&&l| l > rel_tol * max).count()
}

/// Cholesky factor if `m` is (numerically) positive definite.
pub fn cholesky(m: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    let chol = Cholesky::new(m.clone())?;
    // nalgebra accepts tiny non-positive pivots as long as sqrt succeeds; reject
    // anything that is not strictly positive.
    if chol
        .l_dirty()
        .diagonal()
        .iter()
        .all(|d| *d > 0.0 && d.is_finite())
    {
        Some(chol)
    } else {
        None
    }
}

/// `log det m` via Cholesky, `None` if `m` is not positive definite.
pub fn logdet_pd(m: &DMatrix<f64>) -> Option<f64> {
    let chol = cholesky(m)?;
    Some(
        2.0 * chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|d| d.ln())
            .sum::<f64>(),
    )
}

/// Pairwise (cascade) summation.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        return xs.iter().sum();
    }
    let (a, b) = xs.split_at(xs.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// Symmetrizes in place by averaging with the transpose.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}
