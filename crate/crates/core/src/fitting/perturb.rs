use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{arg_err, Result};
use crate::linalg;
use crate::moments::{moment_matrix, moment_vector, Dataset, EmpiricalMeasure};

/// Pads `s` to `target` points with copies of its first point, then moves
/// every point by `epsilon` in a uniformly random direction.
pub fn perturb_dataset<R: Rng + ?Sized>(
    s: &Dataset,
    target: usize,
    epsilon: f64,
    rng: &mut R,
) -> Result<Dataset> {
    if epsilon <= 0.0 || !epsilon.is_finite() {
        return arg_err(format!(
            "perturbation radius must be positive, got {epsilon}"
        ));
    }
    if s.is_empty() {
        return Ok(s.clone());
    }
    if target < s.len() {
        return arg_err(format!(
            "target size {target} is below the dataset size {}",
            s.len()
        ));
    }
    let n = s.dim();
    let mut out = s.clone();
    let first = s.point(0).to_vec();
    while out.len() < target {
        out.push(&first);
    }
    let mut coords = out.coords().to_vec();
    let mut u = vec![0.0; n];
    for x in coords.chunks_exact_mut(n) {
        loop {
            for v in u.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-12 {
                for (xi, ui) in x.iter_mut().zip(&u) {
                    *xi += epsilon * ui / norm;
                }
                break;
            }
        }
    }
    Dataset::new(n, coords)
}

/// Applies [`perturb_dataset`] to both classes with the same target size.
/// An empty class stays empty.
pub fn perturb_datasets<R: Rng + ?Sized>(
    s1: &Dataset,
    s2: &Dataset,
    target: usize,
    epsilon: f64,
    rng: &mut R,
) -> Result<(Dataset, Dataset)> {
    Ok((
        perturb_dataset(s1, target, epsilon, rng)?,
        perturb_dataset(s2, target, epsilon, rng)?,
    ))
}

/// Numerical rank of `M_r(y)` and whether it is as large as the support allows.
pub fn rank_check(m: &EmpiricalMeasure, r: usize) -> Result<(usize, bool)> {
    if m.weights().iter().any(|w| *w <= 0.0) {
        return arg_err("rank check needs strictly positive weights");
    }
    let md = moment_vector(m, 2 * r)?;
    let mm = moment_matrix(&md, r)?;
    let rank = linalg::numerical_rank(&mm, linalg::RANK_REL_TOL);
    Ok((rank, rank == m.support().len().min(mm.nrows())))
}
