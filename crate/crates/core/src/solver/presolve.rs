//! Converts a [`MaxDetProblem`] into the form the barrier engine iterates on.
//!
//! * Each LMI block is restricted to the common range of its coefficient
//!   matrices. Localizing blocks of measures with few atoms are singular for
//!   every θ, and a barrier method needs a nonempty interior.
//! * Blocks are scaled to unit max entry and linear rows to unit norm. Both
//!   shift the barrier by a constant, so the central path is unchanged.
//! * Bounds become linear rows.

use nalgebra::{DMatrix, DVector, SVD};

use super::problem::{AffineLmiBlock, MaxDetProblem};

/// Singular values below this fraction of the largest are treated as an exact
/// common null space of a block.
pub(crate) const FACIAL_REL_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub(crate) struct Prepared {
    pub nvars: usize,
    pub cost: DVector<f64>,
    pub det: Option<(AffineLmiBlock, f64)>,
    pub blocks: Vec<AffineLmiBlock>,
    /// Position in `blocks` of each original block; `None` if it was dropped.
    pub block_index: Vec<Option<usize>>,
    pub rows: DMatrix<f64>,
    pub offsets: DVector<f64>,
}

impl Prepared {
    /// Barrier parameter: total dimension of all constraint cones.
    pub fn barrier_dim(&self) -> usize {
        self.blocks.iter().map(|b| b.size()).sum::<usize>() + self.offsets.len()
    }

    pub fn has_constraints(&self) -> bool {
        !self.blocks.is_empty() || !self.offsets.is_empty()
    }
}

pub(crate) fn prepare(p: &MaxDetProblem) -> Prepared {
    let nvars = p.nvars();
    let mut blocks = Vec::with_capacity(p.blocks().len());
    let mut block_index = Vec::with_capacity(p.blocks().len());
    for b in p.blocks() {
        match reduce_block(b) {
            Some(r) => {
                block_index.push(Some(blocks.len()));
                blocks.push(r);
            }
            None => block_index.push(None),
        }
    }

    let mut rows: Vec<(Vec<f64>, f64)> = Vec::with_capacity(p.num_linear());
    for i in 0..p.num_linear() {
        let (a, b) = p.linear(i);
        let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            if b < 0.0 {
                rows.push((a.to_vec(), b));
            }
            continue;
        }
        rows.push((a.iter().map(|v| v / norm).collect(), b / norm));
    }
    if let Some(bounds) = p.bounds() {
        for (k, &(lo, hi)) in bounds.iter().enumerate() {
            if lo.is_finite() {
                let mut a = vec![0.0; nvars];
                a[k] = 1.0;
                rows.push((a, -lo));
            }
            if hi.is_finite() {
                let mut a = vec![0.0; nvars];
                a[k] = -1.0;
                rows.push((a, hi));
            }
        }
    }
    let m = rows.len();
    let mut coeffs = DMatrix::zeros(m, nvars);
    let mut offsets = DVector::zeros(m);
    for (i, (a, b)) in rows.into_iter().enumerate() {
        for (k, v) in a.into_iter().enumerate() {
            coeffs[(i, k)] = v;
        }
        offsets[i] = b;
    }

    Prepared {
        nvars,
        cost: DVector::from_column_slice(p.cost()),
        det: p.det().map(|d| (d.block.clone(), d.weight)),
        blocks,
        block_index,
        rows: coeffs,
        offsets,
    }
}

/// Restricts `block` to the common range of its matrices and rescales it.
/// Returns `None` for a block that is identically zero.
pub(crate) fn reduce_block(block: &AffineLmiBlock) -> Option<AffineLmiBlock> {
    let size = block.size();
    let mats: Vec<&DMatrix<f64>> = std::iter::once(block.constant())
        .chain(block.terms().iter().map(|(_, a)| a))
        .collect();

    let mut stacked = DMatrix::zeros(size, size * mats.len());
    let mut any = false;
    for (j, m) in mats.iter().enumerate() {
        let s = m.amax();
        if s > 0.0 {
            any = true;
            stacked.columns_mut(j * size, size).copy_from(&(*m / s));
        }
    }
    if !any {
        return None;
    }

    let svd = SVD::new(stacked, true, false);
    let u = svd.u.as_ref().expect("left singular vectors requested");
    let smax = svd.singular_values.max();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > FACIAL_REL_TOL * smax)
        .collect();

    let mut reduced = if keep.len() == size {
        block.clone()
    } else {
        let mut p = DMatrix::zeros(size, keep.len());
        for (c, &i) in keep.iter().enumerate() {
            p.set_column(c, &u.column(i));
        }
        let project = |m: &DMatrix<f64>| {
            let mut r = p.transpose() * m * &p;
            crate::linalg::symmetrize(&mut r);
            r
        };
        AffineLmiBlock::from_parts(
            project(block.constant()),
            block
                .terms()
                .iter()
                .map(|(k, a)| (*k, project(a)))
                .collect(),
        )
    };

    let scale = std::iter::once(reduced.constant())
        .chain(reduced.terms().iter().map(|(_, a)| a))
        .map(|m| m.amax())
        .fold(0.0, f64::max);
    if scale > 0.0 {
        reduced.scale(1.0 / scale);
    }
    Some(reduced)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_one_block_reduces_to_scalar() {
        let v = DVector::from_vec(vec![1.0, 2.0, 2.0]);
        let vv = &v * v.transpose();
        let block = AffineLmiBlock::zeros(3).with_term(0, vv).unwrap();
        let r = reduce_block(&block).unwrap();
        assert_eq!(r.size(), 1);
        assert!((r.coefficient(0).unwrap()[(0, 0)].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_block_is_dropped() {
        assert!(reduce_block(&AffineLmiBlock::zeros(4)).is_none());
    }

    #[test]
    fn bounds_become_rows() {
        let mut p = MaxDetProblem::new(2);
        p.set_bounds(vec![(0.0, f64::INFINITY), (-1.0, 1.0)])
            .unwrap();
        let prep = prepare(&p);
        assert_eq!(prep.offsets.len(), 3);
    }
}
