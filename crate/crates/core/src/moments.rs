//! Datasets, empirical (atomic) measures and their moment / localizing matrices.
//!
//! For an atomic measure `μ = Σ μ_x δ_x` the moments are the weighted power
//! sums `y_α = Σ μ_x x^α`. The order-`r` moment matrix has entries
//! `y_{α+β}` and the localizing matrix of `θ` has entries
//! `Σ_γ θ_γ y_{α+β+γ}`, rows and columns indexed by monomials of degree `≤ r`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::basis::{MonomialBasis, Polynomial};
use crate::error::{arg_err, Result};
use crate::linalg;

/// Points below this count are summed sequentially.
const SUM_LEAF: usize = 512;

/// A finite point set in `R^n`, stored row-major. Duplicates are allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n: usize,
    coords: Vec<f64>,
}

impl Dataset {
    pub fn new(n: usize, coords: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return arg_err("dataset dimension must be at least 1");
        }
        if !coords.len().is_multiple_of(n) {
            return arg_err(format!(
                "{} coordinates do not split into points of dimension {n}",
                coords.len()
            ));
        }
        Ok(Self { n, coords })
    }

    pub fn empty(n: usize) -> Self {
        Self {
            n,
            coords: Vec::new(),
        }
    }

    pub fn from_points<P: AsRef<[f64]>>(points: &[P]) -> Result<Self> {
        let Some(first) = points.first() else {
            return arg_err("cannot infer dimension of an empty point list");
        };
        let n = first.as_ref().len();
        let mut coords = Vec::with_capacity(n * points.len());
        for (i, p) in points.iter().enumerate() {
            let p = p.as_ref();
            if p.len() != n {
                return arg_err(format!("point {i} has dimension {}, expected {n}", p.len()));
            }
            coords.extend_from_slice(p);
        }
        Self::new(n, coords)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.n
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.n..(i + 1) * self.n]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.n)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn push(&mut self, x: &[f64]) {
        assert_eq!(x.len(), self.n, "point dimension mismatch");
        self.coords.extend_from_slice(x);
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut coords = Vec::with_capacity(indices.len() * self.n);
        for &i in indices {
            coords.extend_from_slice(self.point(i));
        }
        Self { n: self.n, coords }
    }

    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.n != other.n {
            return arg_err("datasets have different dimensions");
        }
        let mut coords = self.coords.clone();
        coords.extend_from_slice(&other.coords);
        Ok(Self { n: self.n, coords })
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.n];
        if self.is_empty() {
            return m;
        }
        for (j, mj) in m.iter_mut().enumerate() {
            let col: Vec<f64> = self.iter().map(|p| p[j]).collect();
            *mj = linalg::pairwise_sum(&col) / self.len() as f64;
        }
        m
    }

    /// Dimension of the affine hull, measured on the scatter matrix with the
    /// shared relative eigenvalue threshold.
    pub fn affine_rank(&self) -> usize {
        if self.len() < 2 {
            return 0;
        }
        let mean = self.mean();
        let mut scatter = DMatrix::zeros(self.n, self.n);
        for p in self.iter() {
            let v = DVector::from_iterator(self.n, p.iter().zip(&mean).map(|(a, b)| a - b));
            scatter += &v * v.transpose();
        }
        linalg::numerical_rank(&scatter, linalg::RANK_REL_TOL)
    }
}

/// Weighted atomic probability measure on a dataset.
#[derive(Debug, Clone)]
pub struct EmpiricalMeasure {
    dataset: Arc<Dataset>,
    weights: Vec<f64>,
}

impl EmpiricalMeasure {
    pub fn new(dataset: Arc<Dataset>, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != dataset.len() {
            return arg_err(format!(
                "{} weights for {} points",
                weights.len(),
                dataset.len()
            ));
        }
        if weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return arg_err("weights must be finite and nonnegative");
        }
        let total = linalg::pairwise_sum(&weights);
        if (total - 1.0).abs() > 1e-12 {
            return arg_err(format!("weights sum to {total}, expected 1"));
        }
        Ok(Self { dataset, weights })
    }

    pub fn dataset(&self) -> &Arc<Dataset> {
        &self.dataset
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn dim(&self) -> usize {
        self.dataset.dim()
    }

    /// Indices of atoms with positive weight.
    pub fn support(&self) -> Vec<usize> {
        (0..self.weights.len())
            .filter(|&i| self.weights[i] > 0.0)
            .collect()
    }

    /// `Σ_x μ_x g(x)` with pairwise accumulation.
    pub fn integrate(&self, mut g: impl FnMut(&[f64]) -> f64) -> f64 {
        let vals: Vec<f64> = self
            .dataset
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| if *w == 0.0 { 0.0 } else { w * g(x) })
            .collect();
        linalg::pairwise_sum(&vals)
    }
}

/// Uniform probability measure on all points of `s`.
pub fn uniform_measure(s: &Arc<Dataset>) -> Result<EmpiricalMeasure> {
    if s.is_empty() {
        return arg_err("uniform measure on an empty dataset");
    }
    let w = 1.0 / s.len() as f64;
    Ok(EmpiricalMeasure {
        dataset: s.clone(),
        weights: vec![w; s.len()],
    })
}

/// Moment vector of a measure, indexed by a monomial basis.
#[derive(Debug, Clone)]
pub struct MomentData {
    basis: Arc<MonomialBasis>,
    y: Vec<f64>,
}

impl MomentData {
    pub fn basis(&self) -> &Arc<MonomialBasis> {
        &self.basis
    }

    pub fn values(&self) -> &[f64] {
        &self.y
    }

    pub fn order(&self) -> usize {
        self.basis.degree()
    }

    pub fn get(&self, exponent: &[u32]) -> Option<f64> {
        self.basis.index_of(exponent).map(|i| self.y[i])
    }

    fn check_order(&self, needed: usize) -> Result<()> {
        if self.order() < needed {
            return arg_err(format!(
                "moments known to degree {}, need degree {needed}",
                self.order()
            ));
        }
        Ok(())
    }

    /// Index in `self.basis` of `a + b + c` for indices into prefixes of it.
    fn index_table(&self, rows: usize, shifts: &MonomialBasis) -> Vec<usize> {
        let n = self.basis.nvars();
        let mut table = Vec::with_capacity(rows * rows * shifts.len());
        let mut sum = vec![0u32; n];
        for g in shifts.iter() {
            for a in 0..rows {
                let ea = self.basis.exponent(a);
                for b in 0..rows {
                    let eb = self.basis.exponent(b);
                    for k in 0..n {
                        sum[k] = ea[k] + eb[k] + g[k];
                    }
                    table.push(self.basis.index_of(&sum).expect("moment degree checked"));
                }
            }
        }
        table
    }
}

/// Moments `y_α = Σ μ_x x^α` for every `|α| ≤ order`.
pub fn moment_vector(m: &EmpiricalMeasure, order: usize) -> Result<MomentData> {
    let basis = Arc::new(MonomialBasis::new(m.dim(), order)?);
    let y = accumulate(&basis, m.dataset(), m.weights(), 0, m.weights().len());
    Ok(MomentData { basis, y })
}

// Fixed-shape pairwise tree over the atoms, so results do not depend on the
// number of worker threads.
fn accumulate(
    basis: &MonomialBasis,
    data: &Dataset,
    weights: &[f64],
    lo: usize,
    hi: usize,
) -> Vec<f64> {
    let len = basis.len();
    if hi - lo <= SUM_LEAF {
        let mut acc = vec![0.0; len];
        let mut mono = vec![0.0; len];
        for (i, &w) in weights.iter().enumerate().take(hi).skip(lo) {
            if w == 0.0 {
                continue;
            }
            basis.eval_monomials(data.point(i), &mut mono);
            for (a, m) in acc.iter_mut().zip(&mono) {
                *a += w * m;
            }
        }
        return acc;
    }
    let mid = lo + (hi - lo) / 2;
    let (mut left, right) = rayon::join(
        || accumulate(basis, data, weights, lo, mid),
        || accumulate(basis, data, weights, mid, hi),
    );
    for (l, r) in left.iter_mut().zip(&right) {
        *l += r;
    }
    left
}

/// Order-`r` moment matrix `M_r(y)`, entries `y_{α+β}`.
pub fn moment_matrix(md: &MomentData, r: usize) -> Result<DMatrix<f64>> {
    md.check_order(2 * r)?;
    let zero = MonomialBasis::new(md.basis.nvars(), 0)?;
    let rows = md.basis.prefix_len(r);
    let table = md.index_table(rows, &zero);
    Ok(DMatrix::from_fn(rows, rows, |a, b| {
        md.y[table[a * rows + b]]
    }))
}

/// Localizing matrix `M_r(θ y)`, entries `Σ_γ θ_γ y_{α+β+γ}`.
pub fn localizing_matrix(md: &MomentData, theta: &Polynomial, r: usize) -> Result<DMatrix<f64>> {
    if theta.nvars() != md.basis.nvars() {
        return arg_err("polynomial and moments have different dimensions");
    }
    md.check_order(2 * r + theta.degree())?;
    let rows = md.basis.prefix_len(r);
    let n = md.basis.nvars();
    let mut out = DMatrix::zeros(rows, rows);
    let mut sum = vec![0u32; n];
    for (g, &tg) in theta.basis().iter().zip(theta.coeffs()) {
        if tg == 0.0 {
            continue;
        }
        for a in 0..rows {
            let ea = md.basis.exponent(a);
            for b in a..rows {
                let eb = md.basis.exponent(b);
                for k in 0..n {
                    sum[k] = ea[k] + eb[k] + g[k];
                }
                let idx = md.basis.index_of(&sum).expect("moment degree checked");
                out[(a, b)] += tg * md.y[idx];
            }
        }
    }
    for a in 0..rows {
        for b in 0..a {
            out[(a, b)] = out[(b, a)];
        }
    }
    Ok(out)
}

/// The family `{M_r^γ(y)}` over a coefficient basis, so that
/// `M_r(θ y) = Σ_γ θ_γ M_r^γ(y)`.
#[derive(Debug, Clone)]
pub struct LocalizingOperator {
    r: usize,
    theta_basis: Arc<MonomialBasis>,
    slices: Vec<DMatrix<f64>>,
}

impl LocalizingOperator {
    pub fn from_moments(
        md: &MomentData,
        r: usize,
        theta_basis: Arc<MonomialBasis>,
    ) -> Result<Self> {
        if theta_basis.nvars() != md.basis.nvars() {
            return arg_err("coefficient basis and moments have different dimensions");
        }
        md.check_order(2 * r + theta_basis.degree())?;
        let rows = md.basis.prefix_len(r);
        let table = md.index_table(rows, &theta_basis);
        let block = rows * rows;
        let slices = (0..theta_basis.len())
            .map(|g| DMatrix::from_fn(rows, rows, |a, b| md.y[table[g * block + a * rows + b]]))
            .collect();
        Ok(Self {
            r,
            theta_basis,
            slices,
        })
    }

    pub fn order(&self) -> usize {
        self.r
    }

    /// Side length of each slice, `binomial(n + r, r)`.
    pub fn size(&self) -> usize {
        self.slices.first().map_or(0, |s| s.nrows())
    }

    pub fn theta_basis(&self) -> &Arc<MonomialBasis> {
        &self.theta_basis
    }

    /// `M_r^γ(y)` for the `g`-th monomial of the coefficient basis.
    pub fn slice(&self, g: usize) -> &DMatrix<f64> {
        &self.slices[g]
    }

    pub fn slices(&self) -> &[DMatrix<f64>] {
        &self.slices
    }

    /// `Σ_γ θ_γ M_r^γ(y)`.
    pub fn apply(&self, coeffs: &[f64]) -> Result<DMatrix<f64>> {
        if coeffs.len() != self.slices.len() {
            return arg_err(format!(
                "expected {} coefficients, got {}",
                self.slices.len(),
                coeffs.len()
            ));
        }
        let s = self.size();
        let mut out = DMatrix::zeros(s, s);
        for (c, m) in coeffs.iter().zip(&self.slices) {
            if *c != 0.0 {
                out += m * *c;
            }
        }
        Ok(out)
    }
}

/// Materializes `{M_r^γ(y)}_γ` for `m`, computing the moments it needs.
pub fn localizing_operator(
    m: &EmpiricalMeasure,
    r: usize,
    theta_basis: Arc<MonomialBasis>,
) -> Result<LocalizingOperator> {
    let md = moment_vector(m, 2 * r + theta_basis.degree())?;
    LocalizingOperator::from_moments(&md, r, theta_basis)
}
