use nalgebra::{DMatrix, DVector};

use crate::error::{arg_err, Result};
use crate::linalg;

/// Symmetric matrix `A0 + Σ_k θ_k A_k`, with the `A_k` stored sparsely by variable.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineLmiBlock {
    a0: DMatrix<f64>,
    terms: Vec<(usize, DMatrix<f64>)>,
}

fn check_symmetric(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if !m.is_square() {
        return arg_err(format!("{what} is not square"));
    }
    let scale = m.amax().max(1.0);
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * scale {
                return arg_err(format!("{what} is not symmetric"));
            }
        }
    }
    if m.iter().any(|v| !v.is_finite()) {
        return arg_err(format!("{what} has non-finite entries"));
    }
    Ok(())
}

impl AffineLmiBlock {
    pub fn new(a0: DMatrix<f64>) -> Result<Self> {
        check_symmetric(&a0, "constant term")?;
        let mut a0 = a0;
        linalg::symmetrize(&mut a0);
        Ok(Self {
            a0,
            terms: Vec::new(),
        })
    }

    pub fn zeros(size: usize) -> Self {
        Self {
            a0: DMatrix::zeros(size, size),
            terms: Vec::new(),
        }
    }

    /// Adds `θ_k A` to the block, merging with an existing term for `k`.
    pub fn add_term(&mut self, k: usize, a: DMatrix<f64>) -> Result<()> {
        if a.shape() != self.a0.shape() {
            return arg_err(format!(
                "term for variable {k} has shape {:?}, block is {}x{}",
                a.shape(),
                self.size(),
                self.size()
            ));
        }
        check_symmetric(&a, "coefficient matrix")?;
        let mut a = a;
        linalg::symmetrize(&mut a);
        match self.terms.binary_search_by_key(&k, |(j, _)| *j) {
            Ok(pos) => self.terms[pos].1 += a,
            Err(pos) => self.terms.insert(pos, (k, a)),
        }
        Ok(())
    }

    pub fn with_term(mut self, k: usize, a: DMatrix<f64>) -> Result<Self> {
        self.add_term(k, a)?;
        Ok(self)
    }

    pub fn size(&self) -> usize {
        self.a0.nrows()
    }

    pub fn constant(&self) -> &DMatrix<f64> {
        &self.a0
    }

    /// Nonzero coefficient matrices, sorted by variable index.
    pub fn terms(&self) -> &[(usize, DMatrix<f64>)] {
        &self.terms
    }

    pub fn coefficient(&self, k: usize) -> Option<&DMatrix<f64>> {
        self.terms
            .binary_search_by_key(&k, |(j, _)| *j)
            .ok()
            .map(|pos| &self.terms[pos].1)
    }

    pub fn eval(&self, theta: &[f64]) -> DMatrix<f64> {
        let mut m = self.a0.clone();
        for (k, a) in &self.terms {
            if theta[*k] != 0.0 {
                m += a * theta[*k];
            }
        }
        m
    }

    /// Gradient of `−logdet B(θ)`, as the barrier computes it, with respect to
    /// every entry of `theta`; `None` unless `B(θ) ≻ 0`.
    pub fn neg_logdet_gradient(&self, theta: &[f64]) -> Option<Vec<f64>> {
        if self.max_var().is_some_and(|k| k >= theta.len()) {
            return None;
        }
        let x = DVector::from_column_slice(theta);
        super::barrier::block_derivs(self, &x, 1.0, theta.len()).map(|d| d.g.as_slice().to_vec())
    }

    pub(crate) fn max_var(&self) -> Option<usize> {
        self.terms.last().map(|(k, _)| *k)
    }

    pub(crate) fn scale(&mut self, s: f64) {
        self.a0 *= s;
        for (_, a) in &mut self.terms {
            *a *= s;
        }
    }

    pub(crate) fn from_parts(a0: DMatrix<f64>, terms: Vec<(usize, DMatrix<f64>)>) -> Self {
        Self { a0, terms }
    }
}

/// The `logdet` term of the objective.
#[derive(Debug, Clone, PartialEq)]
pub struct DetTerm {
    pub block: AffineLmiBlock,
    pub weight: f64,
}

/// `minimize c'θ − w·logdet G(θ)` subject to affine LMIs, linear inequalities
/// `a'θ + b ≥ 0` and optional elementwise bounds.
///
/// Blocks of size 1 passed to [`add_block`](Self::add_block) are stored as
/// linear inequalities.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxDetProblem {
    nvars: usize,
    cost: Vec<f64>,
    det: Option<DetTerm>,
    blocks: Vec<AffineLmiBlock>,
    row_coeffs: Vec<f64>,
    row_offsets: Vec<f64>,
    bounds: Option<Vec<(f64, f64)>>,
}

impl MaxDetProblem {
    pub fn new(nvars: usize) -> Self {
        Self {
            nvars,
            cost: vec![0.0; nvars],
            det: None,
            blocks: Vec::new(),
            row_coeffs: Vec::new(),
            row_offsets: Vec::new(),
            bounds: None,
        }
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn set_cost(&mut self, cost: Vec<f64>) -> Result<()> {
        if cost.len() != self.nvars {
            return arg_err(format!(
                "cost has length {}, expected {}",
                cost.len(),
                self.nvars
            ));
        }
        self.cost = cost;
        Ok(())
    }

    pub fn cost(&self) -> &[f64] {
        &self.cost
    }

    pub fn set_det(&mut self, block: AffineLmiBlock, weight: f64) -> Result<()> {
        if weight <= 0.0 || !weight.is_finite() {
            return arg_err("logdet weight must be positive");
        }
        self.check_vars(&block)?;
        self.det = Some(DetTerm { block, weight });
        Ok(())
    }

    pub fn det(&self) -> Option<&DetTerm> {
        self.det.as_ref()
    }

    fn check_vars(&self, block: &AffineLmiBlock) -> Result<()> {
        if let Some(k) = block.max_var() {
            if k >= self.nvars {
                return arg_err(format!("block references variable {k} of {}", self.nvars));
            }
        }
        Ok(())
    }

    pub fn add_block(&mut self, block: AffineLmiBlock) -> Result<()> {
        self.check_vars(&block)?;
        if block.size() == 1 {
            let mut a = vec![0.0; self.nvars];
            for (k, m) in block.terms() {
                a[*k] = m[(0, 0)];
            }
            return self.add_linear(&a, block.constant()[(0, 0)]);
        }
        self.blocks.push(block);
        Ok(())
    }

    pub fn blocks(&self) -> &[AffineLmiBlock] {
        &self.blocks
    }

    /// Adds the constraint `a'θ + b ≥ 0`.
    pub fn add_linear(&mut self, a: &[f64], b: f64) -> Result<()> {
        if a.len() != self.nvars {
            return arg_err(format!(
                "row has length {}, expected {}",
                a.len(),
                self.nvars
            ));
        }
        if !b.is_finite() || a.iter().any(|v| !v.is_finite()) {
            return arg_err("linear constraint has non-finite entries");
        }
        self.row_coeffs.extend_from_slice(a);
        self.row_offsets.push(b);
        Ok(())
    }

    pub fn num_linear(&self) -> usize {
        self.row_offsets.len()
    }

    pub fn linear(&self, i: usize) -> (&[f64], f64) {
        let n = self.nvars;
        (&self.row_coeffs[i * n..(i + 1) * n], self.row_offsets[i])
    }

    /// Elementwise bounds `lo ≤ θ_k ≤ hi`; infinite values mean unbounded.
    pub fn set_bounds(&mut self, bounds: Vec<(f64, f64)>) -> Result<()> {
        if bounds.len() != self.nvars {
            return arg_err("one bound pair per variable required");
        }
        if bounds
            .iter()
            .any(|(lo, hi)| lo > hi || lo.is_nan() || hi.is_nan())
        {
            return arg_err("bounds must satisfy lo ≤ hi");
        }
        self.bounds = Some(bounds);
        Ok(())
    }

    pub fn bounds(&self) -> Option<&[(f64, f64)]> {
        self.bounds.as_deref()
    }

    /// `c'θ − w·logdet G(θ)`; `+∞` outside the domain of the logdet.
    pub fn objective(&self, theta: &[f64]) -> f64 {
        let lin: f64 = self.cost.iter().zip(theta).map(|(c, x)| c * x).sum();
        match &self.det {
            None => lin,
            Some(d) => match linalg::logdet_pd(&d.block.eval(theta)) {
                Some(ld) => lin - d.weight * ld,
                None => f64::INFINITY,
            },
        }
    }

    /// Smallest eigenvalue over LMI blocks, linear rows and bounds at `theta`.
    pub fn margin(&self, theta: &[f64]) -> f64 {
        let mut m = f64::INFINITY;
        for b in &self.blocks {
            m = m.min(linalg::min_eigenvalue(&b.eval(theta)));
        }
        for i in 0..self.num_linear() {
            let (a, b) = self.linear(i);
            m = m.min(dot(a, theta) + b);
        }
        if let Some(bounds) = &self.bounds {
            for ((lo, hi), x) in bounds.iter().zip(theta) {
                m = m.min(x - lo).min(hi - x);
            }
        }
        m
    }

    /// Per-block minimum eigenvalues at `theta`, in insertion order.
    pub fn block_margins(&self, theta: &[f64]) -> Vec<f64> {
        self.blocks
            .iter()
            .map(|b| linalg::min_eigenvalue(&b.eval(theta)))
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        self.det.is_none()
            && self.blocks.is_empty()
            && self.row_offsets.is_empty()
            && self.bounds.as_ref().is_none_or(|b| {
                b.iter()
                    .all(|(lo, hi)| lo.is_infinite() && hi.is_infinite())
            })
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
