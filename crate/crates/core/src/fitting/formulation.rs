//! Problem builders: per-point and moment formulations of covering and
//! separation, the feasibility problem and the ℓ1 linear program.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{basis_len, FormVariant, MonomialBasis, Polynomial, QuadraticForm};
use crate::error::{arg_err, Error, Result};
use crate::linalg;
use crate::moments::{
    localizing_operator, moment_matrix, moment_vector, uniform_measure, Dataset, EmpiricalMeasure,
};
use crate::solver::{self, AffineLmiBlock, MaxDetProblem, Settings, Solution};

/// Box on every variable of the feasibility problem, so that its optimum is
/// finite when the second class is empty.
pub const FEASIBILITY_BOX: f64 = 1e3;

/// Degree and parameterization of a quadratic-form polynomial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormSpec {
    pub degree: usize,
    #[serde(default)]
    pub variant: FormVariant,
}

impl FormSpec {
    pub fn new(degree: usize) -> Result<Self> {
        Self::with_variant(degree, FormVariant::Homogeneous)
    }

    pub fn with_variant(degree: usize, variant: FormVariant) -> Result<Self> {
        if degree == 0 || !degree.is_multiple_of(2) {
            return arg_err(format!(
                "degree {degree} is not supported by the logdet objective; use an even degree ≥ 2"
            ));
        }
        Ok(Self { degree, variant })
    }

    pub fn half_degree(&self) -> usize {
        self.degree / 2
    }
}

/// How the sign constraints on the data enter the problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// One linear inequality per point.
    PerPoint,
    /// One localizing-matrix LMI of order `r` per class, uniform measures.
    Moment { r: usize },
}

/// Optimality criterion of a relaxation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    /// `logdet Q^{-1}` of a quadratic-form polynomial.
    MaxDet(FormSpec),
    /// ℓ1 norm of the coefficients of a degree-`d` polynomial.
    L1 { degree: usize },
}

/// Affine map from decision variables to the coefficients of θ.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaLayout {
    basis: Arc<MonomialBasis>,
    columns: Vec<Vec<(usize, f64)>>,
    constant: Vec<(usize, f64)>,
    form: Option<(FormSpec, usize)>,
}

impl ThetaLayout {
    /// Layout of `(Q upper triangle, b, c)` (homogeneous) or `Q upper triangle`
    /// (full, with constant 1).
    pub fn quadratic(n: usize, spec: FormSpec) -> Result<Self> {
        let r = spec.half_degree();
        let basis = Arc::new(MonomialBasis::new(n, spec.degree)?);
        let lift = MonomialBasis::new(n, r)?;
        let p = QuadraticForm::block_len(n, r, spec.variant);
        let off = match spec.variant {
            FormVariant::Homogeneous => lift.degree_range(r).start,
            FormVariant::Full => 0,
        };
        let mut columns = Vec::new();
        let mut sum = vec![0u32; n];
        for i in 0..p {
            for j in i..p {
                let (ei, ej) = (lift.exponent(off + i), lift.exponent(off + j));
                for k in 0..n {
                    sum[k] = ei[k] + ej[k];
                }
                let idx = basis.index_of(&sum).expect("product monomial in basis");
                columns.push(vec![(idx, if i == j { -1.0 } else { -2.0 })]);
            }
        }
        let constant = match spec.variant {
            FormVariant::Homogeneous => {
                for i in 0..p {
                    let idx = basis
                        .index_of(lift.exponent(off + i))
                        .expect("monomial in basis");
                    columns.push(vec![(idx, 1.0)]);
                }
                columns.push(vec![(0, 1.0)]);
                Vec::new()
            }
            FormVariant::Full => vec![(0, 1.0)],
        };
        Ok(Self {
            basis,
            columns,
            constant,
            form: Some((spec, p)),
        })
    }

    /// Layout `θ = θ⁺ − θ⁻` over all monomials of degree `≤ d`.
    pub fn split(n: usize, degree: usize) -> Result<Self> {
        let basis = Arc::new(MonomialBasis::new(n, degree)?);
        let len = basis.len();
        let mut columns: Vec<Vec<(usize, f64)>> = (0..len).map(|i| vec![(i, 1.0)]).collect();
        columns.extend((0..len).map(|i| vec![(i, -1.0)]));
        Ok(Self {
            basis,
            columns,
            constant: Vec::new(),
            form: None,
        })
    }

    pub fn basis(&self) -> &Arc<MonomialBasis> {
        &self.basis
    }

    pub fn nvars(&self) -> usize {
        self.basis.nvars()
    }

    /// Number of decision variables that parameterize θ.
    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    /// Size of `Q` for quadratic-form layouts.
    pub fn q_len(&self) -> Option<usize> {
        self.form.map(|(_, p)| p)
    }

    pub fn coeffs(&self, vars: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; self.basis.len()];
        for &(i, v) in &self.constant {
            c[i] += v;
        }
        for (col, &x) in self.columns.iter().zip(vars) {
            for &(i, m) in col {
                c[i] += m * x;
            }
        }
        c
    }

    pub fn polynomial(&self, vars: &[f64]) -> Polynomial {
        Polynomial::new(self.basis.clone(), self.coeffs(vars)).expect("layout matches basis")
    }

    /// `θ(x) = a'v + b` in terms of the monomial values at `x`.
    pub fn row(&self, monomials: &[f64]) -> (Vec<f64>, f64) {
        let a = self
            .columns
            .iter()
            .map(|col| col.iter().map(|&(i, m)| m * monomials[i]).sum())
            .collect();
        let b = self.constant.iter().map(|&(i, v)| v * monomials[i]).sum();
        (a, b)
    }

    /// Decodes `(Q, b, c)` for quadratic-form layouts.
    pub fn form(&self, vars: &[f64]) -> Option<QuadraticForm> {
        let (spec, p) = self.form?;
        let mut q = DMatrix::zeros(p, p);
        let mut k = 0;
        for i in 0..p {
            for j in i..p {
                q[(i, j)] = vars[k];
                k += 1;
            }
        }
        let (b, c) = match spec.variant {
            FormVariant::Homogeneous => (
                Some(DVector::from_column_slice(&vars[k..k + p])),
                vars[k + p],
            ),
            FormVariant::Full => (None, 1.0),
        };
        QuadraticForm::from_upper(self.nvars(), spec.half_degree(), spec.variant, &q, b, c).ok()
    }

    /// Variable indices of the upper triangle of `Q`, row-major.
    fn q_vars(p: usize) -> impl Iterator<Item = (usize, usize, usize)> {
        (0..p)
            .flat_map(move |i| (i..p).map(move |j| (i, j)))
            .enumerate()
            .map(|(k, (i, j))| (k, i, j))
    }

    /// Block `A0 + Σ_k v_k A_k` equal to `Σ_γ θ_γ M^γ` for matrices indexed by
    /// the monomials of the layout basis.
    fn localizing_block(&self, slices: &[DMatrix<f64>], sign: f64) -> Result<AffineLmiBlock> {
        let m = slices[0].nrows();
        let mut a0 = DMatrix::zeros(m, m);
        for &(i, v) in &self.constant {
            a0 += &slices[i] * (sign * v);
        }
        let mut block = AffineLmiBlock::new(a0)?;
        for (k, col) in self.columns.iter().enumerate() {
            let mut a = DMatrix::zeros(m, m);
            for &(i, mult) in col {
                a += &slices[i] * (sign * mult);
            }
            if a.iter().any(|v| *v != 0.0) {
                block.add_term(k, a)?;
            }
        }
        Ok(block)
    }
}

/// A built problem plus the map from its variables back to θ.
#[derive(Debug, Clone, PartialEq)]
pub struct Formulation {
    pub problem: MaxDetProblem,
    pub layout: ThetaLayout,
    /// Index of the slack variable of the feasibility problem.
    pub slack: Option<usize>,
}

impl Formulation {
    pub fn solve(&self, settings: &Settings) -> Result<Solution> {
        solver::solve(&self.problem, settings)
    }

    pub fn polynomial(&self, vars: &[f64]) -> Polynomial {
        self.layout.polynomial(&vars[..self.layout.len()])
    }

    pub fn form(&self, vars: &[f64]) -> Option<QuadraticForm> {
        self.layout.form(&vars[..self.layout.len()])
    }
}

fn check_dims(s1: &Dataset, s2: &Dataset) -> Result<usize> {
    if s1.is_empty() {
        return arg_err("the first class must be non-empty");
    }
    if !s2.is_empty() && s1.dim() != s2.dim() {
        return arg_err(format!(
            "classes have dimensions {} and {}",
            s1.dim(),
            s2.dim()
        ));
    }
    Ok(s1.dim())
}

fn check_span(s: &Dataset) -> Result<()> {
    let rank = s.affine_rank();
    if rank < s.dim() {
        return Err(Error::DegenerateData(format!(
            "the affine hull of the {} points has dimension {rank}, below {}",
            s.len(),
            s.dim()
        )));
    }
    Ok(())
}

/// `logdet Q^{-1}` objective plus, for the homogeneous variant, the block
/// `[[Q, b/2], [b'/2, 1 − c]] ⪰ 0`. The logdet domain keeps `Q ≻ 0`.
fn add_form_structure(problem: &mut MaxDetProblem, p: usize, variant: FormVariant) -> Result<()> {
    let mut g = AffineLmiBlock::zeros(p);
    for (k, i, j) in ThetaLayout::q_vars(p) {
        g.add_term(k, sym_unit(p, i, j))?;
    }
    problem.set_det(g, 1.0)?;
    if variant == FormVariant::Homogeneous {
        problem.add_block(schur_block(p)?)?;
    }
    Ok(())
}

fn schur_block(p: usize) -> Result<AffineLmiBlock> {
    let mut a0 = DMatrix::zeros(p + 1, p + 1);
    a0[(p, p)] = 1.0;
    let mut blk = AffineLmiBlock::new(a0)?;
    let nq = p * (p + 1) / 2;
    for (k, i, j) in ThetaLayout::q_vars(p) {
        blk.add_term(k, sym_unit(p + 1, i, j))?;
    }
    for i in 0..p {
        let mut e = DMatrix::zeros(p + 1, p + 1);
        e[(i, p)] = 0.5;
        e[(p, i)] = 0.5;
        blk.add_term(nq + i, e)?;
    }
    let mut e = DMatrix::zeros(p + 1, p + 1);
    e[(p, p)] = -1.0;
    blk.add_term(nq + p, e)?;
    Ok(blk)
}

fn sym_unit(m: usize, i: usize, j: usize) -> DMatrix<f64> {
    let mut e = DMatrix::zeros(m, m);
    e[(i, j)] = 1.0;
    e[(j, i)] = 1.0;
    e
}

/// Rows `sign·θ(x) + shift ≥ 0` for every point, with `extra` trailing
/// variables whose coefficients are given.
fn point_rows(
    layout: &ThetaLayout,
    s: &Dataset,
    sign: f64,
    extra: &[f64],
    nvars: usize,
) -> Vec<(Vec<f64>, f64)> {
    let basis = layout.basis();
    (0..s.len())
        .into_par_iter()
        .map(|i| {
            let mut mono = vec![0.0; basis.len()];
            basis.eval_monomials(s.point(i), &mut mono);
            let (a, b) = layout.row(&mono);
            let mut row = Vec::with_capacity(nvars);
            row.extend(a.iter().map(|v| sign * v));
            row.extend_from_slice(extra);
            (row, sign * b)
        })
        .collect()
}

fn add_rows(problem: &mut MaxDetProblem, rows: Vec<(Vec<f64>, f64)>) -> Result<()> {
    for (a, b) in rows {
        problem.add_linear(&a, b)?;
    }
    Ok(())
}

fn quadratic_problem(layout: &ThetaLayout, spec: FormSpec) -> Result<MaxDetProblem> {
    let mut problem = MaxDetProblem::new(layout.len());
    add_form_structure(
        &mut problem,
        layout.q_len().expect("quadratic layout"),
        spec.variant,
    )?;
    Ok(problem)
}

/// Minimum-volume covering set of `s`: `min logdet Q^{-1}` with θ ≥ 0 on `s`.
pub fn build_mvce_problem(s: &Dataset, spec: FormSpec, mode: Mode) -> Result<Formulation> {
    check_span(s)?;
    build_separation_problem(s, &Dataset::empty(s.dim()), spec, mode)
}

/// Separation with θ ≥ 0 on `s1` and θ ≤ 0 on `s2`. With `s2` empty this is
/// the covering problem.
pub fn build_separation_problem(
    s1: &Dataset,
    s2: &Dataset,
    spec: FormSpec,
    mode: Mode,
) -> Result<Formulation> {
    let n = check_dims(s1, s2)?;
    if s2.is_empty() {
        check_span(s1)?;
    }
    match mode {
        Mode::PerPoint => {
            let layout = ThetaLayout::quadratic(n, spec)?;
            let mut problem = quadratic_problem(&layout, spec)?;
            let nv = layout.len();
            add_rows(&mut problem, point_rows(&layout, s1, 1.0, &[], nv))?;
            add_rows(&mut problem, point_rows(&layout, s2, -1.0, &[], nv))?;
            Ok(Formulation {
                problem,
                layout,
                slack: None,
            })
        }
        Mode::Moment { r } => {
            let m1 = uniform_measure(&Arc::new(s1.clone()))?;
            let m2 = if s2.is_empty() {
                None
            } else {
                Some(uniform_measure(&Arc::new(s2.clone()))?)
            };
            build_moment_relaxation(&m1, m2.as_ref(), r, Objective::MaxDet(spec))
        }
    }
}

/// Moment relaxation: `M_r(θ y¹) ⪰ 0` and `M_r(−θ y²) ⪰ 0` with the given objective.
pub fn build_moment_relaxation(
    m1: &EmpiricalMeasure,
    m2: Option<&EmpiricalMeasure>,
    r: usize,
    objective: Objective,
) -> Result<Formulation> {
    let n = m1.dim();
    if let Some(m2) = m2 {
        if m2.dim() != n {
            return arg_err("measures have different dimensions");
        }
    }
    let (layout, mut problem) = match objective {
        Objective::MaxDet(spec) => {
            let layout = ThetaLayout::quadratic(n, spec)?;
            let problem = quadratic_problem(&layout, spec)?;
            (layout, problem)
        }
        Objective::L1 { degree } => {
            let layout = ThetaLayout::split(n, degree)?;
            let mut problem = MaxDetProblem::new(layout.len());
            problem.set_cost(vec![1.0; layout.len()])?;
            problem.set_bounds(vec![(0.0, f64::INFINITY); layout.len()])?;
            let centroid = m1.dataset().mean();
            let mut mono = vec![0.0; layout.basis().len()];
            layout.basis().eval_monomials(&centroid, &mut mono);
            let (a, b) = layout.row(&mono);
            problem.add_linear(&a, b - 1.0)?;
            (layout, problem)
        }
    };
    for (m, sign) in std::iter::once((m1, 1.0)).chain(m2.map(|m| (m, -1.0))) {
        let op = localizing_operator(m, r, layout.basis().clone())?;
        let block = layout.localizing_block(op.slices(), sign)?;
        problem.add_block(whiten(block, m, r)?)?;
    }
    Ok(Formulation {
        problem,
        layout,
        slack: None,
    })
}

/// Eigenvalues of `M_r(y)` below this fraction of the largest count as zero
/// when whitening. Looser cuts drop directions that still carry constraint
/// information on supports lying close to a common level set.
const WHITEN_REL_TOL: f64 = 1e-10;

/// Congruence by `M_r(y)^{-1/2}` restricted to the numerical range of `M_r(y)`.
/// For f vanishing on the support, `f'M_r(θy)f = 0` for every θ, so dropping
/// those directions keeps the feasible set; left in, roundoff decides their
/// sign. Clustered supports also make `M_r(y)` nearly singular, and without
/// the scaling every interior margin shrinks with it. Full-rank blocks keep
/// their size.
///
/// The range is decided on the Jacobi-scaled matrix `D^{-1/2} M D^{-1/2}`:
/// monomials of a small off-centre cluster differ in scale by orders of
/// magnitude, which alone pushes raw eigenvalues below any relative cut.
fn whiten(block: AffineLmiBlock, m: &EmpiricalMeasure, r: usize) -> Result<AffineLmiBlock> {
    let mm = moment_matrix(&moment_vector(m, 2 * r)?, r)?;
    let p = mm.nrows();
    let d: Vec<f64> = (0..p)
        .map(|i| {
            if mm[(i, i)] > 0.0 {
                1.0 / mm[(i, i)].sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let scaled = DMatrix::from_fn(p, p, |i, j| mm[(i, j)] * d[i] * d[j]);
    let eig = scaled.symmetric_eigen();
    let top = eig.eigenvalues.max();
    if top.is_nan() || top <= 0.0 {
        return Ok(block);
    }
    let floor = WHITEN_REL_TOL * top;
    let keep: Vec<usize> = (0..p).filter(|&i| eig.eigenvalues[i] > floor).collect();
    let mut t = DMatrix::zeros(p, keep.len());
    for (j, &i) in keep.iter().enumerate() {
        let col = eig.eigenvectors.column(i) / eig.eigenvalues[i].sqrt();
        for k in 0..p {
            t[(k, j)] = d[k] * col[k];
        }
    }
    let apply = |a: &DMatrix<f64>| {
        let mut out = t.transpose() * a * &t;
        linalg::symmetrize(&mut out);
        out
    };
    let terms = block.terms().iter().map(|(k, a)| (*k, apply(a))).collect();
    Ok(AffineLmiBlock::from_parts(apply(block.constant()), terms))
}

/// Feasibility problem: `min d` s.t. θ ≥ 0 on `s1`, θ ≤ d on `s2` and
/// `[[Q, b/2], [b'/2, 1 − c]] ⪰ 0`. Every variable is boxed by
/// [`FEASIBILITY_BOX`].
pub fn build_feasibility_problem(
    s1: &Dataset,
    s2: &Dataset,
    spec: FormSpec,
) -> Result<Formulation> {
    let n = check_dims(s1, s2)?;
    let spec = FormSpec::with_variant(spec.degree, FormVariant::Homogeneous)?;
    let layout = ThetaLayout::quadratic(n, spec)?;
    let nv = layout.len() + 1;
    let slack = nv - 1;
    let mut problem = MaxDetProblem::new(nv);
    let mut cost = vec![0.0; nv];
    cost[slack] = 1.0;
    problem.set_cost(cost)?;
    problem.add_block(schur_block(layout.q_len().expect("quadratic layout"))?)?;
    add_rows(&mut problem, point_rows(&layout, s1, 1.0, &[0.0], nv))?;
    add_rows(&mut problem, point_rows(&layout, s2, -1.0, &[1.0], nv))?;
    problem.set_bounds(vec![(-FEASIBILITY_BOX, FEASIBILITY_BOX); nv])?;
    Ok(Formulation {
        problem,
        layout,
        slack: Some(slack),
    })
}

/// ℓ1 linear program: `min Σ (θ⁺ + θ⁻)` with θ ≥ 0 on `s1`, θ ≤ 0 on `s2`,
/// `θ± ≥ 0` and the normalization `θ(x̄) ≥ 1` at the centroid `x̄` of `s1`.
pub fn build_l1_lp(s1: &Dataset, s2: &Dataset, degree: usize) -> Result<Formulation> {
    let n = check_dims(s1, s2)?;
    if degree == 0 {
        return arg_err("the ℓ1 program needs degree ≥ 1");
    }
    basis_len(n, degree).ok_or(Error::Size { n, d: degree })?;
    let layout = ThetaLayout::split(n, degree)?;
    let nv = layout.len();
    let mut problem = MaxDetProblem::new(nv);
    problem.set_cost(vec![1.0; nv])?;
    problem.set_bounds(vec![(0.0, f64::INFINITY); nv])?;
    add_rows(&mut problem, point_rows(&layout, s1, 1.0, &[], nv))?;
    add_rows(&mut problem, point_rows(&layout, s2, -1.0, &[], nv))?;
    let centroid = Dataset::new(n, s1.mean())?;
    let mut norm = point_rows(&layout, &centroid, 1.0, &[], nv);
    let (a, b) = norm.pop().expect("one centroid row");
    problem.add_linear(&a, b - 1.0)?;
    Ok(Formulation {
        problem,
        layout,
        slack: None,
    })
}
