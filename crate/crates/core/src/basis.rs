//! Monomial bases, dense polynomials and quadratic-form parameterizations.
//!
//! Monomials are ordered graded-lexicographically: total degree first, then
//! lexicographically with `x1 > x2 > ... > xn` inside a degree. For `n = 2`
//! this gives `1, x1, x2, x1^2, x1 x2, x2^2, x1^3, ...`. Because lower degrees
//! come first, the basis of degree `d` is a prefix of the basis of degree
//! `d + 1`, so moment matrices of order `r` are leading blocks of those of
//! order `r + 1`.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};

/// Upper bound on the number of monomials we are willing to materialize.
const MAX_BASIS_LEN: usize = 1 << 26;

/// `binomial(n + d, d)` with overflow detection.
pub fn basis_len(n: usize, d: usize) -> Option<usize> {
    let mut acc: u128 = 1;
    for i in 1..=d as u128 {
        acc = acc.checked_mul(n as u128 + i)? / i;
    }
    usize::try_from(acc).ok()
}

/// Ordered set of exponent tuples `{γ ∈ N^n : |γ| ≤ d}`.
#[derive(Debug, Clone)]
pub struct MonomialBasis {
    n: usize,
    d: usize,
    exps: Vec<u32>,
    /// Offset of the first monomial of each degree; `degree_start[d + 1] == len`.
    degree_start: Vec<usize>,
    index: HashMap<Vec<u32>, usize>,
}

impl PartialEq for MonomialBasis {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.d == other.d
    }
}

impl Eq for MonomialBasis {}

/// Enumerates all monomials in `n` variables of total degree at most `d`.
pub fn enumerate_monomials(n: usize, d: usize) -> Result<MonomialBasis> {
    MonomialBasis::new(n, d)
}

impl MonomialBasis {
    pub fn new(n: usize, d: usize) -> Result<Self> {
        if n == 0 {
            return arg_err("monomial basis needs at least one variable");
        }
        let len = basis_len(n, d).ok_or(Error::Size { n, d })?;
        if len > MAX_BASIS_LEN || len.checked_mul(n).is_none() {
            return Err(Error::Size { n, d });
        }
        if d > u32::MAX as usize {
            return Err(Error::Size { n, d });
        }

        let mut exps = Vec::with_capacity(len * n);
        let mut degree_start = Vec::with_capacity(d + 2);
        let mut current = vec![0u32; n];
        for k in 0..=d {
            degree_start.push(exps.len() / n);
            push_compositions(&mut exps, &mut current, 0, k as u32);
        }
        degree_start.push(exps.len() / n);
        debug_assert_eq!(exps.len(), len * n);

        let index = exps
            .chunks_exact(n)
            .enumerate()
            .map(|(i, e)| (e.to_vec(), i))
            .collect();
        Ok(Self {
            n,
            d,
            exps,
            degree_start,
            index,
        })
    }

    /// Number of variables.
    pub fn nvars(&self) -> usize {
        self.n
    }

    /// Maximal total degree.
    pub fn degree(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.exps.len() / self.n
    }

    pub fn is_empty(&self) -> bool {
        self.exps.is_empty()
    }

    pub fn exponent(&self, i: usize) -> &[u32] {
        &self.exps[i * self.n..(i + 1) * self.n]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[u32]> + '_ {
        self.exps.chunks_exact(self.n)
    }

    pub fn index_of(&self, exponent: &[u32]) -> Option<usize> {
        self.index.get(exponent).copied()
    }

    /// Index range of the monomials of total degree exactly `k`.
    pub fn degree_range(&self, k: usize) -> std::ops::Range<usize> {
        assert!(k <= self.d, "degree {k} outside basis of degree {}", self.d);
        self.degree_start[k]..self.degree_start[k + 1]
    }

    /// Number of monomials of degree at most `k` (a prefix length).
    pub fn prefix_len(&self, k: usize) -> usize {
        self.degree_start[k.min(self.d) + 1]
    }

    /// Writes `x^γ` for every basis monomial into `out`.
    pub fn eval_monomials(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(out.len(), self.len());
        let stride = self.d + 1;
        let mut powers = vec![1.0; self.n * stride];
        for (j, &xj) in x.iter().enumerate() {
            for k in 1..stride {
                powers[j * stride + k] = powers[j * stride + k - 1] * xj;
            }
        }
        for (o, e) in out.iter_mut().zip(self.exps.chunks_exact(self.n)) {
            let mut v = 1.0;
            for (j, &p) in e.iter().enumerate() {
                if p != 0 {
                    v *= powers[j * stride + p as usize];
                }
            }
            *o = v;
        }
    }
}

// Descending lexicographic compositions of `remaining` into the slots `pos..`.
fn push_compositions(out: &mut Vec<u32>, current: &mut [u32], pos: usize, remaining: u32) {
    let n = current.len();
    if pos == n - 1 {
        current[pos] = remaining;
        out.extend_from_slice(current);
        return;
    }
    for first in (0..=remaining).rev() {
        current[pos] = first;
        push_compositions(out, current, pos + 1, remaining - first);
    }
    current[pos] = 0;
}

/// Dense polynomial over a shared monomial basis.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    basis: Arc<MonomialBasis>,
    coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(basis: Arc<MonomialBasis>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != basis.len() {
            return arg_err(format!(
                "expected {} coefficients, got {}",
                basis.len(),
                coeffs.len()
            ));
        }
        Ok(Self { basis, coeffs })
    }

    pub fn zero(basis: Arc<MonomialBasis>) -> Self {
        let coeffs = vec![0.0; basis.len()];
        Self { basis, coeffs }
    }

    /// Builds a polynomial from `(exponent, coefficient)` terms; repeated
    /// exponents accumulate.
    pub fn from_terms<'a, I>(n: usize, degree: usize, terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a [u32], f64)>,
    {
        let basis = Arc::new(MonomialBasis::new(n, degree)?);
        let mut coeffs = vec![0.0; basis.len()];
        for (e, v) in terms {
            let i = basis.index_of(e).ok_or_else(|| {
                Error::Argument(format!(
                    "monomial {e:?} not in basis (n = {n}, degree {degree})"
                ))
            })?;
            coeffs[i] += v;
        }
        Ok(Self { basis, coeffs })
    }

    pub fn basis(&self) -> &Arc<MonomialBasis> {
        &self.basis
    }

    pub fn nvars(&self) -> usize {
        self.basis.nvars()
    }

    pub fn degree(&self) -> usize {
        self.basis.degree()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeff(&self, exponent: &[u32]) -> f64 {
        self.basis
            .index_of(exponent)
            .map_or(0.0, |i| self.coeffs[i])
    }

    /// `Σ_γ θ_γ x^γ`.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.nvars() {
            return arg_err(format!(
                "point has dimension {}, polynomial has {} variables",
                x.len(),
                self.nvars()
            ));
        }
        Ok(self.eval_unchecked(x))
    }

    pub(crate) fn eval_unchecked(&self, x: &[f64]) -> f64 {
        let mut mono = vec![0.0; self.basis.len()];
        self.basis.eval_monomials(x, &mut mono);
        mono.iter().zip(&self.coeffs).map(|(m, c)| m * c).sum()
    }

    /// Reinterprets the coefficients over a larger basis with the same `n`.
    pub fn lift(&self, degree: usize) -> Result<Self> {
        if degree < self.degree() {
            return arg_err("cannot lift a polynomial to a lower degree");
        }
        let basis = Arc::new(MonomialBasis::new(self.nvars(), degree)?);
        let mut coeffs = vec![0.0; basis.len()];
        coeffs[..self.coeffs.len()].copy_from_slice(&self.coeffs);
        Ok(Self { basis, coeffs })
    }

    pub fn scale(&self, a: f64) -> Self {
        Self {
            basis: self.basis.clone(),
            coeffs: self.coeffs.iter().map(|c| a * c).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if *self.basis != *other.basis {
            return arg_err("polynomials live on different bases");
        }
        Ok(Self {
            basis: self.basis.clone(),
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    pub fn neg(&self) -> Self {
        self.scale(-1.0)
    }

    pub fn to_json(&self) -> PolynomialJson {
        PolynomialJson {
            n: self.nvars(),
            degree: self.degree(),
            coeffs: self
                .basis
                .iter()
                .zip(&self.coeffs)
                .filter(|(_, &v)| v != 0.0)
                .map(|(e, &value)| Term {
                    exponents: e.to_vec(),
                    value,
                })
                .collect(),
        }
    }

    pub fn from_json(json: &PolynomialJson) -> Result<Self> {
        for t in &json.coeffs {
            if t.exponents.len() != json.n {
                return arg_err(format!(
                    "term {:?} has {} exponents, expected {}",
                    t.exponents,
                    t.exponents.len(),
                    json.n
                ));
            }
        }
        Self::from_terms(
            json.n,
            json.degree,
            json.coeffs
                .iter()
                .map(|t| (t.exponents.as_slice(), t.value)),
        )
    }
}

/// One nonzero term of the polynomial JSON form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub exponents: Vec<u32>,
    pub value: f64,
}

/// `{"n": .., "degree": .., "coeffs": [{"exponents": [..], "value": ..}]}`;
/// omitted monomials are zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolynomialJson {
    pub n: usize,
    pub degree: usize,
    pub coeffs: Vec<Term>,
}

impl Serialize for Polynomial {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_json().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Polynomial {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let json = PolynomialJson::deserialize(d)?;
        Polynomial::from_json(&json).map_err(serde::de::Error::custom)
    }
}

/// Which monomial vector a [`QuadraticForm`] is built on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FormVariant {
    /// `θ(x) = -v_r(x)' Q v_r(x) + b' v_r(x) + c`, `v_r` the degree-`r` monomials.
    #[default]
    Homogeneous,
    /// `θ(x) = c - w_r(x)' Q w_r(x)`, `w_r` all monomials of degree `≤ r`.
    Full,
}

/// Number of monomials of degree exactly `r` in `n` variables.
pub fn homogeneous_len(n: usize, r: usize) -> usize {
    // binomial(n + r - 1, r)
    if r == 0 {
        return 1;
    }
    basis_len(n - 1, r).expect("small basis")
}

/// Symmetric quadratic form in a monomial vector, plus affine part.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticForm {
    n: usize,
    r: usize,
    variant: FormVariant,
    q: DMatrix<f64>,
    b: Option<DVector<f64>>,
    c: f64,
}

impl QuadraticForm {
    /// Size of `Q` for the given variant.
    pub fn block_len(n: usize, r: usize, variant: FormVariant) -> usize {
        match variant {
            FormVariant::Homogeneous => homogeneous_len(n, r),
            FormVariant::Full => basis_len(n, r).expect("small basis"),
        }
    }

    /// Builds a form; `q` must be exactly symmetric.
    pub fn new(
        n: usize,
        r: usize,
        variant: FormVariant,
        q: DMatrix<f64>,
        b: Option<DVector<f64>>,
        c: f64,
    ) -> Result<Self> {
        if n == 0 || r == 0 {
            return arg_err("quadratic form needs n ≥ 1 and r ≥ 1");
        }
        let m = Self::block_len(n, r, variant);
        if q.nrows() != m || q.ncols() != m {
            return arg_err(format!(
                "Q must be {m}x{m}, got {}x{}",
                q.nrows(),
                q.ncols()
            ));
        }
        if q != q.transpose() {
            return arg_err("Q must be symmetric");
        }
        if let Some(b) = &b {
            if b.len() != m {
                return arg_err(format!("b must have length {m}, got {}", b.len()));
            }
        }
        Ok(Self {
            n,
            r,
            variant,
            q,
            b,
            c,
        })
    }

    /// Builds a form from the upper triangle of `q` (the lower one is ignored).
    pub fn from_upper(
        n: usize,
        r: usize,
        variant: FormVariant,
        q: &DMatrix<f64>,
        b: Option<DVector<f64>>,
        c: f64,
    ) -> Result<Self> {
        let mut sym = q.clone();
        for i in 0..sym.nrows() {
            for j in 0..i {
                sym[(i, j)] = sym[(j, i)];
            }
        }
        Self::new(n, r, variant, sym, b, c)
    }

    pub fn nvars(&self) -> usize {
        self.n
    }

    pub fn half_degree(&self) -> usize {
        self.r
    }

    pub fn variant(&self) -> FormVariant {
        self.variant
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn b(&self) -> Option<&DVector<f64>> {
        self.b.as_ref()
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    /// Index of the first monomial of the lifting vector inside the degree-`2r` basis.
    fn lift_offset(&self, basis: &MonomialBasis) -> usize {
        match self.variant {
            FormVariant::Homogeneous => basis.degree_range(self.r).start,
            FormVariant::Full => 0,
        }
    }

    /// Evaluates `-m(x)' Q m(x) + b' m(x) + c` directly.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n {
            return arg_err("dimension mismatch");
        }
        let basis = MonomialBasis::new(self.n, self.r)?;
        let mut mono = vec![0.0; basis.len()];
        basis.eval_monomials(x, &mut mono);
        let off = self.lift_offset(&basis);
        let v = DVector::from_column_slice(&mono[off..off + self.q.nrows()]);
        let mut val = -(v.transpose() * &self.q * &v)[(0, 0)] + self.c;
        if let Some(b) = &self.b {
            val += b.dot(&v);
        }
        Ok(val)
    }

    /// Expands the form into a coefficient vector of degree `2r`.
    pub fn to_polynomial(&self) -> Polynomial {
        let basis = Arc::new(MonomialBasis::new(self.n, 2 * self.r).expect("small basis"));
        let lift = MonomialBasis::new(self.n, self.r).expect("small basis");
        let off = self.lift_offset(&lift);
        let m = self.q.nrows();
        let mut coeffs = vec![0.0; basis.len()];
        let mut sum = vec![0u32; self.n];
        for i in 0..m {
            let ei = lift.exponent(off + i);
            for j in 0..m {
                let ej = lift.exponent(off + j);
                for (s, (a, b)) in sum.iter_mut().zip(ei.iter().zip(ej)) {
                    *s = a + b;
                }
                let k = basis.index_of(&sum).expect("product monomial in basis");
                coeffs[k] -= self.q[(i, j)];
            }
            if let Some(b) = &self.b {
                let k = basis.index_of(ei).expect("monomial in basis");
                coeffs[k] += b[i];
            }
        }
        coeffs[0] += self.c;
        Polynomial { basis, coeffs }
    }
}

/// Alias matching the operation name used throughout the docs.
pub fn quadratic_form_to_coeffs(q: &QuadraticForm) -> Polynomial {
    q.to_polynomial()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn univariate_enumeration() {
        let b = enumerate_monomials(1, 2).unwrap();
        let e: Vec<_> = b.iter().map(|e| e.to_vec()).collect();
        assert_eq!(e, vec![vec![0], vec![1], vec![2]]);
    }

    #[test]
    fn three_variables_degree_four_has_35() {
        assert_eq!(enumerate_monomials(3, 4).unwrap().len(), 35);
    }

    #[test]
    fn constant_only_basis() {
        let b = enumerate_monomials(2, 0).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b.exponent(0), &[0, 0]);
    }

    #[test]
    fn graded_lex_order_in_two_variables() {
        let b = enumerate_monomials(2, 2).unwrap();
        let e: Vec<_> = b.iter().map(|e| e.to_vec()).collect();
        assert_eq!(
            e,
            vec![
                vec![0, 0],
                vec![1, 0],
                vec![0, 1],
                vec![2, 0],
                vec![1, 1],
                vec![0, 2]
            ]
        );
    }

    #[test]
    fn zero_variables_rejected_and_huge_basis_is_size_error() {
        assert!(matches!(enumerate_monomials(0, 2), Err(Error::Argument(_))));
        assert!(matches!(
            enumerate_monomials(1000, 1000),
            Err(Error::Size { .. })
        ));
    }

    #[test]
    fn eval_examples() {
        let p = Polynomial::from_terms(2, 1, [(&[0u32, 0][..], 1.0)]).unwrap();
        assert_eq!(p.eval(&[5.0, -3.0]).unwrap(), 1.0);

        let p = Polynomial::from_terms(2, 2, [(&[1u32, 1][..], 1.0)]).unwrap();
        assert_eq!(p.eval(&[2.0, 3.0]).unwrap(), 6.0);

        let p = Polynomial::from_terms(
            2,
            2,
            [
                (&[0u32, 0][..], 1.0),
                (&[2, 0][..], -1.0),
                (&[0, 2][..], -1.0),
            ],
        )
        .unwrap();
        assert!(p.eval(&[0.6, 0.8]).unwrap().abs() < 1e-15);
        assert!(matches!(p.eval(&[1.0]), Err(Error::Argument(_))));
    }

    #[test]
    fn identity_form_expands_to_unit_disk() {
        let q = QuadraticForm::new(
            2,
            1,
            FormVariant::Homogeneous,
            DMatrix::identity(2, 2),
            Some(DVector::zeros(2)),
            1.0,
        )
        .unwrap();
        let p = q.to_polynomial();
        assert_eq!(p.coeffs(), &[1.0, 0.0, 0.0, -1.0, 0.0, -1.0]);
    }

    #[test]
    fn cross_terms_double() {
        let q = QuadraticForm::new(
            2,
            1,
            FormVariant::Homogeneous,
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
            Some(DVector::zeros(2)),
            0.0,
        )
        .unwrap();
        let p = q.to_polynomial();
        assert_eq!(p.coeff(&[1, 1]), -2.0);
        assert_eq!(p.coeffs().iter().filter(|c| **c != 0.0).count(), 1);
    }

    #[test]
    fn asymmetric_q_rejected() {
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(QuadraticForm::new(2, 1, FormVariant::Homogeneous, q.clone(), None, 0.0).is_err());
        let f = QuadraticForm::from_upper(2, 1, FormVariant::Homogeneous, &q, None, 0.0).unwrap();
        assert_eq!(f.q()[(1, 0)], 0.5);
    }

    fn random_form(
        rng: &mut ChaCha8Rng,
        n: usize,
        r: usize,
        variant: FormVariant,
    ) -> QuadraticForm {
        let m = QuadraticForm::block_len(n, r, variant);
        let mut q = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in i..m {
                q[(i, j)] = rng.random_range(-1.0..1.0);
            }
        }
        let b = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
        QuadraticForm::from_upper(n, r, variant, &q, Some(b), rng.random_range(-1.0..1.0)).unwrap()
    }

    #[test]
    fn quartic_form_expansion_matches_direct_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for variant in [FormVariant::Homogeneous, FormVariant::Full] {
            let form = random_form(&mut rng, 2, 2, variant);
            let p = form.to_polynomial();
            let mut worst: f64 = 0.0;
            for _ in 0..100 {
                let x = [rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)];
                worst = worst.max((p.eval(&x).unwrap() - form.eval(&x).unwrap()).abs());
            }
            assert!(worst <= 1e-12, "{variant:?}: {worst}");
        }
    }

    #[test]
    fn homogeneous_block_sizes() {
        assert_eq!(homogeneous_len(2, 1), 2);
        assert_eq!(homogeneous_len(2, 2), 3);
        assert_eq!(homogeneous_len(3, 2), 6);
        assert_eq!(QuadraticForm::block_len(2, 2, FormVariant::Full), 6);
    }

    #[test]
    fn json_round_trip_drops_zero_terms() {
        let p = Polynomial::from_terms(
            2,
            2,
            [
                (&[0u32, 0][..], 1.0),
                (&[2, 0][..], -1.0),
                (&[0, 2][..], -0.25),
            ],
        )
        .unwrap();
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(p.to_json().coeffs.len(), 3);
        let back: Polynomial = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn basis_len_is_binomial(n in 1usize..6, d in 0usize..7) {
                let b = enumerate_monomials(n, d).unwrap();
                prop_assert_eq!(b.len(), basis_len(n, d).unwrap());
                // strictly increasing degree, no duplicates
                let mut last = 0;
                for e in b.iter() {
                    let deg: u32 = e.iter().sum();
                    prop_assert!(deg >= last);
                    last = deg;
                }
                prop_assert_eq!(b.index.len(), b.len());
            }

            #[test]
            fn lower_degree_basis_is_prefix(n in 1usize..5, d in 0usize..6) {
                let small = enumerate_monomials(n, d).unwrap();
                let big = enumerate_monomials(n, d + 1).unwrap();
                for i in 0..small.len() {
                    prop_assert_eq!(small.exponent(i), big.exponent(i));
                }
            }

            #[test]
            fn evaluation_is_linear(
                a in -3.0f64..3.0,
                b in -3.0f64..3.0,
                p in proptest::collection::vec(-1.0f64..1.0, 10),
                q in proptest::collection::vec(-1.0f64..1.0, 10),
                x in proptest::collection::vec(-1.2f64..1.2, 2),
            ) {
                let basis = Arc::new(enumerate_monomials(2, 3).unwrap());
                let p = Polynomial::new(basis.clone(), p).unwrap();
                let q = Polynomial::new(basis, q).unwrap();
                let lhs = p.scale(a).add(&q.scale(b)).unwrap().eval(&x).unwrap();
                let rhs = a * p.eval(&x).unwrap() + b * q.eval(&x).unwrap();
                prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
            }

            #[test]
            fn form_expansion_agrees_pointwise(seed in 0u64..1000, x in proptest::collection::vec(-1.0f64..1.0, 3)) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let form = random_form(&mut rng, 3, 2, FormVariant::Homogeneous);
                let direct = form.eval(&x).unwrap();
                let expanded = form.to_polynomial().eval(&x).unwrap();
                prop_assert!((direct - expanded).abs() <= 1e-10 * (1.0 + direct.abs()));
            }
        }
    }
}
