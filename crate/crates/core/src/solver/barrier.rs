//! Feasible-start path-following barrier method.
//!
//! Minimizes `F_t(x) = t·(c'x − w·logdet G(x)) − Σ_j logdet F_j(x) − Σ_i log s_i(x)`
//! for an increasing sequence of `t`, with damped Newton steps.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::presolve::Prepared;
use super::problem::AffineLmiBlock;
use super::Settings;
use crate::linalg;

const ROW_CHUNK: usize = 4096;
const STALL_STEP: f64 = 1e-14;
const STALL_LIMIT: usize = 5;
const DUAL_FRACTION: f64 = 0.95;
/// Smallest factor t may grow by after retries of a failed centering.
const MIN_GROWTH: f64 = 1.2;
// Once Armijo only accepts steps this short, changes in F_t are below its
// rounding error; a decrement under ROUNDOFF_DECREMENT is then as centered as
// the arithmetic allows.
const ROUNDOFF_STEP: f64 = 1e-6;
const ROUNDOFF_DECREMENT: f64 = 1.0;

pub(crate) struct Derivs {
    pub f: f64,
    pub g: DVector<f64>,
    pub h: DMatrix<f64>,
}

/// Contribution `-coef·logdet B(x)` of one block, or `None` outside its domain.
fn block_value(b: &AffineLmiBlock, x: &DVector<f64>, coef: f64) -> Option<f64> {
    let m = b.eval(x.as_slice());
    linalg::logdet_pd(&m).map(|ld| -coef * ld)
}

pub(crate) fn block_derivs(
    b: &AffineLmiBlock,
    x: &DVector<f64>,
    coef: f64,
    nvars: usize,
) -> Option<Derivs> {
    let m = b.eval(x.as_slice());
    let chol = linalg::cholesky(&m)?;
    let l = chol.l();
    let f = -coef * 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let size = m.nrows();
    let terms = b.terms();
    // B_k = L^{-1} A_k L^{-T}, stored as columns of a size² × nterms matrix
    let mut stacked = DMatrix::zeros(size * size, terms.len());
    for (j, (_, a)) in terms.iter().enumerate() {
        let x1 = l.solve_lower_triangular(a)?;
        let bk = l.solve_lower_triangular(&x1.transpose())?;
        stacked.column_mut(j).copy_from_slice(bk.as_slice());
    }
    let mut g = DVector::zeros(nvars);
    let mut h = DMatrix::zeros(nvars, nvars);
    let gram = stacked.transpose() * &stacked;
    for (j, (k, _)) in terms.iter().enumerate() {
        let mut tr = 0.0;
        for i in 0..size {
            tr += stacked[(i * size + i, j)];
        }
        g[*k] = -coef * tr;
        for (jj, (kk, _)) in terms.iter().enumerate() {
            h[(*k, *kk)] = coef * gram[(j, jj)];
        }
    }
    Some(Derivs { f, g, h })
}

fn row_slacks(p: &Prepared, x: &DVector<f64>, lo: usize, len: usize) -> DVector<f64> {
    p.rows.rows(lo, len) * x + p.offsets.rows(lo, len)
}

fn chunks(n: usize) -> Vec<(usize, usize)> {
    (0..n.div_ceil(ROW_CHUNK))
        .map(|c| {
            let lo = c * ROW_CHUNK;
            (lo, ROW_CHUNK.min(n - lo))
        })
        .collect()
}

fn rows_value(p: &Prepared, x: &DVector<f64>) -> Option<f64> {
    let parts: Vec<Option<f64>> = chunks(p.offsets.len())
        .into_par_iter()
        .map(|(lo, len)| {
            let s = row_slacks(p, x, lo, len);
            if s.iter().all(|v| *v > 0.0) {
                Some(-s.iter().map(|v| v.ln()).sum::<f64>())
            } else {
                None
            }
        })
        .collect();
    parts.into_iter().sum()
}

pub(crate) fn rows_derivs(p: &Prepared, x: &DVector<f64>) -> Option<Derivs> {
    let n = p.nvars;
    let parts: Vec<Option<Derivs>> = chunks(p.offsets.len())
        .into_par_iter()
        .map(|(lo, len)| {
            let s = row_slacks(p, x, lo, len);
            if !s.iter().all(|v| *v > 0.0) {
                return None;
            }
            let a = p.rows.rows(lo, len);
            let inv = s.map(|v| 1.0 / v);
            let f = -s.iter().map(|v| v.ln()).sum::<f64>();
            let g = -(a.transpose() * &inv);
            let mut scaled = a.into_owned();
            for (i, w) in inv.iter().enumerate() {
                scaled.row_mut(i).scale_mut(*w);
            }
            let h = scaled.transpose() * &scaled;
            Some(Derivs { f, g, h })
        })
        .collect();
    let mut acc = Derivs {
        f: 0.0,
        g: DVector::zeros(n),
        h: DMatrix::zeros(n, n),
    };
    for d in parts {
        let d = d?;
        acc.f += d.f;
        acc.g += d.g;
        acc.h += d.h;
    }
    Some(acc)
}

/// `c'x − w·logdet G(x)`.
pub(crate) fn outer_objective(p: &Prepared, x: &DVector<f64>) -> f64 {
    let lin = p.cost.dot(x);
    match &p.det {
        None => lin,
        Some((g, w)) => match linalg::logdet_pd(&g.eval(x.as_slice())) {
            Some(ld) => lin - w * ld,
            None => f64::INFINITY,
        },
    }
}

pub(crate) fn barrier_value(p: &Prepared, x: &DVector<f64>, t: f64) -> Option<f64> {
    let mut f = t * p.cost.dot(x);
    if let Some((g, w)) = &p.det {
        f += block_value(g, x, t * w)?;
    }
    let blocks: Vec<Option<f64>> = p
        .blocks
        .par_iter()
        .map(|b| block_value(b, x, 1.0))
        .collect();
    for v in blocks {
        f += v?;
    }
    f += rows_value(p, x)?;
    f.is_finite().then_some(f)
}

pub(crate) fn barrier_derivs(p: &Prepared, x: &DVector<f64>, t: f64) -> Option<Derivs> {
    let n = p.nvars;
    let mut acc = Derivs {
        f: t * p.cost.dot(x),
        g: &p.cost * t,
        h: DMatrix::zeros(n, n),
    };
    let mut add = |d: Derivs| {
        acc.f += d.f;
        acc.g += d.g;
        acc.h += d.h;
    };
    if let Some((g, w)) = &p.det {
        add(block_derivs(g, x, t * w, n)?);
    }
    let blocks: Vec<Option<Derivs>> = p
        .blocks
        .par_iter()
        .map(|b| block_derivs(b, x, 1.0, n))
        .collect();
    for d in blocks {
        add(d?);
    }
    add(rows_derivs(p, x)?);
    Some(acc)
}

/// Newton direction and squared Newton decrement, with a Jacobi-scaled,
/// Levenberg-regularized Cholesky solve.
pub(crate) fn newton_direction(d: &Derivs) -> Option<(DVector<f64>, f64)> {
    let n = d.g.len();
    let scale = DVector::from_iterator(
        n,
        d.h.diagonal().iter().map(|&v| {
            if v > 0.0 && v.is_finite() {
                1.0 / v.sqrt()
            } else {
                1.0
            }
        }),
    );
    let mut hs = d.h.clone();
    for i in 0..n {
        for j in 0..n {
            hs[(i, j)] *= scale[i] * scale[j];
        }
    }
    let rhs = -d.g.component_mul(&scale);
    let mut reg = 1e-12;
    while reg <= 1e-4 * (1.0 + 1e-9) {
        let mut m = hs.clone();
        for i in 0..n {
            m[(i, i)] += reg;
        }
        if let Some(chol) = linalg::cholesky(&m) {
            let mut z = chol.solve(&rhs);
            // undo the bias of the regularization on well-determined directions
            for _ in 0..2 {
                let r = &rhs - &hs * &z;
                z += chol.solve(&r);
            }
            let dx = z.component_mul(&scale);
            let lambda2 = -d.g.dot(&dx);
            if lambda2.is_finite() && lambda2 >= 0.0 {
                return Some((dx, lambda2));
            }
        }
        reg *= 10.0;
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum PathStatus {
    Converged,
    Stopped,
    MaxIters,
    Stalled,
}

pub(crate) struct PathResult {
    pub x: DVector<f64>,
    pub t: f64,
    pub gap: f64,
    pub newton_steps: usize,
    pub outer: usize,
    pub status: PathStatus,
    pub path: Vec<f64>,
    pub message: String,
}

enum Centering {
    Done,
    MaxIters,
    Stalled(String),
}

fn center(
    p: &Prepared,
    x: &mut DVector<f64>,
    t: f64,
    settings: &Settings,
    steps: &mut usize,
) -> Centering {
    let mut stalls = 0;
    let mut prev_lambda2 = f64::INFINITY;
    let mut local = 0;
    loop {
        let Some(d) = barrier_derivs(p, x, t) else {
            return Centering::Stalled("iterate left the barrier domain".into());
        };
        let Some((dx, lambda2)) = newton_direction(&d) else {
            return Centering::Stalled("Newton system indefinite after regularization".into());
        };
        if lambda2 / 2.0 <= settings.newton_tol {
            return Centering::Done;
        }
        // roundoff floor: decrement tiny and no longer shrinking quadratically
        if lambda2 <= 1e-3 && lambda2 > 0.25 * prev_lambda2 {
            return Centering::Done;
        }
        if local >= settings.max_newton {
            return Centering::MaxIters;
        }
        prev_lambda2 = lambda2;
        local += 1;
        *steps += 1;

        let slope = d.g.dot(&dx);
        let mut alpha = 1.0;
        let mut accepted = None;
        if lambda2 < 0.0625 {
            let xn = &*x + &dx;
            if barrier_value(p, &xn, t).is_some() {
                accepted = Some(xn);
            }
        }
        if accepted.is_none() {
            while alpha >= STALL_STEP {
                let xn = &*x + &dx * alpha;
                if let Some(fv) = barrier_value(p, &xn, t) {
                    if fv <= d.f + settings.armijo * alpha * slope {
                        accepted = Some(xn);
                        break;
                    }
                }
                alpha *= settings.backtrack;
            }
        }
        log::trace!("t {t:.1e} step {local}: λ² {lambda2:.3e}, α {alpha:.3e}");
        match accepted {
            Some(xn) => {
                stalls = 0;
                *x = xn;
                if alpha < ROUNDOFF_STEP && lambda2 <= ROUNDOFF_DECREMENT {
                    return Centering::Done;
                }
            }
            None => {
                if lambda2 <= ROUNDOFF_DECREMENT {
                    return Centering::Done;
                }
                stalls += 1;
                if stalls >= STALL_LIMIT {
                    return Centering::Stalled(format!(
                        "line search stalled {STALL_LIMIT} times (Newton decrement² {lambda2:.3e})"
                    ));
                }
            }
        }
    }
}

/// Dual estimates for the LMI blocks and linear rows, carried across centerings.
#[derive(Clone)]
struct Duals {
    blocks: Vec<DMatrix<f64>>,
    rows: DVector<f64>,
}

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Barrier value and gradient at `x`, with the HKM primal-dual Hessian built
/// from `duals` in place of the primal one for the LMI blocks and rows.
fn pd_derivs(p: &Prepared, x: &DVector<f64>, t: f64, duals: &Duals) -> Option<Derivs> {
    let n = p.nvars;
    let mut acc = Derivs {
        f: t * p.cost.dot(x),
        g: &p.cost * t,
        h: DMatrix::zeros(n, n),
    };
    if let Some((g, w)) = &p.det {
        let d = block_derivs(g, x, t * w, n)?;
        acc.f += d.f;
        acc.g += d.g;
        acc.h += d.h;
    }
    for (b, z) in p.blocks.iter().zip(&duals.blocks) {
        let m = b.eval(x.as_slice());
        let chol = linalg::cholesky(&m)?;
        let l = chol.l();
        acc.f -= 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let size = m.nrows();
        let terms = b.terms();
        let w = l.transpose() * z * &l;
        let mut sb = DMatrix::zeros(size * size, terms.len());
        let mut sc = DMatrix::zeros(size * size, terms.len());
        for (j, (k, a)) in terms.iter().enumerate() {
            let x1 = l.solve_lower_triangular(a)?;
            let bk = l.solve_lower_triangular(&x1.transpose())?;
            let mut tr = 0.0;
            for i in 0..size {
                tr += bk[(i, i)];
            }
            acc.g[*k] -= tr;
            let ck = (&bk * &w).transpose();
            sb.column_mut(j).copy_from_slice(bk.as_slice());
            sc.column_mut(j).copy_from_slice(ck.as_slice());
        }
        let mm = sb.transpose() * &sc;
        for (j, (k, _)) in terms.iter().enumerate() {
            for (jj, (kk, _)) in terms.iter().enumerate() {
                acc.h[(*k, *kk)] += 0.5 * (mm[(j, jj)] + mm[(jj, j)]);
            }
        }
    }
    let s = row_slacks(p, x, 0, p.offsets.len());
    if !s.iter().all(|v| *v > 0.0) {
        return None;
    }
    acc.f -= s.iter().map(|v| v.ln()).sum::<f64>();
    let inv = s.map(|v| 1.0 / v);
    acc.g -= p.rows.transpose() * &inv;
    let mut scaled = p.rows.clone();
    for i in 0..s.len() {
        let w = (duals.rows[i] * inv[i]).sqrt();
        scaled.row_mut(i).scale_mut(w);
    }
    acc.h += scaled.transpose() * &scaled;
    Some(acc)
}

fn primal_duals(p: &Prepared, x: &DVector<f64>) -> Option<Duals> {
    let mut blocks = Vec::new();
    for b in &p.blocks {
        let m = b.eval(x.as_slice());
        blocks.push(linalg::cholesky(&m)?.inverse());
    }
    let s = row_slacks(p, x, 0, p.offsets.len());
    Some(Duals {
        blocks,
        rows: s.map(|v| 1.0 / v),
    })
}

/// Same central path as [`center`], with the Newton system scaled by dual
/// estimates. Much faster when thousands of rows sit near the boundary.
fn center_pd(
    p: &Prepared,
    x: &mut DVector<f64>,
    t: f64,
    settings: &Settings,
    steps: &mut usize,
    duals: &mut Option<Duals>,
) -> Centering {
    if duals.is_none() {
        *duals = primal_duals(p, x);
    }
    let Some(du) = duals.as_mut() else {
        return Centering::Stalled("iterate left the barrier domain".into());
    };
    let mut local = 0;
    let mut prev_lambda2 = f64::INFINITY;
    loop {
        let Some(d) = pd_derivs(p, x, t, du) else {
            return Centering::Stalled("iterate left the barrier domain".into());
        };
        let Some((dx, lambda2)) = newton_direction(&d) else {
            return Centering::Stalled("Newton system indefinite after regularization".into());
        };
        if lambda2 / 2.0 <= settings.newton_tol
            || (lambda2 <= 1e-3 && lambda2 > 0.25 * prev_lambda2)
        {
            return Centering::Done;
        }
        if local >= settings.max_newton {
            return Centering::MaxIters;
        }
        prev_lambda2 = lambda2;
        local += 1;
        *steps += 1;
        let x_old = x.clone();
        let slope = d.g.dot(&dx);
        let mut alpha = 1.0;
        let mut accepted = None;
        if lambda2 < 0.0625 {
            let xn = &*x + &dx;
            if barrier_value(p, &xn, t).is_some() {
                accepted = Some(xn);
            }
        }
        while accepted.is_none() && alpha >= STALL_STEP {
            let xn = &*x + &dx * alpha;
            if let Some(fv) = barrier_value(p, &xn, t) {
                if fv <= d.f + settings.armijo * alpha * slope {
                    accepted = Some(xn);
                    break;
                }
            }
            alpha *= settings.backtrack;
        }
        if accepted.is_none() && lambda2 <= ROUNDOFF_DECREMENT {
            return Centering::Done;
        }
        log::trace!("pd t {t:.1e} step {local}: λ² {lambda2:.3e}, α {alpha:.3e}");
        let Some(xn) = accepted else {
            return Centering::Stalled("line search failed".into());
        };
        *x = xn;
        if alpha < ROUNDOFF_STEP && lambda2 <= ROUNDOFF_DECREMENT {
            return Centering::Done;
        }
        if dual_step(p, &x_old, &dx, du).is_none() {
            match primal_duals(p, x) {
                Some(fresh) => *du = fresh,
                None => return Centering::Stalled("iterate left the barrier domain".into()),
            }
        }
    }
}

/// Moves the duals along their Newton direction for the primal step `dx` taken
/// from `x`, as far as a fraction-to-boundary rule allows.
fn dual_step(p: &Prepared, x: &DVector<f64>, dx: &DVector<f64>, du: &mut Duals) -> Option<()> {
    let mut dzs = Vec::with_capacity(p.blocks.len());
    for (b, z) in p.blocks.iter().zip(&du.blocks) {
        let m = b.eval(x.as_slice());
        let xi = linalg::cholesky(&m)?.inverse();
        let mut dxm = DMatrix::zeros(m.nrows(), m.ncols());
        for (k, a) in b.terms() {
            dxm += a * dx[*k];
        }
        dzs.push(&xi - z - sym(&(&xi * &dxm * z)));
    }
    let s = row_slacks(p, x, 0, p.offsets.len());
    let ds = &p.rows * dx;
    let dzr = DVector::from_iterator(
        s.len(),
        (0..s.len()).map(|i| 1.0 / s[i] - du.rows[i] - du.rows[i] / s[i] * ds[i]),
    );
    let mut step: f64 = 1.0;
    for (z, dz) in du.blocks.iter().zip(&dzs) {
        let l = linalg::cholesky(z)?.l();
        let x1 = l.solve_lower_triangular(dz)?;
        let mut w = l.solve_lower_triangular(&x1.transpose())?;
        linalg::symmetrize(&mut w);
        let lo = linalg::min_eigenvalue(&w);
        if lo < 0.0 {
            step = step.min(DUAL_FRACTION / -lo);
        }
    }
    for i in 0..s.len() {
        if dzr[i] < 0.0 {
            step = step.min(DUAL_FRACTION * du.rows[i] / -dzr[i]);
        }
    }
    for (z, dz) in du.blocks.iter_mut().zip(&dzs) {
        *z += dz * step;
    }
    du.rows += &dzr * step;
    Some(())
}

/// Runs the barrier path from a strictly feasible `x0`. `stop` is consulted after
/// each centering with `(x, t, gap)`.
pub(crate) fn follow_path(
    p: &Prepared,
    x0: DVector<f64>,
    settings: &Settings,
    mut stop: impl FnMut(&DVector<f64>, f64, f64) -> bool,
) -> PathResult {
    let dim = p.barrier_dim() as f64;
    let mut x = x0;
    let mut t = settings.t0;
    let mut steps = 0;
    let mut path = Vec::new();
    let mut outer = 0;
    let mut duals: Option<Duals> = None;
    let mut growth = settings.t_growth;
    // last center, kept so an overlong centering can be retried with a shorter step in t
    let mut prev: Option<(DVector<f64>, Option<Duals>, f64)> = None;
    loop {
        outer += 1;
        let mut c = center_pd(p, &mut x, t, settings, &mut steps, &mut duals);
        if !matches!(c, Centering::Done) {
            if let Some((xp, dp, tp)) = prev.as_ref().filter(|_| growth > MIN_GROWTH) {
                growth = growth.sqrt();
                log::debug!("centering at t {t:.3e} failed; retrying with growth {growth:.3}");
                x = xp.clone();
                duals = dp.clone();
                t = tp * growth;
                continue;
            }
            // primal-dual scaling went stale; finish this centering on the primal Hessian
            duals = None;
            c = center(p, &mut x, t, settings, &mut steps);
        }
        let gap = dim / t;
        let status = match c {
            Centering::Done => None,
            Centering::MaxIters => Some((PathStatus::MaxIters, "Newton step limit reached".into())),
            Centering::Stalled(m) => Some((PathStatus::Stalled, m)),
        };
        if let Some((status, message)) = status {
            return PathResult {
                x,
                t,
                gap,
                newton_steps: steps,
                outer,
                status,
                path,
                message,
            };
        }
        path.push(outer_objective(p, &x));
        let finish = |status| (status, String::new());
        let done = if stop(&x, t, gap) {
            Some(finish(PathStatus::Stopped))
        } else if gap <= settings.gap_tol {
            Some(finish(PathStatus::Converged))
        } else if outer >= settings.max_outer {
            Some((
                PathStatus::MaxIters,
                "barrier parameter limit reached".into(),
            ))
        } else {
            None
        };
        if let Some((status, message)) = done {
            return PathResult {
                x,
                t,
                gap,
                newton_steps: steps,
                outer,
                status,
                path,
                message,
            };
        }
        prev = Some((x.clone(), duals.clone(), t));
        t *= growth;
        growth = (growth * growth).min(settings.t_growth);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::presolve::prepare;
    use crate::solver::problem::MaxDetProblem;

    #[test]
    fn logdet_gradient_matches_finite_differences() {
        // F(x) = A0 + x0 A1 + x1 A2, PD near x = 0
        let a0 = DMatrix::from_row_slice(3, 3, &[3.0, 0.5, 0.1, 0.5, 2.0, 0.3, 0.1, 0.3, 1.5]);
        let a1 = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.2, -0.5, 0.1, 0.0, 0.1, 0.3]);
        let a2 = DMatrix::from_row_slice(3, 3, &[0.0, 0.4, 0.4, 0.4, 0.2, 0.0, 0.4, 0.0, -0.7]);
        let b = AffineLmiBlock::new(a0)
            .unwrap()
            .with_term(0, a1)
            .unwrap()
            .with_term(1, a2)
            .unwrap();
        let mut p = MaxDetProblem::new(2);
        p.add_block(b).unwrap();
        let prep = prepare(&p);
        let x = DVector::from_vec(vec![0.1, -0.2]);
        let d = barrier_derivs(&prep, &x, 1.0).unwrap();
        let h = 1e-6;
        for k in 0..2 {
            let mut xp = x.clone();
            xp[k] += h;
            let mut xm = x.clone();
            xm[k] -= h;
            let fd = (barrier_value(&prep, &xp, 1.0).unwrap()
                - barrier_value(&prep, &xm, 1.0).unwrap())
                / (2.0 * h);
            assert!(
                (fd - d.g[k]).abs() <= 1e-6 * d.g[k].abs().max(1e-3),
                "{fd} vs {}",
                d.g[k]
            );
            let dp = barrier_derivs(&prep, &xp, 1.0).unwrap();
            let dm = barrier_derivs(&prep, &xm, 1.0).unwrap();
            for l in 0..2 {
                let fdh = (dp.g[l] - dm.g[l]) / (2.0 * h);
                assert!((fdh - d.h[(l, k)]).abs() <= 1e-5 * d.h[(l, k)].abs().max(1e-2));
            }
        }
    }
}
