use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::barrier;
use super::presolve::{prepare, Prepared};
use super::problem::MaxDetProblem;
use super::Solution;

/// Optimality residuals at a barrier iterate.
///
/// Dual estimates are taken from the Newton direction `δθ` at the final
/// barrier parameter `t`: `Z_j = (F_j^{-1} − F_j^{-1} δF_j F_j^{-1}) / t` for each
/// block and `z_i = (1 − a_i'δθ / s_i) / (t·s_i)` for each linear row. At an
/// exactly centered point `δθ = 0` and these reduce to `F_j^{-1} / t`; they are
/// dual feasible whenever the Newton decrement is below one.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    /// Minimum eigenvalue of each LMI block at θ.
    pub block_min_eig: Vec<f64>,
    /// Minimum slack over linear rows and bounds (`+∞` if there are none).
    #[serde(with = "crate::solver::nullable_f64")]
    pub row_min: f64,
    /// `‖c − w∇logdet G(θ) − Σ_j ⟨Z_j, A_jk⟩ − Σ_i z_i a_i‖₂`.
    pub stationarity: f64,
    /// `‖∇F_t(θ)‖₂ / t`, the same residual with the uncorrected estimates `F_j^{-1} / t`.
    pub centrality: f64,
    /// Newton decrement at θ.
    pub newton_decrement: f64,
    /// `⟨Z_j, F_j(θ)⟩` per LMI block.
    pub complementarity: Vec<f64>,
    /// Duality-gap estimate `Σ dims / t`.
    pub gap: f64,
}

pub(crate) fn report(p: &MaxDetProblem, prep: &Prepared, x: &DVector<f64>, t: f64) -> KktReport {
    let n = prep.nvars;
    let theta = x.as_slice();
    let mut comp = vec![0.0; prep.blocks.len()];
    let mut stationarity = f64::INFINITY;
    let mut centrality = f64::INFINITY;
    let mut newton_decrement = f64::INFINITY;
    if let Some(d) = barrier::barrier_derivs(prep, x, t) {
        centrality = d.g.norm() / t;
        if let Some((dx, lambda2)) = barrier::newton_direction(&d) {
            newton_decrement = lambda2.sqrt();
            stationarity = ((&d.g + &d.h * &dx) / t).norm();
            for (j, b) in prep.blocks.iter().enumerate() {
                if let Some(bd) = barrier::block_derivs(b, x, 1.0, n) {
                    comp[j] = (b.size() as f64 + bd.g.dot(&dx)) / t;
                }
            }
        }
    }
    let block_min_eig = p.block_margins(theta);
    let complementarity = prep
        .block_index
        .iter()
        .map(|i| i.map_or(0.0, |i| comp[i]))
        .collect();
    let mut row_min = f64::INFINITY;
    for i in 0..p.num_linear() {
        let (a, b) = p.linear(i);
        row_min = row_min.min(super::problem::dot(a, theta) + b);
    }
    if let Some(bounds) = p.bounds() {
        for ((lo, hi), v) in bounds.iter().zip(theta) {
            row_min = row_min.min(v - lo).min(hi - v);
        }
    }
    KktReport {
        block_min_eig,
        row_min,
        stationarity,
        centrality,
        newton_decrement,
        complementarity,
        gap: prep.barrier_dim() as f64 / t,
    }
}

/// Recomputes the residual report for a solution of `p`.
pub fn kkt_residuals(p: &MaxDetProblem, s: &Solution) -> KktReport {
    let prep = prepare(p);
    report(p, &prep, &DVector::from_column_slice(&s.theta), s.t)
}
