//! Iterative support selection: solve the moment relaxation over uniform
//! measures on a working subset, collect misclassified points, repeat.

use std::sync::Arc;

use log::{debug, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::formulation::{
    build_feasibility_problem, build_l1_lp, build_moment_relaxation, build_separation_problem,
    FormSpec, Formulation, Mode, Objective,
};
use crate::basis::{FormVariant, Polynomial};
use crate::error::{arg_err, Error, Result};
use crate::moments::{uniform_measure, Dataset};
use crate::solver::{Settings, Solution, Status};

/// Points are misclassified only when they violate their sign by more than this.
pub const EVAL_TOL: f64 = 1e-9;

/// Which polynomial family and criterion a fit uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveKind {
    MaxdetEllipsoid,
    MaxdetQuartic,
    L1,
}

/// Two labelled point sets and the fit to compute for them.
#[derive(Debug, Clone)]
pub struct SeparationInstance {
    pub s1: Dataset,
    /// May be empty, which makes this a covering problem.
    pub s2: Dataset,
    pub degree: usize,
    /// Relaxation order.
    pub order: usize,
    pub objective: ObjectiveKind,
    pub variant: FormVariant,
}

impl SeparationInstance {
    pub fn covering(s: Dataset, degree: usize, order: usize) -> Result<Self> {
        let n = s.dim();
        Self::new(s, Dataset::empty(n), degree, order)
    }

    /// Log-det objective of degree `degree` (2 or 4).
    pub fn new(s1: Dataset, s2: Dataset, degree: usize, order: usize) -> Result<Self> {
        let objective = match degree {
            2 => ObjectiveKind::MaxdetEllipsoid,
            4 => ObjectiveKind::MaxdetQuartic,
            _ => return arg_err(format!("degree must be 2 or 4, got {degree}")),
        };
        let inst = Self {
            s1,
            s2,
            degree,
            order,
            objective,
            variant: FormVariant::Homogeneous,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<()> {
        if self.s1.is_empty() {
            return arg_err("the first class must be non-empty");
        }
        if !self.s2.is_empty() && self.s2.dim() != self.s1.dim() {
            return arg_err("classes have different dimensions");
        }
        match self.objective {
            ObjectiveKind::MaxdetEllipsoid if self.degree != 2 => {
                arg_err("the ellipsoid objective needs degree 2")
            }
            ObjectiveKind::MaxdetQuartic if self.degree != 4 => {
                arg_err("the quartic objective needs degree 4")
            }
            ObjectiveKind::L1 if self.degree == 0 => arg_err("degree must be positive"),
            _ => Ok(()),
        }
    }

    fn relaxation_objective(&self) -> Result<Objective> {
        Ok(match self.objective {
            ObjectiveKind::L1 => Objective::L1 {
                degree: self.degree,
            },
            _ => Objective::MaxDet(FormSpec::with_variant(self.degree, self.variant)?),
        })
    }

    fn form_spec(&self) -> Result<FormSpec> {
        FormSpec::with_variant(self.degree.max(2) + self.degree % 2, self.variant)
    }
}

/// Options of the support-selection loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSettings {
    pub max_outer: usize,
    pub eval_tol: f64,
    /// Points with `θ_k(x) ≤ update_tol` on the first class (`≥ −update_tol`
    /// on the second) enter the next support.
    pub update_tol: f64,
    /// Keep every point that has entered a support, rather than only the
    /// latest update set.
    pub accumulate: bool,
    /// Geometric mean `det(Q)^{1/p}` at or below this reports infeasibility.
    pub zero_tol: f64,
    pub solver: Settings,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            max_outer: 50,
            eval_tol: EVAL_TOL,
            update_tol: 1e-6,
            accumulate: false,
            zero_tol: 1e-7,
            solver: Settings::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FitStatus {
    Separated,
    Infeasible,
    IterationLimit,
}

/// One outer iteration of the loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    #[serde(with = "crate::solver::nullable_f64")]
    pub objective: f64,
    /// Support sizes in the first and second class.
    pub support: [usize; 2],
    /// Number of outside points.
    pub outside: usize,
}

/// Result of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub status: FitStatus,
    #[serde(rename = "polynomial")]
    pub theta: Polynomial,
    #[serde(with = "crate::solver::nullable_f64")]
    pub objective: f64,
    pub outer_iterations: usize,
    pub support_sizes: Vec<usize>,
    pub history: Vec<IterationRecord>,
    /// Optimal value of the feasibility problem, when it was solved.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feasibility_slack: Option<f64>,
}

impl FitReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Indices of `{x ∈ s1 : θ(x) < −tol}` and `{x ∈ s2 : θ(x) > tol}`.
pub fn outside_indices(
    s1: &Dataset,
    s2: &Dataset,
    theta: &Polynomial,
    tol: f64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let v1 = evaluate(theta, s1)?;
    let v2 = evaluate(theta, s2)?;
    Ok((
        (0..v1.len()).filter(|&i| v1[i] < -tol).collect(),
        (0..v2.len()).filter(|&i| v2[i] > tol).collect(),
    ))
}

/// Misclassified points of both classes, with strictness tolerance [`EVAL_TOL`].
pub fn outside_points(
    s1: &Dataset,
    s2: &Dataset,
    theta: &Polynomial,
) -> Result<(Dataset, Dataset)> {
    let (o1, o2) = outside_indices(s1, s2, theta, EVAL_TOL)?;
    Ok((s1.subset(&o1), s2.subset(&o2)))
}

/// `θ(x)` for every point of `s`.
pub fn evaluate(theta: &Polynomial, s: &Dataset) -> Result<Vec<f64>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    if s.dim() != theta.nvars() {
        return arg_err(format!(
            "points have dimension {}, polynomial has {} variables",
            s.dim(),
            theta.nvars()
        ));
    }
    Ok((0..s.len())
        .into_par_iter()
        .with_min_len(1024)
        .map(|i| theta.eval_unchecked(s.point(i)))
        .collect())
}

/// Smallest θ on `s1` and largest θ on `s2` (`None` for an empty class).
pub fn class_margins(
    s1: &Dataset,
    s2: &Dataset,
    theta: &Polynomial,
) -> Result<(Option<f64>, Option<f64>)> {
    let v1 = evaluate(theta, s1)?;
    let v2 = evaluate(theta, s2)?;
    Ok((
        v1.into_iter().reduce(f64::min),
        v2.into_iter().reduce(f64::max),
    ))
}

fn geometric_mean_det(f: &Formulation, sol: &Solution) -> Option<f64> {
    let form = f.form(&sol.theta)?;
    let q = form.q();
    let p = q.nrows() as f64;
    let ld = crate::linalg::logdet_pd(q)?;
    Some((ld / p).exp())
}

fn union(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = a.iter().chain(b).copied().collect();
    out.sort_unstable();
    out.dedup();
    out
}

fn solver_error(iteration: usize, sol: &Solution) -> Error {
    Error::Solver {
        iteration,
        message: format!(
            "inner solve ended with {:?}{}",
            sol.status,
            if sol.message.is_empty() {
                String::new()
            } else {
                format!(": {}", sol.message)
            }
        ),
    }
}

fn infeasible_report(
    inst: &SeparationInstance,
    settings: &FitSettings,
    s1: &Dataset,
    s2: &Dataset,
    iterations: usize,
    support_sizes: Vec<usize>,
    history: Vec<IterationRecord>,
) -> Result<FitReport> {
    let slack = if inst.objective == ObjectiveKind::L1 {
        None
    } else {
        let f = build_feasibility_problem(s1, s2, inst.form_spec()?)?;
        let sol = f.solve(&settings.solver)?;
        sol.objective.is_finite().then_some(sol.objective)
    };
    let n = inst.s1.dim();
    let basis = Arc::new(crate::basis::MonomialBasis::new(n, inst.degree)?);
    Ok(FitReport {
        status: FitStatus::Infeasible,
        theta: Polynomial::zero(basis),
        objective: 0.0,
        outer_iterations: iterations,
        support_sizes,
        history,
        feasibility_slack: slack,
    })
}

/// Runs the support-selection loop.
///
/// The support starts as all points. Each iteration solves the order-`r`
/// moment relaxation over uniform measures on the support, stops with
/// `Separated` when no point is misclassified, and otherwise replaces the
/// support by the points of the first class with `θ_k ≤ 0` and of the second
/// class with `θ_k ≥ 0` (up to `update_tol`).
///
/// A class whose new support is empty, or does not affinely span the space,
/// keeps its previous support in addition. An update set with fewer than
/// `binom(n+r, r)` points is filled up with the points closest to the wrong
/// side. When a support comes round a second time the per-point problem on it
/// is tried once; the run ends `Separated` if that θ separates everything and
/// `IterationLimit` otherwise.
pub fn run_main_algorithm(inst: &SeparationInstance, settings: &FitSettings) -> Result<FitReport> {
    inst.validate()?;
    let n = inst.s1.dim();
    let objective = inst.relaxation_objective()?;
    let mut sup1: Vec<usize> = (0..inst.s1.len()).collect();
    let mut sup2: Vec<usize> = (0..inst.s2.len()).collect();
    let mut acc1: Vec<usize> = Vec::new();
    let mut acc2: Vec<usize> = Vec::new();
    let mut support_sizes = Vec::new();
    let mut history = Vec::new();
    let mut seen: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
    // a uniform measure on fewer points than this cannot pin θ down
    let need = crate::basis::MonomialBasis::new(n, inst.order)?.len();

    for k in 0..settings.max_outer {
        let a1 = inst.s1.subset(&sup1);
        let a2 = inst.s2.subset(&sup2);
        support_sizes.push(sup1.len() + sup2.len());
        let m1 = uniform_measure(&Arc::new(a1.clone()))?;
        let m2 = if a2.is_empty() {
            None
        } else {
            Some(uniform_measure(&Arc::new(a2.clone()))?)
        };
        let f = build_moment_relaxation(&m1, m2.as_ref(), inst.order, objective)?;
        let sol = f.solve(&settings.solver)?;
        debug!(
            "outer {k}: support {}+{}, status {:?}, objective {:.10e}",
            sup1.len(),
            sup2.len(),
            sol.status,
            sol.objective
        );
        match sol.status {
            Status::Optimal => {}
            Status::Infeasible => {
                history.push(IterationRecord {
                    objective: f64::NAN,
                    support: [sup1.len(), sup2.len()],
                    outside: 0,
                });
                info!("relaxation infeasible at outer iteration {k}");
                return infeasible_report(inst, settings, &a1, &a2, k + 1, support_sizes, history);
            }
            _ => return Err(solver_error(k, &sol)),
        }
        if inst.objective != ObjectiveKind::L1 {
            if let Some(gm) = geometric_mean_det(&f, &sol) {
                if gm <= settings.zero_tol {
                    history.push(IterationRecord {
                        objective: sol.objective,
                        support: [sup1.len(), sup2.len()],
                        outside: 0,
                    });
                    return infeasible_report(
                        inst,
                        settings,
                        &a1,
                        &a2,
                        k + 1,
                        support_sizes,
                        history,
                    );
                }
            }
        }

        let theta = f.polynomial(&sol.theta);
        let v1 = evaluate(&theta, &inst.s1)?;
        let v2 = evaluate(&theta, &inst.s2)?;
        let outside = v1.iter().filter(|v| **v < -settings.eval_tol).count()
            + v2.iter().filter(|v| **v > settings.eval_tol).count();
        history.push(IterationRecord {
            objective: sol.objective,
            support: [sup1.len(), sup2.len()],
            outside,
        });
        info!(
            "outer {k}: objective {:.10e}, {outside} outside points",
            sol.objective
        );
        if outside == 0 {
            return Ok(FitReport {
                status: FitStatus::Separated,
                theta,
                objective: sol.objective,
                outer_iterations: k + 1,
                support_sizes,
                history,
                feasibility_slack: None,
            });
        }

        let u1: Vec<usize> = (0..v1.len())
            .filter(|&i| v1[i] <= settings.update_tol)
            .collect();
        let u2: Vec<usize> = (0..v2.len())
            .filter(|&i| v2[i] >= -settings.update_tol)
            .collect();
        let (u1, u2) = (top_up(u1, &v1, need, 1.0), top_up(u2, &v2, need, -1.0));
        let (mut next1, next2) = if settings.accumulate {
            acc1 = union(&acc1, &u1);
            acc2 = union(&acc2, &u2);
            (acc1.clone(), acc2.clone())
        } else {
            (u1, u2)
        };
        if next1.is_empty() || inst.s1.subset(&next1).affine_rank() < n {
            next1 = union(&next1, &sup1);
        }
        if seen.iter().any(|(a, b)| *a == next1 && *b == next2) {
            if let Some((theta, objective)) = polish(inst, &a1, &a2, settings)? {
                info!("support repeats at outer iteration {k}; per-point solve on it separates");
                return Ok(FitReport {
                    status: FitStatus::Separated,
                    theta,
                    objective,
                    outer_iterations: k + 1,
                    support_sizes,
                    history,
                    feasibility_slack: None,
                });
            }
            info!("support repeats at outer iteration {k}; stopping");
            return Ok(FitReport {
                status: FitStatus::IterationLimit,
                theta,
                objective: sol.objective,
                outer_iterations: k + 1,
                support_sizes,
                history,
                feasibility_slack: None,
            });
        }
        seen.push((sup1.clone(), sup2.clone()));
        sup1 = next1;
        sup2 = next2;
    }

    // one last look at the final support is not taken; report the limit
    let last = history.last().map_or(f64::NAN, |h| h.objective);
    let basis = Arc::new(crate::basis::MonomialBasis::new(n, inst.degree)?);
    Ok(FitReport {
        status: FitStatus::IterationLimit,
        theta: Polynomial::zero(basis),
        objective: last,
        outer_iterations: settings.max_outer,
        support_sizes,
        history,
        feasibility_slack: None,
    })
}

/// Per-point problem over the support `(a1, a2)`. On an exact support its
/// optimum is the relaxation's, and if its θ separates all the data then θ is
/// feasible for the full problem with the smallest objective any feasible θ
/// can have, hence optimal. Returns `None` when θ leaves points outside.
fn polish(
    inst: &SeparationInstance,
    a1: &Dataset,
    a2: &Dataset,
    settings: &FitSettings,
) -> Result<Option<(Polynomial, f64)>> {
    let f = match inst.objective {
        ObjectiveKind::L1 => build_l1_lp(a1, a2, inst.degree)?,
        _ => build_separation_problem(
            a1,
            a2,
            FormSpec::with_variant(inst.degree, inst.variant)?,
            Mode::PerPoint,
        )?,
    };
    let sol = f.solve(&settings.solver)?;
    if sol.status != Status::Optimal {
        return Ok(None);
    }
    let theta = f.polynomial(&sol.theta);
    let (o1, o2) = outside_indices(&inst.s1, &inst.s2, &theta, settings.eval_tol)?;
    debug!(
        "per-point solve on the support: objective {:.10e}, {} outside points",
        sol.objective,
        o1.len() + o2.len()
    );
    Ok((o1.is_empty() && o2.is_empty()).then_some((theta, sol.objective)))
}

/// Extends an update set smaller than `need` with the points that come closest
/// to the wrong side (smallest `sign·θ`), so the next relaxation stays exact.
fn top_up(u: Vec<usize>, v: &[f64], need: usize, sign: f64) -> Vec<usize> {
    if v.is_empty() || u.len() >= need {
        return u;
    }
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|a, b| (sign * v[*a]).total_cmp(&(sign * v[*b])).then(a.cmp(b)));
    idx.truncate(need);
    idx.sort_unstable();
    idx
}

/// Solves the full per-point problem (or the ℓ1 program) directly.
pub fn fit_direct(inst: &SeparationInstance, settings: &Settings) -> Result<FitReport> {
    inst.validate()?;
    let f = match inst.objective {
        ObjectiveKind::L1 => build_l1_lp(&inst.s1, &inst.s2, inst.degree)?,
        _ => build_separation_problem(
            &inst.s1,
            &inst.s2,
            FormSpec::with_variant(inst.degree, inst.variant)?,
            Mode::PerPoint,
        )?,
    };
    let sol = f.solve(settings)?;
    let support = [inst.s1.len(), inst.s2.len()];
    match sol.status {
        Status::Optimal => {
            let theta = f.polynomial(&sol.theta);
            let (o1, o2) = outside_indices(&inst.s1, &inst.s2, &theta, EVAL_TOL)?;
            Ok(FitReport {
                status: if o1.is_empty() && o2.is_empty() {
                    FitStatus::Separated
                } else {
                    FitStatus::IterationLimit
                },
                theta,
                objective: sol.objective,
                outer_iterations: 1,
                support_sizes: vec![support[0] + support[1]],
                history: vec![IterationRecord {
                    objective: sol.objective,
                    support,
                    outside: o1.len() + o2.len(),
                }],
                feasibility_slack: None,
            })
        }
        Status::Infeasible => {
            let fs = FitSettings {
                solver: settings.clone(),
                ..FitSettings::default()
            };
            infeasible_report(
                inst,
                &fs,
                &inst.s1,
                &inst.s2,
                1,
                vec![support[0] + support[1]],
                vec![IterationRecord {
                    objective: f64::NAN,
                    support,
                    outside: 0,
                }],
            )
        }
        _ => Err(solver_error(0, &sol)),
    }
}
