//! Interior-point solver for determinant-maximization problems
//!
//! ```text
//! minimize    c'θ − w·logdet G(θ)
//! subject to  F_j(θ) = A_j0 + Σ_k θ_k A_jk ⪰ 0,   a_i'θ + b_i ≥ 0,   lo ≤ θ ≤ hi
//! ```
//!
//! A phase-I max-margin problem supplies a strictly feasible start, then a
//! barrier path is followed until the duality-gap estimate drops below
//! `gap_tol`.

mod barrier;
mod kkt;
mod presolve;
mod problem;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

pub use kkt::{kkt_residuals, KktReport};
pub use problem::{AffineLmiBlock, DetTerm, MaxDetProblem};

use presolve::{prepare, Prepared};

/// Solver parameters. Every field has a default; a TOML file may set any subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    /// Stop when the duality-gap estimate `Σ dims / t` is at most this.
    pub gap_tol: f64,
    /// Slack that separates "strictly feasible" from "infeasible" in phase I.
    pub feas_tol: f64,
    /// Newton steps allowed per centering.
    pub max_newton: usize,
    /// Barrier parameter growth factor.
    pub t_growth: f64,
    /// Initial barrier parameter.
    pub t0: f64,
    /// Overrides the logdet weight of the problem when set.
    pub w: Option<f64>,
    pub armijo: f64,
    pub backtrack: f64,
    /// Centering stops once half the squared Newton decrement is below this.
    pub newton_tol: f64,
    /// Box `|θ_k| ≤ R` that keeps the phase-I problem bounded.
    pub phase1_radius: f64,
    /// Maximum number of barrier-parameter updates.
    pub max_outer: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            gap_tol: 1e-8,
            feas_tol: 1e-9,
            max_newton: 200,
            t_growth: 10.0,
            t0: 1.0,
            w: None,
            armijo: 0.01,
            backtrack: 0.5,
            newton_tol: 1e-20,
            phase1_radius: 1e6,
            max_outer: 100,
        }
    }
}

impl Settings {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let settings: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        settings.validate()?;
        Ok(settings)
    }

    pub fn from_toml_file(path: &std::path::Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("gap_tol", self.gap_tol),
            ("feas_tol", self.feas_tol),
            ("t0", self.t0),
            ("armijo", self.armijo),
            ("newton_tol", self.newton_tol),
            ("phase1_radius", self.phase1_radius),
        ];
        for (name, v) in positive {
            if v <= 0.0 || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.t_growth.is_nan() || self.t_growth <= 1.0 {
            return Err(Error::Config("t_growth must exceed 1".into()));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(Error::Config("backtrack must lie in (0, 1)".into()));
        }
        if self.armijo >= 0.5 {
            return Err(Error::Config("armijo must lie in (0, 0.5)".into()));
        }
        if let Some(w) = self.w {
            if w <= 0.0 || !w.is_finite() {
                return Err(Error::Config("w must be positive".into()));
            }
        }
        if self.max_newton == 0 || self.max_outer == 0 {
            return Err(Error::Config("iteration limits must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Optimal,
    Infeasible,
    MaxIters,
    NumericalFailure,
}

/// Solver output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub status: Status,
    pub theta: Vec<f64>,
    /// `c'θ − w·logdet G(θ)`; not finite when no strictly feasible point exists.
    #[serde(with = "nullable_f64")]
    pub objective: f64,
    /// Smallest eigenvalue over all constraint blocks, rows and bounds at θ.
    #[serde(with = "nullable_f64")]
    pub margin: f64,
    /// Newton steps, phase I included.
    pub iterations: usize,
    pub kkt: KktReport,
    /// Final barrier parameter.
    pub t: f64,
    /// Final duality-gap estimate.
    #[serde(with = "nullable_f64")]
    pub gap: f64,
    /// Phase-I optimal margin when phase I ran.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase1_slack: Option<f64>,
    /// Outer objective after each centering.
    #[serde(default)]
    pub path: Vec<f64>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub message: String,
}

impl Solution {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

pub(crate) mod nullable_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

/// Result of the phase-I problem `max s` s.t. every block `⪰ s·I` and every
/// normalized row `≥ s`.
#[derive(Debug, Clone, PartialEq)]
pub struct Phase1 {
    pub theta: Vec<f64>,
    /// Optimal margin; `+∞` for a problem without constraints. Blocks are
    /// measured after scaling to unit max entry and rows after scaling to unit
    /// norm.
    pub slack: f64,
    pub status: Status,
    pub iterations: usize,
}

struct Phase1Build {
    prep: Prepared,
    x0: DVector<f64>,
}

fn shifted(block: &AffineLmiBlock, s: usize) -> AffineLmiBlock {
    let mut terms = block.terms().to_vec();
    terms.push((s, -DMatrix::identity(block.size(), block.size())));
    AffineLmiBlock::from_parts(block.constant().clone(), terms)
}

fn build_phase1(prep: &Prepared, radius: f64) -> Phase1Build {
    let n = prep.nvars;
    let s = n;
    let zero = DVector::zeros(n);
    let mut blocks = Vec::with_capacity(prep.blocks.len() + 1);
    let mut min0 = f64::INFINITY;
    if let Some((g, _)) = &prep.det {
        let mut g = g.clone();
        let scale = std::iter::once(g.constant())
            .chain(g.terms().iter().map(|(_, a)| a))
            .map(|m| m.amax())
            .fold(0.0, f64::max);
        if scale > 0.0 {
            g.scale(1.0 / scale);
        }
        min0 = min0.min(linalg::min_eigenvalue(&g.eval(zero.as_slice())));
        blocks.push(shifted(&g, s));
    }
    for b in &prep.blocks {
        min0 = min0.min(linalg::min_eigenvalue(&b.eval(zero.as_slice())));
        blocks.push(shifted(b, s));
    }
    let m = prep.offsets.len();
    let mut rows = DMatrix::zeros(m + 1 + 2 * n, n + 1);
    let mut offsets = DVector::zeros(m + 1 + 2 * n);
    rows.view_mut((0, 0), (m, n)).copy_from(&prep.rows);
    for i in 0..m {
        rows[(i, s)] = -1.0;
        offsets[i] = prep.offsets[i];
        min0 = min0.min(prep.offsets[i]);
    }
    rows[(m, s)] = -1.0;
    offsets[m] = 1.0;
    for k in 0..n {
        rows[(m + 1 + 2 * k, k)] = 1.0;
        offsets[m + 1 + 2 * k] = radius;
        rows[(m + 2 + 2 * k, k)] = -1.0;
        offsets[m + 2 + 2 * k] = radius;
    }
    let mut cost = DVector::zeros(n + 1);
    cost[s] = -1.0;
    let mut x0 = DVector::zeros(n + 1);
    x0[s] = (min0 - 1.0).min(0.5);
    Phase1Build {
        prep: Prepared {
            nvars: n + 1,
            cost,
            det: None,
            block_index: (0..blocks.len()).map(Some).collect(),
            blocks,
            rows,
            offsets,
        },
        x0,
    }
}

fn strictly_feasible(prep: &Prepared, x: &DVector<f64>) -> bool {
    if let Some((g, _)) = &prep.det {
        if linalg::cholesky(&g.eval(x.as_slice())).is_none() {
            return false;
        }
    }
    prep.blocks
        .iter()
        .all(|b| linalg::cholesky(&b.eval(x.as_slice())).is_some())
        && (&prep.rows * x + &prep.offsets).iter().all(|v| *v > 0.0)
}

enum Start {
    Feasible(DVector<f64>, Option<f64>, usize),
    Infeasible(Phase1),
    Failed(Phase1, String),
}

fn run_phase1(prep: &Prepared, settings: &Settings, early_exit: bool) -> (Phase1, String) {
    let n = prep.nvars;
    let build = build_phase1(prep, settings.phase1_radius);
    let feas_tol = settings.feas_tol;
    let res = barrier::follow_path(&build.prep, build.x0, settings, |x, _t, gap| {
        let s = x[n];
        if s + gap < -feas_tol {
            return true;
        }
        early_exit && s > feas_tol && s >= gap
    });
    let s = res.x[n];
    let theta = res.x.rows(0, n).iter().copied().collect();
    let status = match res.status {
        barrier::PathStatus::Stopped | barrier::PathStatus::Converged => {
            if s > feas_tol {
                Status::Optimal
            } else {
                Status::Infeasible
            }
        }
        barrier::PathStatus::MaxIters if s > feas_tol => Status::Optimal,
        barrier::PathStatus::MaxIters => Status::MaxIters,
        barrier::PathStatus::Stalled if s > feas_tol => Status::Optimal,
        barrier::PathStatus::Stalled => Status::NumericalFailure,
    };
    (
        Phase1 {
            theta,
            slack: s,
            status,
            iterations: res.newton_steps,
        },
        res.message,
    )
}

/// Solves the phase-I problem to optimality. The returned status is `Optimal`
/// when the slack certifies strict feasibility and `Infeasible` otherwise.
pub fn phase1(p: &MaxDetProblem, settings: &Settings) -> Result<Phase1> {
    settings.validate()?;
    let prep = prepare(p);
    if !prep.has_constraints() && prep.det.is_none() {
        return Ok(Phase1 {
            theta: vec![0.0; p.nvars()],
            slack: f64::INFINITY,
            status: Status::Optimal,
            iterations: 0,
        });
    }
    Ok(run_phase1(&prep, settings, false).0)
}

fn starting_point(prep: &Prepared, settings: &Settings) -> Start {
    let zero = DVector::zeros(prep.nvars);
    if strictly_feasible(prep, &zero) {
        return Start::Feasible(zero, None, 0);
    }
    let (ph, message) = run_phase1(prep, settings, true);
    match ph.status {
        Status::Optimal => {
            let x = DVector::from_column_slice(&ph.theta);
            if strictly_feasible(prep, &x) {
                Start::Feasible(x, Some(ph.slack), ph.iterations)
            } else {
                Start::Failed(ph, "phase I point is not strictly feasible".into())
            }
        }
        Status::Infeasible => Start::Infeasible(ph),
        _ => Start::Failed(ph, message),
    }
}

/// Solves `p` with the barrier method.
pub fn solve(p: &MaxDetProblem, settings: &Settings) -> Result<Solution> {
    settings.validate()?;
    let mut prep = prepare(p);
    if let (Some(w), Some(det)) = (settings.w, prep.det.as_mut()) {
        det.1 = w;
    }
    let n = p.nvars();

    if !prep.has_constraints() && prep.det.is_none() {
        let zero = vec![0.0; n];
        let unbounded = p.cost().iter().any(|c| *c != 0.0);
        return Ok(Solution {
            status: if unbounded {
                Status::NumericalFailure
            } else {
                Status::Optimal
            },
            objective: if unbounded { f64::NEG_INFINITY } else { 0.0 },
            margin: f64::INFINITY,
            iterations: 0,
            kkt: KktReport::default(),
            t: settings.t0,
            gap: 0.0,
            phase1_slack: None,
            path: Vec::new(),
            message: if unbounded {
                "linear objective without constraints is unbounded".into()
            } else {
                String::new()
            },
            theta: zero,
        });
    }

    let (x0, slack, steps0) = match starting_point(&prep, settings) {
        Start::Feasible(x, s, k) => (x, s, k),
        Start::Infeasible(ph) => {
            return Ok(failed_solution(
                p,
                ph,
                Status::Infeasible,
                settings,
                String::new(),
            ));
        }
        Start::Failed(ph, msg) => {
            let status = match ph.status {
                Status::MaxIters => Status::MaxIters,
                Status::Infeasible => Status::Infeasible,
                _ => Status::NumericalFailure,
            };
            return Ok(failed_solution(p, ph, status, settings, msg));
        }
    };

    let res = barrier::follow_path(&prep, x0, settings, |_, _, _| false);
    log::debug!(
        "barrier: {} outer, {} Newton steps, gap {:.3e}",
        res.outer,
        res.newton_steps,
        res.gap
    );
    let status = match res.status {
        barrier::PathStatus::Converged | barrier::PathStatus::Stopped => Status::Optimal,
        barrier::PathStatus::MaxIters => Status::MaxIters,
        barrier::PathStatus::Stalled => Status::NumericalFailure,
    };
    let theta: Vec<f64> = res.x.iter().copied().collect();
    let kkt = kkt::report(p, &prep, &res.x, res.t);
    Ok(Solution {
        status,
        objective: p.objective(&theta).min(f64::INFINITY),
        margin: p.margin(&theta),
        iterations: steps0 + res.newton_steps,
        kkt,
        t: res.t,
        gap: res.gap,
        phase1_slack: slack,
        path: res.path,
        message: res.message,
        theta,
    })
}

fn failed_solution(
    p: &MaxDetProblem,
    ph: Phase1,
    status: Status,
    settings: &Settings,
    message: String,
) -> Solution {
    let objective = match status {
        Status::Infeasible => f64::NAN,
        _ => p.objective(&ph.theta),
    };
    Solution {
        status,
        objective,
        margin: p.margin(&ph.theta),
        iterations: ph.iterations,
        kkt: KktReport::default(),
        t: settings.t0,
        gap: f64::NAN,
        phase1_slack: Some(ph.slack),
        path: Vec::new(),
        message,
        theta: ph.theta,
    }
}
