//! Fitting semi-algebraic level sets `{x : θ(x) ≥ 0}` to finite point clouds.
//!
//! Covering sets (minimum-volume ellipsoids and quartics) and two-class
//! polynomial separators are computed by solving moment relaxations of the
//! per-point problems with a built-in maxdet interior-point solver, driven by
//! an iterative support-selection loop.

pub mod basis;
pub mod data;
pub mod error;
pub mod fitting;
pub mod linalg;
pub mod moments;
pub mod solver;

pub use basis::{
    enumerate_monomials, quadratic_form_to_coeffs, FormVariant, MonomialBasis, Polynomial,
    QuadraticForm,
};
pub use data::{
    generate_clusters, load_csv, load_model_json, make_separable, monte_carlo_volume,
    normalize_to_unit_ball, save_csv, save_model_json, AffineMap, BoundingBox, Cluster,
    ClusterSpec, CsvData, VolumeReport,
};
pub use error::{Error, Result};
pub use fitting::{
    build_feasibility_problem, build_l1_lp, build_moment_relaxation, build_mvce_problem,
    build_separation_problem, outside_points, perturb_dataset, rank_check, run_main_algorithm,
    FitReport, FitSettings, FitStatus, FormSpec, Formulation, Mode, ObjectiveKind,
    SeparationInstance,
};
pub use moments::{
    localizing_matrix, localizing_operator, moment_matrix, moment_vector, uniform_measure, Dataset,
    EmpiricalMeasure, LocalizingOperator, MomentData,
};
pub use solver::{
    kkt_residuals, phase1, solve, AffineLmiBlock, KktReport, MaxDetProblem, Settings, Solution,
    Status,
};
