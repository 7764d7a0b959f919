//! Problem builders and the support-selection loop.

mod formulation;
mod main_algorithm;
mod perturb;

pub use formulation::{
    build_feasibility_problem, build_l1_lp, build_moment_relaxation, build_mvce_problem,
    build_separation_problem, FormSpec, Formulation, Mode, Objective, ThetaLayout, FEASIBILITY_BOX,
};
pub use main_algorithm::{
    class_margins, evaluate, fit_direct, outside_indices, outside_points, run_main_algorithm,
    FitReport, FitSettings, FitStatus, IterationRecord, ObjectiveKind, SeparationInstance,
    EVAL_TOL,
};
pub use perturb::{perturb_dataset, perturb_datasets, rank_check};
