//! Reconstruction of a density matrix from a measurement record: constrained
//! least squares and trace minimization under a residual bound.

mod calibration;
pub mod projection;
mod solver;

pub use calibration::{
    calibrate_epsilon, calibrate_epsilon_with_model, calibrate_on_record, prefix_problem,
    CalibrationMetadata, EpsilonRule, PrefixNormals,
};
pub use projection::{project_density, project_psd, project_simplex};
pub use solver::{
    ls_objective_trace, residual_delta, solve_cs, solve_ls, solve_ls_problem, CsDiagnostics,
    CsPath, Estimate, NormalEquations, Problem, SolverConfig,
};
