//! Order estimates for the Kolmogorov widths of an intersection of weighted
//! anisotropic balls `cap_a nu_a B^k_{p_a}` in the mixed norm `l^k_q`,
//! `2 <= q_i < inf`, together with minimizing certificates, brute-force
//! oracles and general-position tooling.

pub mod cli;
pub mod estimator;
pub mod genpos;
pub mod geometry;
pub mod linalg;
pub mod logvalue;
pub mod oracle;
pub mod phi;
pub mod problem;
pub mod witness;

pub use estimator::{
    candidate_value, estimate, estimate_with, sweep_n, upper_bound_value, Certificate, EstimateError, EstimateOptions,
    EstimateResult,
};
pub use genpos::{check_general_position, perturb, stability_probe, GenPosError, GenPosReport, Scope};
pub use geometry::{enumerate_z, solve_weights, CandidateZ, Rejection, WeightSolution, ZKind};
pub use logvalue::LogValue;
pub use oracle::{exhaustive_phi_check, grid_min, vertex_min, GridSpec, OracleError};
pub use phi::{phi, phi_piecewise, PhiContext, PhiError, Target};
pub use problem::{reciprocal_of_p, BallSpec, ProblemError, ProblemSpec, ReciprocalVector, DEFAULT_TOL};
pub use witness::{build_witness_m1, inclusion_check, theorem_a_branches, theorem_a_value, WitnessError, WitnessSet};
