//! Frequency-space engine for the iterated normal form reduction of the cubic
//! NLS and the mKdV on the real line.

pub mod dispersion;
pub mod error;
pub mod grid;
pub mod harness;
pub mod nf_engine;
pub mod solver;
pub mod trees;
pub mod trilinear;

pub use dispersion::{Equation, FrequencyTuple, GenerationModulation};
pub use error::{Error, Result};
pub use grid::{FlExponent, FrequencyGrid, GridFunction, NormKind};
pub use nf_engine::{
    boundary_term, compose, cutoff_constant, full_term, full_term_via_boundary, mkdv_shifted_term, remainder_term,
    resonant_term, s0_compose, s1_compose, CutoffPredicate, EvalMode, Evaluation, InnerKind, NormalFormTerm,
    ReductionConfig, TermKind,
};
pub use solver::{
    compare_solutions, compare_with_reference, contraction_estimate, cumulative_trapezoid, difference_experiment,
    export_trajectory, gamma_map, gamma_map_detailed, pick_parameters, reference_on_mesh, reference_pair,
    reference_solve, solve_normal_form, time_mesh, truncation_tail, ComparisonReport, DifferenceReport, ErrorBudget,
    GammaOutput, SolveReport, SolverConfig, Trajectory,
};
pub use trees::{GenerationView, NodeId, OrderedTree, Tree};
