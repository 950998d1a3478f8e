//! Benchmark problem constructors paired with exact evaluators and
//! high-accuracy reference solvers.

pub mod composite;
pub mod minimax;
pub mod reference;
pub mod risk;
pub mod scenario_io;
pub mod synthetic;

pub use composite::{composite_instance, make_composite_problem, CompositeNoise};
pub use minimax::{make_minimax_problem, CompositeSpec};
pub use reference::{reference_solve, ObjectiveOracle, ReferenceSolution};
pub use risk::{
    h_gamma, h_gamma_dual_prox, make_risk_problem, risk_reference, risk_rho_exact,
    risk_rho_smoothed, ScenarioSet,
};
pub use scenario_io::{load_scenarios, parse_scenarios};
pub use synthetic::{
    all_smooth_stack, det_nonsmooth_instance, det_smooth_instance, det_smoothable_instance,
    random_det_stack, resampling_stack, restart_instance, sto_strongly_convex_instance,
    two_layer_sto_bench, two_layer_sto_strong_bench,
};
