//! Primal-dual first-order solvers for nested stochastic composite
//! optimization min_{x in X} f_1(f_2(...f_k(x)...)) + u(x): a vanilla
//! two-layer algorithm, a general multilayer engine with modular per-layer
//! dual updates, the matching stepsize policies and restart schemes, and
//! benchmark problems with brute-force reference solvers.

pub mod accept;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod lagrangian;
pub mod layer;
pub mod linalg;
pub mod policies;
pub mod problem;
pub mod problems;
pub mod rng;
pub mod scalar;
pub mod trace;
pub mod vanilla;

pub use engine::{run_restarted, run_ssd, RestartConfig, RestartMode, SsdEngine};
pub use error::{Result, SsdError};
pub use linalg::{Matrix, Vector};
pub use policies::Regime;
pub use problem::{CompositionProblem, FeasibleSet, Regularizer};
pub use scalar::Scalar;
pub use trace::{RunTrace, TimingMode};
pub use vanilla::{run_vanilla, TwoLayerProblem, VanillaForm, VanillaRegime};

/// Concrete double-precision aliases; the harness and the acceptance suite
/// run on these.
pub type Vec64 = Vector<f64>;
pub type Mat64 = Matrix<f64>;
pub type Problem64 = CompositionProblem<f64>;
pub type TwoLayer64 = TwoLayerProblem<f64>;
pub type Trace64 = RunTrace<f64>;
