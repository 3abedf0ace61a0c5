//! Nonsmooth low-rank matrix recovery: measurement operators, composite
//! objectives, subgradient and prox-linear solvers, regularity estimators and an
//! experiment harness.

pub mod composite;
pub mod error;
pub mod harness;
pub mod operators;
pub mod point;
pub mod problems;
pub mod proxsub;
pub mod regularity;
pub mod rng;
pub mod selftest;
pub mod solvers;

pub use composite::{PenaltyKind, ProblemInstance, RecoveryMetric, Truth};
pub use error::{Error, Result};
pub use operators::{
    make_ensemble, observe, DenseNoise, EnsembleKind, MeasurementEnsemble, Observation, OutlierModel, Payload,
};
pub use point::{Point, ShapeTag};
pub use proxsub::{prox_row_norm, solve_subproblem, ConstraintSet, StepPenalty, SubproblemOptions};
pub use solvers::{
    geometric, gradient_descent, initialize, polyak, prox_linear, SolveTrace, SolverConfig, StepRule, TraceStatus,
};
