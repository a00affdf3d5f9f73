//! Dense numerics: parameter storage, layers, sampling, optimisation and
//! gradient verification.

pub mod adam;
pub mod gradcheck;
pub mod nn;
pub mod objective;
pub mod params;
pub mod rng;

pub use adam::Adam;
pub use gradcheck::{check_gradient, check_objective_terms, compare_with_finite_differences, GradCheckReport};
pub use objective::{value_and_grad, BatchView, Frozen, LossReport, LossTerms, Objective, TermMask};
pub use params::{Block, Layout, ParamVector};
pub use rng::sample_gaussian;
