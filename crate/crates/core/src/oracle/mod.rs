//! Ground truth for checking the estimators: laws with known moments,
//! exhaustive enumeration over assignments, closed-form asymptotic variances
//! and a Monte Carlo engine.

pub mod dgp;
pub mod enumerate;
pub mod gap;
pub mod montecarlo;
pub mod theory;

pub use dgp::Dgp;
pub use enumerate::{
    conditional_enumeration, enumerate_complete, enumerate_design, enumerate_stratified,
};
pub use gap::{finite_pop_gap, GapReport};
pub use montecarlo::{monte_carlo, MethodSpec, Scenario, ScenarioReport};
pub use theory::{theoretical_variances, TheoreticalVariances};
