//! Simulation and maximum-score estimation for one-to-one matching markets
//! with transferable utility.
//!
//! Pipeline: [`market::generate_market`] draws agents and pair noise,
//! [`equilibrium::solve_assignment`] finds the surplus-maximizing matching and
//! supporting transfers, [`inequalities::build_inequalities`] turns the
//! observed outcome into stability inequalities, and
//! [`estimator::estimate`] maximizes the count of satisfied inequalities.
//! [`montecarlo`] repeats this over seeded replications.

pub mod assignment;
pub mod de;
pub mod equilibrium;
pub mod error;
pub mod estimator;
pub mod format;
pub mod inequalities;
pub mod market;
pub mod montecarlo;

pub use de::{maximize, DeConfig, DeResult};
pub use equilibrium::{
    extract_transfers, solve_assignment, verify_stability, MatchPair, MatchingOutcome, ObservedData, StabilityReport,
};
pub use error::{Error, Result};
pub use estimator::{estimate, objective_grid, score, Candidate, Estimate, GridAxis, Objective, ObjectiveGrid, ScoreValue};
pub use inequalities::{build_inequalities, count_formula, Inequality, InequalitySet, Model, ScoreConfig};
pub use market::{generate_market, joint_production, value_matrix, Market, ProductionSpec, SpecKind};
pub use montecarlo::{lambda_sweep, run_experiment, run_replication, unmatched_threshold_scan, ExperimentSummary, Scenario};
