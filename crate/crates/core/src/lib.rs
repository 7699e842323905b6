//! Sleeping EXP3 for adversarial bandits with multiple plays and
//! stochastically available arms.
//!
//! The learner keeps exponential weights over `n` arms. Each round it sees
//! the available set, projects its normalized weights onto the capped
//! simplex ([`projection`]), samples a k-subset with matching marginals
//! ([`decomposition`]), and updates with importance-weighted loss
//! estimates whose denominators come from [`estimator`]. The simulation
//! side ([`environment`], [`oracle`], [`runner`]) measures realized regret
//! against the best availability-set-to-subset policy in hindsight.

pub mod decomposition;
pub mod environment;
pub mod error;
pub mod estimator;
pub mod oracle;
pub mod policy;
pub mod projection;
pub mod runner;
pub mod types;

pub use decomposition::{decompose, sample_corner, Corner, CornerDecomposition};
pub use environment::{Environment, EnvironmentConfig, LossGeneratorSpec, RoundRecord};
pub use error::{Error, Result};
pub use estimator::{exact_joint_probability, monte_carlo_joint_probability, AvailabilityEstimate};
pub use oracle::{best_policy, regret, HindsightPolicy};
pub use policy::{EstimatorKind, Horizon, ParameterSchedule, PolicyState};
pub use projection::{cap_project, scaled_probabilities, CappedDistribution};
pub use runner::{run_experiment, AggregateReport, ExperimentSpec};
pub use types::{
    normalize_over_set, AvailabilitySet, LossVector, ScaledProbabilityVector, SeededRng, WeightVector,
};
