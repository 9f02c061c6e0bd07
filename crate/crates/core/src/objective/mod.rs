//! Recursive rollouts, the multi-horizon loss, weight profiles, direct
//! fixed-horizon models and the scalar analytic gradient.

pub mod analytic;
pub mod fixed;
pub mod loss;
pub mod oracle;
pub mod rollout;
pub mod weights;

pub use analytic::{
    analytic_gradient_1d, analytic_terms, state_derivative_gradient_1d, AnalyticGradTerms, ScalarDynamics,
    ScalarWindow, StepPartials,
};
pub use fixed::{compose_fixed, compose_fixed_batch, fixed_horizon_loss, FixedHorizonModel};
pub use loss::{multistep_loss, HorizonWeights, LossKind, LossTape};
pub use oracle::{multistep_fd_error, scalar_oracle, ScalarOracleReport, ANALYTIC_TOLERANCE, FD_TOLERANCE};
pub use rollout::{rollout_batch, rollout_means, rollout_predict, GroundTruthModel, RolloutPrediction, StepModel};
pub use weights::{decay_raw, resolve_weights, WeightProfile};
