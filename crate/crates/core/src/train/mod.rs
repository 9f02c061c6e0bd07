//! Training loop, R2 evaluation and weight-profile comparison.

pub mod compare;
pub mod eval;
pub mod trainer;

pub use compare::{compare_profiles, mean_ci90, CellResult, ComparisonRow, ProfileComparison, ProfileSpec};
pub use eval::{r2_at_horizon, r2_curve, r2_scores, ConstantPredictor, HorizonPredictor, Predictor, R2Report, R2Row};
pub use trainer::{fit_normalizer, train, EpochRecord, StepStats, TrainConfig, TrainLog, TrainOutcome, Trainer};
