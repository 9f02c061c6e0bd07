//! CEM model-predictive control on learned or exact models, and the
//! pure-batch and iterated-batch experiment loops.

pub mod batch;
pub mod cem;

pub use batch::{
    dataset_label, iterated_batch_run, pure_batch_run, CurveRow, LearningCurve, LoopConfig, LoopMode, PureBatchReport,
    ReturnRow, GROUND_TRUTH_VARIANT, RANDOM_VARIANT,
};
pub use cem::{cem_plan, cem_plan_from, evaluate_policy, planner_rng, CemConfig, MpcPolicy, Plan, ReturnReport};
