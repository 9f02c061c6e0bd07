//! Dense matrices, a reverse-mode tape, the probabilistic dynamics network,
//! Adam and finite-difference gradient checks.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod mat;
pub mod model;
pub mod tape;

pub use adam::{adam_step, AdamState};
pub use gradcheck::{finite_difference_grad, max_relative_error, relative_error};
pub use mat::Mat;
pub use model::{
    DynamicsModel, GaussianPrediction, GradBuffer, ModelSpec, Normalizer, LOG_STD_MAX, LOG_STD_MIN,
    MEAN_HEAD_SCALE,
};
pub use tape::{Gradients, Tape, Var};
