//! Three-way gradient comparison: closed form, tape and finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::analytic::{analytic_gradient_1d, ScalarWindow};
use super::loss::{multistep_loss, HorizonWeights, LossKind};
use crate::data::WindowBatch;
use crate::error::Result;
use crate::nn::gradcheck::RELATIVE_ERROR_FLOOR;
use crate::nn::{finite_difference_grad, max_relative_error, DynamicsModel, Mat, ModelSpec};

/// Closed form against tape.
pub const ANALYTIC_TOLERANCE: f64 = 1e-8;
/// Either gradient against central differences.
pub const FD_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarOracleReport {
    pub seed: u64,
    pub horizon: usize,
    pub analytic_vs_tape: f64,
    pub analytic_vs_fd: f64,
    pub tape_vs_fd: f64,
}

impl ScalarOracleReport {
    pub fn passes(&self) -> bool {
        self.analytic_vs_tape < ANALYTIC_TOLERANCE
            && self.analytic_vs_fd < FD_TOLERANCE
            && self.tape_vs_fd < FD_TOLERANCE
    }
}

fn flat_rel(a: &[f64], b: &[f64]) -> f64 {
    let a = Mat::row_vector(a);
    let b = Mat::row_vector(b);
    max_relative_error(std::slice::from_ref(&a), std::slice::from_ref(&b), RELATIVE_ERROR_FLOOR)
}

/// A seeded scalar MSE model and window scored by all three gradients.
pub fn scalar_oracle(seed: u64, h: usize, hidden: usize, fd_step: f64) -> Result<ScalarOracleReport> {
    let model = DynamicsModel::new(ModelSpec::one_step(1, 1, hidden, 2), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(4);
    let window = ScalarWindow {
        s0: rng.random_range(-1.0..1.0),
        actions: (0..h).map(|_| rng.random_range(-1.0..1.0)).collect(),
        targets: (0..h).map(|_| rng.random_range(-1.0..1.0)).collect(),
    };
    let raw: Vec<f64> = (0..h).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let alpha: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let batch = WindowBatch {
        s0: Mat::row_vector(&[window.s0]),
        actions: window.actions.iter().map(|&a| Mat::row_vector(&[a])).collect(),
        targets: window.targets.iter().map(|&t| Mat::row_vector(&[t])).collect(),
    };
    let loss = |m: &DynamicsModel| multistep_loss(m, &batch, HorizonWeights::Fixed(&alpha), LossKind::Mse, None);

    let analytic = analytic_gradient_1d(&model, &window, &alpha)?;
    let tape: Vec<f64> = loss(&model)?.backward()?.0.grads.into_iter().flat_map(Mat::into_vec).collect();
    let fd: Vec<f64> = finite_difference_grad(&model, |m| Ok(loss(m)?.value()), fd_step)?
        .grads
        .into_iter()
        .flat_map(Mat::into_vec)
        .collect();
    Ok(ScalarOracleReport {
        seed,
        horizon: h,
        analytic_vs_tape: flat_rel(&analytic, &tape),
        analytic_vs_fd: flat_rel(&analytic, &fd),
        tape_vs_fd: flat_rel(&tape, &fd),
    })
}

/// Max relative error between the tape gradient of [`multistep_loss`] and
/// central differences.
pub fn multistep_fd_error(
    model: &DynamicsModel,
    batch: &WindowBatch,
    alpha: &[f64],
    kind: LossKind,
    fd_step: f64,
) -> Result<f64> {
    let loss = |m: &DynamicsModel| multistep_loss(m, batch, HorizonWeights::Fixed(alpha), kind, None);
    let (g, _) = loss(model)?.backward()?;
    let fd = finite_difference_grad(model, |m| Ok(loss(m)?.value()), fd_step)?;
    Ok(max_relative_error(&g.grads, &fd.grads, RELATIVE_ERROR_FLOOR))
}
