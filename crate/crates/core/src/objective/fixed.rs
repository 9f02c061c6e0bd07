//! Direct models that jump `h` steps in one application.

use rand::RngCore;

use super::loss::{horizon_term, LossKind, LossTape};
use crate::data::WindowBatch;
use crate::error::{Error, Result};
use crate::nn::{DynamicsModel, Mat, ModelSpec, Tape};

/// A [`DynamicsModel`] whose input holds the state and `h` consecutive actions.
#[derive(Clone, Debug, PartialEq)]
pub struct FixedHorizonModel {
    model: DynamicsModel,
}

impl FixedHorizonModel {
    pub fn new(state_dim: usize, action_dim: usize, h: usize, hidden: usize, depth: usize, seed: u64) -> Result<Self> {
        let spec = ModelSpec {
            action_steps: h,
            ..ModelSpec::one_step(state_dim, action_dim, hidden, depth)
        };
        Self::from_model(DynamicsModel::new(spec, seed)?)
    }

    pub fn from_model(model: DynamicsModel) -> Result<Self> {
        if model.spec().action_steps == 0 {
            return Err(Error::invalid("fixed-horizon model needs h >= 1"));
        }
        Ok(Self { model })
    }

    pub fn horizon(&self) -> usize {
        self.model.spec().action_steps
    }

    pub fn model(&self) -> &DynamicsModel {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut DynamicsModel {
        &mut self.model
    }

    pub fn into_model(self) -> DynamicsModel {
        self.model
    }

    /// One application: state plus `h` actions to the state `h` steps later.
    pub fn step_batch(&self, states: &Mat, actions: &Mat) -> Result<Mat> {
        self.model.step_batch(states, actions).map(|(s, _)| s)
    }
}

/// Loss against `s_{t+h}` only.
pub fn fixed_horizon_loss(
    model: &FixedHorizonModel,
    batch: &WindowBatch,
    kind: LossKind,
    dropout_rng: Option<&mut dyn RngCore>,
) -> Result<LossTape> {
    let h = model.horizon();
    if batch.horizon() != h {
        return Err(Error::DimensionMismatch {
            context: "fixed-horizon window length",
            expected: h,
            actual: batch.horizon(),
        });
    }
    if batch.is_empty() {
        return Err(Error::invalid("fixed_horizon_loss needs a non-empty batch"));
    }
    let m = &model.model;
    let actions = batch.action_block(0, h);
    m.check_batch(&batch.s0, &actions)?;
    let mut tape = Tape::new();
    let pv = m.register(&mut tape);
    let s0 = tape.constant(batch.s0.clone());
    let (pred, ls) = m.tape_step(&mut tape, &pv, s0, &actions, dropout_rng);
    if !tape.value(pred).is_finite() {
        return Err(Error::DivergedRollout { step: 1 });
    }
    let scale = m.normalizer().output_scale.clone();
    let loss = horizon_term(&mut tape, kind, pred, ls, &batch.targets[h - 1], &scale);
    if !tape.value(loss).scalar().is_finite() {
        return Err(Error::DivergedLoss { horizon: h });
    }
    Ok(LossTape::new(tape, loss, vec![loss], m.params().len(), m.param_shapes()))
}

/// Apply the model `H / h` times, `H = actions.len() / action_dim`.
pub fn compose_fixed(model: &FixedHorizonModel, s0: &[f64], actions: &[f64]) -> Result<Vec<f64>> {
    let adim = model.model.spec().action_dim;
    if !actions.len().is_multiple_of(adim) {
        return Err(Error::invalid("action sequence length is not a multiple of action_dim"));
    }
    let steps: Vec<Mat> = actions.chunks(adim).map(Mat::row_vector).collect();
    compose_fixed_batch(model, &Mat::row_vector(s0), &steps).map(Mat::into_vec)
}

/// Batched form; `actions[j]` is the `batch x action_dim` action at step `j`.
pub fn compose_fixed_batch(model: &FixedHorizonModel, s0: &Mat, actions: &[Mat]) -> Result<Mat> {
    let h = model.horizon();
    let total = actions.len();
    if total == 0 {
        return Err(Error::invalid("compose_fixed needs at least one action"));
    }
    if !total.is_multiple_of(h) {
        return Err(Error::NonDivisibleHorizon {
            horizon: total,
            model_horizon: h,
        });
    }
    let mut state = s0.clone();
    for (call, chunk) in actions.chunks(h).enumerate() {
        let block = chunk[1..].iter().fold(chunk[0].clone(), |acc, a| acc.hcat(a));
        state = model.step_batch(&state, &block)?;
        if !state.is_finite() {
            return Err(Error::DivergedRollout { step: (call + 1) * h });
        }
    }
    Ok(state)
}
