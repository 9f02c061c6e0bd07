//! Recursive composition of a one-step model.

use crate::env::{self, EnvConfig, Obs, PhysState};
use crate::error::{Error, Result};
use crate::nn::{DynamicsModel, Mat, Tape};

/// Predicted means and log-stds for steps `1..=h`.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutPrediction {
    pub means: Vec<Vec<f64>>,
    pub log_stds: Vec<Vec<f64>>,
}

fn require_one_step(model: &DynamicsModel) -> Result<()> {
    if model.spec().action_steps != 1 {
        return Err(Error::invalid(format!(
            "expected a one-step model, got one consuming {} actions per call",
            model.spec().action_steps
        )));
    }
    Ok(())
}

/// Feed predicted means back into the model for `h = actions.len() / action_dim` steps.
pub fn rollout_predict(model: &DynamicsModel, s0: &[f64], actions: &[f64]) -> Result<RolloutPrediction> {
    require_one_step(model)?;
    let adim = model.spec().action_dim;
    if actions.is_empty() {
        return Err(Error::invalid("rollout horizon must be at least 1"));
    }
    if !actions.len().is_multiple_of(adim) {
        return Err(Error::DimensionMismatch {
            context: "rollout actions",
            expected: adim * (actions.len() / adim + 1),
            actual: actions.len(),
        });
    }
    let s0 = Mat::row_vector(s0);
    let steps: Vec<Mat> = actions.chunks(adim).map(Mat::row_vector).collect();
    let out = rollout_batch(model, &s0, &steps)?;
    Ok(RolloutPrediction {
        means: out.iter().map(|(m, _)| m.as_slice().to_vec()).collect(),
        log_stds: out.iter().map(|(_, l)| l.as_slice().to_vec()).collect(),
    })
}

/// Batched rollout: `actions[j]` is the `batch x action_dim` action at step `j`.
pub fn rollout_batch(model: &DynamicsModel, s0: &Mat, actions: &[Mat]) -> Result<Vec<(Mat, Mat)>> {
    require_one_step(model)?;
    if actions.is_empty() {
        return Err(Error::invalid("rollout horizon must be at least 1"));
    }
    for a in actions {
        model.check_batch(s0, a)?;
    }
    let mut tape = Tape::new();
    let pv = model.register(&mut tape);
    let mut state = tape.constant(s0.clone());
    let mut out = Vec::with_capacity(actions.len());
    for (j, a) in actions.iter().enumerate() {
        let (next, ls) = model.tape_step(&mut tape, &pv, state, a, None);
        if !tape.value(next).is_finite() {
            return Err(Error::DivergedRollout { step: j + 1 });
        }
        out.push((tape.value(next).clone(), tape.value(ls).clone()));
        state = next;
    }
    Ok(out)
}

/// Anything that maps a batch of states and actions to next states.
pub trait StepModel: Sync {
    fn state_dim(&self) -> usize;
    fn step_batch(&self, states: &Mat, actions: &Mat) -> Result<Mat>;
}

impl StepModel for DynamicsModel {
    fn state_dim(&self) -> usize {
        self.spec().state_dim
    }

    fn step_batch(&self, states: &Mat, actions: &Mat) -> Result<Mat> {
        require_one_step(self)?;
        DynamicsModel::step_batch(self, states, actions).map(|(s, _)| s)
    }
}

/// The true cartpole physics wrapped as a step model on observations.
#[derive(Clone, Debug)]
pub struct GroundTruthModel {
    pub cfg: EnvConfig,
}

impl GroundTruthModel {
    pub fn new(cfg: EnvConfig) -> Self {
        Self { cfg }
    }
}

impl StepModel for GroundTruthModel {
    fn state_dim(&self) -> usize {
        env::OBS_DIM
    }

    fn step_batch(&self, states: &Mat, actions: &Mat) -> Result<Mat> {
        let mut out = Mat::zeros(states.rows(), env::OBS_DIM);
        for r in 0..states.rows() {
            let obs = Obs::from_slice(states.row(r))?;
            let next = env::step(&PhysState::from_obs(&obs), actions.get(r, 0), &self.cfg)?;
            out.row_mut(r).copy_from_slice(env::observe(&next.state).as_slice());
        }
        Ok(out)
    }
}

/// Means along a rollout of any [`StepModel`].
pub fn rollout_means(model: &dyn StepModel, s0: &Mat, actions: &[Mat]) -> Result<Vec<Mat>> {
    let mut state = s0.clone();
    let mut out = Vec::with_capacity(actions.len());
    for (j, a) in actions.iter().enumerate() {
        state = model.step_batch(&state, a)?;
        if !state.is_finite() {
            return Err(Error::DivergedRollout { step: j + 1 });
        }
        out.push(state.clone());
    }
    Ok(out)
}
