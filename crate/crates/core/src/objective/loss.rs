//! The weighted multi-horizon loss, built on a tape so it can be
//! differentiated through every composition of the model.

use std::f64::consts::PI;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::data::WindowBatch;
use crate::error::{Error, Result};
use crate::nn::model::ParamVars;
use crate::nn::{DynamicsModel, GradBuffer, Mat, Tape, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Squared error averaged over dimensions (unit std).
    #[default]
    Mse,
    /// Diagonal Gaussian negative log-likelihood, summed over dimensions.
    Nll,
}

/// How the per-horizon terms are combined.
#[derive(Clone, Copy, Debug)]
pub enum HorizonWeights<'a> {
    /// Constant weights (no gradient).
    Fixed(&'a [f64]),
    /// Softmax of trainable logits, registered in the slot after the model parameters.
    Logits(&'a [f64]),
}

impl HorizonWeights<'_> {
    fn len(&self) -> usize {
        match self {
            HorizonWeights::Fixed(w) | HorizonWeights::Logits(w) => w.len(),
        }
    }
}

/// A loss scalar together with the tape that produced it.
pub struct LossTape {
    pub tape: Tape,
    pub loss: Var,
    /// Per-horizon unweighted terms, `L^(1)..L^(h)`.
    pub terms: Vec<Var>,
    n_model_params: usize,
    shapes: Vec<(usize, usize)>,
}

impl LossTape {
    pub(crate) fn new(tape: Tape, loss: Var, terms: Vec<Var>, n_model_params: usize, shapes: Vec<(usize, usize)>) -> Self {
        Self {
            tape,
            loss,
            terms,
            n_model_params,
            shapes,
        }
    }

    pub fn value(&self) -> f64 {
        self.tape.value(self.loss).scalar()
    }

    pub fn term_values(&self) -> Vec<f64> {
        self.terms.iter().map(|&t| self.tape.value(t).scalar()).collect()
    }

    /// Gradients of the loss with respect to the model parameters, and with
    /// respect to the logits when the weights are learnable.
    pub fn backward(&self) -> Result<(GradBuffer, Option<Vec<f64>>)> {
        let g = self.tape.backward(self.loss)?;
        let mut all = g.param_grads(&self.shapes);
        let logits = if all.len() > self.n_model_params {
            all.pop().map(|m| m.into_vec())
        } else {
            None
        };
        Ok((GradBuffer { grads: all }, logits))
    }
}

/// Per-sample loss of one horizon, averaged over the batch.
pub(crate) fn horizon_term(
    tape: &mut Tape,
    kind: LossKind,
    pred: Var,
    log_std: Var,
    target: &Mat,
    scale: &[f64],
) -> Var {
    let batch = target.rows() as f64;
    let dims = target.cols() as f64;
    let t = tape.constant(target.clone());
    let diff = tape.sub(pred, t);
    let zeros = vec![0.0; scale.len()];
    let err = tape.normalize(diff, &zeros, scale);
    match kind {
        LossKind::Mse => {
            let sq = tape.mul(err, err);
            let total = tape.sum(sq);
            tape.scale(total, 1.0 / (batch * dims))
        }
        LossKind::Nll => {
            let neg = tape.scale(log_std, -1.0);
            let inv_std = tape.exp(neg);
            let z = tape.mul(err, inv_std);
            let zz = tape.mul(z, z);
            let half = tape.scale(zz, 0.5);
            let with_ls = tape.add(half, log_std);
            let per = tape.add_const(with_ls, 0.5 * (2.0 * PI).ln());
            let total = tape.sum(per);
            tape.scale(total, 1.0 / batch)
        }
    }
}

/// Unroll the one-step model over the batch and record `L^(1)..L^(h)`.
pub(crate) fn recursive_terms(
    model: &DynamicsModel,
    tape: &mut Tape,
    pv: &ParamVars,
    batch: &WindowBatch,
    kind: LossKind,
    mut dropout_rng: Option<&mut dyn RngCore>,
) -> Result<Vec<Var>> {
    let scale = model.normalizer().output_scale.clone();
    let mut state = tape.constant(batch.s0.clone());
    let mut terms = Vec::with_capacity(batch.horizon());
    for j in 0..batch.horizon() {
        let rng = dropout_rng.as_mut().map(|r| &mut **r as &mut dyn RngCore);
        let (next, ls) = model.tape_step(tape, pv, state, &batch.actions[j], rng);
        if !tape.value(next).is_finite() {
            return Err(Error::DivergedRollout { step: j + 1 });
        }
        let term = horizon_term(tape, kind, next, ls, &batch.targets[j], &scale);
        if !tape.value(term).scalar().is_finite() {
            return Err(Error::DivergedLoss { horizon: j + 1 });
        }
        terms.push(term);
        state = next;
    }
    Ok(terms)
}

pub(crate) fn combine(tape: &mut Tape, terms: &[Var], weights: HorizonWeights, slot: usize) -> Var {
    let stacked = tape.stack(terms);
    let alpha = match weights {
        HorizonWeights::Fixed(w) => tape.constant(Mat::row_vector(w)),
        HorizonWeights::Logits(l) => {
            let p = tape.param(Mat::row_vector(l), slot);
            tape.softmax(p)
        }
    };
    let weighted = tape.mul(stacked, alpha);
    tape.sum(weighted)
}

/// `sum_j alpha_j L(s_{t+j}, p^j(s_t, a_{t:t+j}))` averaged over the batch.
pub fn multistep_loss(
    model: &DynamicsModel,
    batch: &WindowBatch,
    weights: HorizonWeights,
    kind: LossKind,
    dropout_rng: Option<&mut dyn RngCore>,
) -> Result<LossTape> {
    if model.spec().action_steps != 1 {
        return Err(Error::invalid("multistep_loss needs a one-step model"));
    }
    if weights.len() != batch.horizon() {
        return Err(Error::DimensionMismatch {
            context: "multistep_loss weights",
            expected: batch.horizon(),
            actual: weights.len(),
        });
    }
    if batch.horizon() == 0 || batch.is_empty() {
        return Err(Error::invalid("multistep_loss needs a non-empty batch with h >= 1"));
    }
    let mut tape = Tape::new();
    let pv = model.register(&mut tape);
    let terms = recursive_terms(model, &mut tape, &pv, batch, kind, dropout_rng)?;
    let n = model.params().len();
    let loss = combine(&mut tape, &terms, weights, n);
    if !tape.value(loss).scalar().is_finite() {
        return Err(Error::DivergedLoss { horizon: batch.horizon() });
    }
    let mut shapes = model.param_shapes();
    if let HorizonWeights::Logits(l) = weights {
        shapes.push((1, l.len()));
    }
    Ok(LossTape {
        tape,
        loss,
        terms,
        n_model_params: n,
        shapes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, PolicyKind, SplitName};
    use crate::env::EnvConfig;
    use crate::nn::{finite_difference_grad, max_relative_error, ModelSpec};
    use crate::nn::gradcheck::RELATIVE_ERROR_FLOOR;

    fn batch(h: usize, n: usize) -> WindowBatch {
        let cfg = EnvConfig {
            episode_len: 30,
            ..EnvConfig::default()
        };
        let ds = generate(PolicyKind::Medium, 3, &cfg, 2).unwrap();
        let w = ds.windows(SplitName::Train, h).unwrap();
        WindowBatch::from_windows(&w[..n]).unwrap()
    }

    fn model() -> DynamicsModel {
        DynamicsModel::new(ModelSpec::one_step(5, 1, 10, 2), 4).unwrap()
    }

    #[test]
    fn degenerate_weights_equal_one_step_loss() {
        let m = model();
        let b = batch(4, 6);
        for kind in [LossKind::Mse, LossKind::Nll] {
            let multi = multistep_loss(&m, &b, HorizonWeights::Fixed(&[1.0, 0.0, 0.0, 0.0]), kind, None)
                .unwrap();
            let one = multistep_loss(&m, &b.truncated(1), HorizonWeights::Fixed(&[1.0]), kind, None).unwrap();
            assert_eq!(multi.value(), one.value());
            let (g1, _) = multi.backward().unwrap();
            let (g2, _) = one.backward().unwrap();
            assert_eq!(g1, g2);
        }
    }

    #[test]
    fn two_step_half_half_matches_separate_terms() {
        let m = model();
        let b = batch(2, 5);
        let both = multistep_loss(&m, &b, HorizonWeights::Fixed(&[0.5, 0.5]), LossKind::Mse, None).unwrap();
        // second term computed independently from an explicit composition
        let s1 = m.step_batch(&b.s0, &b.actions[0]).unwrap().0;
        let s2 = m.step_batch(&s1, &b.actions[1]).unwrap().0;
        let scale = &m.normalizer().output_scale;
        let mse = |p: &Mat, t: &Mat| {
            let mut acc = 0.0;
            for r in 0..p.rows() {
                for c in 0..p.cols() {
                    acc += ((p.get(r, c) - t.get(r, c)) / scale[c]).powi(2);
                }
            }
            acc / (p.rows() * p.cols()) as f64
        };
        let expected = 0.5 * mse(&s1, &b.targets[0]) + 0.5 * mse(&s2, &b.targets[1]);
        assert!((both.value() - expected).abs() < 1e-12 * expected.max(1.0));
    }

    #[test]
    fn perfect_model_has_zero_mse() {
        // zero network in delta mode predicts "no change"; feed it a constant trajectory
        let m = DynamicsModel::zeros(ModelSpec::one_step(5, 1, 4, 2)).unwrap();
        let s = Mat::from_rows(&[[0.5, -1.0, 0.0, 0.0, 0.0]]).unwrap();
        let b = WindowBatch {
            s0: s.clone(),
            actions: vec![Mat::zeros(1, 1); 3],
            targets: vec![s; 3],
        };
        let l = multistep_loss(&m, &b, HorizonWeights::Fixed(&[0.2, 0.3, 0.5]), LossKind::Mse, None).unwrap();
        assert_eq!(l.value(), 0.0);
    }

    #[test]
    fn weight_length_mismatch_is_rejected() {
        let r = multistep_loss(&model(), &batch(3, 2), HorizonWeights::Fixed(&[1.0]), LossKind::Mse, None);
        assert!(matches!(r, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let m = DynamicsModel::new(ModelSpec::one_step(5, 1, 6, 2), 9).unwrap();
        let b = batch(3, 3);
        let w = [0.5, 0.3, 0.2];
        for kind in [LossKind::Mse, LossKind::Nll] {
            let lt = multistep_loss(&m, &b, HorizonWeights::Fixed(&w), kind, None).unwrap();
            let (g, _) = lt.backward().unwrap();
            let fd = finite_difference_grad(
                &m,
                |mm| Ok(multistep_loss(mm, &b, HorizonWeights::Fixed(&w), kind, None)?.value()),
                1e-5,
            )
            .unwrap();
            let err = max_relative_error(&g.grads, &fd.grads, RELATIVE_ERROR_FLOOR);
            assert!(err < 1e-4, "{kind:?}: {err}");
        }
    }

    #[test]
    fn logits_gradient_matches_finite_differences() {
        let m = model();
        let b = batch(3, 4);
        let logits = [0.3, -0.2, 0.1];
        let lt = multistep_loss(&m, &b, HorizonWeights::Logits(&logits), LossKind::Mse, None).unwrap();
        let (_, g) = lt.backward().unwrap();
        let g = g.unwrap();
        for k in 0..3 {
            let eval = |d: f64| {
                let mut l = logits;
                l[k] += d;
                multistep_loss(&m, &b, HorizonWeights::Logits(&l), LossKind::Mse, None)
                    .unwrap()
                    .value()
            };
            let fd = (eval(1e-5) - eval(-1e-5)) / 2e-5;
            assert!((fd - g[k]).abs() < 1e-6 * fd.abs().max(1.0));
        }
    }
}
