//! Minibatch training of one-step (multi-horizon loss) and fixed-horizon models.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Moments, SplitName, WindowBatch};
use crate::env::{ACTION_DIM, OBS_DIM};
use crate::error::{Error, Result};
use crate::nn::{adam_step, AdamState, DynamicsModel, Mat, ModelSpec, Normalizer};
use crate::objective::{
    fixed_horizon_loss, multistep_loss, resolve_weights, FixedHorizonModel, HorizonWeights, LossKind, LossTape,
    WeightProfile,
};

use super::Predictor;

const VALID_CHUNK: usize = 512;

fn default_lr() -> f64 {
    1e-3
}
fn default_batch() -> usize {
    64
}
fn default_epochs() -> usize {
    30
}
fn default_true() -> bool {
    true
}
fn default_hidden() -> usize {
    64
}
fn default_depth() -> usize {
    2
}
fn default_horizon() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_horizon")]
    pub max_horizon: usize,
    #[serde(default = "uniform")]
    pub weight_profile: WeightProfile,
    #[serde(default)]
    pub loss_kind: LossKind,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub delta_mode: bool,
    #[serde(default = "default_true")]
    pub normalize: bool,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_depth")]
    pub depth: usize,
    /// Train a direct model over `max_horizon` steps instead of a one-step model.
    #[serde(default)]
    pub fixed_horizon: bool,
    /// Minibatches per epoch; defaults to train transitions / batch size.
    #[serde(default)]
    pub steps_per_epoch: Option<usize>,
}

fn uniform() -> WeightProfile {
    WeightProfile::Uniform
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_horizon: 1,
            weight_profile: WeightProfile::Uniform,
            loss_kind: LossKind::Mse,
            lr: default_lr(),
            batch_size: default_batch(),
            epochs: default_epochs(),
            seed: 0,
            delta_mode: true,
            normalize: true,
            dropout: 0.0,
            hidden: default_hidden(),
            depth: default_depth(),
            fixed_horizon: false,
            steps_per_epoch: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_horizon == 0 {
            return Err(Error::invalid("max_horizon must be at least 1"));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if self.steps_per_epoch == Some(0) {
            return Err(Error::invalid("steps_per_epoch must be at least 1"));
        }
        if self.fixed_horizon && !matches!(self.weight_profile, WeightProfile::Uniform) {
            return Err(Error::invalid("fixed-horizon models take no weight profile"));
        }
        // surfaces bad profile parameters before any work is done
        resolve_weights(&self.weight_profile, self.max_horizon)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean unweighted train loss per horizon term over the epoch.
    pub train_terms: Vec<f64>,
    pub train_loss: f64,
    /// `None` when the dataset has no validation split.
    pub valid_loss: Option<f64>,
    /// Weights in force during the epoch.
    pub alpha: Vec<f64>,
    pub wall_clock_s: f64,
    pub diverged: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub horizon: usize,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub diverged_at: Option<usize>,
}

impl TrainLog {
    /// Columns `epoch, term_1..term_h, valid_loss, alpha_1..alpha_h`.
    /// Wall-clock time is left out so the file is reproducible.
    pub fn to_csv(&self) -> String {
        let terms = self.epochs.first().map_or(self.horizon, |e| e.train_terms.len());
        let mut header = vec!["epoch".to_string()];
        header.extend((1..=terms).map(|j| format!("term_{j}")));
        header.push("valid_loss".into());
        header.extend((1..=terms).map(|j| format!("alpha_{j}")));
        let mut out = header.join(",") + "\n";
        for e in &self.epochs {
            let mut row = vec![e.epoch.to_string()];
            row.extend(e.train_terms.iter().map(|v| v.to_string()));
            row.push(match (e.diverged, e.valid_loss) {
                (true, _) => "diverged".into(),
                (false, Some(v)) => v.to_string(),
                (false, None) => String::new(),
            });
            row.extend(e.alpha.iter().map(|v| v.to_string()));
            out += &(row.join(",") + "\n");
        }
        out
    }
}

/// Normalizer for a model over `action_steps` actions predicting the state
/// `action_steps` steps ahead.
pub fn fit_normalizer(ds: &Dataset, action_steps: usize, delta_mode: bool) -> Result<Normalizer> {
    let stats = &ds.norm_stats;
    let mut input_shift = stats.obs.mean.clone();
    let mut input_scale = stats.obs.std.clone();
    for _ in 0..action_steps {
        input_shift.extend(&stats.action.mean);
        input_scale.extend(&stats.action.std);
    }
    let (output_shift, output_scale) = if delta_mode {
        let index = ds.window_index(SplitName::Train, action_steps)?;
        let deltas: Vec<[f64; OBS_DIM]> = index
            .iter()
            .map(|&(e, t)| {
                let ep = &ds.episodes[e];
                let a = ep.transitions[t].s.0;
                let b = ep.transitions[t + action_steps - 1].s_next.0;
                std::array::from_fn(|d| b[d] - a[d])
            })
            .collect();
        let m = Moments::from_rows(deltas.iter().map(|d| d.as_slice()), OBS_DIM);
        (m.mean, m.std)
    } else {
        (stats.obs.mean.clone(), stats.obs.std.clone())
    };
    Ok(Normalizer {
        input_shift,
        input_scale,
        output_shift,
        output_scale,
    })
}

/// Result of one optimizer step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub terms: Vec<f64>,
}

/// Stateful trainer. [`Trainer::step`] is exposed so callers can drive the
/// optimizer with their own batches.
pub struct Trainer<'a> {
    ds: &'a Dataset,
    cfg: TrainConfig,
    model: Predictor,
    adam: AdamState,
    logits: Vec<f64>,
    logit_adam: AdamState,
    ema: Vec<f64>,
    sample_rng: ChaCha8Rng,
    dropout_rng: ChaCha8Rng,
    valid: Vec<WindowBatch>,
}

impl<'a> Trainer<'a> {
    pub fn new(ds: &'a Dataset, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let h = cfg.max_horizon;
        let action_steps = if cfg.fixed_horizon { h } else { 1 };
        let spec = ModelSpec {
            state_dim: OBS_DIM,
            action_dim: ACTION_DIM,
            action_steps,
            hidden: cfg.hidden,
            depth: cfg.depth,
            delta_mode: cfg.delta_mode,
            dropout: cfg.dropout,
        };
        let mut net = DynamicsModel::new(spec, cfg.seed)?;
        if cfg.normalize {
            net.set_normalizer(fit_normalizer(ds, action_steps, cfg.delta_mode)?)?;
        }
        let model = if cfg.fixed_horizon {
            Predictor::Fixed(FixedHorizonModel::from_model(net)?)
        } else {
            Predictor::OneStep(net)
        };
        let adam = AdamState::new(&model.net().param_shapes());

        let logits = match &cfg.weight_profile {
            WeightProfile::Learnable { logits } if !logits.is_empty() => logits.clone(),
            _ => vec![0.0; h],
        };
        let ema = match &cfg.weight_profile {
            WeightProfile::Proportional { ema_losses, .. } => ema_losses.clone(),
            _ => Vec::new(),
        };

        let mut sample_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        sample_rng.set_stream(1);
        let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        dropout_rng.set_stream(2);

        let valid = if ds.split.valid.is_empty() {
            Vec::new()
        } else {
            ds.windows(SplitName::Valid, h)?
                .chunks(VALID_CHUNK)
                .map(WindowBatch::from_windows)
                .collect::<Result<_>>()?
        };

        Ok(Self {
            ds,
            logit_adam: AdamState::new(&[(1, h)]),
            cfg,
            model,
            adam,
            logits,
            ema,
            sample_rng,
            dropout_rng,
            valid,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn model(&self) -> &Predictor {
        &self.model
    }

    pub fn into_model(self) -> Predictor {
        self.model
    }

    /// Weights currently applied to the horizon terms.
    pub fn alpha(&self) -> Result<Vec<f64>> {
        let h = self.cfg.max_horizon;
        if self.cfg.fixed_horizon {
            return Ok(vec![1.0]);
        }
        match &self.cfg.weight_profile {
            WeightProfile::Learnable { .. } => resolve_weights(
                &WeightProfile::Learnable {
                    logits: self.logits.clone(),
                },
                h,
            ),
            WeightProfile::Proportional { ema_rate, .. } => resolve_weights(
                &WeightProfile::Proportional {
                    ema_losses: self.ema.clone(),
                    ema_rate: *ema_rate,
                },
                h,
            ),
            p => resolve_weights(p, h),
        }
    }

    fn loss(&mut self, batch: &WindowBatch, alpha: &[f64], train: bool) -> Result<LossTape> {
        let rng: Option<&mut dyn rand::RngCore> = if train && self.cfg.dropout > 0.0 {
            Some(&mut self.dropout_rng)
        } else {
            None
        };
        match &self.model {
            Predictor::Fixed(m) => fixed_horizon_loss(m, batch, self.cfg.loss_kind, rng),
            Predictor::OneStep(m) => {
                let weights = match self.cfg.weight_profile {
                    WeightProfile::Learnable { .. } if train => HorizonWeights::Logits(&self.logits),
                    _ => HorizonWeights::Fixed(alpha),
                };
                multistep_loss(m, batch, weights, self.cfg.loss_kind, rng)
            }
        }
    }

    /// Draw a training minibatch of windows of length `max_horizon`.
    pub fn sample_batch(&mut self) -> Result<WindowBatch> {
        let w = self.ds.sample_windows(
            SplitName::Train,
            self.cfg.max_horizon,
            self.cfg.batch_size,
            &mut self.sample_rng,
        )?;
        WindowBatch::from_windows(&w)
    }

    /// One Adam update on `batch`. Parameters are untouched if the loss or
    /// its gradient is not finite.
    pub fn step(&mut self, batch: &WindowBatch) -> Result<StepStats> {
        let alpha = self.alpha()?;
        let lt = self.loss(batch, &alpha, true)?;
        let (grads, logit_grad) = lt.backward()?;
        if !grads.is_finite() || logit_grad.as_ref().is_some_and(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::NumericalInstability("non-finite gradient".into()));
        }
        let stats = StepStats {
            loss: lt.value(),
            terms: lt.term_values(),
        };
        adam_step(self.model.net_mut().params_mut(), &grads.grads, &mut self.adam, self.cfg.lr)?;
        if let Some(g) = logit_grad {
            let mut p = [Mat::row_vector(&self.logits)];
            adam_step(&mut p, &[Mat::row_vector(&g)], &mut self.logit_adam, self.cfg.lr)?;
            self.logits = p[0].as_slice().to_vec();
        }
        Ok(stats)
    }

    /// Weights used to score the validation split. Profiles whose weights
    /// move during training are scored with uniform weights so epochs stay
    /// comparable.
    fn valid_alpha(&self) -> Result<Vec<f64>> {
        match self.cfg.weight_profile {
            WeightProfile::Learnable { .. } | WeightProfile::Proportional { .. } if !self.cfg.fixed_horizon => {
                resolve_weights(&WeightProfile::Uniform, self.cfg.max_horizon)
            }
            _ => self.alpha(),
        }
    }

    /// Mean validation loss over every window of the validation split.
    pub fn validation_loss(&mut self) -> Result<Option<f64>> {
        if self.valid.is_empty() {
            return Ok(None);
        }
        let alpha = self.valid_alpha()?;
        let batches = std::mem::take(&mut self.valid);
        let mut total = 0.0;
        let mut count = 0usize;
        let mut result = Ok(());
        for b in &batches {
            match self.loss(b, &alpha, false) {
                Ok(lt) => {
                    total += lt.value() * b.len() as f64;
                    count += b.len();
                }
                Err(e) => {
                    result = Err(e);
                    break;
                }
            }
        }
        self.valid = batches;
        result?;
        Ok(Some(total / count as f64))
    }

    fn steps_per_epoch(&self) -> usize {
        self.cfg
            .steps_per_epoch
            .unwrap_or_else(|| (self.ds.n_transitions(SplitName::Train) / self.cfg.batch_size).max(1))
    }

    fn update_ema(&mut self, term_means: &[f64]) {
        if let WeightProfile::Proportional { ema_rate, .. } = self.cfg.weight_profile {
            if self.ema.is_empty() {
                self.ema = term_means.to_vec();
            } else {
                for (e, t) in self.ema.iter_mut().zip(term_means) {
                    *e = (1.0 - ema_rate) * *e + ema_rate * t;
                }
            }
            // zero losses would make the weights undefined
            for e in &mut self.ema {
                *e = e.max(f64::MIN_POSITIVE);
            }
        }
    }

    /// Run every epoch and return the best-validation model.
    pub fn train(mut self) -> Result<TrainOutcome> {
        let mut log = TrainLog {
            horizon: self.cfg.max_horizon,
            ..TrainLog::default()
        };
        let mut best: Option<(f64, Predictor)> = None;
        for epoch in 0..self.cfg.epochs {
            let start = Instant::now();
            let alpha = self.alpha()?;
            let n_terms = if self.cfg.fixed_horizon { 1 } else { self.cfg.max_horizon };
            let mut sums = vec![0.0; n_terms];
            let mut loss_sum = 0.0;
            let steps = self.steps_per_epoch();
            let mut diverged = false;
            let snapshot = self.model.clone();
            for _ in 0..steps {
                let batch = self.sample_batch()?;
                match self.step(&batch) {
                    Ok(s) => {
                        loss_sum += s.loss;
                        for (a, t) in sums.iter_mut().zip(&s.terms) {
                            *a += t;
                        }
                    }
                    Err(Error::DivergedLoss { .. } | Error::DivergedRollout { .. } | Error::NumericalInstability(_)) => {
                        diverged = true;
                        break;
                    }
                    Err(e) => return Err(e),
                }
            }
            let valid_loss = if diverged {
                None
            } else {
                match self.validation_loss() {
                    Ok(v) => v,
                    Err(Error::DivergedLoss { .. } | Error::DivergedRollout { .. }) => {
                        diverged = true;
                        None
                    }
                    Err(e) => return Err(e),
                }
            };
            let terms: Vec<f64> = sums.iter().map(|s| s / steps as f64).collect();
            log.epochs.push(EpochRecord {
                epoch,
                train_terms: terms.clone(),
                train_loss: loss_sum / steps as f64,
                valid_loss,
                alpha,
                wall_clock_s: start.elapsed().as_secs_f64(),
                diverged,
            });
            if diverged {
                log.diverged_at = Some(epoch);
                if best.is_none() {
                    self.model = snapshot;
                }
                break;
            }
            self.update_ema(&terms);
            // without a validation split the latest model is kept
            let score = valid_loss.unwrap_or(f64::NEG_INFINITY);
            if best.as_ref().is_none_or(|(b, _)| score <= *b) {
                best = Some((score, self.model.clone()));
                log.best_epoch = Some(epoch);
            }
        }
        let logits = self.logits.clone();
        let model = match best {
            Some((_, m)) => m,
            None => self.model,
        };
        Ok(TrainOutcome { model, log, logits })
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Predictor,
    pub log: TrainLog,
    /// Final logits of a learnable profile (zeros otherwise).
    pub logits: Vec<f64>,
}

pub fn train(ds: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    Trainer::new(ds, cfg.clone())?.train()
}
