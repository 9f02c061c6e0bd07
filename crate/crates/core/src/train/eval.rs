//! Explained-variance evaluation over every sub-trajectory of a split.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SplitName, WindowBatch};
use crate::env::OBS_DIM;
use crate::error::{Error, Result};
use crate::nn::{checkpoint, DynamicsModel, Mat};
use crate::objective::{compose_fixed_batch, rollout_means, FixedHorizonModel, GroundTruthModel};

/// Anything that predicts the state `j` steps ahead from a start state and `j` actions.
pub trait HorizonPredictor: Sync {
    /// Whether horizon `j` can be produced (direct models skip non-multiples).
    fn supports(&self, j: usize) -> bool {
        j >= 1
    }
    fn predict_final(&self, s0: &Mat, actions: &[Mat]) -> Result<Mat>;
}

impl HorizonPredictor for DynamicsModel {
    fn predict_final(&self, s0: &Mat, actions: &[Mat]) -> Result<Mat> {
        last(rollout_means(self, s0, actions)?)
    }
}

impl HorizonPredictor for GroundTruthModel {
    fn predict_final(&self, s0: &Mat, actions: &[Mat]) -> Result<Mat> {
        last(rollout_means(self, s0, actions)?)
    }
}

impl HorizonPredictor for FixedHorizonModel {
    fn supports(&self, j: usize) -> bool {
        j >= 1 && j.is_multiple_of(self.horizon())
    }

    fn predict_final(&self, s0: &Mat, actions: &[Mat]) -> Result<Mat> {
        compose_fixed_batch(self, s0, actions)
    }
}

fn last(mut v: Vec<Mat>) -> Result<Mat> {
    v.pop().ok_or_else(|| Error::invalid("prediction horizon must be at least 1"))
}

/// A trained model of either kind.
#[derive(Clone, Debug, PartialEq)]
pub enum Predictor {
    OneStep(DynamicsModel),
    Fixed(FixedHorizonModel),
}

impl Predictor {
    pub fn from_model(model: DynamicsModel) -> Result<Self> {
        if model.spec().action_steps == 1 {
            Ok(Predictor::OneStep(model))
        } else {
            FixedHorizonModel::from_model(model).map(Predictor::Fixed)
        }
    }

    pub fn net(&self) -> &DynamicsModel {
        match self {
            Predictor::OneStep(m) => m,
            Predictor::Fixed(m) => m.model(),
        }
    }

    pub fn net_mut(&mut self) -> &mut DynamicsModel {
        match self {
            Predictor::OneStep(m) => m,
            Predictor::Fixed(m) => m.model_mut(),
        }
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        checkpoint::save(self.net(), path)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_model(checkpoint::load(path)?)
    }
}

impl HorizonPredictor for Predictor {
    fn supports(&self, j: usize) -> bool {
        match self {
            Predictor::OneStep(m) => m.supports(j),
            Predictor::Fixed(m) => m.supports(j),
        }
    }

    fn predict_final(&self, s0: &Mat, actions: &[Mat]) -> Result<Mat> {
        match self {
            Predictor::OneStep(m) => m.predict_final(s0, actions),
            Predictor::Fixed(m) => m.predict_final(s0, actions),
        }
    }
}

/// Always predicts a fixed vector, e.g. the mean of the evaluation targets.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstantPredictor(pub Vec<f64>);

impl ConstantPredictor {
    /// Per-dimension mean of the targets that [`r2_at_horizon`] will score.
    pub fn target_mean(ds: &Dataset, split: SplitName, j: usize) -> Result<Self> {
        let (_, targets) = endpoints(ds, split, j)?;
        Ok(Self(column_means(&targets)))
    }
}

impl HorizonPredictor for ConstantPredictor {
    fn predict_final(&self, s0: &Mat, _actions: &[Mat]) -> Result<Mat> {
        let mut out = Mat::zeros(s0.rows(), self.0.len());
        for r in 0..s0.rows() {
            out.row_mut(r).copy_from_slice(&self.0);
        }
        Ok(out)
    }
}

pub(crate) fn column_means(m: &Mat) -> Vec<f64> {
    let mut sums = vec![0.0; m.cols()];
    for r in 0..m.rows() {
        for (s, v) in sums.iter_mut().zip(m.row(r)) {
            *s += v;
        }
    }
    sums.into_iter().map(|s| s / m.rows() as f64).collect()
}

fn endpoints(ds: &Dataset, split: SplitName, j: usize) -> Result<(WindowBatch, Mat)> {
    let windows = ds.windows(split, j)?;
    if windows.is_empty() {
        return Err(Error::invalid(format!("no windows of length {j} in the {split:?} split")));
    }
    let batch = WindowBatch::from_windows(&windows)?;
    let targets = batch.targets[j - 1].clone();
    Ok((batch, targets))
}

/// R2 at one horizon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct R2Row {
    pub horizon: usize,
    /// `None` where the target variance is zero.
    pub per_dim: Vec<Option<f64>>,
    /// Mean over the defined dimensions.
    pub mean: f64,
    pub n_windows: usize,
}

impl R2Row {
    pub fn has_undefined(&self) -> bool {
        self.per_dim.iter().any(Option::is_none)
    }
}

/// `R2_d = 1 - sum (pred - target)^2 / sum (target - mean)^2` over `rows`.
pub fn r2_scores(pred: &Mat, target: &Mat) -> Result<(Vec<Option<f64>>, f64)> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch {
            context: "r2 predictions",
            expected: target.shape(),
            actual: pred.shape(),
        });
    }
    let means = column_means(target);
    let mut ss_res = vec![0.0; target.cols()];
    let mut ss_tot = vec![0.0; target.cols()];
    for r in 0..target.rows() {
        for d in 0..target.cols() {
            let t = target.get(r, d);
            ss_res[d] += (pred.get(r, d) - t).powi(2);
            ss_tot[d] += (t - means[d]).powi(2);
        }
    }
    let per_dim: Vec<Option<f64>> = ss_res
        .iter()
        .zip(&ss_tot)
        .map(|(res, tot)| if *tot > 0.0 { Some(1.0 - res / tot) } else { None })
        .collect();
    let defined: Vec<f64> = per_dim.iter().flatten().copied().collect();
    let mean = if defined.is_empty() {
        f64::NAN
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    };
    Ok((per_dim, mean))
}

pub fn r2_at_horizon(model: &dyn HorizonPredictor, ds: &Dataset, split: SplitName, j: usize) -> Result<R2Row> {
    if !model.supports(j) {
        return Err(Error::invalid(format!("model cannot predict horizon {j}")));
    }
    let (batch, targets) = endpoints(ds, split, j)?;
    let pred = model.predict_final(&batch.s0, &batch.actions)?;
    let (per_dim, mean) = r2_scores(&pred, &targets)?;
    Ok(R2Row {
        horizon: j,
        per_dim,
        mean,
        n_windows: batch.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct R2Report {
    pub dataset_id: String,
    pub model_id: String,
    pub split: SplitName,
    pub rows: Vec<R2Row>,
}

impl R2Report {
    pub fn horizons(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.horizon).collect()
    }

    pub fn mean_r2(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.mean).collect()
    }

    pub fn at(&self, horizon: usize) -> Option<&R2Row> {
        self.rows.iter().find(|r| r.horizon == horizon)
    }

    /// Columns `horizon, dim0..dim4, mean`; undefined entries are empty.
    pub fn to_csv(&self) -> String {
        let dims = self.rows.first().map_or(OBS_DIM, |r| r.per_dim.len());
        let mut out = String::from("horizon");
        for d in 0..dims {
            out += &format!(",dim{d}");
        }
        out += ",mean\n";
        for r in &self.rows {
            out += &r.horizon.to_string();
            for v in &r.per_dim {
                out.push(',');
                if let Some(v) = v {
                    out += &v.to_string();
                }
            }
            out += &format!(",{}\n", r.mean);
        }
        out
    }
}

/// [`r2_at_horizon`] at each supported horizon; unsupported ones are skipped.
pub fn r2_curve(
    model: &dyn HorizonPredictor,
    ds: &Dataset,
    split: SplitName,
    horizons: &[usize],
    model_id: &str,
) -> Result<R2Report> {
    if horizons.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("horizons must be strictly increasing"));
    }
    let rows = horizons
        .iter()
        .filter(|&&j| model.supports(j))
        .map(|&j| r2_at_horizon(model, ds, split, j))
        .collect::<Result<Vec<_>>>()?;
    Ok(R2Report {
        dataset_id: format!("{}-{}", ds.kind, ds.seed),
        model_id: model_id.to_string(),
        split,
        rows,
    })
}
