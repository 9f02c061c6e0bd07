//! Pure-batch (train once, then plan) and iterated-batch (collect, retrain, plan) loops.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cem::{evaluate_policy, summarize, CemConfig, MpcPolicy};
use crate::data::{episode_seed, Dataset, RandomPolicy};
use crate::env::{rollout_env, EnvConfig};
use crate::error::{Error, Result};
use crate::objective::GroundTruthModel;
use crate::train::{train, Predictor, ProfileSpec, TrainConfig};

pub const RANDOM_VARIANT: &str = "random";
pub const GROUND_TRUTH_VARIANT: &str = "ground_truth";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopMode {
    PureBatch,
    IteratedBatch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopConfig {
    pub mode: LoopMode,
    pub n_iterations: usize,
    pub episodes_per_iteration: usize,
    pub eval_episodes: usize,
    pub seeds: Vec<u64>,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            mode: LoopMode::PureBatch,
            n_iterations: 10,
            episodes_per_iteration: 1,
            eval_episodes: 1,
            seeds: vec![0, 1, 2],
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_iterations == 0 || self.episodes_per_iteration == 0 || self.eval_episodes == 0 {
            return Err(Error::invalid("loop counts must be positive"));
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid("at least one seed is required"));
        }
        Ok(())
    }
}

/// `"medium"`, `"expert_noisy"` and so on.
pub fn dataset_label(ds: &Dataset) -> String {
    if ds.env_cfg.noise_fraction > 0.0 {
        format!("{}_noisy", ds.kind)
    } else {
        ds.kind.clone()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReturnRow {
    pub variant: String,
    pub dataset: String,
    pub seed: u64,
    pub ret: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PureBatchReport {
    pub variants: Vec<String>,
    pub datasets: Vec<String>,
    pub rows: Vec<ReturnRow>,
}

impl PureBatchReport {
    /// Returns of one (variant, dataset) cell, failed runs excluded.
    pub fn returns(&self, variant: &str, dataset: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.variant == variant && r.dataset == dataset && r.error.is_none())
            .map(|r| r.ret)
            .collect()
    }

    /// Columns `variant, dataset, seed, return`.
    pub fn returns_csv(&self) -> String {
        let mut out = String::from("variant,dataset,seed,return\n");
        for r in &self.rows {
            let ret = if r.error.is_some() { "failed".to_string() } else { r.ret.to_string() };
            out += &format!("{},{},{},{}\n", r.variant, r.dataset, r.seed, ret);
        }
        out
    }

    /// One row per variant, a `mean, ci90` column pair per dataset.
    pub fn table_csv(&self) -> String {
        let mut out = String::from("variant");
        for d in &self.datasets {
            out += &format!(",{d}_mean,{d}_ci90");
        }
        out.push('\n');
        for v in &self.variants {
            out += v;
            for d in &self.datasets {
                let (mean, ci) = summarize(&self.returns(v, d));
                let ci = ci.map_or(String::new(), |c| c.to_string());
                out += &format!(",{mean},{ci}");
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug)]
enum Variant {
    Trained(ProfileSpec),
    GroundTruth,
}

/// Train every variant on every dataset per seed and evaluate MPC on the
/// true environment. A random-policy row (same episode seeds) is always
/// added, and the `h = 1` baseline is added when missing.
#[allow(clippy::too_many_arguments)]
pub fn pure_batch_run(
    datasets: &[Dataset],
    variants: &[ProfileSpec],
    base: &TrainConfig,
    cem: &CemConfig,
    seeds: &[u64],
    eval_episodes: usize,
    include_ground_truth: bool,
) -> Result<PureBatchReport> {
    cem.validate()?;
    if datasets.is_empty() || seeds.is_empty() {
        return Err(Error::invalid("pure_batch_run needs datasets and seeds"));
    }
    let mut specs = variants.to_vec();
    if !specs.contains(&ProfileSpec::baseline()) {
        specs.insert(0, ProfileSpec::baseline());
    }
    let mut all: Vec<Variant> = specs.iter().cloned().map(Variant::Trained).collect();
    if include_ground_truth {
        all.push(Variant::GroundTruth);
    }
    let jobs: Vec<(usize, usize, u64)> = (0..all.len())
        .flat_map(|v| (0..datasets.len()).flat_map(move |d| seeds.iter().map(move |&s| (v, d, s))))
        .collect();

    let labels: Vec<String> = all
        .iter()
        .map(|v| match v {
            Variant::Trained(p) => p.label(),
            Variant::GroundTruth => GROUND_TRUTH_VARIANT.to_string(),
        })
        .collect();
    let ds_labels: Vec<String> = datasets.iter().map(dataset_label).collect();

    let results: Vec<(ReturnRow, Option<f64>)> = jobs
        .par_iter()
        .map(|&(v, d, seed)| {
            let ds = &datasets[d];
            let run = || -> Result<(f64, f64)> {
                let report = match &all[v] {
                    Variant::Trained(p) => {
                        let cfg = TrainConfig {
                            max_horizon: p.max_horizon,
                            weight_profile: p.weight_profile.clone(),
                            seed,
                            fixed_horizon: false,
                            ..base.clone()
                        };
                        let out = train(ds, &cfg)?;
                        let Predictor::OneStep(model) = out.model else {
                            return Err(Error::invalid("planning needs a one-step model"));
                        };
                        evaluate_policy(&model, &ds.env_cfg, cem, eval_episodes, seed)?
                    }
                    Variant::GroundTruth => {
                        let gt = GroundTruthModel::new(ds.env_cfg.clone());
                        evaluate_policy(&gt, &ds.env_cfg, cem, eval_episodes, seed)?
                    }
                };
                Ok((report.mean, report.random_mean))
            };
            let row = |ret, error| ReturnRow {
                variant: labels[v].clone(),
                dataset: ds_labels[d].clone(),
                seed,
                ret,
                error,
            };
            match run() {
                Ok((ret, random)) => (row(ret, None), Some(random)),
                Err(e) => (row(f64::NAN, Some(e.to_string())), None),
            }
        })
        .collect();

    let mut rows: Vec<ReturnRow> = results.iter().map(|(r, _)| r.clone()).collect();
    // random baseline from the same episode seeds, independent of the variant
    for (d, label) in ds_labels.iter().enumerate() {
        for &seed in seeds {
            let returns = (0..eval_episodes)
                .map(|i| Ok(rollout_env(&mut RandomPolicy, &datasets[d].env_cfg, episode_seed(seed, i))?.meta.ret))
                .collect::<Result<Vec<f64>>>()?;
            rows.push(ReturnRow {
                variant: RANDOM_VARIANT.into(),
                dataset: label.clone(),
                seed,
                ret: returns.iter().sum::<f64>() / eval_episodes as f64,
                error: None,
            });
        }
    }
    let mut variants_out = labels;
    variants_out.push(RANDOM_VARIANT.into());
    Ok(PureBatchReport {
        variants: variants_out,
        datasets: ds_labels,
        rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub iteration: usize,
    pub seed: u64,
    pub ret: f64,
    /// Training diverged and the previous model was reused.
    pub reused_model: bool,
    pub buffer_episodes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub rows: Vec<CurveRow>,
}

impl LearningCurve {
    /// Columns `iteration, seed, return`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,seed,return\n");
        for r in &self.rows {
            out += &format!("{},{},{}\n", r.iteration, r.seed, r.ret);
        }
        out
    }
}

/// Alternate model training on the cumulative buffer with MPC data collection.
pub fn iterated_batch_run(
    loop_cfg: &LoopConfig,
    train_cfg: &TrainConfig,
    cem: &CemConfig,
    env_cfg: &EnvConfig,
) -> Result<LearningCurve> {
    loop_cfg.validate()?;
    cem.validate()?;
    if train_cfg.fixed_horizon {
        return Err(Error::invalid("planning needs a one-step model"));
    }
    let per_seed = loop_cfg
        .seeds
        .par_iter()
        .map(|&seed| iterate_one_seed(loop_cfg, train_cfg, cem, env_cfg, seed))
        .collect::<Result<Vec<_>>>()?;
    let mut rows: Vec<CurveRow> = per_seed.into_iter().flatten().collect();
    rows.sort_by_key(|r| (r.iteration, r.seed));
    Ok(LearningCurve { rows })
}

fn iterate_one_seed(
    loop_cfg: &LoopConfig,
    train_cfg: &TrainConfig,
    cem: &CemConfig,
    env_cfg: &EnvConfig,
    seed: u64,
) -> Result<Vec<CurveRow>> {
    let mut next_episode = 0;
    let mut fresh_seed = || {
        next_episode += 1;
        episode_seed(seed, next_episode - 1)
    };
    let mut buffer = vec![rollout_env(&mut RandomPolicy, env_cfg, fresh_seed())?];
    let mut model = None;
    let mut rows = Vec::with_capacity(loop_cfg.n_iterations);
    for iteration in 0..loop_cfg.n_iterations {
        let ds = Dataset::train_only("buffer".into(), seed, env_cfg.clone(), buffer.clone())?;
        let cfg = TrainConfig {
            seed: seed.wrapping_add(iteration as u64),
            ..train_cfg.clone()
        };
        let out = train(&ds, &cfg)?;
        let reused_model = out.log.diverged_at.is_some() && model.is_some();
        if !reused_model {
            let Predictor::OneStep(m) = out.model else {
                return Err(Error::invalid("planning needs a one-step model"));
            };
            model = Some(m);
        }
        let m = model.as_ref().expect("set above");
        let mut total = 0.0;
        for _ in 0..loop_cfg.episodes_per_iteration {
            let mut policy = MpcPolicy::new(m, cem.clone())?;
            let ep = rollout_env(&mut policy, env_cfg, fresh_seed())?;
            total += ep.meta.ret;
            buffer.push(ep);
        }
        rows.push(CurveRow {
            iteration,
            seed,
            ret: total / loop_cfg.episodes_per_iteration as f64,
            reused_model,
            buffer_episodes: buffer.len(),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, PolicyKind};
    use crate::objective::WeightProfile;

    fn tiny_cem() -> CemConfig {
        CemConfig {
            plan_horizon: 5,
            population: 16,
            elites: 4,
            iterations: 2,
            ..CemConfig::default()
        }
    }

    fn tiny_train() -> TrainConfig {
        TrainConfig {
            hidden: 8,
            epochs: 1,
            batch_size: 8,
            steps_per_epoch: Some(3),
            ..TrainConfig::default()
        }
    }

    fn env() -> EnvConfig {
        EnvConfig {
            episode_len: 15,
            ..EnvConfig::default()
        }
    }

    #[test]
    fn pure_batch_table_has_baseline_and_random_rows() {
        let ds = generate(PolicyKind::Medium, 3, &env(), 0).unwrap();
        let spec = ProfileSpec {
            max_horizon: 2,
            weight_profile: WeightProfile::decay(0.9),
        };
        let rep = pure_batch_run(&[ds], &[spec], &tiny_train(), &tiny_cem(), &[0, 1], 1, true).unwrap();
        assert_eq!(rep.variants, vec!["h1:uniform", "h2:decay(0.9)", "ground_truth", "random"]);
        let table = rep.table_csv();
        assert_eq!(table.lines().next().unwrap(), "variant,medium_mean,medium_ci90");
        assert_eq!(table.lines().count(), 5);
        assert_eq!(rep.rows.len(), 8);
        let again = pure_batch_run(
            &[generate(PolicyKind::Medium, 3, &env(), 0).unwrap()],
            &[ProfileSpec {
                max_horizon: 2,
                weight_profile: WeightProfile::decay(0.9),
            }],
            &tiny_train(),
            &tiny_cem(),
            &[0, 1],
            1,
            true,
        )
        .unwrap();
        assert_eq!(rep.returns_csv(), again.returns_csv());
    }

    #[test]
    fn iterated_buffer_grows_by_episodes_per_iteration() {
        let lc = LoopConfig {
            mode: LoopMode::IteratedBatch,
            n_iterations: 3,
            episodes_per_iteration: 2,
            eval_episodes: 1,
            seeds: vec![4],
        };
        let curve = iterated_batch_run(&lc, &tiny_train(), &tiny_cem(), &env()).unwrap();
        assert_eq!(curve.rows.len(), 3);
        for (k, r) in curve.rows.iter().enumerate() {
            assert_eq!(r.buffer_episodes, 1 + (k + 1) * 2);
        }
    }

    #[test]
    fn one_iteration_gives_one_point() {
        let lc = LoopConfig {
            n_iterations: 1,
            seeds: vec![0],
            ..LoopConfig::default()
        };
        let curve = iterated_batch_run(&lc, &tiny_train(), &tiny_cem(), &env()).unwrap();
        assert_eq!(curve.to_csv().lines().count(), 2);
    }
}
