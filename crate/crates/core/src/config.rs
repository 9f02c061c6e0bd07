//! One JSON document describing a whole experiment.

use serde::{Deserialize, Serialize};

use crate::data::{generate, Dataset, PolicyKind};
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::objective::WeightProfile;
use crate::planner::{CemConfig, LoopConfig};
use crate::train::{ProfileSpec, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub policy: PolicyKind,
    pub episodes: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            policy: PolicyKind::Medium,
            episodes: 10,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    /// Scalar models in the three-way comparison.
    pub scalar_models: usize,
    /// Horizons cycled through by the scalar models.
    pub scalar_horizons: Vec<usize>,
    pub scalar_hidden: usize,
    pub scalar_fd_step: f64,
    /// Seeds of the dataset-based check (skipped without a dataset).
    pub multi_seeds: usize,
    pub multi_horizons: Vec<usize>,
    pub multi_hidden: usize,
    pub multi_batch: usize,
    pub multi_fd_step: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            scalar_models: 20,
            scalar_horizons: vec![1, 2, 3, 4],
            scalar_hidden: 8,
            scalar_fd_step: 1e-6,
            multi_seeds: 10,
            multi_horizons: vec![1, 2, 4, 10],
            multi_hidden: 16,
            multi_batch: 4,
            multi_fd_step: 1e-5,
        }
    }
}

fn default_variants() -> Vec<ProfileSpec> {
    [(2, 0.9), (4, 0.75), (10, 0.3)]
        .into_iter()
        .map(|(h, beta)| ProfileSpec {
            max_horizon: h,
            weight_profile: WeightProfile::decay(beta),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    pub cem: CemConfig,
    #[serde(rename = "loop")]
    pub loop_cfg: LoopConfig,
    /// Variants for `compare_profiles` and `pure_batch_run`.
    pub profiles: Vec<ProfileSpec>,
    /// Evaluation horizons of R2 curves.
    pub horizons: Vec<usize>,
    /// Training seeds of multi-seed experiments.
    pub seeds: Vec<u64>,
    pub gradcheck: GradcheckConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            dataset: DatasetConfig::default(),
            train: TrainConfig::default(),
            cem: CemConfig::default(),
            loop_cfg: LoopConfig::default(),
            profiles: default_variants(),
            horizons: vec![1, 2, 5, 10, 20, 50],
            seeds: vec![0, 1, 2],
            gradcheck: GradcheckConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.train.validate()?;
        self.cem.validate()?;
        self.loop_cfg.validate()?;
        if self.dataset.episodes < 3 {
            return Err(Error::invalid("dataset.episodes must be at least 3"));
        }
        if self.horizons.is_empty() || self.horizons.windows(2).any(|w| w[0] >= w[1]) || self.horizons[0] == 0 {
            return Err(Error::invalid("horizons must be positive and strictly increasing"));
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid("seeds must not be empty"));
        }
        let g = &self.gradcheck;
        if g.scalar_horizons.is_empty() || g.multi_horizons.is_empty() || g.scalar_horizons.contains(&0) || g.multi_horizons.contains(&0) {
            return Err(Error::invalid("gradcheck horizons must be positive and non-empty"));
        }
        if g.multi_batch == 0 || g.scalar_hidden == 0 || g.multi_hidden == 0 {
            return Err(Error::invalid("gradcheck sizes must be positive"));
        }
        Ok(())
    }

    /// Re-seed every stochastic component from `seed`, keeping seed counts.
    pub fn reseed(&mut self, seed: u64) {
        self.dataset.seed = seed;
        self.train.seed = seed;
        self.seeds = (0..self.seeds.len() as u64).map(|i| seed + i).collect();
        self.loop_cfg.seeds = (0..self.loop_cfg.seeds.len() as u64).map(|i| seed + i).collect();
    }

    pub fn generate_dataset(&self) -> Result<Dataset> {
        generate(self.dataset.policy, self.dataset.episodes, &self.env, self.dataset.seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_default() {
        assert_eq!(ExperimentConfig::from_json("{}").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn round_trips_through_json() {
        let mut cfg = ExperimentConfig::default();
        cfg.train.weight_profile = WeightProfile::Explicit { weights: vec![0.25, 0.75] };
        cfg.train.max_horizon = 2;
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_sections_keep_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"loop": {"n_iterations": 3}, "cem": {"population": 8, "elites": 2}}"#)
            .unwrap();
        assert_eq!(cfg.loop_cfg.n_iterations, 3);
        assert_eq!(cfg.loop_cfg.seeds, LoopConfig::default().seeds);
        assert_eq!(cfg.cem.plan_horizon, CemConfig::default().plan_horizon);
    }

    #[test]
    fn typos_and_bad_values_are_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"trian": {}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"horizons": [5, 1]}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"cem": {"population": 2, "elites": 4}}"#).is_err());
    }

    #[test]
    fn reseed_shifts_every_seed() {
        let mut cfg = ExperimentConfig::default();
        cfg.reseed(7);
        assert_eq!(cfg.dataset.seed, 7);
        assert_eq!(cfg.train.seed, 7);
        assert_eq!(cfg.seeds, vec![7, 8, 9]);
        assert_eq!(cfg.loop_cfg.seeds, vec![7, 8, 9]);
    }
}
