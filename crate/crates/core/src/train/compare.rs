//! Train one model per (profile, seed) and aggregate R2 curves.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::eval::{r2_curve, R2Report};
use super::trainer::{train, TrainConfig};
use crate::data::{Dataset, SplitName};
use crate::error::{Error, Result};
use crate::objective::WeightProfile;

/// z-value of a two-sided 90% Gaussian interval.
pub const Z90: f64 = 1.645;

/// Sample mean and `Z90 * sd / sqrt(n)` (zero for a single value).
pub fn mean_ci90(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Z90 * var.sqrt() / n.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileSpec {
    pub max_horizon: usize,
    pub weight_profile: WeightProfile,
}

impl ProfileSpec {
    pub fn baseline() -> Self {
        Self {
            max_horizon: 1,
            weight_profile: WeightProfile::Uniform,
        }
    }

    pub fn label(&self) -> String {
        format!("h{}:{}", self.max_horizon, self.weight_profile.label())
    }
}

/// Outcome of a single (profile, seed) run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub profile: String,
    pub seed: u64,
    pub diverged_at: Option<usize>,
    pub report: Option<R2Report>,
    pub error: Option<String>,
    /// Weights in force during the last epoch.
    pub final_alpha: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub profile: String,
    pub horizon: usize,
    pub mean_r2: f64,
    pub ci90: f64,
    pub n_seeds: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileComparison {
    pub rows: Vec<ComparisonRow>,
    pub cells: Vec<CellResult>,
}

impl ProfileComparison {
    pub fn row(&self, profile: &str, horizon: usize) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.profile == profile && r.horizon == horizon)
    }

    /// Columns `profile, horizon, mean_r2, ci90, n_seeds`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("profile,horizon,mean_r2,ci90,n_seeds\n");
        for r in &self.rows {
            out += &format!("{},{},{},{},{}\n", r.profile, r.horizon, r.mean_r2, r.ci90, r.n_seeds);
        }
        out
    }
}

/// The `h = 1` uniform baseline is added when missing.
pub fn compare_profiles(
    ds: &Dataset,
    base: &TrainConfig,
    profiles: &[ProfileSpec],
    horizons: &[usize],
    seeds: &[u64],
    split: SplitName,
) -> Result<ProfileComparison> {
    if seeds.len() < 2 {
        return Err(Error::invalid("compare_profiles needs at least two seeds"));
    }
    let mut specs = profiles.to_vec();
    if !specs.contains(&ProfileSpec::baseline()) {
        specs.insert(0, ProfileSpec::baseline());
    }
    let jobs: Vec<(usize, u64)> = (0..specs.len())
        .flat_map(|p| seeds.iter().map(move |&s| (p, s)))
        .collect();
    let cells: Vec<CellResult> = jobs
        .par_iter()
        .map(|&(p, seed)| {
            let spec = &specs[p];
            let cfg = TrainConfig {
                max_horizon: spec.max_horizon,
                weight_profile: spec.weight_profile.clone(),
                seed,
                fixed_horizon: false,
                ..base.clone()
            };
            let label = spec.label();
            let run = train(ds, &cfg).and_then(|out| {
                let report = r2_curve(&out.model, ds, split, horizons, &format!("{label}/seed{seed}"))?;
                Ok((out, report))
            });
            match run {
                Ok((out, report)) => CellResult {
                    profile: label,
                    seed,
                    diverged_at: out.log.diverged_at,
                    report: Some(report),
                    error: None,
                    final_alpha: out.log.epochs.last().map(|e| e.alpha.clone()).unwrap_or_default(),
                },
                Err(e) => CellResult {
                    profile: label,
                    seed,
                    diverged_at: None,
                    report: None,
                    error: Some(e.to_string()),
                    final_alpha: Vec::new(),
                },
            }
        })
        .collect();

    let mut rows = Vec::new();
    for spec in &specs {
        let label = spec.label();
        for &h in horizons {
            let values: Vec<f64> = cells
                .iter()
                .filter(|c| c.profile == label)
                .filter_map(|c| c.report.as_ref()?.at(h).map(|r| r.mean))
                .collect();
            let (mean_r2, ci90) = mean_ci90(&values);
            rows.push(ComparisonRow {
                profile: label.clone(),
                horizon: h,
                mean_r2,
                ci90,
                n_seeds: values.len(),
            });
        }
    }
    Ok(ProfileComparison { rows, cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, PolicyKind};
    use crate::env::EnvConfig;

    #[test]
    fn ci_of_known_sample() {
        let (m, ci) = mean_ci90(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((ci - 1.645 / 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn single_profile_two_seeds_one_row_plus_baseline() {
        let cfg = EnvConfig {
            episode_len: 40,
            ..EnvConfig::default()
        };
        let ds = generate(PolicyKind::Medium, 4, &cfg, 1).unwrap();
        let base = TrainConfig {
            hidden: 8,
            epochs: 1,
            steps_per_epoch: Some(3),
            batch_size: 8,
            ..TrainConfig::default()
        };
        let spec = ProfileSpec {
            max_horizon: 2,
            weight_profile: WeightProfile::decay(0.5),
        };
        let cmp = compare_profiles(&ds, &base, &[spec], &[5], &[0, 1], SplitName::Test).unwrap();
        assert_eq!(cmp.cells.len(), 4);
        assert_eq!(cmp.rows.len(), 2);
        assert_eq!(cmp.rows[0].profile, "h1:uniform");
        assert_eq!(cmp.rows[1].profile, "h2:decay(0.5)");
        assert!(cmp.rows.iter().all(|r| r.n_seeds == 2));
        assert!(compare_profiles(&ds, &base, &[], &[5], &[0], SplitName::Test).is_err());
    }
}
