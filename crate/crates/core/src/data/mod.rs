//! Offline datasets: generation, splitting, normalization statistics,
//! persistence and rollout windows.

mod io;
pub mod policy;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{rollout_env, EnvConfig, Obs, ACTION_DIM, OBS_DIM};
use crate::error::{Error, Result};
use crate::nn::Mat;

pub use io::{load, save, DATASET_VERSION};
pub use policy::{make_policy, ExpertPolicy, MediumPolicy, PolicyKind, RandomPolicy};

/// Standard deviations are floored here to keep normalization finite.
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: Obs,
    pub a: f64,
    pub r: f64,
    pub s_next: Obs,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMeta {
    pub policy_kind: String,
    pub seed: u64,
    #[serde(rename = "return")]
    pub ret: f64,
    #[serde(default)]
    pub clipped_actions: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub transitions: Vec<Transition>,
    pub meta: EpisodeMeta,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Observation at time `t` for `t` in `0..=len`.
    pub fn obs(&self, t: usize) -> &Obs {
        if t == self.transitions.len() {
            &self.transitions[t - 1].s_next
        } else {
            &self.transitions[t].s
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Valid,
    Test,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn get(&self, name: SplitName) -> &[usize] {
        match name {
            SplitName::Train => &self.train,
            SplitName::Valid => &self.valid,
            SplitName::Test => &self.test,
        }
    }

    /// Split sizes following a 72% / 8% / 20% ratio with at least one
    /// episode in the validation and test parts.
    pub fn sizes(n_episodes: usize) -> Result<(usize, usize, usize)> {
        if n_episodes < 3 {
            return Err(Error::invalid(format!(
                "need at least 3 episodes to form three splits, got {n_episodes}"
            )));
        }
        let n = n_episodes as f64;
        let valid = ((0.08 * n).round() as usize).max(1);
        let test = ((0.2 * n).round() as usize).max(1);
        Ok((n_episodes - valid - test, valid, test))
    }

    /// Disjoint and covering `0..n_episodes`.
    pub fn is_partition_of(&self, n_episodes: usize) -> bool {
        let mut seen = vec![false; n_episodes];
        for &i in self.train.iter().chain(&self.valid).chain(&self.test) {
            if i >= n_episodes || seen[i] {
                return false;
            }
            seen[i] = true;
        }
        seen.into_iter().all(|s| s)
    }
}

/// Per-dimension mean and (floored) standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Moments {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Population moments of the given rows.
    pub fn from_rows<'a>(rows: impl IntoIterator<Item = &'a [f64]>, dim: usize) -> Self {
        let rows: Vec<&[f64]> = rows.into_iter().collect();
        if rows.is_empty() {
            return Self::identity(dim);
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in &rows {
            for (m, v) in mean.iter_mut().zip(r.iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for r in &rows {
            for ((s, v), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|s| (s / n).sqrt().max(STD_FLOOR)).collect();
        Self { mean, std }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub obs: Moments,
    pub action: Moments,
}

impl NormStats {
    pub fn identity() -> Self {
        Self {
            obs: Moments::identity(OBS_DIM),
            action: Moments::identity(ACTION_DIM),
        }
    }
}

/// `(x - mean) / std` per dimension.
pub fn normalize(x: &[f64], m: &Moments) -> Vec<f64> {
    x.iter()
        .zip(&m.mean)
        .zip(&m.std)
        .map(|((v, mu), s)| (v - mu) / s)
        .collect()
}

/// Inverse of [`normalize`].
pub fn denormalize(z: &[f64], m: &Moments) -> Vec<f64> {
    z.iter()
        .zip(&m.mean)
        .zip(&m.std)
        .map(|((v, mu), s)| v * s + mu)
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub kind: String,
    pub seed: u64,
    pub env_cfg: EnvConfig,
    pub episodes: Vec<Episode>,
    pub split: Split,
    pub norm_stats: NormStats,
}

/// Seed of the `index`-th episode derived from the dataset seed.
pub fn episode_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

pub fn generate(kind: PolicyKind, n_episodes: usize, env_cfg: &EnvConfig, seed: u64) -> Result<Dataset> {
    let (n_train, n_valid, _) = Split::sizes(n_episodes)?;
    env_cfg.validate()?;
    let episodes = (0..n_episodes)
        .into_par_iter()
        .map(|i| {
            let mut policy = make_policy(kind, env_cfg);
            rollout_env(policy.as_mut(), env_cfg, episode_seed(seed, i))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut order: Vec<usize> = (0..n_episodes).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    order.shuffle(&mut rng);
    let mut split = Split {
        train: order[..n_train].to_vec(),
        valid: order[n_train..n_train + n_valid].to_vec(),
        test: order[n_train + n_valid..].to_vec(),
    };
    split.train.sort_unstable();
    split.valid.sort_unstable();
    split.test.sort_unstable();

    Dataset::new(kind.as_str().to_string(), seed, env_cfg.clone(), episodes, split)
}

impl Dataset {
    /// Assemble a dataset; normalization statistics come from the train split.
    pub fn new(
        kind: String,
        seed: u64,
        env_cfg: EnvConfig,
        episodes: Vec<Episode>,
        split: Split,
    ) -> Result<Self> {
        if !split.is_partition_of(episodes.len()) {
            return Err(Error::invalid("split must partition the episodes"));
        }
        let mut ds = Self {
            kind,
            seed,
            env_cfg,
            episodes,
            split,
            norm_stats: NormStats::identity(),
        };
        ds.norm_stats = ds.compute_norm_stats();
        Ok(ds)
    }

    /// Every episode in the train split, no validation or test data.
    pub fn train_only(kind: String, seed: u64, env_cfg: EnvConfig, episodes: Vec<Episode>) -> Result<Self> {
        let split = Split {
            train: (0..episodes.len()).collect(),
            ..Split::default()
        };
        Self::new(kind, seed, env_cfg, episodes, split)
    }

    fn compute_norm_stats(&self) -> NormStats {
        let train: Vec<&Episode> = self.split.train.iter().map(|&i| &self.episodes[i]).collect();
        let obs = Moments::from_rows(
            train.iter().flat_map(|e| e.transitions.iter().map(|t| t.s.as_slice())),
            OBS_DIM,
        );
        let action = Moments::from_rows(
            train
                .iter()
                .flat_map(|e| e.transitions.iter().map(|t| std::slice::from_ref(&t.a))),
            ACTION_DIM,
        );
        NormStats { obs, action }
    }

    pub fn episodes_in(&self, split: SplitName) -> impl Iterator<Item = (usize, &Episode)> {
        self.split.get(split).iter().map(move |&i| (i, &self.episodes[i]))
    }

    pub fn n_transitions(&self, split: SplitName) -> usize {
        self.episodes_in(split).map(|(_, e)| e.len()).sum()
    }

    /// Every `(episode, start)` pair that admits a window of length `h`.
    pub fn window_index(&self, split: SplitName, h: usize) -> Result<Vec<(usize, usize)>> {
        if h == 0 {
            return Err(Error::invalid("window horizon must be at least 1"));
        }
        if let Some(shortest) = self.episodes_in(split).map(|(_, e)| e.len()).min() {
            if h > shortest {
                return Err(Error::HorizonTooLong { horizon: h, shortest });
            }
        }
        Ok(self
            .episodes_in(split)
            .flat_map(|(i, e)| (0..=e.len() - h).map(move |t| (i, t)))
            .collect())
    }

    pub fn window(&self, episode: usize, start: usize, h: usize) -> RolloutWindow {
        let ep = &self.episodes[episode];
        let tr = &ep.transitions[start..start + h];
        RolloutWindow {
            s0: tr[0].s,
            actions: tr.iter().map(|t| t.a).collect(),
            targets: tr.iter().map(|t| t.s_next).collect(),
            episode,
            start,
        }
    }

    /// All overlapping windows of length `h` in the split, episode by episode.
    pub fn windows(&self, split: SplitName, h: usize) -> Result<Vec<RolloutWindow>> {
        Ok(self
            .window_index(split, h)?
            .into_iter()
            .map(|(e, t)| self.window(e, t, h))
            .collect())
    }

    /// `batch` windows drawn uniformly with replacement.
    pub fn sample_windows<R: Rng + ?Sized>(
        &self,
        split: SplitName,
        h: usize,
        batch: usize,
        rng: &mut R,
    ) -> Result<Vec<RolloutWindow>> {
        let index = self.window_index(split, h)?;
        if index.is_empty() {
            return Err(Error::invalid("no windows available in split"));
        }
        Ok((0..batch)
            .map(|_| {
                let (e, t) = index[rng.random_range(0..index.len())];
                self.window(e, t, h)
            })
            .collect())
    }
}

/// A sub-trajectory: start observation, `h` actions and the `h` observed
/// successors. Never crosses an episode boundary.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutWindow {
    pub s0: Obs,
    pub actions: Vec<f64>,
    pub targets: Vec<Obs>,
    pub episode: usize,
    pub start: usize,
}

impl RolloutWindow {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    /// The first `h` steps of this window.
    pub fn truncated(&self, h: usize) -> Self {
        Self {
            s0: self.s0,
            actions: self.actions[..h].to_vec(),
            targets: self.targets[..h].to_vec(),
            episode: self.episode,
            start: self.start,
        }
    }
}

/// Windows of a common horizon stacked into matrices, one row per window.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowBatch {
    pub s0: Mat,
    /// `actions[j]` is the `batch x action_dim` action at step `j`.
    pub actions: Vec<Mat>,
    /// `targets[j]` is the observed state after `j + 1` steps.
    pub targets: Vec<Mat>,
}

impl WindowBatch {
    pub fn from_windows(windows: &[RolloutWindow]) -> Result<Self> {
        let h = windows.first().map_or(0, RolloutWindow::horizon);
        if windows.iter().any(|w| w.horizon() != h) {
            return Err(Error::invalid("windows in a batch must share a horizon"));
        }
        let s0 = Mat::from_rows(&windows.iter().map(|w| w.s0.0).collect::<Vec<_>>())?;
        let actions = (0..h)
            .map(|j| Mat::from_rows(&windows.iter().map(|w| [w.actions[j]]).collect::<Vec<_>>()))
            .collect::<Result<Vec<_>>>()?;
        let targets = (0..h)
            .map(|j| Mat::from_rows(&windows.iter().map(|w| w.targets[j].0).collect::<Vec<_>>()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { s0, actions, targets })
    }

    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    pub fn len(&self) -> usize {
        self.s0.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.s0.rows() == 0
    }

    /// The first `h` steps.
    pub fn truncated(&self, h: usize) -> Self {
        Self {
            s0: self.s0.clone(),
            actions: self.actions[..h].to_vec(),
            targets: self.targets[..h].to_vec(),
        }
    }

    /// Actions for steps `[start, start + n)` concatenated column-wise.
    pub fn action_block(&self, start: usize, n: usize) -> Mat {
        let mut block = self.actions[start].clone();
        for a in &self.actions[start + 1..start + n] {
            block = block.hcat(a);
        }
        block
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(n: usize, len: usize) -> Dataset {
        let cfg = EnvConfig {
            episode_len: len,
            ..EnvConfig::default()
        };
        generate(PolicyKind::Random, n, &cfg, 17).unwrap()
    }

    #[test]
    fn split_sizes_follow_ratio() {
        assert_eq!(Split::sizes(50).unwrap(), (36, 4, 10));
        assert_eq!(Split::sizes(10).unwrap(), (7, 1, 2));
        assert_eq!(Split::sizes(3).unwrap(), (1, 1, 1));
        assert!(Split::sizes(2).is_err());
    }

    #[test]
    fn generated_split_partitions_episodes() {
        let ds = tiny(10, 20);
        assert!(ds.split.is_partition_of(10));
        assert_eq!(ds.split.train.len(), 7);
    }

    #[test]
    fn episodes_chain_bit_exactly() {
        let ds = tiny(3, 30);
        for ep in &ds.episodes {
            for w in ep.transitions.windows(2) {
                let a: Vec<u64> = w[0].s_next.0.iter().map(|v| v.to_bits()).collect();
                let b: Vec<u64> = w[1].s.0.iter().map(|v| v.to_bits()).collect();
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn generation_is_pure() {
        assert_eq!(tiny(4, 15), tiny(4, 15));
    }

    #[test]
    fn window_counts() {
        let cfg = EnvConfig::default();
        let ds = generate(PolicyKind::Random, 3, &cfg, 1).unwrap();
        let one = Dataset::train_only("random".into(), 1, cfg, vec![ds.episodes[0].clone()]).unwrap();
        assert_eq!(one.windows(SplitName::Train, 1).unwrap().len(), 200);
        assert_eq!(one.windows(SplitName::Train, 10).unwrap().len(), 191);
        assert!(matches!(
            one.windows(SplitName::Train, 201),
            Err(Error::HorizonTooLong { horizon: 201, shortest: 200 })
        ));
    }

    #[test]
    fn windows_stay_inside_episodes() {
        let ds = tiny(5, 12);
        for w in ds.windows(SplitName::Train, 4).unwrap() {
            let ep = &ds.episodes[w.episode];
            assert!(w.start + 4 <= ep.len());
            assert_eq!(w.targets[3], ep.transitions[w.start + 3].s_next);
        }
    }

    #[test]
    fn sampled_windows_are_reproducible() {
        let ds = tiny(5, 12);
        let draw = || {
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            ds.sample_windows(SplitName::Train, 3, 16, &mut rng).unwrap()
        };
        assert_eq!(draw(), draw());
    }

    #[test]
    fn normalize_mean_is_zero_and_constant_dims_are_floored() {
        let m = Moments::from_rows([[1.0, 5.0].as_slice(), [3.0, 5.0].as_slice()], 2);
        assert_eq!(normalize(&m.mean.clone(), &m), vec![0.0, 0.0]);
        assert_eq!(m.std[1], STD_FLOOR);
        assert_eq!(normalize(&[2.0, 5.0], &m), vec![0.0, 0.0]);
    }

    #[test]
    fn norm_stats_use_train_split_only() {
        let ds = tiny(10, 10);
        let train_obs: Vec<&[f64]> = ds
            .episodes_in(SplitName::Train)
            .flat_map(|(_, e)| e.transitions.iter().map(|t| t.s.as_slice()))
            .collect();
        assert_eq!(ds.norm_stats.obs, Moments::from_rows(train_obs, OBS_DIM));
    }
}
