//! Cross-entropy-method model-predictive control.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::episode_seed;
use crate::env::{self, EnvConfig, Obs, Policy};
use crate::error::{Error, Result};
use crate::nn::Mat;
use crate::objective::StepModel;
use crate::train::mean_ci90;

/// Candidates scored per model call.
const SCORE_CHUNK: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CemConfig {
    pub plan_horizon: usize,
    pub population: usize,
    pub elites: usize,
    pub iterations: usize,
    /// Weight kept on the previous mean and std when refitting.
    pub action_smoothing: f64,
    pub discount: f64,
    /// Std of the sampling distribution at the start of every plan.
    pub init_std: f64,
}

impl Default for CemConfig {
    fn default() -> Self {
        Self {
            plan_horizon: 25,
            population: 256,
            elites: 32,
            iterations: 4,
            action_smoothing: 0.5,
            discount: 1.0,
            init_std: 0.5,
        }
    }
}

impl CemConfig {
    pub fn validate(&self) -> Result<()> {
        if self.plan_horizon == 0 || self.population == 0 || self.elites == 0 || self.iterations == 0 {
            return Err(Error::invalid("CEM sizes must be positive"));
        }
        if self.elites > self.population {
            return Err(Error::invalid("elites cannot exceed the population"));
        }
        if !(0.0..1.0).contains(&self.action_smoothing) {
            return Err(Error::invalid("action_smoothing must lie in [0, 1)"));
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return Err(Error::invalid("discount must lie in (0, 1]"));
        }
        if !(self.init_std > 0.0) {
            return Err(Error::invalid("init_std must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Plan {
    pub action: f64,
    /// Final sampling mean over the planning horizon.
    pub mean: Vec<f64>,
    /// Every candidate diverged; the action is zero.
    pub fallback: bool,
}

/// Discounted reward of each candidate sequence (rows of `seqs`, one column per step).
/// Candidates whose rollout leaves the finite range score `-inf`.
pub fn score_sequences(model: &dyn StepModel, s0: &Obs, seqs: &Mat, discount: f64) -> Vec<f64> {
    let n = seqs.rows();
    let chunks: Vec<(usize, usize)> = (0..n).step_by(SCORE_CHUNK).map(|s| (s, (s + SCORE_CHUNK).min(n))).collect();
    chunks
        .par_iter()
        .map(|&(lo, hi)| score_chunk(model, s0, seqs, lo, hi, discount))
        .collect::<Vec<_>>()
        .concat()
}

fn score_chunk(model: &dyn StepModel, s0: &Obs, seqs: &Mat, lo: usize, hi: usize, discount: f64) -> Vec<f64> {
    let rows = hi - lo;
    let mut state = Mat::zeros(rows, env::OBS_DIM);
    for r in 0..rows {
        state.row_mut(r).copy_from_slice(s0.as_slice());
    }
    let mut scores = vec![0.0; rows];
    let mut alive = vec![true; rows];
    let mut weight = 1.0;
    for t in 0..seqs.cols() {
        let actions = Mat::from_vec(rows, 1, (lo..hi).map(|r| seqs.get(r, t)).collect()).expect("column");
        state = match model.step_batch(&state, &actions) {
            Ok(s) => s,
            Err(_) => return vec![f64::NEG_INFINITY; rows],
        };
        for r in 0..rows {
            if !alive[r] {
                continue;
            }
            let row = state.row(r);
            if row.iter().any(|v| !v.is_finite()) {
                alive[r] = false;
                scores[r] = f64::NEG_INFINITY;
                continue;
            }
            let obs = Obs::from_slice(row).expect("state width");
            scores[r] += weight * env::reward_from_obs(&obs, actions.get(r, 0));
        }
        // reset dead rows to s0
        for r in 0..rows {
            if !alive[r] {
                state.row_mut(r).copy_from_slice(s0.as_slice());
            }
        }
        weight *= discount;
    }
    scores
}

/// Mean and std of the `elites` best rows, best first by score then by index.
pub fn refit(seqs: &Mat, scores: &[f64], elites: usize) -> (Vec<f64>, Vec<f64>) {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let top = &order[..elites];
    let h = seqs.cols();
    let k = elites as f64;
    let mean: Vec<f64> = (0..h).map(|t| top.iter().map(|&r| seqs.get(r, t)).sum::<f64>() / k).collect();
    let std = (0..h)
        .map(|t| (top.iter().map(|&r| (seqs.get(r, t) - mean[t]).powi(2)).sum::<f64>() / k).sqrt())
        .collect();
    (mean, std)
}

/// Plan from `s0` starting at the sampling mean `init_mean`.
pub fn cem_plan_from(
    model: &dyn StepModel,
    s0: &Obs,
    cfg: &CemConfig,
    init_mean: &[f64],
    rng: &mut dyn RngCore,
) -> Result<Plan> {
    cfg.validate()?;
    if model.state_dim() != env::OBS_DIM {
        return Err(Error::DimensionMismatch {
            context: "planner model state",
            expected: env::OBS_DIM,
            actual: model.state_dim(),
        });
    }
    let h = cfg.plan_horizon;
    let mut mean = init_mean.to_vec();
    mean.resize(h, 0.0);
    let mut std = vec![cfg.init_std; h];
    let mut any_finite = false;
    for _ in 0..cfg.iterations {
        let mut seqs = Mat::zeros(cfg.population, h);
        for r in 0..cfg.population {
            for t in 0..h {
                let z: f64 = rng.sample(StandardNormal);
                seqs.set(r, t, (mean[t] + std[t] * z).clamp(-1.0, 1.0));
            }
        }
        let scores = score_sequences(model, s0, &seqs, cfg.discount);
        if scores.iter().all(|s| *s == f64::NEG_INFINITY) {
            continue;
        }
        any_finite = true;
        let (m, s) = refit(&seqs, &scores, cfg.elites);
        let a = cfg.action_smoothing;
        for t in 0..h {
            mean[t] = a * mean[t] + (1.0 - a) * m[t];
            std[t] = a * std[t] + (1.0 - a) * s[t];
        }
    }
    if !any_finite {
        return Ok(Plan {
            action: 0.0,
            mean: vec![0.0; h],
            fallback: true,
        });
    }
    Ok(Plan {
        action: mean[0].clamp(-1.0, 1.0),
        mean,
        fallback: false,
    })
}

pub fn cem_plan(model: &dyn StepModel, s0: &Obs, cfg: &CemConfig, rng: &mut dyn RngCore) -> Result<Plan> {
    cem_plan_from(model, s0, cfg, &[], rng)
}

/// Replans every step, warm-starting from the previous plan shifted by one.
pub struct MpcPolicy<'a> {
    model: &'a dyn StepModel,
    cfg: CemConfig,
    mean: Vec<f64>,
    fallbacks: usize,
}

impl<'a> MpcPolicy<'a> {
    pub fn new(model: &'a dyn StepModel, cfg: CemConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            model,
            cfg,
            mean: Vec::new(),
            fallbacks: 0,
        })
    }

    pub fn fallbacks(&self) -> usize {
        self.fallbacks
    }
}

impl Policy for MpcPolicy<'_> {
    fn kind(&self) -> &str {
        "mpc"
    }

    fn act(&mut self, obs: &Obs, rng: &mut dyn RngCore) -> Result<f64> {
        let plan = cem_plan_from(self.model, obs, &self.cfg, &self.mean, rng)?;
        if plan.fallback {
            self.fallbacks += 1;
        }
        self.mean = plan.mean[1..].to_vec();
        Ok(plan.action)
    }

    fn reset(&mut self) {
        self.mean.clear();
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReturnReport {
    pub seeds: Vec<u64>,
    pub returns: Vec<f64>,
    pub mean: f64,
    /// Present only with at least two episodes.
    pub ci90: Option<f64>,
    /// Random-policy returns on the same episode seeds.
    pub random_returns: Vec<f64>,
    pub random_mean: f64,
    pub fallbacks: usize,
}

/// Mean and optional CI of a list of returns.
pub fn summarize(returns: &[f64]) -> (f64, Option<f64>) {
    let (mean, ci) = mean_ci90(returns);
    (mean, (returns.len() >= 2).then_some(ci))
}

/// Run MPC on the true environment for `n_episodes` episodes.
pub fn evaluate_policy(
    model: &dyn StepModel,
    env_cfg: &EnvConfig,
    cem: &CemConfig,
    n_episodes: usize,
    seed: u64,
) -> Result<ReturnReport> {
    if n_episodes == 0 {
        return Err(Error::invalid("n_episodes must be at least 1"));
    }
    let seeds: Vec<u64> = (0..n_episodes).map(|i| episode_seed(seed, i)).collect();
    let runs = seeds
        .par_iter()
        .map(|&s| {
            let mut policy = MpcPolicy::new(model, cem.clone())?;
            let ep = env::rollout_env(&mut policy, env_cfg, s)?;
            let random = env::rollout_env(&mut crate::data::RandomPolicy, env_cfg, s)?;
            Ok((ep.meta.ret, random.meta.ret, policy.fallbacks()))
        })
        .collect::<Result<Vec<_>>>()?;
    let returns: Vec<f64> = runs.iter().map(|r| r.0).collect();
    let random_returns: Vec<f64> = runs.iter().map(|r| r.1).collect();
    let (mean, ci90) = summarize(&returns);
    Ok(ReturnReport {
        seeds,
        random_mean: random_returns.iter().sum::<f64>() / n_episodes as f64,
        returns,
        mean,
        ci90,
        random_returns,
        fallbacks: runs.iter().map(|r| r.2).sum(),
    })
}

/// Seeded generator for planner experiments outside `rollout_env`.
pub fn planner_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(3);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{observe, PhysState};
    use crate::objective::GroundTruthModel;

    fn small() -> CemConfig {
        CemConfig {
            plan_horizon: 15,
            population: 64,
            elites: 8,
            iterations: 3,
            ..CemConfig::default()
        }
    }

    #[test]
    fn keeps_the_pole_up_on_the_true_model() {
        let cfg = EnvConfig::default();
        let gt = GroundTruthModel::new(cfg.clone());
        let mut policy = MpcPolicy::new(&gt, small()).unwrap();
        let mut rng = planner_rng(0);
        let mut s = PhysState::new(0.0, 0.0, 0.0, 0.0);
        for _ in 0..50 {
            let a = policy.act(&observe(&s), &mut rng).unwrap();
            assert!((-1.0..=1.0).contains(&a));
            let out = env::step(&s, a, &cfg).unwrap();
            assert!(out.reward > 0.9, "{:?}", out);
            s = out.state;
        }
    }

    #[test]
    fn degenerate_refit_is_population_mean() {
        let seqs = Mat::from_rows(&[[0.2, -1.0], [0.4, 0.0], [-0.3, 0.5]]).unwrap();
        let (m, _) = refit(&seqs, &[1.0, 3.0, 2.0], 3);
        let expect = [(0.2 + 0.4 - 0.3) / 3.0, (-1.0 + 0.0 + 0.5) / 3.0];
        for (a, b) in m.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn fixed_seed_repeats_actions() {
        let gt = GroundTruthModel::new(EnvConfig::default());
        let o = observe(&PhysState::hanging());
        let a = cem_plan(&gt, &o, &small(), &mut planner_rng(5)).unwrap();
        let b = cem_plan(&gt, &o, &small(), &mut planner_rng(5)).unwrap();
        assert_eq!(a, b);
    }

    struct Exploding;

    impl StepModel for Exploding {
        fn state_dim(&self) -> usize {
            env::OBS_DIM
        }

        fn step_batch(&self, states: &Mat, _actions: &Mat) -> Result<Mat> {
            Ok(states.map(|_| f64::NAN))
        }
    }

    #[test]
    fn all_diverging_falls_back_to_zero() {
        let o = observe(&PhysState::hanging());
        let p = cem_plan(&Exploding, &o, &small(), &mut planner_rng(1)).unwrap();
        assert!(p.fallback);
        assert_eq!(p.action, 0.0);
    }

    #[test]
    fn single_episode_has_no_ci() {
        let cfg = EnvConfig {
            episode_len: 20,
            ..EnvConfig::default()
        };
        let gt = GroundTruthModel::new(cfg.clone());
        let r = evaluate_policy(&gt, &cfg, &small(), 1, 0).unwrap();
        assert!(r.ci90.is_none());
        assert_eq!(r.random_returns.len(), 1);
    }

    #[test]
    fn rejects_bad_config() {
        let bad = CemConfig {
            elites: 300,
            ..CemConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
