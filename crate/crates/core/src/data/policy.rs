//! Behaviour policies used to collect the offline datasets.

use std::str::FromStr;

use nalgebra::{Matrix1, Matrix4, Matrix4x1};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::env::{self, EnvConfig, Obs, PhysState, Policy};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Random,
    Medium,
    Expert,
}

impl PolicyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Random => "random",
            PolicyKind::Medium => "medium",
            PolicyKind::Expert => "expert",
        }
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(PolicyKind::Random),
            "medium" => Ok(PolicyKind::Medium),
            "expert" => Ok(PolicyKind::Expert),
            other => Err(Error::invalid(format!("unknown policy kind '{other}'"))),
        }
    }
}

/// Uniform actions on `[-1, 1]`.
#[derive(Clone, Debug, Default)]
pub struct RandomPolicy;

impl Policy for RandomPolicy {
    fn kind(&self) -> &str {
        "random"
    }

    fn act(&mut self, _obs: &Obs, rng: &mut dyn RngCore) -> Result<f64> {
        Ok(rng.random_range(-1.0..=1.0))
    }
}

/// Energy-pumping swing-up with a linear-quadratic balance controller
/// close to upright. Deterministic.
#[derive(Clone, Debug)]
pub struct ExpertPolicy {
    gain: [f64; 4],
    pub energy_gain: f64,
    pub capture_angle: f64,
    pub centering: [f64; 2],
    cfg: EnvConfig,
}

impl ExpertPolicy {
    pub fn new(cfg: &EnvConfig) -> Self {
        Self {
            gain: lqr_gain(cfg),
            energy_gain: 5.0,
            capture_angle: 0.6,
            centering: [2.0, 1.0],
            cfg: cfg.clone(),
        }
    }

    pub fn action(&self, obs: &Obs) -> f64 {
        let s = PhysState::from_obs(obs);
        if s.theta.abs() < self.capture_angle {
            let u: f64 = -(self.gain[0] * s.x
                + self.gain[1] * s.theta
                + self.gain[2] * s.x_dot
                + self.gain[3] * s.theta_dot);
            return u.clamp(-1.0, 1.0);
        }
        // pole energy relative to upright rest
        let (m, l, g) = (self.cfg.mass_pole, self.cfg.pole_half_length, self.cfg.gravity);
        let energy = 2.0 / 3.0 * m * l * l * s.theta_dot.powi(2) + m * g * l * (s.theta.cos() - 1.0);
        let phase = s.theta_dot * s.theta.cos();
        let direction = if phase >= 0.0 { 1.0 } else { -1.0 };
        let centering = -self.centering[0] * s.x - self.centering[1] * s.x_dot;
        (self.energy_gain * energy * direction + centering).clamp(-1.0, 1.0)
    }
}

impl Policy for ExpertPolicy {
    fn kind(&self) -> &str {
        "expert"
    }

    fn act(&mut self, obs: &Obs, _rng: &mut dyn RngCore) -> Result<f64> {
        Ok(self.action(obs))
    }
}

/// Per-step mixture: the expert action with probability 0.5, else uniform.
#[derive(Clone, Debug)]
pub struct MediumPolicy {
    expert: ExpertPolicy,
    expert_prob: f64,
    expert_steps: usize,
    total_steps: usize,
}

impl MediumPolicy {
    pub fn new(cfg: &EnvConfig) -> Self {
        Self {
            expert: ExpertPolicy::new(cfg),
            expert_prob: 0.5,
            expert_steps: 0,
            total_steps: 0,
        }
    }

    /// Fraction of steps so far that used the expert action.
    pub fn expert_fraction(&self) -> f64 {
        self.expert_steps as f64 / self.total_steps.max(1) as f64
    }
}

impl Policy for MediumPolicy {
    fn kind(&self) -> &str {
        "medium"
    }

    fn act(&mut self, obs: &Obs, rng: &mut dyn RngCore) -> Result<f64> {
        self.total_steps += 1;
        if rng.random::<f64>() < self.expert_prob {
            self.expert_steps += 1;
            Ok(self.expert.action(obs))
        } else {
            Ok(rng.random_range(-1.0..=1.0))
        }
    }
}

pub fn make_policy(kind: PolicyKind, cfg: &EnvConfig) -> Box<dyn Policy + Send> {
    match kind {
        PolicyKind::Random => Box::new(RandomPolicy),
        PolicyKind::Medium => Box::new(MediumPolicy::new(cfg)),
        PolicyKind::Expert => Box::new(ExpertPolicy::new(cfg)),
    }
}

/// Discrete-time LQR gain for the upright equilibrium, from a central
/// finite-difference linearization of one integrator step.
fn lqr_gain(cfg: &EnvConfig) -> [f64; 4] {
    let f = |s: [f64; 4], u: f64| -> [f64; 4] {
        let st = PhysState::new(s[0], s[1], s[2], s[3]);
        let next = env::step(&st, u, cfg).expect("finite linearization point").state;
        [next.x, next.theta, next.x_dot, next.theta_dot]
    };
    let eps = 1e-6;
    let mut a = Matrix4::<f64>::zeros();
    for j in 0..4 {
        let mut plus = [0.0; 4];
        let mut minus = [0.0; 4];
        plus[j] = eps;
        minus[j] = -eps;
        let (fp, fm) = (f(plus, 0.0), f(minus, 0.0));
        for i in 0..4 {
            a[(i, j)] = (fp[i] - fm[i]) / (2.0 * eps);
        }
    }
    let (fp, fm) = (f([0.0; 4], eps), f([0.0; 4], -eps));
    let b = Matrix4x1::from_fn(|i, _| (fp[i] - fm[i]) / (2.0 * eps));

    let q = Matrix4::from_diagonal(&nalgebra::Vector4::new(1.0, 10.0, 0.1, 0.1));
    let r = Matrix1::new(1.0);
    let mut p = q;
    let mut k = nalgebra::Matrix1x4::<f64>::zeros();
    for _ in 0..5000 {
        let s = r + b.transpose() * p * b;
        k = s.try_inverse().expect("positive scalar") * b.transpose() * p * a;
        let next = q + a.transpose() * p * (a - b * k);
        let converged = (next - p).abs().max() < 1e-10;
        p = next;
        if converged {
            break;
        }
    }
    [k[(0, 0)], k[(0, 1)], k[(0, 2)], k[(0, 3)]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{observe, rollout_env};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_actions_in_range() {
        let mut p = RandomPolicy;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let o = observe(&PhysState::hanging());
        for _ in 0..1000 {
            let a = p.act(&o, &mut rng).unwrap();
            assert!((-1.0..=1.0).contains(&a));
        }
    }

    #[test]
    fn unknown_kind_is_rejected() {
        assert!("sac".parse::<PolicyKind>().is_err());
        assert_eq!("medium".parse::<PolicyKind>().unwrap(), PolicyKind::Medium);
    }

    #[test]
    fn expert_beats_random_threefold() {
        let cfg = EnvConfig::default();
        let mean_return = |kind| {
            (0..5u64)
                .map(|seed| {
                    let mut p = make_policy(kind, &cfg);
                    rollout_env(p.as_mut(), &cfg, seed).unwrap().meta.ret
                })
                .sum::<f64>()
                / 5.0
        };
        let expert = mean_return(PolicyKind::Expert);
        let random = mean_return(PolicyKind::Random);
        assert!(expert > 3.0 * random, "expert {expert} random {random}");
    }

    #[test]
    fn expert_balances_from_upright() {
        let cfg = EnvConfig::default();
        let p = ExpertPolicy::new(&cfg);
        let mut s = PhysState::new(0.0, 0.1, 0.0, 0.0);
        for _ in 0..500 {
            s = env::step(&s, p.action(&observe(&s)), &cfg).unwrap().state;
        }
        assert!(s.theta.abs() < 0.05, "theta {}", s.theta);
    }

    #[test]
    fn medium_mixes_half_and_half() {
        let cfg = EnvConfig::default();
        let mut p = MediumPolicy::new(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let o = observe(&PhysState::hanging());
        for _ in 0..10_000 {
            p.act(&o, &mut rng).unwrap();
        }
        let f = p.expert_fraction();
        assert!((0.47..=0.53).contains(&f), "{f}");
    }
}
