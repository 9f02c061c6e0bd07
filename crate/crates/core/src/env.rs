//! Frictionless cartpole swing-up with a five-dimensional observation.
//!
//! The pole angle is zero when upright and `pi` when hanging. The action is
//! a normalized horizontal force in `[-1, 1]`, multiplied by
//! `force_scale` newtons. Integration is classical fourth-order Runge-Kutta.

use std::f64::consts::PI;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Episode, EpisodeMeta, Transition};
use crate::error::{Error, Result};

pub const OBS_DIM: usize = 5;
pub const ACTION_DIM: usize = 1;

/// Internal physical state behind the observation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysState {
    pub x: f64,
    pub theta: f64,
    pub x_dot: f64,
    pub theta_dot: f64,
}

impl PhysState {
    pub fn new(x: f64, theta: f64, x_dot: f64, theta_dot: f64) -> Self {
        Self {
            x,
            theta,
            x_dot,
            theta_dot,
        }
    }

    pub fn hanging() -> Self {
        Self::new(0.0, PI, 0.0, 0.0)
    }

    fn as_array(&self) -> [f64; 4] {
        [self.x, self.theta, self.x_dot, self.theta_dot]
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }

    /// Inverse of [`observe`] for unit-norm observations.
    pub fn from_obs(obs: &Obs) -> Self {
        Self::new(obs.x(), obs.sin_theta().atan2(obs.cos_theta()), obs.x_dot(), obs.theta_dot())
    }
}

/// `(x, cos theta, sin theta, x_dot, theta_dot)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Obs(pub [f64; OBS_DIM]);

impl Obs {
    pub fn x(&self) -> f64 {
        self.0[0]
    }
    pub fn cos_theta(&self) -> f64 {
        self.0[1]
    }
    pub fn sin_theta(&self) -> f64 {
        self.0[2]
    }
    pub fn x_dot(&self) -> f64 {
        self.0[3]
    }
    pub fn theta_dot(&self) -> f64 {
        self.0[4]
    }
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
    pub fn from_slice(v: &[f64]) -> Result<Self> {
        let arr: [f64; OBS_DIM] = v.try_into().map_err(|_| Error::DimensionMismatch {
            context: "Obs::from_slice",
            expected: OBS_DIM,
            actual: v.len(),
        })?;
        Ok(Self(arr))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub mass_cart: f64,
    pub mass_pole: f64,
    pub pole_half_length: f64,
    pub gravity: f64,
    pub force_scale: f64,
    pub dt: f64,
    pub episode_len: usize,
    /// Observation noise std as a fraction of each variable's range.
    pub noise_fraction: f64,
    pub obs_ranges: [(f64, f64); OBS_DIM],
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            mass_cart: 1.0,
            mass_pole: 0.1,
            pole_half_length: 0.5,
            gravity: 9.81,
            force_scale: 10.0,
            dt: 0.01,
            episode_len: 200,
            noise_fraction: 0.0,
            obs_ranges: [(-3.0, 3.0), (-1.0, 1.0), (-1.0, 1.0), (-10.0, 10.0), (-10.0, 10.0)],
        }
    }
}

impl EnvConfig {
    /// Same physics with observation noise at 1% of each range.
    pub fn noisy() -> Self {
        Self {
            noise_fraction: 0.01,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::invalid("dt must be positive"));
        }
        if !(self.noise_fraction >= 0.0) {
            return Err(Error::invalid("noise_fraction must be non-negative"));
        }
        if self.obs_ranges.iter().any(|(a, b)| !a.is_finite() || !b.is_finite()) {
            return Err(Error::invalid("obs_ranges must be finite"));
        }
        if self.mass_cart <= 0.0 || self.mass_pole <= 0.0 || self.pole_half_length <= 0.0 {
            return Err(Error::invalid("masses and pole length must be positive"));
        }
        Ok(())
    }

    pub fn noise_std(&self) -> [f64; OBS_DIM] {
        let mut s = [0.0; OBS_DIM];
        for (si, (lo, hi)) in s.iter_mut().zip(&self.obs_ranges) {
            *si = self.noise_fraction * (hi - lo);
        }
        s
    }
}

/// Wrap an angle into `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    PI - (PI - theta).rem_euclid(2.0 * PI)
}

fn derivatives(s: &[f64; 4], force: f64, cfg: &EnvConfig) -> [f64; 4] {
    let [_, theta, x_dot, theta_dot] = *s;
    let (sin, cos) = theta.sin_cos();
    let total = cfg.mass_cart + cfg.mass_pole;
    let ml = cfg.mass_pole * cfg.pole_half_length;
    let temp = (force + ml * theta_dot * theta_dot * sin) / total;
    let theta_acc = (cfg.gravity * sin - cos * temp)
        / (cfg.pole_half_length * (4.0 / 3.0 - cfg.mass_pole * cos * cos / total));
    let x_acc = temp - ml * theta_acc * cos / total;
    [x_dot, theta_dot, x_acc, theta_acc]
}

fn rk4(s: [f64; 4], force: f64, cfg: &EnvConfig) -> [f64; 4] {
    let h = cfg.dt;
    let add = |a: &[f64; 4], k: &[f64; 4], c: f64| -> [f64; 4] {
        [a[0] + c * k[0], a[1] + c * k[1], a[2] + c * k[2], a[3] + c * k[3]]
    };
    let k1 = derivatives(&s, force, cfg);
    let k2 = derivatives(&add(&s, &k1, h / 2.0), force, cfg);
    let k3 = derivatives(&add(&s, &k2, h / 2.0), force, cfg);
    let k4 = derivatives(&add(&s, &k3, h), force, cfg);
    let mut out = s;
    for i in 0..4 {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub state: PhysState,
    pub reward: f64,
    /// The requested action was outside `[-1, 1]` and got clipped.
    pub clipped: bool,
}

pub fn step(state: &PhysState, action: f64, cfg: &EnvConfig) -> Result<StepOutcome> {
    if !state.is_finite() {
        return Err(Error::NonFiniteState(state.as_array()));
    }
    if !action.is_finite() {
        return Err(Error::invalid(format!("non-finite action {action}")));
    }
    let clipped = action.abs() > 1.0;
    let a = action.clamp(-1.0, 1.0);
    let [x, theta, x_dot, theta_dot] = rk4(state.as_array(), a * cfg.force_scale, cfg);
    let next = PhysState::new(x, wrap_angle(theta), x_dot, theta_dot);
    if !next.is_finite() {
        return Err(Error::NonFiniteState(next.as_array()));
    }
    Ok(StepOutcome {
        state: next,
        reward: reward(&next, a),
        clipped,
    })
}

pub fn observe(state: &PhysState) -> Obs {
    let (sin, cos) = state.theta.sin_cos();
    Obs([state.x, cos, sin, state.x_dot, state.theta_dot])
}

/// Additive Gaussian observation noise; unit norm of (cos, sin) is not restored.
pub fn add_noise(obs: &Obs, cfg: &EnvConfig, rng: &mut dyn RngCore) -> Obs {
    if cfg.noise_fraction == 0.0 {
        return *obs;
    }
    let mut out = *obs;
    for (v, std) in out.0.iter_mut().zip(cfg.noise_std()) {
        let n = Normal::new(0.0, std).expect("finite non-negative std");
        *v += n.sample(rng);
    }
    out
}

/// Product of upright, centered, small-control and small-velocity factors.
pub fn reward(state: &PhysState, action: f64) -> f64 {
    reward_terms(state.theta.cos(), state.x, state.theta_dot, action)
}

/// The same reward evaluated on an observation (possibly a model prediction).
pub fn reward_from_obs(obs: &Obs, action: f64) -> f64 {
    reward_terms(obs.cos_theta(), obs.x(), obs.theta_dot(), action)
}

pub(crate) fn reward_terms(cos_theta: f64, x: f64, theta_dot: f64, action: f64) -> f64 {
    let upright = (1.0 + cos_theta.clamp(-1.0, 1.0)) / 2.0;
    let centered = (-(x / 1.8).powi(2)).exp();
    let small_ctrl = (-action * action).exp();
    let small_vel = (-(theta_dot / 5.0).powi(2)).exp();
    let r = upright * centered * small_ctrl * small_vel;
    if r.is_finite() {
        r
    } else {
        0.0
    }
}

/// Total mechanical energy with the potential zero at the hanging position.
pub fn total_energy(state: &PhysState, cfg: &EnvConfig) -> f64 {
    let total = cfg.mass_cart + cfg.mass_pole;
    let (m, l) = (cfg.mass_pole, cfg.pole_half_length);
    0.5 * total * state.x_dot.powi(2)
        + m * l * state.x_dot * state.theta_dot * state.theta.cos()
        + 2.0 / 3.0 * m * l * l * state.theta_dot.powi(2)
        + m * cfg.gravity * l * (1.0 + state.theta.cos())
}

/// Rotational plus potential energy of the pole about its pivot, zero when
/// hanging at rest.
pub fn pole_energy(state: &PhysState, cfg: &EnvConfig) -> f64 {
    let (m, l) = (cfg.mass_pole, cfg.pole_half_length);
    2.0 / 3.0 * m * l * l * state.theta_dot.powi(2) + m * cfg.gravity * l * (1.0 + state.theta.cos())
}

/// A behaviour or control policy acting on observations.
pub trait Policy {
    fn kind(&self) -> &str;
    fn act(&mut self, obs: &Obs, rng: &mut dyn RngCore) -> Result<f64>;
    /// Called at the start of every episode.
    fn reset(&mut self) {}
}

/// Run one episode from `x = 0, theta = pi + N(0, 0.01), velocities 0`.
///
/// Noise (when configured) is applied to recorded observations only; the
/// underlying physics evolves noiselessly.
pub fn rollout_env(policy: &mut dyn Policy, cfg: &EnvConfig, seed: u64) -> Result<Episode> {
    cfg.validate()?;
    if cfg.episode_len == 0 {
        return Err(Error::invalid("episode_len must be at least 1"));
    }
    let mut env_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut policy_rng = ChaCha8Rng::seed_from_u64(seed);
    policy_rng.set_stream(1);
    policy.reset();

    let init = Normal::new(0.0, 0.01).expect("valid std");
    let mut state = PhysState::new(0.0, wrap_angle(PI + init.sample(&mut env_rng)), 0.0, 0.0);
    let mut obs = add_noise(&observe(&state), cfg, &mut env_rng);
    let mut transitions = Vec::with_capacity(cfg.episode_len);
    let mut clipped_actions = 0;
    let mut ret = 0.0;
    for t in 0..cfg.episode_len {
        let action = policy.act(&obs, &mut policy_rng)?;
        if !action.is_finite() {
            return Err(Error::NonFiniteAction { step: t, action });
        }
        let out = step(&state, action, cfg)?;
        clipped_actions += usize::from(out.clipped);
        let next_obs = add_noise(&observe(&out.state), cfg, &mut env_rng);
        transitions.push(Transition {
            s: obs,
            a: action.clamp(-1.0, 1.0),
            r: out.reward,
            s_next: next_obs,
        });
        ret += out.reward;
        state = out.state;
        obs = next_obs;
    }
    Ok(Episode {
        transitions,
        meta: EpisodeMeta {
            policy_kind: policy.kind().to_string(),
            seed,
            ret,
            clipped_actions,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Constant(f64);
    impl Policy for Constant {
        fn kind(&self) -> &str {
            "constant"
        }
        fn act(&mut self, _: &Obs, _: &mut dyn RngCore) -> Result<f64> {
            Ok(self.0)
        }
    }

    #[test]
    fn hanging_rest_is_an_equilibrium() {
        let cfg = EnvConfig::default();
        let s = PhysState::hanging();
        let out = step(&s, 0.0, &cfg).unwrap();
        assert!(out.state.x.abs() < 1e-12);
        assert!((out.state.theta.abs() - PI).abs() < 1e-12);
        assert!(out.state.x_dot.abs() < 1e-12);
        assert!(out.state.theta_dot.abs() < 1e-12);
    }

    #[test]
    fn upright_rest_is_an_exact_fixed_point() {
        let cfg = EnvConfig::default();
        let out = step(&PhysState::new(0.0, 0.0, 0.0, 0.0), 0.0, &cfg).unwrap();
        assert_eq!(out.state.theta, 0.0);
        assert_eq!(out.state.theta_dot, 0.0);
    }

    #[test]
    fn pushing_from_rest_pumps_pole_energy() {
        let cfg = EnvConfig::default();
        let mut s = PhysState::hanging();
        for _ in 0..50 {
            s = step(&s, 1.0, &cfg).unwrap().state;
        }
        assert!(s.x_dot.abs() > 0.0);
        assert!(pole_energy(&s, &cfg) > pole_energy(&PhysState::hanging(), &cfg));
    }

    #[test]
    fn passive_energy_is_conserved() {
        let cfg = EnvConfig::default();
        let mut s = PhysState::new(0.0, PI / 2.0, 0.3, -1.0);
        let e0 = total_energy(&s, &cfg);
        for _ in 0..1000 {
            s = step(&s, 0.0, &cfg).unwrap().state;
        }
        let drift = (total_energy(&s, &cfg) - e0).abs() / e0.abs();
        assert!(drift < 1e-6, "drift {drift}");
    }

    #[test]
    fn non_finite_state_is_rejected() {
        let s = PhysState::new(f64::NAN, 0.0, 0.0, 0.0);
        assert!(matches!(step(&s, 0.0, &EnvConfig::default()), Err(Error::NonFiniteState(_))));
    }

    #[test]
    fn out_of_range_action_is_clipped_and_flagged() {
        let cfg = EnvConfig::default();
        let a = step(&PhysState::hanging(), 3.0, &cfg).unwrap();
        let b = step(&PhysState::hanging(), 1.0, &cfg).unwrap();
        assert!(a.clipped && !b.clipped);
        assert_eq!(a.state, b.state);
    }

    #[test]
    fn observe_examples() {
        assert_eq!(observe(&PhysState::new(0.0, 0.0, 0.0, 0.0)).0, [0.0, 1.0, 0.0, 0.0, 0.0]);
        let o = observe(&PhysState::new(1.0, PI, -2.0, 3.0));
        assert_eq!(o.x(), 1.0);
        assert_eq!(o.cos_theta(), -1.0);
        assert!(o.sin_theta().abs() < 1e-15);
        assert_eq!((o.x_dot(), o.theta_dot()), (-2.0, 3.0));
    }

    #[test]
    fn reward_examples() {
        assert_eq!(reward(&PhysState::new(0.0, 0.0, 0.0, 0.0), 0.0), 1.0);
        assert_eq!(reward(&PhysState::new(0.4, PI, 1.0, 2.0), 0.3), 0.0);
        let r = reward(&PhysState::new(0.0, PI / 2.0, 0.0, 0.0), 0.0);
        assert!((r - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_noise_is_identity() {
        let o = observe(&PhysState::new(0.3, 1.0, 0.2, -0.4));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(add_noise(&o, &EnvConfig::default(), &mut rng), o);
    }

    #[test]
    fn noise_is_seeded() {
        let o = observe(&PhysState::hanging());
        let cfg = EnvConfig::noisy();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..10).map(|_| add_noise(&o, &cfg, &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(5), draw(5));
        assert_ne!(draw(5), draw(6));
    }

    #[test]
    fn zero_action_episode_stays_down() {
        let cfg = EnvConfig::default();
        let ep = rollout_env(&mut Constant(0.0), &cfg, 4).unwrap();
        assert_eq!(ep.transitions.len(), cfg.episode_len);
        for t in &ep.transitions {
            assert!(t.s.cos_theta() < -0.99);
            assert!(t.r < 1e-3);
        }
    }

    #[test]
    fn episodes_are_reproducible() {
        let cfg = EnvConfig::noisy();
        let a = rollout_env(&mut Constant(0.5), &cfg, 9).unwrap();
        let b = rollout_env(&mut Constant(0.5), &cfg, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn non_finite_policy_action_is_an_error() {
        let r = rollout_env(&mut Constant(f64::NAN), &EnvConfig::default(), 0);
        assert!(matches!(r, Err(Error::NonFiniteAction { step: 0, .. })));
    }
}
