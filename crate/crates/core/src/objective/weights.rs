//! Horizon weight profiles and their resolution onto the simplex.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::tape::softmax_row;

pub const DEFAULT_EMA_RATE: f64 = 0.1;

fn default_ema_rate() -> f64 {
    DEFAULT_EMA_RATE
}

/// Rule producing the weights `alpha_1..alpha_h` of the multi-horizon loss.
///
/// Serialized as `{"profile": "decay", "beta": 0.3}` and similar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "snake_case")]
pub enum WeightProfile {
    /// `1/h` each.
    Uniform,
    /// `((1 - beta) / (1 - beta^(h+1))) beta^j`, renormalized to sum to one.
    Decay { beta: f64 },
    /// Normalized exponentials of trainable logits (zeros when empty).
    Learnable {
        #[serde(default)]
        logits: Vec<f64>,
    },
    /// `alpha_j` proportional to `1 / ema_losses[j]` (uniform when empty).
    Proportional {
        #[serde(default)]
        ema_losses: Vec<f64>,
        #[serde(default = "default_ema_rate")]
        ema_rate: f64,
    },
    /// A fixed weight vector, e.g. `[alpha, 1 - alpha]`.
    Explicit { weights: Vec<f64> },
}

impl WeightProfile {
    pub fn decay(beta: f64) -> Self {
        WeightProfile::Decay { beta }
    }

    pub fn learnable() -> Self {
        WeightProfile::Learnable { logits: Vec::new() }
    }

    pub fn proportional() -> Self {
        WeightProfile::Proportional {
            ema_losses: Vec::new(),
            ema_rate: DEFAULT_EMA_RATE,
        }
    }

    /// Short label used in reports, e.g. `decay(0.3)`.
    pub fn label(&self) -> String {
        match self {
            WeightProfile::Uniform => "uniform".into(),
            WeightProfile::Decay { beta } => format!("decay({beta})"),
            WeightProfile::Learnable { .. } => "learnable".into(),
            WeightProfile::Proportional { .. } => "proportional".into(),
            WeightProfile::Explicit { weights } => {
                let w: Vec<String> = weights.iter().map(|w| w.to_string()).collect();
                format!("explicit[{}]", w.join(";"))
            }
        }
    }
}

fn renormalize(raw: Vec<f64>) -> Vec<f64> {
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// The un-renormalized decay closed form.
pub fn decay_raw(beta: f64, h: usize) -> Vec<f64> {
    let c = (1.0 - beta) / (1.0 - beta.powi(h as i32 + 1));
    (1..=h).map(|j| c * beta.powi(j as i32)).collect()
}

pub fn resolve_weights(profile: &WeightProfile, h: usize) -> Result<Vec<f64>> {
    if h == 0 {
        return Err(Error::invalid("horizon must be at least 1"));
    }
    let check_len = |len: usize, what: &str| {
        if len != 0 && len != h {
            Err(Error::DimensionMismatch {
                context: if what == "logits" { "learnable logits" } else { "proportional ema_losses" },
                expected: h,
                actual: len,
            })
        } else {
            Ok(())
        }
    };
    match profile {
        WeightProfile::Uniform => Ok(vec![1.0 / h as f64; h]),
        WeightProfile::Decay { beta } => {
            if !(*beta > 0.0 && *beta < 1.0) {
                return Err(Error::invalid(format!("decay beta must lie in (0,1), got {beta}")));
            }
            Ok(renormalize(decay_raw(*beta, h)))
        }
        WeightProfile::Learnable { logits } => {
            check_len(logits.len(), "logits")?;
            if logits.is_empty() {
                return Ok(vec![1.0 / h as f64; h]);
            }
            if logits.iter().any(|l| !l.is_finite()) {
                return Err(Error::invalid("learnable logits must be finite"));
            }
            Ok(softmax_row(logits))
        }
        WeightProfile::Proportional { ema_losses, .. } => {
            check_len(ema_losses.len(), "ema")?;
            if ema_losses.is_empty() {
                return Ok(vec![1.0 / h as f64; h]);
            }
            if ema_losses.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
                return Err(Error::invalid("proportional ema losses must be positive and finite"));
            }
            Ok(renormalize(ema_losses.iter().map(|l| 1.0 / l).collect()))
        }
        WeightProfile::Explicit { weights } => {
            if weights.len() != h {
                return Err(Error::DimensionMismatch {
                    context: "explicit weights",
                    expected: h,
                    actual: weights.len(),
                });
            }
            let total: f64 = weights.iter().sum();
            if weights.iter().any(|w| !(*w >= 0.0)) || !(total > 0.0) {
                return Err(Error::invalid("explicit weights must be non-negative with positive sum"));
            }
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("explicit weights sum to {total}, not 1")));
            }
            Ok(weights.clone())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_quarters() {
        assert_eq!(resolve_weights(&WeightProfile::Uniform, 4).unwrap(), vec![0.25; 4]);
    }

    #[test]
    fn decay_half_two_steps() {
        let raw = decay_raw(0.5, 2);
        assert!((raw[0] - 2.0 / 7.0).abs() < 1e-15);
        assert!((raw[1] - 1.0 / 7.0).abs() < 1e-15);
        let w = resolve_weights(&WeightProfile::decay(0.5), 2).unwrap();
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((w[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn decay_rejects_beta_outside_unit_interval() {
        for beta in [0.0, 1.0, -0.2, 1.5] {
            assert!(resolve_weights(&WeightProfile::decay(beta), 3).is_err());
        }
    }

    #[test]
    fn proportional_equal_losses_is_uniform() {
        let p = WeightProfile::Proportional {
            ema_losses: vec![0.7; 5],
            ema_rate: 0.1,
        };
        for w in resolve_weights(&p, 5).unwrap() {
            assert!((w - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn proportional_rejects_non_positive_loss() {
        let p = WeightProfile::Proportional {
            ema_losses: vec![1.0, 0.0],
            ema_rate: 0.1,
        };
        assert!(resolve_weights(&p, 2).is_err());
    }

    #[test]
    fn json_form() {
        let p: WeightProfile = serde_json::from_str(r#"{"profile": "decay", "beta": 0.3}"#).unwrap();
        assert_eq!(p, WeightProfile::decay(0.3));
        let l: WeightProfile = serde_json::from_str(r#"{"profile": "learnable"}"#).unwrap();
        assert_eq!(l, WeightProfile::learnable());
    }

    fn simplex_ok(w: &[f64]) -> bool {
        w.iter().all(|&x| x >= 0.0) && (w.iter().sum::<f64>() - 1.0).abs() < 1e-12
    }

    proptest! {
        #[test]
        fn every_profile_lands_on_simplex(
            h in 1usize..40,
            beta in 0.001f64..0.999,
            logits in proptest::collection::vec(-20.0f64..20.0, 40),
            losses in proptest::collection::vec(1e-6f64..1e3, 40),
        ) {
            let profiles = [
                WeightProfile::Uniform,
                WeightProfile::decay(beta),
                WeightProfile::Learnable { logits: logits[..h].to_vec() },
                WeightProfile::Proportional { ema_losses: losses[..h].to_vec(), ema_rate: 0.1 },
            ];
            for p in &profiles {
                let w = resolve_weights(p, h).unwrap();
                prop_assert_eq!(w.len(), h);
                prop_assert!(simplex_ok(&w), "{:?} -> {:?}", p, w);
            }
        }
    }
}
