use crate::error::{Error, Result};

use super::mat::Mat;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moment buffers plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    m: Vec<Mat>,
    v: Vec<Mat>,
    t: u64,
}

impl AdamState {
    pub fn new(shapes: &[(usize, usize)]) -> Self {
        Self {
            m: shapes.iter().map(|&(r, c)| Mat::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| Mat::zeros(r, c)).collect(),
            t: 0,
        }
    }

    pub fn timestep(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut [Mat], grads: &[Mat], state: &mut AdamState, lr: f64) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::invalid(format!("learning rate must be positive, got {lr}")));
    }
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::DimensionMismatch {
            context: "adam_step tensor count",
            expected: params.len(),
            actual: grads.len().min(state.m.len()),
        });
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(Error::ShapeMismatch {
                context: "adam_step",
                expected: p.shape(),
                actual: if p.shape() != g.shape() { g.shape() } else { m.shape() },
            });
        }
    }
    state.t += 1;
    let bc1 = 1.0 - BETA1.powi(state.t as i32);
    let bc2 = 1.0 - BETA2.powi(state.t as i32);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        let p = p.as_mut_slice();
        let (m, v) = (m.as_mut_slice(), v.as_mut_slice());
        for (i, &gi) in g.as_slice().iter().enumerate() {
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * gi;
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + EPSILON);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_has_magnitude_lr() {
        let mut p = vec![Mat::row_vector(&[1.0, -2.0, 0.5])];
        let g = vec![Mat::row_vector(&[3.0, -0.01, 200.0])];
        let mut st = AdamState::new(&[(1, 3)]);
        adam_step(&mut p, &g, &mut st, 0.01).unwrap();
        let delta: Vec<f64> = p[0]
            .as_slice()
            .iter()
            .zip([1.0, -2.0, 0.5])
            .map(|(a, b)| a - b)
            .collect();
        for (d, gi) in delta.iter().zip(g[0].as_slice()) {
            assert!((d + 0.01 * gi.signum()).abs() < 1e-6, "{d}");
        }
        assert_eq!(st.timestep(), 1);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let orig = Mat::row_vector(&[0.3, 0.4]);
        let mut p = vec![orig.clone()];
        let g = vec![Mat::zeros(1, 2)];
        let mut st = AdamState::new(&[(1, 2)]);
        for _ in 0..10 {
            adam_step(&mut p, &g, &mut st, 0.1).unwrap();
        }
        assert_eq!(p[0], orig);
    }

    #[test]
    fn descends_a_quadratic() {
        let mut p = vec![Mat::filled(1, 1, 0.0)];
        let mut st = AdamState::new(&[(1, 1)]);
        for _ in 0..100 {
            let theta = p[0].scalar();
            let g = vec![Mat::filled(1, 1, 2.0 * (theta - 1.0))];
            adam_step(&mut p, &g, &mut st, 0.01).unwrap();
        }
        assert!((p[0].scalar() - 1.0).abs() < 1.0);
    }

    #[test]
    fn rejects_shape_mismatch_and_bad_lr() {
        let mut p = vec![Mat::zeros(1, 2)];
        let mut st = AdamState::new(&[(1, 2)]);
        assert!(matches!(
            adam_step(&mut p, &[Mat::zeros(2, 1)], &mut st, 0.1),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(adam_step(&mut p, &[Mat::zeros(1, 2)], &mut st, 0.0).is_err());
    }
}
