//! Closed-form gradient of the multi-horizon MSE loss for scalar-state models,
//! written as a linear function of the one-step loss gradient.
//!
//! With `e_j = s_hat_j - s_j` and `Err(1,j) = e_j / e_1`,
//! `dL/dtheta = sum_j alpha_j (prod_{i<j} G_i) Err(1,j) dL1/dtheta`.
//! `G_i` must carry the total derivative of the `i`-th iterate, since the
//! parameters enter every composition. Writing `Q_j = (prod_{i<j} G_i) dL1/dtheta`,
//! `Q_1 = dL1/dtheta` and
//! `Q_{k+1} = dp/ds(s_hat_k) Q_k + dp/dtheta(s_hat_k) (2 e_1 / sigma^2)`,
//! which is evaluated without dividing by `Q_k`.

use crate::error::{Error, Result};
use crate::nn::{DynamicsModel, GradBuffer, Mat, Tape};

/// A deterministic model of a scalar state.
pub trait ScalarDynamics {
    fn num_params(&self) -> usize;
    /// `(p(s, a), dp/ds, dp/dtheta)`.
    fn partials(&self, s: f64, a: f64) -> Result<StepPartials>;
    /// Errors are measured in units of this scale.
    fn error_scale(&self) -> f64 {
        1.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepPartials {
    pub value: f64,
    pub d_state: f64,
    pub d_params: Vec<f64>,
}

/// One scalar trajectory segment.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarWindow {
    pub s0: f64,
    pub actions: Vec<f64>,
    pub targets: Vec<f64>,
}

impl ScalarWindow {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnalyticGradTerms {
    /// `Err(1,j)` for `j = 1..=h`; `err_ratios[0] = 1`.
    pub err_ratios: Vec<f64>,
    /// Per-parameter `G_k` for `k = 0..h`, `G_0 = 1`. Entries are NaN where
    /// the running product vanishes.
    pub g_terms: Vec<Vec<f64>>,
    /// `dp/ds` at `s_hat_k`, `k = 0..h`.
    pub state_derivs: Vec<f64>,
    /// `Q_j = (prod_{i<j} G_i) dL1/dtheta`, `j = 1..=h`.
    pub products: Vec<Vec<f64>>,
    /// `dL1/dtheta`.
    pub one_step_grad: Vec<f64>,
    pub errors: Vec<f64>,
}

pub fn analytic_terms(model: &dyn ScalarDynamics, window: &ScalarWindow) -> Result<AnalyticGradTerms> {
    let h = window.horizon();
    if h == 0 || window.targets.len() != h {
        return Err(Error::invalid("scalar window needs h >= 1 actions and h targets"));
    }
    let sigma = model.error_scale();
    let mut state = window.s0;
    let mut steps = Vec::with_capacity(h);
    let mut errors = Vec::with_capacity(h);
    for (j, (&a, &target)) in window.actions.iter().zip(&window.targets).enumerate() {
        let p = model.partials(state, a)?;
        if !p.value.is_finite() {
            return Err(Error::DivergedRollout { step: j + 1 });
        }
        state = p.value;
        errors.push(state - target);
        steps.push(p);
    }
    let e1 = errors[0];
    if e1 == 0.0 {
        return Err(Error::SingularRatio { window: 1 });
    }
    let c = 2.0 * e1 / (sigma * sigma);
    let one_step_grad: Vec<f64> = steps[0].d_params.iter().map(|g| c * g).collect();

    let mut products = vec![one_step_grad.clone()];
    for step in &steps[1..] {
        let prev = products.last().expect("non-empty");
        let next = prev
            .iter()
            .zip(&step.d_params)
            .map(|(q, g)| step.d_state * q + g * c)
            .collect();
        products.push(next);
    }
    let mut g_terms = vec![vec![1.0; model.num_params()]];
    for k in 1..h {
        let g = products[k]
            .iter()
            .zip(&products[k - 1])
            .map(|(n, d)| if *d == 0.0 { f64::NAN } else { n / d })
            .collect();
        g_terms.push(g);
    }
    Ok(AnalyticGradTerms {
        err_ratios: errors.iter().map(|e| e / e1).collect(),
        g_terms,
        state_derivs: steps.iter().map(|s| s.d_state).collect(),
        products,
        one_step_grad,
        errors,
    })
}

/// Gradient of `sum_j alpha_j (s_hat_j - s_j)^2 / sigma^2` with respect to every parameter.
pub fn analytic_gradient_1d(model: &dyn ScalarDynamics, window: &ScalarWindow, alpha: &[f64]) -> Result<Vec<f64>> {
    check_alpha(window, alpha)?;
    let t = analytic_terms(model, window)?;
    let mut grad = vec![0.0; model.num_params()];
    for (j, &a) in alpha.iter().enumerate() {
        for (g, q) in grad.iter_mut().zip(&t.products[j]) {
            *g += a * q * t.err_ratios[j];
        }
    }
    Ok(grad)
}

/// The same factorization with `G_i` taken as the plain state derivative
/// `dp/ds(s_hat_i)`. This drops the parameter dependence of the later
/// iterates and disagrees with the true gradient whenever `h > 1`.
pub fn state_derivative_gradient_1d(
    model: &dyn ScalarDynamics,
    window: &ScalarWindow,
    alpha: &[f64],
) -> Result<Vec<f64>> {
    check_alpha(window, alpha)?;
    let t = analytic_terms(model, window)?;
    let mut grad = vec![0.0; model.num_params()];
    let mut prod = 1.0;
    for (j, &a) in alpha.iter().enumerate() {
        if j > 0 {
            prod *= t.state_derivs[j];
        }
        for (g, d) in grad.iter_mut().zip(&t.one_step_grad) {
            *g += a * prod * t.err_ratios[j] * d;
        }
    }
    Ok(grad)
}

fn check_alpha(window: &ScalarWindow, alpha: &[f64]) -> Result<()> {
    if alpha.len() != window.horizon() {
        return Err(Error::DimensionMismatch {
            context: "analytic gradient weights",
            expected: window.horizon(),
            actual: alpha.len(),
        });
    }
    Ok(())
}

impl ScalarDynamics for DynamicsModel {
    fn num_params(&self) -> usize {
        self.num_parameters()
    }

    fn partials(&self, s: f64, a: f64) -> Result<StepPartials> {
        if self.spec().state_dim != 1 || self.spec().action_dim != 1 || self.spec().action_steps != 1 {
            return Err(Error::invalid("analytic gradient needs a scalar one-step model"));
        }
        let mut tape = Tape::new();
        let pv = self.register(&mut tape);
        let state = tape.constant(Mat::row_vector(&[s]));
        let (next, _) = self.tape_step(&mut tape, &pv, state, &Mat::row_vector(&[a]), None);
        let value = tape.value(next).scalar();
        let g = tape.backward(next)?;
        let d_state = g.wrt(state).map_or(0.0, Mat::scalar);
        let d_params = g
            .param_grads(&self.param_shapes())
            .into_iter()
            .flat_map(Mat::into_vec)
            .collect();
        Ok(StepPartials { value, d_state, d_params })
    }

    fn error_scale(&self) -> f64 {
        self.normalizer().output_scale[0]
    }
}

/// Reshape a flat gradient into the model's tensor layout.
pub fn unflatten(model: &DynamicsModel, flat: &[f64]) -> Result<GradBuffer> {
    if flat.len() != model.num_parameters() {
        return Err(Error::DimensionMismatch {
            context: "flat gradient",
            expected: model.num_parameters(),
            actual: flat.len(),
        });
    }
    let mut offset = 0;
    let mut grads = Vec::new();
    for (r, c) in model.param_shapes() {
        grads.push(Mat::from_vec(r, c, flat[offset..offset + r * c].to_vec())?);
        offset += r * c;
    }
    Ok(GradBuffer { grads })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `p(s) = theta s`, ignoring the action.
    struct Linear(f64);

    impl ScalarDynamics for Linear {
        fn num_params(&self) -> usize {
            1
        }

        fn partials(&self, s: f64, _a: f64) -> Result<StepPartials> {
            Ok(StepPartials {
                value: self.0 * s,
                d_state: self.0,
                d_params: vec![s],
            })
        }
    }

    fn window(s0: f64, targets: &[f64]) -> ScalarWindow {
        ScalarWindow {
            s0,
            actions: vec![0.0; targets.len()],
            targets: targets.to_vec(),
        }
    }

    #[test]
    fn h1_is_the_one_step_gradient() {
        let m = Linear(0.7);
        let w = window(1.5, &[0.2]);
        let g = analytic_gradient_1d(&m, &w, &[1.0]).unwrap();
        assert_eq!(g, vec![2.0 * (0.7 * 1.5 - 0.2) * 1.5]);
    }

    #[test]
    fn linear_model_two_steps_matches_hand_expansion() {
        let (theta, s, s1, s2) = (0.8, 1.3, 0.9, 0.5);
        let (a1, a2) = (0.4, 0.6);
        // d/dtheta [a1 (theta s - s1)^2 + a2 (theta^2 s - s2)^2]
        let hand = a1 * 2.0 * (theta * s - s1) * s + a2 * 2.0 * (theta * theta * s - s2) * 2.0 * theta * s;
        let m = Linear(theta);
        let w = window(s, &[s1, s2]);
        let g = analytic_gradient_1d(&m, &w, &[a1, a2]).unwrap()[0];
        assert!((g - hand).abs() < 1e-14 * hand.abs());
        // G_1 = theta + s_hat_1 / s_hat_1' = 2 theta for the linear model
        let t = analytic_terms(&m, &w).unwrap();
        assert!((t.g_terms[1][0] - 2.0 * theta).abs() < 1e-14);
    }

    #[test]
    fn state_derivative_reading_misses_the_sharing_term() {
        let (theta, s, s1, s2) = (0.8, 1.3, 0.9, 0.5);
        let m = Linear(theta);
        let w = window(s, &[s1, s2]);
        let lit = state_derivative_gradient_1d(&m, &w, &[0.0, 1.0]).unwrap()[0];
        let e2 = theta * theta * s - s2;
        assert!((lit - 2.0 * e2 * theta * s).abs() < 1e-14);
        let exact = analytic_gradient_1d(&m, &w, &[0.0, 1.0]).unwrap()[0];
        assert!((exact - 4.0 * e2 * theta * s).abs() < 1e-14);
    }

    #[test]
    fn zero_one_step_error_is_singular() {
        let m = Linear(0.5);
        let w = window(2.0, &[1.0, 0.3]);
        assert!(matches!(
            analytic_gradient_1d(&m, &w, &[0.5, 0.5]),
            Err(Error::SingularRatio { .. })
        ));
    }

    #[test]
    fn conventions_hold() {
        let t = analytic_terms(&Linear(1.1), &window(0.4, &[0.1, 0.2, 0.3])).unwrap();
        assert_eq!(t.err_ratios[0], 1.0);
        assert!(t.g_terms[0].iter().all(|&g| g == 1.0));
        assert_eq!(t.products[0], t.one_step_grad);
    }
}
