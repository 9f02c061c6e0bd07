use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::mat::Mat;
use super::tape::{Tape, Var};

/// Lower clamp for predicted log standard deviations.
pub const LOG_STD_MIN: f64 = -10.0;
/// Upper clamp for predicted log standard deviations.
pub const LOG_STD_MAX: f64 = 2.0;
/// Fixed output scale applied after the tanh of the mean head.
pub const MEAN_HEAD_SCALE: f64 = 10.0;
/// Scale of the initial head weights relative to `1/sqrt(fan_in)`.
pub const HEAD_INIT_GAIN: f64 = 0.1;

/// Architecture of a [`DynamicsModel`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub state_dim: usize,
    pub action_dim: usize,
    /// Number of actions consumed per call: 1 for one-step models, `h` for
    /// fixed-horizon models.
    pub action_steps: usize,
    pub hidden: usize,
    pub depth: usize,
    pub delta_mode: bool,
    pub dropout: f64,
}

impl ModelSpec {
    pub fn one_step(state_dim: usize, action_dim: usize, hidden: usize, depth: usize) -> Self {
        Self {
            state_dim,
            action_dim,
            action_steps: 1,
            hidden,
            depth,
            delta_mode: true,
            dropout: 0.0,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.state_dim + self.action_steps * self.action_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.state_dim == 0 || self.action_dim == 0 || self.action_steps == 0 {
            return Err(Error::invalid("model dimensions must be positive"));
        }
        if self.hidden == 0 || self.depth == 0 {
            return Err(Error::invalid("trunk needs at least one hidden layer"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout {} not in [0,1)", self.dropout)));
        }
        Ok(())
    }

    /// Parameter tensor shapes in declaration order.
    pub fn param_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(2 * self.depth + 4);
        let mut fan_in = self.input_dim();
        for _ in 0..self.depth {
            shapes.push((self.hidden, fan_in));
            shapes.push((1, self.hidden));
            fan_in = self.hidden;
        }
        for _ in 0..2 {
            shapes.push((self.state_dim, self.hidden));
            shapes.push((1, self.state_dim));
        }
        shapes
    }
}

/// Affine maps between raw space and network space.
///
/// Inputs are normalized as `(x - shift) / scale`; the mean head output is
/// mapped back as `y * scale + shift` (a state delta in delta mode).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub input_shift: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub output_shift: Vec<f64>,
    pub output_scale: Vec<f64>,
}

impl Normalizer {
    pub fn identity(input_dim: usize, output_dim: usize) -> Self {
        Self {
            input_shift: vec![0.0; input_dim],
            input_scale: vec![1.0; input_dim],
            output_shift: vec![0.0; output_dim],
            output_scale: vec![1.0; output_dim],
        }
    }
}

/// Mean and clamped log standard deviation of a diagonal Gaussian.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPrediction {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
}

/// Gradient slots mirroring a model's parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct GradBuffer {
    pub grads: Vec<Mat>,
}

impl GradBuffer {
    pub fn zeros_like(shapes: &[(usize, usize)]) -> Self {
        Self {
            grads: shapes.iter().map(|&(r, c)| Mat::zeros(r, c)).collect(),
        }
    }

    pub fn zero(&mut self) {
        self.grads.iter_mut().for_each(|g| g.fill(0.0));
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.grads.iter().map(Mat::shape).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().all(Mat::is_finite)
    }
}

/// Parameter leaves of one model registered on a tape.
#[derive(Clone, Debug)]
pub struct ParamVars(Vec<Var>);

/// Tape nodes produced by one model application.
#[derive(Clone, Copy, Debug)]
pub struct HeadOutputs {
    /// Scaled tanh output of the mean head (network space).
    pub mean: Var,
    pub log_std: Var,
}

/// Feed-forward probabilistic dynamics network: a rectifier trunk shared by
/// a mean head and a log-std head, both with tanh activations.
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicsModel {
    spec: ModelSpec,
    params: Vec<Mat>,
    norm: Normalizer,
}

impl DynamicsModel {
    /// Trunk: He-style uniform fan-in weights, biases uniform in
    /// `+-1/sqrt(fan_in)`. Heads: weights uniform in `+-HEAD_INIT_GAIN/sqrt(fan_in)`,
    /// zero biases, so a fresh model predicts small normalized deltas.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shapes = spec.param_shapes();
        let trunk = 2 * spec.depth;
        let params = shapes
            .iter()
            .enumerate()
            .map(|(i, &(r, c))| {
                // tensors alternate weight, bias; a bias takes its fan-in from the weight before it
                let fan_in = if i % 2 == 0 { c } else { shapes[i - 1].1 } as f64;
                let bound = match (i < trunk, i % 2 == 0) {
                    (true, true) => (6.0 / fan_in).sqrt(),
                    (true, false) => fan_in.sqrt().recip(),
                    (false, true) => HEAD_INIT_GAIN / fan_in.sqrt(),
                    (false, false) => 0.0,
                };
                if bound == 0.0 {
                    return Mat::zeros(r, c);
                }
                let data = (0..r * c).map(|_| rng.random_range(-bound..bound)).collect();
                Mat::from_vec(r, c, data).expect("shape from spec")
            })
            .collect();
        let norm = Normalizer::identity(spec.input_dim(), spec.state_dim);
        Ok(Self { spec, params, norm })
    }

    /// All-zero parameters.
    pub fn zeros(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let params = spec
            .param_shapes()
            .into_iter()
            .map(|(r, c)| Mat::zeros(r, c))
            .collect();
        let norm = Normalizer::identity(spec.input_dim(), spec.state_dim);
        Ok(Self { spec, params, norm })
    }

    pub fn from_parts(spec: ModelSpec, params: Vec<Mat>, norm: Normalizer) -> Result<Self> {
        spec.validate()?;
        let shapes = spec.param_shapes();
        if params.len() != shapes.len() {
            return Err(Error::DimensionMismatch {
                context: "DynamicsModel::from_parts (tensor count)",
                expected: shapes.len(),
                actual: params.len(),
            });
        }
        for (p, s) in params.iter().zip(&shapes) {
            if p.shape() != *s {
                return Err(Error::ShapeMismatch {
                    context: "DynamicsModel::from_parts",
                    expected: *s,
                    actual: p.shape(),
                });
            }
        }
        let model = Self { spec, params, norm };
        model.check_normalizer(&model.norm)?;
        Ok(model)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Mat] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Mat] {
        &mut self.params
    }

    pub fn param_shapes(&self) -> Vec<(usize, usize)> {
        self.params.iter().map(Mat::shape).collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Mat::len).sum()
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.norm
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    pub fn state_dim(&self) -> usize {
        self.spec.state_dim
    }

    pub fn delta_mode(&self) -> bool {
        self.spec.delta_mode
    }

    pub fn set_normalizer(&mut self, norm: Normalizer) -> Result<()> {
        self.check_normalizer(&norm)?;
        self.norm = norm;
        Ok(())
    }

    fn check_normalizer(&self, norm: &Normalizer) -> Result<()> {
        let i = self.input_dim();
        let o = self.state_dim();
        if norm.input_shift.len() != i || norm.input_scale.len() != i {
            return Err(Error::DimensionMismatch {
                context: "normalizer input",
                expected: i,
                actual: norm.input_shift.len().min(norm.input_scale.len()),
            });
        }
        if norm.output_shift.len() != o || norm.output_scale.len() != o {
            return Err(Error::DimensionMismatch {
                context: "normalizer output",
                expected: o,
                actual: norm.output_shift.len().min(norm.output_scale.len()),
            });
        }
        if norm.input_scale.iter().chain(&norm.output_scale).any(|s| !(*s > 0.0)) {
            return Err(Error::invalid("normalizer scales must be positive"));
        }
        Ok(())
    }

    pub fn grad_buffer(&self) -> GradBuffer {
        GradBuffer::zeros_like(&self.param_shapes())
    }

    /// Register every parameter tensor as a tape leaf; slot = declaration index.
    pub fn register(&self, tape: &mut Tape) -> ParamVars {
        ParamVars(
            self.params
                .iter()
                .enumerate()
                .map(|(slot, p)| tape.param(p.clone(), slot))
                .collect(),
        )
    }

    /// Network pass on a `batch x input_dim` node in network space.
    /// `dropout_rng` enables dropout on trunk activations when the spec's
    /// rate is nonzero.
    pub fn tape_forward(
        &self,
        tape: &mut Tape,
        pv: &ParamVars,
        input: Var,
        mut dropout_rng: Option<&mut dyn RngCore>,
    ) -> HeadOutputs {
        let p = &pv.0;
        let mut h = input;
        for layer in 0..self.spec.depth {
            let z = tape.linear(h, p[2 * layer], p[2 * layer + 1]);
            h = tape.relu(z);
            if self.spec.dropout > 0.0 {
                if let Some(rng) = dropout_rng.as_deref_mut() {
                    let (r, c) = tape.value(h).shape();
                    let keep = 1.0 - self.spec.dropout;
                    let data = (0..r * c)
                        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                        .collect();
                    h = tape.dropout(h, Mat::from_vec(r, c, data).expect("mask shape"));
                }
            }
        }
        let k = 2 * self.spec.depth;
        let mz = tape.linear(h, p[k], p[k + 1]);
        let mt = tape.tanh(mz);
        let mean = tape.scale(mt, MEAN_HEAD_SCALE);
        let lz = tape.linear(h, p[k + 2], p[k + 3]);
        let lt = tape.tanh(lz);
        let log_std = tape.clamp(lt, LOG_STD_MIN, LOG_STD_MAX);
        HeadOutputs { mean, log_std }
    }

    /// Raw network output for one input vector (no normalization, no delta shift).
    pub fn forward(&self, input: &[f64]) -> Result<GaussianPrediction> {
        if input.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "DynamicsModel::forward",
                expected: self.input_dim(),
                actual: input.len(),
            });
        }
        if input.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalInstability("non-finite model input".into()));
        }
        let mut tape = Tape::new();
        let pv = self.register(&mut tape);
        let x = tape.constant(Mat::row_vector(input));
        let out = self.tape_forward(&mut tape, &pv, x, None);
        Ok(GaussianPrediction {
            mean: tape.value(out.mean).as_slice().to_vec(),
            log_std: tape.value(out.log_std).as_slice().to_vec(),
        })
    }

    /// One application in raw space on the tape: normalize the inputs, run
    /// the network, map the mean back and (in delta mode) add the previous
    /// state. Returns the next-state node and the log-std node.
    pub fn tape_step(
        &self,
        tape: &mut Tape,
        pv: &ParamVars,
        state: Var,
        actions: &Mat,
        dropout_rng: Option<&mut dyn RngCore>,
    ) -> (Var, Var) {
        let s = self.spec.state_dim;
        let ns = tape.normalize(state, &self.norm.input_shift[..s], &self.norm.input_scale[..s]);
        let na = actions.normalize_cols(&self.norm.input_shift[s..], &self.norm.input_scale[s..]);
        let na = tape.constant(na);
        let input = tape.hcat(ns, na);
        let out = self.tape_forward(tape, pv, input, dropout_rng);
        let delta = tape.denormalize(out.mean, &self.norm.output_shift, &self.norm.output_scale);
        let next = if self.spec.delta_mode {
            tape.add(state, delta)
        } else {
            delta
        };
        (next, out.log_std)
    }

    /// Batched raw-space step without gradient bookkeeping for the caller.
    pub fn step_batch(&self, states: &Mat, actions: &Mat) -> Result<(Mat, Mat)> {
        self.check_batch(states, actions)?;
        let mut tape = Tape::new();
        let pv = self.register(&mut tape);
        let s = tape.constant(states.clone());
        let (next, ls) = self.tape_step(&mut tape, &pv, s, actions, None);
        Ok((tape.value(next).clone(), tape.value(ls).clone()))
    }

    pub(crate) fn check_batch(&self, states: &Mat, actions: &Mat) -> Result<()> {
        if states.cols() != self.spec.state_dim {
            return Err(Error::DimensionMismatch {
                context: "state batch",
                expected: self.spec.state_dim,
                actual: states.cols(),
            });
        }
        let a = self.spec.action_steps * self.spec.action_dim;
        if actions.cols() != a {
            return Err(Error::DimensionMismatch {
                context: "action batch",
                expected: a,
                actual: actions.cols(),
            });
        }
        if actions.rows() != states.rows() {
            return Err(Error::DimensionMismatch {
                context: "batch size",
                expected: states.rows(),
                actual: actions.rows(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> ModelSpec {
        ModelSpec {
            state_dim: 5,
            action_dim: 1,
            action_steps: 1,
            hidden: 8,
            depth: 2,
            delta_mode: true,
            dropout: 0.0,
        }
    }

    #[test]
    fn zero_parameters_give_zero_outputs() {
        let m = DynamicsModel::zeros(small_spec()).unwrap();
        let out = m.forward(&[0.3, -1.0, 2.0, 0.1, 5.0, 0.7]).unwrap();
        assert!(out.mean.iter().all(|&v| v == 0.0));
        assert!(out.log_std.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wrong_input_length_is_rejected() {
        let m = DynamicsModel::new(small_spec(), 1).unwrap();
        match m.forward(&[0.0; 4]) {
            Err(Error::DimensionMismatch {
                expected, actual, ..
            }) => assert_eq!((expected, actual), (6, 4)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let m = DynamicsModel::new(small_spec(), 7).unwrap();
        let x = [0.1, 0.9, -0.2, 0.3, -1.5, 0.5];
        let a = m.forward(&x).unwrap();
        let b = m.forward(&x).unwrap();
        assert_eq!(a, b);
        let bits = |v: &[f64]| v.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.mean), bits(&b.mean));
    }

    #[test]
    fn log_std_within_clamp() {
        let m = DynamicsModel::new(small_spec(), 3).unwrap();
        for k in 0..20 {
            let x: Vec<f64> = (0..6).map(|i| ((i * 7 + k) as f64).sin() * 50.0).collect();
            let out = m.forward(&x).unwrap();
            assert!(out.log_std.iter().all(|v| (LOG_STD_MIN..=LOG_STD_MAX).contains(v)));
        }
    }

    #[test]
    fn parameter_shapes_follow_input_dim() {
        let mut spec = small_spec();
        spec.action_steps = 4;
        let m = DynamicsModel::new(spec, 0).unwrap();
        assert_eq!(m.params()[0].shape(), (8, 9));
        assert_eq!(m.params().len(), 8);
    }

    #[test]
    fn invalid_dropout_is_rejected() {
        let mut spec = small_spec();
        spec.dropout = 1.0;
        assert!(DynamicsModel::new(spec, 0).is_err());
    }
}
