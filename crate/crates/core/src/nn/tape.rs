//! Dynamically recorded reverse-mode tape.
//!
//! Every operation appends a node holding its value and the ids of its
//! parents. Parameters enter as leaves tagged with a slot; if the same
//! parameter leaf is consumed by several operations (as happens when a
//! model is composed with itself), the backward pass sums all of the
//! contributions into that slot.

use crate::error::{Error, Result};

use super::mat::Mat;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param(usize),
    Linear { x: Var, w: Var, b: Var },
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Scale(Var, f64),
    AddConst(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Clamp { x: Var, lo: f64, hi: f64 },
    Normalize { x: Var, scale: Vec<f64> },
    Denormalize { x: Var, scale: Vec<f64> },
    HCat(Var, Var),
    Dropout { x: Var, mask: Mat },
    Sum(Var),
    Stack(Vec<Var>),
    Softmax(Var),
}

#[derive(Clone, Debug)]
struct Node {
    value: Mat,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Result of a backward pass: adjoints for every node on the tape.
#[derive(Debug)]
pub struct Gradients {
    adjoints: Vec<Option<Mat>>,
    param_slots: Vec<(usize, usize)>,
}

impl Gradients {
    /// Adjoint of an arbitrary node (e.g. an input leaf). `None` if the
    /// output does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&Mat> {
        self.adjoints.get(v.0).and_then(|g| g.as_ref())
    }

    /// Sum of adjoints over every parameter leaf registered in `slot`.
    /// Shapes are taken from `shapes`; unused slots come back as zeros.
    pub fn param_grads(&self, shapes: &[(usize, usize)]) -> Vec<Mat> {
        let mut out: Vec<Mat> = shapes.iter().map(|&(r, c)| Mat::zeros(r, c)).collect();
        for &(node, slot) in &self.param_slots {
            if let (Some(g), Some(dst)) = (self.adjoints[node].as_ref(), out.get_mut(slot)) {
                dst.add_assign(g);
            }
        }
        out
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn param(&mut self, value: Mat, slot: usize) -> Var {
        self.push(value, Op::Param(slot))
    }

    /// `x * w^T + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let v = self.value(x).linear(self.value(w), self.value(b));
        self.push(v, Op::Linear { x, w, b })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| if a > 0.0 { a } else { 0.0 });
        self.push(v, Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::tanh);
        self.push(v, Op::Tanh(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::exp);
        self.push(v, Op::Exp(x))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let v = self.value(x).map(|a| a * c);
        self.push(v, Op::Scale(x, c))
    }

    pub fn add_const(&mut self, x: Var, c: f64) -> Var {
        let v = self.value(x).map(|a| a + c);
        self.push(v, Op::AddConst(x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    /// Clamp into `[lo, hi]`; gradient passes only where the input is inside.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(x).map(|a| a.clamp(lo, hi));
        self.push(v, Op::Clamp { x, lo, hi })
    }

    /// Column-wise `(x - shift) / scale`.
    pub fn normalize(&mut self, x: Var, shift: &[f64], scale: &[f64]) -> Var {
        let v = self.value(x).normalize_cols(shift, scale);
        self.push(
            v,
            Op::Normalize {
                x,
                scale: scale.to_vec(),
            },
        )
    }

    /// Column-wise `x * scale + shift`.
    pub fn denormalize(&mut self, x: Var, shift: &[f64], scale: &[f64]) -> Var {
        let v = self.value(x).denormalize_cols(shift, scale);
        self.push(
            v,
            Op::Denormalize {
                x,
                scale: scale.to_vec(),
            },
        )
    }

    pub fn hcat(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).hcat(self.value(b));
        self.push(v, Op::HCat(a, b))
    }

    /// Multiply by a fixed mask (already scaled by `1/(1-p)`).
    pub fn dropout(&mut self, x: Var, mask: Mat) -> Var {
        let v = self.value(x).zip_map(&mask, |a, m| a * m);
        self.push(v, Op::Dropout { x, mask })
    }

    /// Sum of all entries, as a `1 x 1` node.
    pub fn sum(&mut self, x: Var) -> Var {
        let v = Mat::filled(1, 1, self.value(x).sum());
        self.push(v, Op::Sum(x))
    }

    /// Concatenate `1 x 1` nodes into a `1 x n` row.
    pub fn stack(&mut self, xs: &[Var]) -> Var {
        let data: Vec<f64> = xs.iter().map(|&x| self.value(x).scalar()).collect();
        let v = Mat::row_vector(&data);
        self.push(v, Op::Stack(xs.to_vec()))
    }

    /// Normalized exponentials over a `1 x n` row.
    pub fn softmax(&mut self, x: Var) -> Var {
        let v = softmax_row(self.value(x).as_slice());
        self.push(Mat::row_vector(&v), Op::Softmax(x))
    }

    /// Reverse sweep from the scalar node `out`.
    pub fn backward(&self, out: Var) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::EmptyTape);
        }
        let (r, c) = self.nodes[out.0].value.shape();
        if (r, c) != (1, 1) {
            return Err(Error::NonScalarOutput(r, c));
        }
        let mut adj: Vec<Option<Mat>> = vec![None; out.0 + 1];
        adj[out.0] = Some(Mat::filled(1, 1, 1.0));

        for i in (0..=out.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Constant | Op::Param(_) => {
                    // leaves keep their adjoint for later queries
                    adj[i] = Some(g);
                }
                Op::Linear { x, w, b } => {
                    let wv = self.value(*w);
                    let xv = self.value(*x);
                    accumulate(&mut adj, *x, g.matmul(wv));
                    accumulate(&mut adj, *w, g.t_matmul(xv));
                    accumulate(&mut adj, *b, g.col_sums());
                }
                Op::Relu(x) => {
                    let d = g.zip_map(self.value(*x), |gi, a| if a > 0.0 { gi } else { 0.0 });
                    accumulate(&mut adj, *x, d);
                }
                Op::Tanh(x) => {
                    let d = g.zip_map(&node.value, |gi, y| gi * (1.0 - y * y));
                    accumulate(&mut adj, *x, d);
                }
                Op::Exp(x) => {
                    let d = g.zip_map(&node.value, |gi, y| gi * y);
                    accumulate(&mut adj, *x, d);
                }
                Op::Scale(x, c) => accumulate(&mut adj, *x, g.map(|gi| gi * c)),
                Op::AddConst(x) => accumulate(&mut adj, *x, g),
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, g.clone());
                    accumulate(&mut adj, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, *b, g.map(|gi| -gi));
                    accumulate(&mut adj, *a, g);
                }
                Op::Mul(a, b) => {
                    let da = g.zip_map(self.value(*b), |gi, y| gi * y);
                    let db = g.zip_map(self.value(*a), |gi, y| gi * y);
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *b, db);
                }
                Op::Clamp { x, lo, hi } => {
                    let d = g.zip_map(self.value(*x), |gi, a| {
                        if a >= *lo && a <= *hi {
                            gi
                        } else {
                            0.0
                        }
                    });
                    accumulate(&mut adj, *x, d);
                }
                Op::Normalize { x, scale } => {
                    let mut d = g;
                    for r in 0..d.rows() {
                        for (v, s) in d.row_mut(r).iter_mut().zip(scale) {
                            *v /= s;
                        }
                    }
                    accumulate(&mut adj, *x, d);
                }
                Op::Denormalize { x, scale } => {
                    let mut d = g;
                    for r in 0..d.rows() {
                        for (v, s) in d.row_mut(r).iter_mut().zip(scale) {
                            *v *= s;
                        }
                    }
                    accumulate(&mut adj, *x, d);
                }
                Op::HCat(a, b) => {
                    let wa = self.value(*a).cols();
                    let wb = self.value(*b).cols();
                    accumulate(&mut adj, *a, g.col_slice(0, wa));
                    accumulate(&mut adj, *b, g.col_slice(wa, wb));
                }
                Op::Dropout { x, mask } => {
                    accumulate(&mut adj, *x, g.zip_map(mask, |gi, m| gi * m));
                }
                Op::Sum(x) => {
                    let (r, c) = self.value(*x).shape();
                    accumulate(&mut adj, *x, Mat::filled(r, c, g.scalar()));
                }
                Op::Stack(xs) => {
                    for (k, &x) in xs.iter().enumerate() {
                        accumulate(&mut adj, x, Mat::filled(1, 1, g.get(0, k)));
                    }
                }
                Op::Softmax(x) => {
                    let y = node.value.as_slice();
                    let dot: f64 = y.iter().zip(g.as_slice()).map(|(a, b)| a * b).sum();
                    let d: Vec<f64> = y
                        .iter()
                        .zip(g.as_slice())
                        .map(|(yi, gi)| yi * (gi - dot))
                        .collect();
                    accumulate(&mut adj, *x, Mat::row_vector(&d));
                }
            }
        }

        let param_slots = self.nodes[..=out.0]
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(slot) => Some((i, slot)),
                _ => None,
            })
            .collect();
        Ok(Gradients {
            adjoints: adj,
            param_slots,
        })
    }
}

fn accumulate(adj: &mut [Option<Mat>], v: Var, g: Mat) {
    match &mut adj[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

pub(crate) fn softmax_row(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_scalar_chain_rule() {
        // L = (theta * x)^2, x = 2, theta = 3 -> dL/dtheta = 2 * 6 * 2 = 24
        let mut t = Tape::new();
        let theta = t.param(Mat::filled(1, 1, 3.0), 0);
        let x = t.constant(Mat::filled(1, 1, 2.0));
        let zero_bias = t.constant(Mat::zeros(1, 1));
        let y = t.linear(x, theta, zero_bias);
        let sq = t.mul(y, y);
        let l = t.sum(sq);
        let g = t.backward(l).unwrap();
        assert_eq!(g.param_grads(&[(1, 1)])[0].scalar(), 24.0);
    }

    #[test]
    fn composition_accumulates_over_reuse() {
        // y = theta * (theta * x), x = 1, theta = 2 -> dL/dtheta = 2 * 4 * 4 = 32
        let mut t = Tape::new();
        let theta = t.param(Mat::filled(1, 1, 2.0), 0);
        let x = t.constant(Mat::filled(1, 1, 1.0));
        let b = t.constant(Mat::zeros(1, 1));
        let y1 = t.linear(x, theta, b);
        let y2 = t.linear(y1, theta, b);
        let sq = t.mul(y2, y2);
        let l = t.sum(sq);
        let g = t.backward(l).unwrap();
        assert_eq!(g.param_grads(&[(1, 1)])[0].scalar(), 32.0);
    }

    #[test]
    fn weight_sharing_power_rule() {
        // d/dtheta theta^j x = j theta^(j-1) x
        let (theta_v, x_v) = (1.3_f64, 0.7_f64);
        for j in 1..=6 {
            let mut t = Tape::new();
            let theta = t.param(Mat::filled(1, 1, theta_v), 0);
            let b = t.constant(Mat::zeros(1, 1));
            let mut y = t.constant(Mat::filled(1, 1, x_v));
            for _ in 0..j {
                y = t.linear(y, theta, b);
            }
            let l = t.sum(y);
            let g = t.backward(l).unwrap().param_grads(&[(1, 1)])[0].scalar();
            let expected = j as f64 * theta_v.powi(j - 1) * x_v;
            assert!((g - expected).abs() < 1e-12 * expected.abs().max(1.0));
        }
    }

    #[test]
    fn empty_tape_is_an_error() {
        let t = Tape::new();
        assert!(matches!(t.backward(Var(0)), Err(Error::EmptyTape)));
    }

    #[test]
    fn non_scalar_output_is_an_error() {
        let mut t = Tape::new();
        let v = t.constant(Mat::zeros(2, 1));
        assert!(matches!(t.backward(v), Err(Error::NonScalarOutput(2, 1))));
    }

    #[test]
    fn softmax_gradient_sums_to_zero() {
        let mut t = Tape::new();
        let x = t.param(Mat::row_vector(&[0.1, -0.4, 1.2]), 0);
        let s = t.softmax(x);
        let w = t.constant(Mat::row_vector(&[1.0, 2.0, 3.0]));
        let p = t.mul(s, w);
        let l = t.sum(p);
        let g = t.backward(l).unwrap().param_grads(&[(1, 3)]);
        assert!(g[0].sum().abs() < 1e-15);
    }
}
