//! Fully connected network with manual backpropagation and Adam.
//!
//! Weights are stored `in × out`, so a batch `X` (rows are samples) maps to
//! `X·W + b`. The network is generic over `f32` (training) and `f64`
//! (gradient checks).

use std::fmt::Debug;

use ndarray::{Array1, Array2, ArrayView2, Axis, ScalarOperand, Zip};
use num_traits::{Float, FromPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::LearnError;

pub trait Scalar:
    ndarray::LinalgScalar + Float + FromPrimitive + ScalarOperand + std::ops::AddAssign + Debug + Send + Sync
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

fn cast<F: Scalar>(v: f64) -> F {
    F::from_f64(v).expect("finite f64 converts to every scalar type")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply<F: Scalar>(self, z: &mut Array2<F>) {
        match self {
            Activation::Relu => z.mapv_inplace(|v| v.max(F::zero())),
            Activation::Tanh => z.mapv_inplace(Float::tanh),
            Activation::Identity => {}
        }
    }

    /// Multiply `grad` by the derivative, expressed through the activation output `a`.
    fn backprop<F: Scalar>(self, grad: &mut Array2<F>, a: &Array2<F>) {
        match self {
            Activation::Relu => Zip::from(grad).and(a).for_each(|g, &a| {
                if a <= F::zero() {
                    *g = F::zero();
                }
            }),
            Activation::Tanh => Zip::from(grad).and(a).for_each(|g, &a| *g = *g * (F::one() - a * a)),
            Activation::Identity => {}
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<F: Scalar> {
    pub(crate) weights: Vec<Array2<F>>,
    pub(crate) biases: Vec<Array1<F>>,
    pub(crate) hidden: Activation,
    pub(crate) output: Activation,
}

/// Gradients with the same shapes as the network parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Grads<F: Scalar> {
    pub weights: Vec<Array2<F>>,
    pub biases: Vec<Array1<F>>,
}

impl<F: Scalar> Mlp<F> {
    /// Weights drawn uniformly from `[-init_scale, init_scale]`, biases zero.
    pub fn new(dims: &[usize], hidden: Activation, output: Activation, init_scale: f64, seed: u64) -> Result<Self, LearnError> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(LearnError::Shape(format!("invalid layer sizes {dims:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = dims
            .windows(2)
            .map(|w| Array2::from_shape_simple_fn((w[0], w[1]), || cast(rng.random_range(-init_scale..=init_scale))))
            .collect();
        let biases = dims[1..].iter().map(|&n| Array1::zeros(n)).collect();
        Ok(Self { weights, biases, hidden, output })
    }

    /// Assemble a network from explicit parameters, checking shapes agree.
    pub fn from_parts(weights: Vec<Array2<F>>, biases: Vec<Array1<F>>, hidden: Activation, output: Activation) -> Result<Self, LearnError> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(LearnError::Shape("layer count mismatch".into()));
        }
        for (i, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.ncols() != b.len() || (i > 0 && weights[i - 1].ncols() != w.nrows()) {
                return Err(LearnError::Shape(format!("layer {i} shapes do not chain")));
            }
        }
        Ok(Self { weights, biases, hidden, output })
    }

    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.weights[0].nrows()).chain(self.weights.iter().map(|w| w.ncols())).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.last().map_or(0, |w| w.ncols())
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn weights(&self) -> &[Array2<F>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<F>] {
        &self.biases
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.weights.len() {
            self.output
        } else {
            self.hidden
        }
    }

    /// Layer outputs for a batch; element 0 is the input itself.
    fn activations(&self, x: ArrayView2<F>) -> Vec<Array2<F>> {
        let mut acts = Vec::with_capacity(self.weights.len() + 1);
        acts.push(x.to_owned());
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = acts[l].dot(w);
            z += b;
            self.activation(l).apply(&mut z);
            acts.push(z);
        }
        acts
    }

    pub fn forward(&self, x: ArrayView2<F>) -> Array2<F> {
        let mut h = x.dot(&self.weights[0]);
        for l in 0..self.weights.len() {
            if l > 0 {
                h = h.dot(&self.weights[l]);
            }
            h += &self.biases[l];
            self.activation(l).apply(&mut h);
        }
        h
    }

    /// Mean squared error over every output element.
    pub fn loss(&self, x: ArrayView2<F>, y: ArrayView2<F>) -> F {
        mse(&self.forward(x), y)
    }

    /// Loss and its gradient with respect to every parameter.
    pub fn loss_and_grad(&self, x: ArrayView2<F>, y: ArrayView2<F>) -> (F, Grads<F>) {
        let acts = self.activations(x);
        let out = acts.last().expect("at least one layer");
        let loss = mse(out, y);
        let scale: F = cast::<F>(2.0) / cast(out.len() as f64);
        let mut delta = (out - &y) * scale;
        let n = self.weights.len();
        let mut gw = Vec::with_capacity(n);
        let mut gb = Vec::with_capacity(n);
        for l in (0..n).rev() {
            self.activation(l).backprop(&mut delta, &acts[l + 1]);
            gw.push(acts[l].t().dot(&delta));
            gb.push(delta.sum_axis(Axis(0)));
            if l > 0 {
                delta = delta.dot(&self.weights[l].t());
            }
        }
        gw.reverse();
        gb.reverse();
        (loss, Grads { weights: gw, biases: gb })
    }
}

fn mse<F: Scalar>(pred: &Array2<F>, y: ArrayView2<F>) -> F {
    let mut acc = F::zero();
    Zip::from(pred).and(y).for_each(|&p, &t| acc = acc + (p - t) * (p - t));
    acc / cast(pred.len().max(1) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam optimizer state for one network.
#[derive(Clone, Debug)]
pub struct Adam<F: Scalar> {
    pub config: AdamConfig,
    step: u32,
    m: Grads<F>,
    v: Grads<F>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(net: &Mlp<F>, config: AdamConfig) -> Self {
        let zeros = Grads {
            weights: net.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: net.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        };
        Self { config, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn steps(&self) -> u32 {
        self.step
    }

    /// Apply one bias-corrected update. Non-finite gradients are rejected
    /// before any parameter changes.
    pub fn step(&mut self, net: &mut Mlp<F>, g: &Grads<F>) -> Result<(), LearnError> {
        let finite = g.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && g.biases.iter().all(|b| b.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(LearnError::NonFinite("gradient".into()));
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let b1: F = cast(c.beta1);
        let b2: F = cast(c.beta2);
        let one = F::one();
        let lr_t: F = cast(c.lr * (1.0 - c.beta2.powi(t)).sqrt() / (1.0 - c.beta1.powi(t)));
        let eps_t: F = cast(c.eps * (1.0 - c.beta2.powi(t)).sqrt());
        let update = |p: &mut F, g: &F, m: &mut F, v: &mut F| {
            *m = b1 * *m + (one - b1) * *g;
            *v = b2 * *v + (one - b2) * *g * *g;
            *p = *p - lr_t * *m / (v.sqrt() + eps_t);
        };
        for l in 0..net.weights.len() {
            Zip::from(&mut net.weights[l])
                .and(&g.weights[l])
                .and(&mut self.m.weights[l])
                .and(&mut self.v.weights[l])
                .for_each(|p, g, m, v| update(p, g, m, v));
            Zip::from(&mut net.biases[l])
                .and(&g.biases[l])
                .and(&mut self.m.biases[l])
                .and(&mut self.v.biases[l])
                .for_each(|p, g, m, v| update(p, g, m, v));
        }
        if !net.is_finite() {
            return Err(LearnError::NonFinite("parameters after update".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn small() -> Mlp<f64> {
        Mlp::new(&[3, 5, 5, 2], Activation::Relu, Activation::Tanh, 0.5, 7).unwrap()
    }

    #[test]
    fn full_size_network_parameter_count() {
        let net: Mlp<f32> = Mlp::new(&[11, 300, 300, 4], Activation::Relu, Activation::Tanh, 1e-4, 0).unwrap();
        assert_eq!(net.param_count(), 11 * 300 + 300 + 300 * 300 + 300 + 300 * 4 + 4);
        assert_eq!(net.param_count(), 95_104);
        assert!(net.biases.iter().all(|b| b.iter().all(|&v| v == 0.0)));
        assert!(net.weights.iter().all(|w| w.iter().all(|v| v.abs() <= 1e-4)));
    }

    #[test]
    fn forward_hand_value() {
        let w1 = array![[1.0, -1.0], [0.5, 2.0]];
        let w2 = array![[1.0], [1.0]];
        let net = Mlp::from_parts(vec![w1, w2], vec![array![0.0, 0.5], array![-0.25]], Activation::Relu, Activation::Identity).unwrap();
        // x = (1, 1): z1 = (1.5, 1.5), relu → (1.5, 1.5), out = 3 − 0.25.
        let y = net.forward(array![[1.0, 1.0], [2.0, -1.0]].view());
        assert_eq!(y, array![[2.75], [1.25]]);
        // x = (2, −1): z1 = (1.5, −3.5) → relu (1.5, 0) → 1.5 − 0.25.
    }

    #[test]
    fn gradient_matches_central_differences() {
        let net = small();
        let x = array![[0.3, -0.2, 0.9], [-1.0, 0.4, 0.1], [0.5, 0.5, -0.7], [0.2, -0.9, 0.3]];
        let y = array![[0.1, -0.4], [0.7, 0.0], [-0.3, 0.2], [0.05, 0.5]];
        let (_, g) = net.loss_and_grad(x.view(), y.view());
        let h = 1e-5;
        for l in 0..net.weights.len() {
            for idx in 0..net.weights[l].len() {
                let (r, c) = (idx / net.weights[l].ncols(), idx % net.weights[l].ncols());
                let mut plus = net.clone();
                plus.weights[l][[r, c]] += h;
                let mut minus = net.clone();
                minus.weights[l][[r, c]] -= h;
                let num = (plus.loss(x.view(), y.view()) - minus.loss(x.view(), y.view())) / (2.0 * h);
                assert!((num - g.weights[l][[r, c]]).abs() < 1e-7, "w{l}[{r},{c}]");
            }
            for j in 0..net.biases[l].len() {
                let mut plus = net.clone();
                plus.biases[l][j] += h;
                let mut minus = net.clone();
                minus.biases[l][j] -= h;
                let num = (plus.loss(x.view(), y.view()) - minus.loss(x.view(), y.view())) / (2.0 * h);
                assert!((num - g.biases[l][j]).abs() < 1e-7, "b{l}[{j}]");
            }
        }
    }

    #[test]
    fn first_adam_step_moves_each_parameter_by_lr() {
        let mut net = small();
        let before = net.clone();
        let x = array![[0.3, -0.2, 0.9]];
        let y = array![[0.5, -0.5]];
        let (_, g) = net.loss_and_grad(x.view(), y.view());
        let mut opt = Adam::new(&net, AdamConfig::default());
        opt.step(&mut net, &g).unwrap();
        // With bias correction the first update is lr·g/(|g| + eps).
        for l in 0..net.weights.len() {
            Zip::from(&net.weights[l]).and(&before.weights[l]).and(&g.weights[l]).for_each(|a, b, g| {
                let expected = 1e-3 * g / (g.abs() + 1e-8);
                assert!(((b - a) - expected).abs() < 1e-12);
            });
        }
    }

    #[test]
    fn adam_rejects_non_finite_gradients() {
        let mut net = small();
        let before = net.clone();
        let x = array![[0.3, -0.2, 0.9]];
        let y = array![[0.5, -0.5]];
        let (_, mut g) = net.loss_and_grad(x.view(), y.view());
        g.biases[1][0] = f64::NAN;
        let mut opt = Adam::new(&net, AdamConfig::default());
        assert!(matches!(opt.step(&mut net, &g), Err(LearnError::NonFinite(_))));
        assert_eq!(net, before);
    }

    #[test]
    fn training_reduces_loss_on_a_tiny_problem() {
        let mut net = small();
        let x = array![[0.3, -0.2, 0.9], [-1.0, 0.4, 0.1], [0.5, 0.5, -0.7]];
        let y = array![[0.1, -0.4], [0.7, 0.0], [-0.3, 0.2]];
        let start = net.loss(x.view(), y.view());
        let mut opt = Adam::new(&net, AdamConfig { lr: 1e-2, ..Default::default() });
        for _ in 0..500 {
            let (_, g) = net.loss_and_grad(x.view(), y.view());
            opt.step(&mut net, &g).unwrap();
        }
        assert!(net.loss(x.view(), y.view()) < start * 1e-2);
    }
}
