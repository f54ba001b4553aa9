//! Batched feed-forward networks with an explicit activation tape.
//!
//! Inputs are row-major batches: one sample per row. A forward pass can
//! record a [`Tape`] holding every layer input and pre-activation, which
//! [`DenseNet::backward_tape`] replays to produce exact reverse-mode
//! gradients for the parameters and the input.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::NnError;

/// Elementwise nonlinearity applied after an affine layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
    /// `x * tanh(softplus(x))`.
    Mish,
}

impl Activation {
    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Tanh => 1,
            Activation::Mish => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Tanh),
            2 => Some(Activation::Mish),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
            Activation::Mish => "mish",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "identity" => Some(Activation::Identity),
            "tanh" => Some(Activation::Tanh),
            "mish" => Some(Activation::Mish),
            _ => None,
        }
    }

    fn apply(self, z: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Identity => z.clone(),
            Activation::Tanh => z.mapv(tanh),
            Activation::Mish => z.mapv(mish),
        }
    }

    /// Multiplies `grad` in place by the activation derivative.
    fn chain(self, z: &Array2<f64>, out: &Array2<f64>, grad: &mut Array2<f64>) {
        match self {
            Activation::Identity => {}
            Activation::Tanh => {
                ndarray::Zip::from(grad).and(out).for_each(|g, &y| *g *= 1.0 - y * y);
            }
            Activation::Mish => {
                ndarray::Zip::from(grad).and(z).for_each(|g, &x| *g *= mish_grad(x));
            }
        }
    }
}

/// Cephes-style `tanh`: a rational approximation near the origin and one
/// `exp` elsewhere. Within a few ulp of `f64::tanh` and several times
/// faster, which dominates the cost of wide hidden layers.
fn tanh(x: f64) -> f64 {
    const P: [f64; 3] = [
        -9.643_991_794_250_523e-1,
        -9.928_772_310_019_186e1,
        -1.614_687_684_417_084_5e3,
    ];
    const Q: [f64; 3] = [
        1.128_116_784_916_329_3e2,
        2.235_488_390_601_004_5e3,
        4.844_063_053_251_255e3,
    ];
    let a = x.abs();
    if a < 0.625 {
        let z = x * x;
        let p = (P[0] * z + P[1]) * z + P[2];
        let q = ((z + Q[0]) * z + Q[1]) * z + Q[2];
        x + x * z * p / q
    } else if a > 19.0 {
        1f64.copysign(x)
    } else {
        (1.0 - 2.0 / ((2.0 * a).exp() + 1.0)).copysign(x)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn mish(x: f64) -> f64 {
    x * softplus(x).tanh()
}

fn mish_grad(x: f64) -> f64 {
    let t = softplus(x).tanh();
    t + x * (1.0 - t * t) * sigmoid(x)
}

/// One affine map `x W + b`, with `W` stored as `inputs × outputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Recorded intermediates of one batched forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl Tape {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }

    pub fn batch_size(&self) -> usize {
        self.output.nrows()
    }
}

/// Parameter gradients with the same layout as the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        let layers = net
            .layers
            .iter()
            .map(|l| Layer {
                weight: Array2::zeros(l.weight.raw_dim()),
                bias: Array1::zeros(l.bias.raw_dim()),
            })
            .collect();
        Gradients { layers }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::new();
        for l in &self.layers {
            flat.extend(l.weight.iter());
            flat.extend(l.bias.iter());
        }
        flat
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weight *= factor;
            l.bias *= factor;
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }

    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|&g| g == 0.0))
    }

    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()))
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }
}

/// Dense feed-forward network.
#[derive(Debug, Clone)]
pub struct DenseNet {
    widths: Vec<usize>,
    layers: Vec<Layer>,
    hidden: Activation,
    output: Activation,
    last_tape: Option<Tape>,
}

impl PartialEq for DenseNet {
    fn eq(&self, other: &Self) -> bool {
        self.widths == other.widths
            && self.hidden == other.hidden
            && self.output == other.output
            && self.layers == other.layers
    }
}

impl DenseNet {
    /// Builds a network with uniform fan-in initialization,
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` for weights and biases.
    pub fn new<R: Rng + ?Sized>(
        widths: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(NnError::InvalidArchitecture(widths.to_vec()));
        }
        let layers = widths
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                Layer {
                    weight: Array2::from_shape_simple_fn((w[0], w[1]), || {
                        rng.random_range(-bound..bound)
                    }),
                    bias: Array1::from_shape_simple_fn(w[1], || rng.random_range(-bound..bound)),
                }
            })
            .collect();
        Ok(DenseNet {
            widths: widths.to_vec(),
            layers,
            hidden,
            output,
            last_tape: None,
        })
    }

    /// Builds a network from explicit layers.
    pub fn from_layers(
        layers: Vec<Layer>,
        hidden: Activation,
        output: Activation,
    ) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::InvalidArchitecture(Vec::new()));
        }
        let mut widths = vec![layers[0].weight.nrows()];
        for l in &layers {
            let (rows, cols) = l.weight.dim();
            if rows != *widths.last().unwrap() || l.bias.len() != cols || cols == 0 {
                return Err(NnError::InvalidArchitecture(widths));
            }
            widths.push(cols);
        }
        Ok(DenseNet {
            widths,
            layers,
            hidden,
            output,
            last_tape: None,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    fn activation_for(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.output
        } else {
            self.hidden
        }
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<(), NnError> {
        if x.ncols() != self.input_dim() {
            return Err(NnError::DimensionMismatch {
                expected: self.input_dim(),
                actual: x.ncols(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, NnError> {
        self.check_input(&x)?;
        let mut a = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = a.dot(&layer.weight) + &layer.bias;
            a = self.activation_for(i).apply(&z);
        }
        Ok(a)
    }

    /// Single-sample convenience wrapper around [`DenseNet::forward`].
    pub fn forward_one(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        Ok(self.forward(view)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_tape(&self, x: ArrayView2<f64>) -> Result<Tape, NnError> {
        self.check_input(&x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut a = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = a.dot(&layer.weight) + &layer.bias;
            let next = self.activation_for(i).apply(&z);
            inputs.push(a);
            pre.push(z);
            a = next;
        }
        Ok(Tape {
            inputs,
            pre,
            output: a,
        })
    }

    /// Reverse pass over `tape`. Parameter gradients are accumulated into
    /// `grads`; the gradient with respect to the network input is returned.
    pub fn backward_tape(
        &self,
        tape: &Tape,
        grad_out: ArrayView2<f64>,
        grads: &mut Gradients,
    ) -> Result<Array2<f64>, NnError> {
        self.reverse(tape, grad_out, Some(grads))
    }

    /// Input gradient only; parameter gradients are not formed.
    pub fn input_gradient(&self, tape: &Tape, grad_out: ArrayView2<f64>) -> Result<Array2<f64>, NnError> {
        self.reverse(tape, grad_out, None)
    }

    fn reverse(
        &self,
        tape: &Tape,
        grad_out: ArrayView2<f64>,
        mut grads: Option<&mut Gradients>,
    ) -> Result<Array2<f64>, NnError> {
        if tape.inputs.len() != self.layers.len() || grad_out.dim() != tape.output.dim() {
            return Err(NnError::DimensionMismatch {
                expected: tape.output.ncols(),
                actual: grad_out.ncols(),
            });
        }
        let mut g = grad_out.to_owned();
        for i in (0..self.layers.len()).rev() {
            let out = if i + 1 == self.layers.len() {
                &tape.output
            } else {
                &tape.inputs[i + 1]
            };
            self.activation_for(i).chain(&tape.pre[i], out, &mut g);
            if let Some(grads) = grads.as_deref_mut() {
                let layer_grad = &mut grads.layers[i];
                ndarray::linalg::general_mat_mul(
                    1.0,
                    &tape.inputs[i].t(),
                    &g,
                    1.0,
                    &mut layer_grad.weight,
                );
                layer_grad.bias += &g.sum_axis(Axis(0));
            }
            g = g.dot(&self.layers[i].weight.t());
        }
        Ok(g)
    }

    /// Forward pass that keeps its tape for a later [`DenseNet::backward`].
    pub fn forward_train(&mut self, x: ArrayView2<f64>) -> Result<Array2<f64>, NnError> {
        let tape = self.forward_tape(x)?;
        let out = tape.output.clone();
        self.last_tape = Some(tape);
        Ok(out)
    }

    /// Consumes the tape stored by the last [`DenseNet::forward_train`].
    pub fn backward(
        &mut self,
        grad_out: ArrayView2<f64>,
    ) -> Result<(Gradients, Array2<f64>), NnError> {
        let tape = self.last_tape.take().ok_or(NnError::NoForwardPass)?;
        let mut grads = Gradients::zeros_like(self);
        let gx = self.backward_tape(&tape, grad_out, &mut grads)?;
        Ok((grads, gx))
    }

    /// Flat parameter view: per layer, weights in row-major order then biases.
    pub fn params(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            flat.extend(l.weight.iter());
            flat.extend(l.bias.iter());
        }
        flat
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<(), NnError> {
        if flat.len() != self.num_params() {
            return Err(NnError::DimensionMismatch {
                expected: self.num_params(),
                actual: flat.len(),
            });
        }
        let mut offset = 0;
        for l in &mut self.layers {
            for w in l.weight.iter_mut().chain(l.bias.iter_mut()) {
                *w = flat[offset];
                offset += 1;
            }
        }
        self.last_tape = None;
        Ok(())
    }

    /// `self <- tau * online + (1 - tau) * self`, componentwise.
    pub fn soft_update_from(&mut self, online: &DenseNet, tau: f64) -> Result<(), NnError> {
        if self.widths != online.widths {
            return Err(NnError::InvalidArchitecture(online.widths.clone()));
        }
        for (t, o) in self.layers.iter_mut().zip(&online.layers) {
            t.weight.zip_mut_with(&o.weight, |t, &o| *t = tau * o + (1.0 - tau) * *t);
            t.bias.zip_mut_with(&o.bias, |t, &o| *t = tau * o + (1.0 - tau) * *t);
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|w| w.is_finite()))
    }
}
