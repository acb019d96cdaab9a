//! Dense feed-forward networks over a flat parameter vector.
//!
//! Parameters are laid out layer by layer. Each layer stores its weight
//! matrix row-major as `[fan_out × fan_in]` followed by `fan_out` biases, so
//! a layer computes `y = W·x + b`. Parameters are kept as `f32`; every
//! forward and backward pass runs in `f64`.

mod adam;
mod matrix;

pub use adam::{AdamConfig, AdamState};
pub use matrix::Matrix;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Shape of an MLP: `input_dim → hidden_dims… → num_classes`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub input_dim: usize,
    #[serde(default)]
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl ArchSpec {
    /// Builds an architecture from layer widths such as `[2, 64, 64, 3]`.
    pub fn from_widths(widths: &[usize], activation: Activation) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Config(format!(
                "an architecture needs at least input and output widths, got {widths:?}"
            )));
        }
        let arch = ArchSpec {
            input_dim: widths[0],
            hidden_dims: widths[1..widths.len() - 1].to_vec(),
            num_classes: widths[widths.len() - 1],
            activation,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::Config(format!(
                "layer widths must be positive: {:?}",
                self.widths()
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            )));
        }
        Ok(())
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden_dims.len() + 2);
        w.push(self.input_dim);
        w.extend_from_slice(&self.hidden_dims);
        w.push(self.num_classes);
        w
    }

    /// `(fan_in, fan_out)` for every layer in order.
    pub fn layers(&self) -> Vec<(usize, usize)> {
        self.widths().windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers()
            .iter()
            .map(|&(fan_in, fan_out)| (fan_in + 1) * fan_out)
            .sum()
    }

    fn check_params(&self, len: usize) -> Result<()> {
        let expected = self.param_count();
        if len != expected {
            return Err(Error::Config(format!(
                "parameter vector has {len} values, architecture {:?} needs {expected}",
                self.widths()
            )));
        }
        Ok(())
    }

    fn check_inputs(&self, inputs: &Matrix) -> Result<()> {
        if inputs.rows() == 0 {
            return Err(Error::Config("empty input batch".into()));
        }
        if inputs.cols() != self.input_dim {
            return Err(Error::Config(format!(
                "input has {} features, architecture expects {}",
                inputs.cols(),
                self.input_dim
            )));
        }
        Ok(())
    }
}

/// Flat model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(Vec<f32>);

impl ParamVector {
    pub fn new(values: Vec<f32>) -> Self {
        ParamVector(values)
    }

    pub fn zeros(len: usize) -> Self {
        ParamVector(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.0
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&v| v as f64).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Bitwise equality, so that `-0.0 != 0.0` and identical NaNs compare equal.
    pub fn bit_eq(&self, other: &ParamVector) -> bool {
        self.0.len() == other.0.len()
            && self
                .0
                .iter()
                .zip(&other.0)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl From<Vec<f32>> for ParamVector {
    fn from(values: Vec<f32>) -> Self {
        ParamVector(values)
    }
}

/// Glorot-uniform weights and zero biases.
pub fn init_params<R: Rng + ?Sized>(arch: &ArchSpec, rng: &mut R) -> ParamVector {
    let mut values = Vec::with_capacity(arch.param_count());
    for (fan_in, fan_out) in arch.layers() {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for _ in 0..fan_in * fan_out {
            values.push(rng.random_range(-limit..limit) as f32);
        }
        values.extend(std::iter::repeat_n(0.0f32, fan_out));
    }
    ParamVector(values)
}

/// Post-activation outputs of every layer, kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct Tape {
    /// `outputs[0]` is the input batch, the last entry is the logits.
    outputs: Vec<Matrix>,
}

impl Tape {
    pub(crate) fn logits(&self) -> &Matrix {
        self.outputs.last().expect("tape holds at least the inputs")
    }
}

pub(crate) fn forward_tape(arch: &ArchSpec, params: &[f64], inputs: &Matrix) -> Result<Tape> {
    arch.check_params(params.len())?;
    arch.check_inputs(inputs)?;
    let layers = arch.layers();
    let mut outputs = Vec::with_capacity(layers.len() + 1);
    outputs.push(inputs.clone());
    let mut offset = 0;
    for (l, &(fan_in, fan_out)) in layers.iter().enumerate() {
        let weights = &params[offset..offset + fan_in * fan_out];
        let bias = &params[offset + fan_in * fan_out..offset + (fan_in + 1) * fan_out];
        offset += (fan_in + 1) * fan_out;

        let x = outputs.last().expect("non-empty");
        let batch = x.rows();
        let mut y = Matrix::zeros(batch, fan_out);
        let hidden = l + 1 < layers.len();
        for b in 0..batch {
            let xb = x.row(b);
            let yb = y.row_mut(b);
            for (j, out) in yb.iter_mut().enumerate() {
                let w = &weights[j * fan_in..(j + 1) * fan_in];
                let mut acc = bias[j];
                for (wi, xi) in w.iter().zip(xb) {
                    acc += wi * xi;
                }
                *out = if hidden {
                    arch.activation.apply(acc)
                } else {
                    acc
                };
            }
        }
        outputs.push(y);
    }
    Ok(Tape { outputs })
}

pub(crate) fn backward_tape(
    arch: &ArchSpec,
    params: &[f64],
    tape: &Tape,
    dlogits: &Matrix,
) -> Result<Vec<f64>> {
    let logits = tape.logits();
    if dlogits.rows() != logits.rows() || dlogits.cols() != logits.cols() {
        return Err(Error::Config(format!(
            "logit gradient is {}×{}, logits are {}×{}",
            dlogits.rows(),
            dlogits.cols(),
            logits.rows(),
            logits.cols()
        )));
    }
    let layers = arch.layers();
    let mut grad = vec![0.0; params.len()];
    let mut offset = params.len();
    // Gradient w.r.t. the current layer's pre-activation.
    let mut delta = dlogits.clone();
    for l in (0..layers.len()).rev() {
        let (fan_in, fan_out) = layers[l];
        offset -= (fan_in + 1) * fan_out;
        let x = &tape.outputs[l];
        let batch = x.rows();
        {
            let (gw, gb) = grad[offset..offset + (fan_in + 1) * fan_out].split_at_mut(fan_in * fan_out);
            for b in 0..batch {
                let xb = x.row(b);
                for (j, &d) in delta.row(b).iter().enumerate() {
                    gb[j] += d;
                    for (g, xi) in gw[j * fan_in..(j + 1) * fan_in].iter_mut().zip(xb) {
                        *g += d * xi;
                    }
                }
            }
        }
        if l == 0 {
            break;
        }
        let weights = &params[offset..offset + fan_in * fan_out];
        let mut next = Matrix::zeros(batch, fan_in);
        for b in 0..batch {
            let db = delta.row(b);
            let nb = next.row_mut(b);
            for (j, &d) in db.iter().enumerate() {
                for (n, w) in nb.iter_mut().zip(&weights[j * fan_in..(j + 1) * fan_in]) {
                    *n += d * w;
                }
            }
            for (n, &y) in nb.iter_mut().zip(x.row(b)) {
                *n *= arch.activation.derivative_from_output(y);
            }
        }
        delta = next;
    }
    Ok(grad)
}

/// Logits `[B × C]` for a batch of inputs `[B × input_dim]`.
pub fn forward(arch: &ArchSpec, params: &ParamVector, inputs: &Matrix) -> Result<Matrix> {
    forward_f64(arch, &params.to_f64(), inputs)
}

/// [`forward`] over double-precision parameters.
pub fn forward_f64(arch: &ArchSpec, params: &[f64], inputs: &Matrix) -> Result<Matrix> {
    let mut tape = forward_tape(arch, params, inputs)?;
    Ok(tape.outputs.pop().expect("non-empty"))
}

/// Gradient of a scalar loss w.r.t. the parameters, given its gradient
/// w.r.t. the logits of the same batch.
pub fn backward(
    arch: &ArchSpec,
    params: &ParamVector,
    inputs: &Matrix,
    dlogits: &Matrix,
) -> Result<Vec<f64>> {
    backward_f64(arch, &params.to_f64(), inputs, dlogits)
}

pub fn backward_f64(
    arch: &ArchSpec,
    params: &[f64],
    inputs: &Matrix,
    dlogits: &Matrix,
) -> Result<Vec<f64>> {
    let tape = forward_tape(arch, params, inputs)?;
    backward_tape(arch, params, &tape, dlogits)
}
