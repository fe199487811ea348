//! Fully-connected networks applied row-wise to a batch, with exact
//! reverse-mode gradients.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::adam::{OptimizerState, ParamTensor};
use crate::{Error, Result};

const CHECKPOINT_MAGIC: &[u8; 8] = b"GAMLP\0\0\x01";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    /// Gaussian error linear unit, tanh approximation.
    Gelu,
    Tanh,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)
const GELU_A: f64 = 0.044_715;

/// `tanh` through a single `exp`; saturates correctly for large `|u|`.
#[inline]
fn fast_tanh(u: f64) -> f64 {
    1.0 - 2.0 / ((2.0 * u).exp() + 1.0)
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Gelu => 0.5 * x * (1.0 + fast_tanh(GELU_C * (x + GELU_A * x * x * x))),
            Activation::Tanh => x.tanh(),
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Gelu => {
                let t = fast_tanh(GELU_C * (x + GELU_A * x * x * x));
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }

    /// `(σ(x), σ'(x))` sharing the transcendental evaluation.
    #[inline]
    pub fn value_and_slope(self, x: f64) -> (f64, f64) {
        match self {
            Activation::Identity => (x, 1.0),
            Activation::Gelu => {
                let t = fast_tanh(GELU_C * (x + GELU_A * x * x * x));
                (
                    0.5 * x * (1.0 + t),
                    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x),
                )
            }
            Activation::Tanh => {
                let t = x.tanh();
                (t, 1.0 - t * t)
            }
        }
    }

    fn tag(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Gelu => 1,
            Activation::Tanh => 2,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Gelu),
            2 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out × in`
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weight: DMatrix<f64>, bias: DVector<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weight.nrows() {
            return Err(Error::Dimension(format!(
                "bias length {} does not match {} output rows",
                bias.len(),
                weight.nrows()
            )));
        }
        Ok(Layer {
            weight,
            bias,
            activation,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }
}

/// A deformation field `ℝ^{d_in} → ℝ^{d_out}` evaluated independently on
/// each row of its input.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpField {
    layers: Vec<Layer>,
}

/// Intermediate values of one forward pass, consumed by [`MlpField::backward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Input to each layer (`inputs[0]` is the batch itself).
    inputs: Vec<DMatrix<f64>>,
    /// Activation derivative at each layer's pre-activation.
    slopes: Vec<Option<DMatrix<f64>>>,
    pub output: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct MlpGradients {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
    pub input: DMatrix<f64>,
}

impl MlpGradients {
    /// Gradient slices in the order of [`MlpField::parameter_slices_mut`].
    pub fn flat(&self) -> Vec<&[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
            .collect()
    }
}

impl MlpField {
    /// Hidden layers use `hidden` activation with uniform fan-in
    /// initialization; the output layer is linear and zero-initialized, so the
    /// field starts as the zero map.
    pub fn new(widths: &[usize], hidden: Activation, seed: u64) -> Self {
        Self::with_init(widths, hidden, seed, true)
    }

    pub fn with_init(widths: &[usize], hidden: Activation, seed: u64, zero_final: bool) -> Self {
        assert!(widths.len() >= 2, "a network needs input and output widths");
        assert!(widths.iter().all(|&w| w > 0), "layer widths must be positive");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_layers = widths.len() - 1;
        let layers = (0..n_layers)
            .map(|l| {
                let (fan_in, fan_out) = (widths[l], widths[l + 1]);
                let last = l + 1 == n_layers;
                let activation = if last { Activation::Identity } else { hidden };
                if last && zero_final {
                    return Layer {
                        weight: DMatrix::zeros(fan_out, fan_in),
                        bias: DVector::zeros(fan_out),
                        activation,
                    };
                }
                let bound = 1.0 / (fan_in as f64).sqrt();
                let mut draw = || rng.random_range(-bound..bound);
                let weight = DMatrix::from_row_iterator(fan_out, fan_in, (0..fan_out * fan_in).map(|_| draw()));
                let bias = DVector::from_iterator(fan_out, (0..fan_out).map(|_| draw()));
                Layer {
                    weight,
                    bias,
                    activation,
                }
            })
            .collect();
        MlpField { layers }
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Empty("network has no layers".into()));
        }
        for (l, pair) in layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::Dimension(format!(
                    "layer {l} outputs {} values but layer {} expects {}",
                    pair[0].output_dim(),
                    l + 1,
                    pair[1].input_dim()
                )));
            }
        }
        Ok(MlpField { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(self.layers.iter().map(|l| l.output_dim()));
        w
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().output_dim()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    fn check_input(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "network expects {} input columns, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &self.layers {
            let mut z = affine(&h, layer);
            if layer.activation != Activation::Identity {
                z.iter_mut().for_each(|v| *v = layer.activation.apply(*v));
            }
            h = z;
        }
        Ok(h)
    }

    pub fn forward_trace(&self, x: &DMatrix<f64>) -> Result<ForwardTrace> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut slopes = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers {
            let mut z = affine(&h, layer);
            let slope = if layer.activation == Activation::Identity {
                None
            } else {
                let mut d = DMatrix::zeros(z.nrows(), z.ncols());
                for (v, dv) in z.iter_mut().zip(d.iter_mut()) {
                    let (f, df) = layer.activation.value_and_slope(*v);
                    *v = f;
                    *dv = df;
                }
                Some(d)
            };
            inputs.push(std::mem::replace(&mut h, z));
            slopes.push(slope);
        }
        Ok(ForwardTrace {
            inputs,
            slopes,
            output: h,
        })
    }

    /// Gradients of `⟨upstream, forward(X)⟩` with respect to every parameter
    /// and to `X`.
    pub fn backward(&self, trace: &ForwardTrace, upstream: &DMatrix<f64>) -> Result<MlpGradients> {
        self.backward_impl(trace, upstream, true)
    }

    /// Like [`MlpField::backward`] but skips the input gradient, which is left
    /// as an empty matrix.
    pub fn parameter_gradients(&self, trace: &ForwardTrace, upstream: &DMatrix<f64>) -> Result<MlpGradients> {
        self.backward_impl(trace, upstream, false)
    }

    fn backward_impl(&self, trace: &ForwardTrace, upstream: &DMatrix<f64>, need_input: bool) -> Result<MlpGradients> {
        if upstream.shape() != trace.output.shape() || trace.inputs.len() != self.layers.len() {
            return Err(Error::Dimension(format!(
                "upstream gradient is {:?}, network output is {:?}",
                upstream.shape(),
                trace.output.shape()
            )));
        }
        let n_layers = self.layers.len();
        let mut weights = vec![DMatrix::zeros(0, 0); n_layers];
        let mut biases = vec![DVector::zeros(0); n_layers];
        let mut g = upstream.clone();
        for l in (0..n_layers).rev() {
            let layer = &self.layers[l];
            if let Some(slope) = &trace.slopes[l] {
                g.component_mul_assign(slope);
            }
            weights[l] = g.transpose() * &trace.inputs[l];
            biases[l] = DVector::from_iterator(g.ncols(), g.column_iter().map(|c| c.sum()));
            if l > 0 || need_input {
                g = &g * &layer.weight;
            } else {
                g = DMatrix::zeros(0, 0);
            }
        }
        Ok(MlpGradients {
            weights,
            biases,
            input: g,
        })
    }

    /// Every parameter tensor as a flat slice: weights then bias, layer by
    /// layer, in the same order as [`MlpGradients::flat`].
    pub fn parameter_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for layer in &mut self.layers {
            out.push(layer.weight.as_mut_slice());
            out.push(layer.bias.as_mut_slice());
        }
        out
    }

    /// One optimizer update of every weight and bias.
    pub fn apply_gradients(&mut self, opt: &mut OptimizerState, grads: &MlpGradients) -> Result<()> {
        let names: Vec<(String, String)> = (0..self.layers.len())
            .map(|l| (format!("layer{l}.weight"), format!("layer{l}.bias")))
            .collect();
        let mut tensors = Vec::with_capacity(2 * self.layers.len());
        for ((layer, (wn, bn)), (gw, gb)) in self
            .layers
            .iter_mut()
            .zip(&names)
            .zip(grads.weights.iter().zip(&grads.biases))
        {
            tensors.push(ParamTensor {
                name: wn,
                values: layer.weight.as_mut_slice(),
                grad: gw.as_slice(),
            });
            tensors.push(ParamTensor {
                name: bn,
                values: layer.bias.as_mut_slice(),
                grad: gb.as_slice(),
            });
        }
        opt.step(&mut tensors)
    }

    /// Writes widths, activations and row-major parameters (little endian).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::with_capacity(16 + 8 * self.parameter_count());
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        let widths = self.widths();
        buf.extend_from_slice(&(widths.len() as u64).to_le_bytes());
        for w in &widths {
            buf.extend_from_slice(&(*w as u64).to_le_bytes());
        }
        for layer in &self.layers {
            buf.push(layer.activation.tag());
        }
        for layer in &self.layers {
            for r in 0..layer.weight.nrows() {
                for c in 0..layer.weight.ncols() {
                    buf.extend_from_slice(&layer.weight[(r, c)].to_le_bytes());
                }
            }
            for b in layer.bias.iter() {
                buf.extend_from_slice(&b.to_le_bytes());
            }
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(&buf))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let mut cur = Cursor { bytes: &bytes, pos: 0, path };
        if cur.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::parse(path, "byte 0", "not a network checkpoint"));
        }
        let count = cur.u64()? as usize;
        if !(2..=1024).contains(&count) {
            return Err(Error::parse(path, "byte 8", format!("implausible layer count {count}")));
        }
        let widths = (0..count).map(|_| cur.u64().map(|w| w as usize)).collect::<Result<Vec<_>>>()?;
        let mut activations = Vec::with_capacity(count - 1);
        for _ in 0..count - 1 {
            let pos = cur.pos;
            let tag = cur.take(1)?[0];
            activations.push(
                Activation::from_tag(tag)
                    .ok_or_else(|| Error::parse(path, format!("byte {pos}"), format!("unknown activation tag {tag}")))?,
            );
        }
        let mut layers = Vec::with_capacity(count - 1);
        for (l, act) in activations.into_iter().enumerate() {
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            let w: Vec<f64> = (0..fan_in * fan_out).map(|_| cur.f64()).collect::<Result<_>>()?;
            let b: Vec<f64> = (0..fan_out).map(|_| cur.f64()).collect::<Result<_>>()?;
            layers.push(Layer {
                weight: DMatrix::from_row_slice(fan_out, fan_in, &w),
                bias: DVector::from_vec(b),
                activation: act,
            });
        }
        if cur.pos != bytes.len() {
            return Err(Error::parse(path, format!("byte {}", cur.pos), "trailing data"));
        }
        MlpField::from_layers(layers)
    }
}

/// `H Wᵀ + 1 bᵀ`
fn affine(h: &DMatrix<f64>, layer: &Layer) -> DMatrix<f64> {
    let mut z = h * layer.weight.transpose();
    for (mut col, b) in z.column_iter_mut().zip(layer.bias.iter()) {
        col.add_scalar_mut(*b);
    }
    z
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::parse(self.path, format!("byte {}", self.pos), "unexpected end of file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
