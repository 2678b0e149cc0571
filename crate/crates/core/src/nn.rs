//! Dense feed-forward networks with exact reverse-mode gradients.
//!
//! A network is a chain of [`LayerSpec`]s. Its weights live outside the
//! network in a flat [`ParameterVector`] so that samplers and optimizers can
//! treat them as a single point in weight space. Layout is layer-major: for
//! each layer the `input_width x output_width` weight matrix (row-major),
//! followed by the `output_width` bias.
//!
//! Batches are row-major [`Matrix`] values with one sample per row, so a layer
//! computes `z = a W + b` and `a' = act(z)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::mismatch("matrix data", rows * cols, data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::mismatch(format!("matrix row {i}"), cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    /// Column `j` copied out.
    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }
}

/// Elementwise nonlinearity applied after a layer's affine map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "slope", rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
}

// Keeps sigmoid outputs strictly inside (0, 1) in f64.
const SIGMOID_LO: f64 = f64::MIN_POSITIVE;
const SIGMOID_HI: f64 = 1.0 - f64::EPSILON / 2.0;

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Linear => z,
            Activation::Relu => z.max(0.0),
            Activation::LeakyRelu(slope) => {
                if z > 0.0 {
                    z
                } else {
                    slope * z
                }
            }
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => {
                let s = if z >= 0.0 {
                    1.0 / (1.0 + (-z).exp())
                } else {
                    let e = z.exp();
                    e / (1.0 + e)
                };
                s.clamp(SIGMOID_LO, SIGMOID_HI)
            }
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(slope) => {
                if z > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Sigmoid => a * (1.0 - a),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub input_width: usize,
    pub output_width: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(input_width: usize, output_width: usize, activation: Activation) -> Self {
        Self {
            input_width,
            output_width,
            activation,
        }
    }

    #[inline]
    pub fn param_count(&self) -> usize {
        self.input_width * self.output_width + self.output_width
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Generator,
    Discriminator,
    /// No role constraints; used for tests and generic building blocks.
    Plain,
}

/// A validated chain of dense layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawNetwork")]
pub struct MlpNetwork {
    layers: Vec<LayerSpec>,
    role: Role,
}

#[derive(Deserialize)]
struct RawNetwork {
    layers: Vec<LayerSpec>,
    role: Role,
}

impl TryFrom<RawNetwork> for MlpNetwork {
    type Error = Error;

    fn try_from(raw: RawNetwork) -> Result<Self> {
        MlpNetwork::new(raw.layers, raw.role)
    }
}

/// Slope of the hidden leaky-ReLU units in the default architectures.
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

impl MlpNetwork {
    pub fn new(layers: Vec<LayerSpec>, role: Role) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidNetwork("network has no layers".into()));
        }
        for (k, layer) in layers.iter().enumerate() {
            if layer.input_width == 0 || layer.output_width == 0 {
                return Err(Error::InvalidNetwork(format!("layer {k} has zero width")));
            }
            if let Activation::LeakyRelu(slope) = layer.activation {
                if !(slope > 0.0 && slope < 1.0) {
                    return Err(Error::InvalidNetwork(format!(
                        "layer {k}: leaky_relu slope {slope} outside (0, 1)"
                    )));
                }
            }
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].output_width != pair[1].input_width {
                return Err(Error::InvalidNetwork(format!(
                    "layer {k} outputs {} but layer {} expects {}",
                    pair[0].output_width,
                    k + 1,
                    pair[1].input_width
                )));
            }
        }
        let last = layers[layers.len() - 1];
        match role {
            Role::Generator if last.activation != Activation::Sigmoid => {
                return Err(Error::InvalidNetwork(
                    "generator must end with a sigmoid layer".into(),
                ));
            }
            Role::Discriminator if last.activation != Activation::Linear => {
                return Err(Error::InvalidNetwork(
                    "discriminator must end with a linear layer".into(),
                ));
            }
            Role::Discriminator if last.output_width != 1 => {
                return Err(Error::InvalidNetwork(format!(
                    "discriminator must output a single score, not {}",
                    last.output_width
                )));
            }
            _ => {}
        }
        Ok(Self { layers, role })
    }

    /// `latent -> hidden... -> output` with leaky-ReLU hidden units and a sigmoid head.
    pub fn generator(latent_dim: usize, hidden: &[usize], output_width: usize) -> Result<Self> {
        Self::chain(
            latent_dim,
            hidden,
            output_width,
            Activation::Sigmoid,
            Role::Generator,
        )
    }

    /// `input -> hidden... -> 1` with leaky-ReLU hidden units and a linear score.
    pub fn discriminator(input_width: usize, hidden: &[usize]) -> Result<Self> {
        Self::chain(
            input_width,
            hidden,
            1,
            Activation::Linear,
            Role::Discriminator,
        )
    }

    fn chain(
        input: usize,
        hidden: &[usize],
        output: usize,
        head: Activation,
        role: Role,
    ) -> Result<Self> {
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(input);
        widths.extend_from_slice(hidden);
        widths.push(output);
        let n = widths.len() - 1;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let act = if k + 1 == n {
                    head
                } else {
                    Activation::LeakyRelu(DEFAULT_LEAKY_SLOPE)
                };
                LayerSpec::new(w[0], w[1], act)
            })
            .collect();
        Self::new(layers, role)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].input_width
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].output_width
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }

    /// Start offset of each layer's block inside a [`ParameterVector`].
    fn offsets(&self) -> Vec<usize> {
        let mut off = 0;
        self.layers
            .iter()
            .map(|l| {
                let start = off;
                off += l.param_count();
                start
            })
            .collect()
    }

    /// Borrow layer `k`'s weight matrix and bias out of `theta`.
    pub fn layer_params<'a>(&self, theta: &'a ParameterVector, k: usize) -> (&'a [f64], &'a [f64]) {
        let start: usize = self.layers[..k].iter().map(LayerSpec::param_count).sum();
        let l = self.layers[k];
        let w_len = l.input_width * l.output_width;
        let block = &theta.0[start..start + l.param_count()];
        block.split_at(w_len)
    }

    fn check_theta(&self, theta: &ParameterVector) -> Result<()> {
        if theta.len() != self.param_count() {
            return Err(Error::mismatch(
                "parameter vector",
                self.param_count(),
                theta.len(),
            ));
        }
        Ok(())
    }
}

/// Flat weight vector for one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParameterVector(pub Vec<f64>);

impl ParameterVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn zip_with(&self, other: &Self, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.len() != other.len() {
            return Err(Error::mismatch(what, self.len(), other.len()));
        }
        Ok(Self(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    /// Elementwise (Hadamard) product.
    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    pub fn scale(&self, k: f64) -> Self {
        Self(self.0.iter().map(|v| v * k).collect())
    }

    /// `self += k * other`, in place.
    pub fn axpy(&mut self, k: f64, other: &Self) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::mismatch("axpy", self.len(), other.len()));
        }
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += k * b;
        }
        Ok(())
    }

    /// Split into per-layer `(weights, bias)` blocks.
    pub fn unflatten(&self, net: &MlpNetwork) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
        net.check_theta(self)?;
        Ok((0..net.layers().len())
            .map(|k| {
                let (w, b) = net.layer_params(self, k);
                (w.to_vec(), b.to_vec())
            })
            .collect())
    }

    /// Inverse of [`ParameterVector::unflatten`].
    pub fn flatten(net: &MlpNetwork, blocks: &[(Vec<f64>, Vec<f64>)]) -> Result<Self> {
        if blocks.len() != net.layers().len() {
            return Err(Error::mismatch(
                "layer blocks",
                net.layers().len(),
                blocks.len(),
            ));
        }
        let mut out = Vec::with_capacity(net.param_count());
        for (k, (l, (w, b))) in net.layers().iter().zip(blocks).enumerate() {
            if w.len() != l.input_width * l.output_width {
                return Err(Error::mismatch(
                    format!("layer {k} weights"),
                    l.input_width * l.output_width,
                    w.len(),
                ));
            }
            if b.len() != l.output_width {
                return Err(Error::mismatch(
                    format!("layer {k} bias"),
                    l.output_width,
                    b.len(),
                ));
            }
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        Ok(Self(out))
    }
}

/// Scaled-uniform (Glorot) weights and zero biases, deterministic in `seed`.
pub fn init_weights(net: &MlpNetwork, seed: u64) -> ParameterVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    init_weights_with(net, &mut rng)
}

pub fn init_weights_with<R: Rng + ?Sized>(net: &MlpNetwork, rng: &mut R) -> ParameterVector {
    let mut out = Vec::with_capacity(net.param_count());
    for l in net.layers() {
        let bound = (6.0 / (l.input_width + l.output_width) as f64).sqrt();
        out.extend((0..l.input_width * l.output_width).map(|_| rng.gen_range(-bound..=bound)));
        out.extend(std::iter::repeat(0.0).take(l.output_width));
    }
    ParameterVector(out)
}

/// Per-layer activations cached by [`forward`] for use in [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    input: Matrix,
    pre: Vec<Matrix>,
    post: Vec<Matrix>,
}

impl ForwardTrace {
    pub fn batch_size(&self) -> usize {
        self.input.rows()
    }

    pub fn output(&self) -> &Matrix {
        self.post.last().expect("trace has at least one layer")
    }
}

/// `out = a * w + bias`, with `a: [m x n_in]`, `w: [n_in x n_out]`.
fn affine(a: &Matrix, w: &[f64], bias: &[f64]) -> Matrix {
    let n_in = a.cols;
    let n_out = bias.len();
    let mut out = Matrix::zeros(a.rows, n_out);
    for i in 0..a.rows {
        let row = &mut out.data[i * n_out..(i + 1) * n_out];
        row.copy_from_slice(bias);
        let a_row = &a.data[i * n_in..(i + 1) * n_in];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let w_row = &w[p * n_out..(p + 1) * n_out];
            for (o, &wv) in row.iter_mut().zip(w_row) {
                *o += av * wv;
            }
        }
    }
    out
}

pub fn forward(
    net: &MlpNetwork,
    theta: &ParameterVector,
    batch: &Matrix,
) -> Result<(Matrix, ForwardTrace)> {
    net.check_theta(theta)?;
    if batch.cols() != net.input_width() {
        return Err(Error::mismatch(
            "layer 0 input",
            net.input_width(),
            batch.cols(),
        ));
    }
    let mut pre = Vec::with_capacity(net.layers().len());
    let mut post: Vec<Matrix> = Vec::with_capacity(net.layers().len());
    for (k, l) in net.layers().iter().enumerate() {
        let (w, b) = net.layer_params(theta, k);
        let input = if k == 0 { batch } else { &post[k - 1] };
        let z = affine(input, w, b);
        let mut a = z.clone();
        for v in a.as_mut_slice() {
            *v = l.activation.apply(*v);
        }
        pre.push(z);
        post.push(a);
    }
    let out = post.last().cloned().expect("non-empty network");
    if !out.as_slice().iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("network output".into()));
    }
    Ok((
        out,
        ForwardTrace {
            input: batch.clone(),
            pre,
            post,
        },
    ))
}

/// Gradient of `sum(output .* output_grad)` with respect to the weights.
pub fn backward(
    net: &MlpNetwork,
    theta: &ParameterVector,
    trace: &ForwardTrace,
    output_grad: &Matrix,
) -> Result<ParameterVector> {
    backward_full(net, theta, trace, output_grad).map(|(g, _)| g)
}

/// Like [`backward`], also returning the gradient with respect to the input batch.
pub fn backward_full(
    net: &MlpNetwork,
    theta: &ParameterVector,
    trace: &ForwardTrace,
    output_grad: &Matrix,
) -> Result<(ParameterVector, Matrix)> {
    net.check_theta(theta)?;
    if trace.pre.len() != net.layers().len() || trace.input.cols() != net.input_width() {
        return Err(Error::InvalidNetwork(
            "trace was produced by a different network".into(),
        ));
    }
    let m = trace.batch_size();
    if output_grad.rows() != m {
        return Err(Error::mismatch(
            "output gradient rows",
            m,
            output_grad.rows(),
        ));
    }
    if output_grad.cols() != net.output_width() {
        return Err(Error::mismatch(
            "output gradient cols",
            net.output_width(),
            output_grad.cols(),
        ));
    }

    let offsets = net.offsets();
    let mut grad = vec![0.0; net.param_count()];
    let mut upstream = output_grad.clone();
    for k in (0..net.layers().len()).rev() {
        let l = net.layers()[k];
        let (n_in, n_out) = (l.input_width, l.output_width);
        let z = &trace.pre[k];
        let a = &trace.post[k];
        // dz = upstream .* act'(z)
        let mut dz = upstream;
        for ((d, &zv), &av) in dz.data.iter_mut().zip(&z.data).zip(&a.data) {
            *d *= l.activation.derivative(zv, av);
        }
        let input = if k == 0 {
            &trace.input
        } else {
            &trace.post[k - 1]
        };
        let block = &mut grad[offsets[k]..offsets[k] + l.param_count()];
        let (gw, gb) = block.split_at_mut(n_in * n_out);
        for i in 0..m {
            let dz_row = &dz.data[i * n_out..(i + 1) * n_out];
            let in_row = &input.data[i * n_in..(i + 1) * n_in];
            for (p, &iv) in in_row.iter().enumerate() {
                if iv == 0.0 {
                    continue;
                }
                let gw_row = &mut gw[p * n_out..(p + 1) * n_out];
                for (g, &d) in gw_row.iter_mut().zip(dz_row) {
                    *g += iv * d;
                }
            }
            for (g, &d) in gb.iter_mut().zip(dz_row) {
                *g += d;
            }
        }
        // d(input) = dz * W^T
        let (w, _) = net.layer_params(theta, k);
        let mut d_in = Matrix::zeros(m, n_in);
        for i in 0..m {
            let dz_row = &dz.data[i * n_out..(i + 1) * n_out];
            let out_row = &mut d_in.data[i * n_in..(i + 1) * n_in];
            for (p, o) in out_row.iter_mut().enumerate() {
                let w_row = &w[p * n_out..(p + 1) * n_out];
                *o = w_row.iter().zip(dz_row).map(|(a, b)| a * b).sum();
            }
        }
        upstream = d_in;
    }
    Ok((ParameterVector(grad), upstream))
}
