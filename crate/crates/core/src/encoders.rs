//! The trainable audio-side encoder (a small MLP over mean-pooled frame
//! features) and the frozen linear projectors standing in for the
//! pretrained vision and text encoders.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::path::Path;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::embedding::{l2_normalize, Embedding};
use crate::error::{Error, Result};
use crate::tensorio;

/// Hidden-layer activation. The final layer is always affine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the cached post-activation output.
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

/// Shape descriptor for the student encoder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
}

impl Architecture {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, output_dim: usize) -> Self {
        Architecture {
            input_dim,
            hidden_dims,
            output_dim,
            activation: Activation::Tanh,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::InvalidArchitecture(
                "all layer widths must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Layer widths from input to output: [F, h1, ..., d].
    pub fn dims_chain(&self) -> Vec<usize> {
        let mut chain = Vec::with_capacity(self.hidden_dims.len() + 2);
        chain.push(self.input_dim);
        chain.extend_from_slice(&self.hidden_dims);
        chain.push(self.output_dim);
        chain
    }

    pub fn n_layers(&self) -> usize {
        self.hidden_dims.len() + 1
    }

    pub fn param_count(&self) -> usize {
        let chain = self.dims_chain();
        chain
            .windows(2)
            .map(|w| w[1] * w[0] + w[1])
            .sum()
    }
}

/// One affine layer: `weights` is out x in, row-major; `bias` is out.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Layer {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Layer {
            weights: vec![0.0; out_dim * in_dim],
            bias: vec![0.0; out_dim],
            in_dim,
            out_dim,
        }
    }

    fn affine(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.bias.clone();
        for (o, out_o) in out.iter_mut().enumerate() {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = 0.0;
            for (w, xi) in row.iter().zip(x) {
                acc += w * xi;
            }
            *out_o += acc;
        }
        out
    }
}

/// Trainable parameters of the student encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentEncoderParams {
    arch: Architecture,
    layers: Vec<Layer>,
}

/// Parameter-shaped gradient accumulator.
#[derive(Debug, Clone)]
pub struct StudentGrads {
    pub layers: Vec<Layer>,
}

impl StudentGrads {
    pub fn zeros_like(params: &StudentEncoderParams) -> Self {
        StudentGrads {
            layers: params
                .layers
                .iter()
                .map(|l| Layer::zeros(l.in_dim, l.out_dim))
                .collect(),
        }
    }

    /// Accumulate `other` into self. Summation order is the caller's
    /// responsibility and must stay fixed for bit-reproducible runs.
    pub fn add_assign(&mut self, other: &StudentGrads) {
        assert_eq!(self.layers.len(), other.layers.len());
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x += y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut flat = Vec::new();
        for l in &self.layers {
            flat.extend_from_slice(&l.weights);
            flat.extend_from_slice(&l.bias);
        }
        flat
    }
}

/// Activations cached by a forward pass, consumed by the matching backward.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// dims chain of the params that produced this cache.
    chain: Vec<usize>,
    /// activations[0] = mean-pooled input; activations[k+1] = output of
    /// layer k (post-activation for hidden layers, raw affine for the last).
    activations: Vec<Vec<f64>>,
}

impl StudentEncoderParams {
    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Mutable layer access for the optimizer.
    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.arch.param_count()
    }

    /// Flatten in layer order, weights row-major then bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            flat.extend_from_slice(&l.weights);
            flat.extend_from_slice(&l.bias);
        }
        flat
    }

    /// Rebuild from a flat vector laid out as [`flatten`] produces.
    pub fn from_flat(arch: &Architecture, flat: &[f64]) -> Result<Self> {
        arch.validate()?;
        if flat.len() != arch.param_count() {
            return Err(Error::ShapeMismatch(format!(
                "flat parameter length {} does not match architecture ({} params)",
                flat.len(),
                arch.param_count()
            )));
        }
        let chain = arch.dims_chain();
        let mut layers = Vec::with_capacity(arch.n_layers());
        let mut pos = 0;
        for w in chain.windows(2) {
            let (in_dim, out_dim) = (w[0], w[1]);
            let weights = flat[pos..pos + out_dim * in_dim].to_vec();
            pos += out_dim * in_dim;
            let bias = flat[pos..pos + out_dim].to_vec();
            pos += out_dim;
            layers.push(Layer {
                weights,
                bias,
                in_dim,
                out_dim,
            });
        }
        Ok(StudentEncoderParams {
            arch: arch.clone(),
            layers,
        })
    }

    /// Overwrite parameter values from a flat vector of matching length.
    pub fn set_from_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::ShapeMismatch(format!(
                "flat parameter length {} does not match architecture ({} params)",
                flat.len(),
                self.param_count()
            )));
        }
        let mut pos = 0;
        for l in &mut self.layers {
            let wlen = l.weights.len();
            l.weights.copy_from_slice(&flat[pos..pos + wlen]);
            pos += wlen;
            let blen = l.bias.len();
            l.bias.copy_from_slice(&flat[pos..pos + blen]);
            pos += blen;
        }
        Ok(())
    }
}

/// Initialize the student: weights ~ N(0, 1/fan_in), biases zero.
/// Deterministic given `seed`.
pub fn init_student(arch: &Architecture, seed: u64) -> Result<StudentEncoderParams> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chain = arch.dims_chain();
    let mut layers = Vec::with_capacity(arch.n_layers());
    for w in chain.windows(2) {
        let (in_dim, out_dim) = (w[0], w[1]);
        let dist = Normal::new(0.0, 1.0 / (in_dim as f64).sqrt()).unwrap();
        let weights: Vec<f64> = (0..out_dim * in_dim).map(|_| dist.sample(&mut rng)).collect();
        layers.push(Layer {
            weights,
            bias: vec![0.0; out_dim],
            in_dim,
            out_dim,
        });
    }
    Ok(StudentEncoderParams {
        arch: arch.clone(),
        layers,
    })
}

/// Forward pass over one window of frames: frames are mean-pooled to a
/// single feature vector, then passed through the layer stack. Returns the
/// raw (pre-normalization) embedding plus the cache for backward.
pub fn student_forward(
    params: &StudentEncoderParams,
    frames: &[Vec<f64>],
) -> Result<(Vec<f64>, ForwardCache)> {
    if frames.is_empty() {
        return Err(Error::EmptyInput);
    }
    let f = params.arch.input_dim;
    for frame in frames {
        if frame.len() != f {
            return Err(Error::DimensionMismatch {
                expected: f,
                got: frame.len(),
            });
        }
    }
    let inv = 1.0 / frames.len() as f64;
    let mut pooled = vec![0.0; f];
    for frame in frames {
        for (p, x) in pooled.iter_mut().zip(frame) {
            *p += x;
        }
    }
    for p in pooled.iter_mut() {
        *p *= inv;
    }

    let n_layers = params.layers.len();
    let mut activations = Vec::with_capacity(n_layers + 1);
    activations.push(pooled);
    for (k, layer) in params.layers.iter().enumerate() {
        let mut out = layer.affine(activations.last().unwrap());
        if k + 1 < n_layers {
            for y in out.iter_mut() {
                *y = params.arch.activation.apply(*y);
            }
        }
        activations.push(out);
    }
    let output = activations.last().unwrap().clone();
    Ok((
        output,
        ForwardCache {
            chain: params.arch.dims_chain(),
            activations,
        },
    ))
}

/// Exact reverse-mode pass: gradient of every parameter given the gradient
/// w.r.t. the raw output embedding.
pub fn student_backward(
    params: &StudentEncoderParams,
    cache: &ForwardCache,
    upstream: &[f64],
) -> Result<StudentGrads> {
    if cache.chain != params.arch.dims_chain() {
        return Err(Error::StaleCache(format!(
            "cache chain {:?} does not match params chain {:?}",
            cache.chain,
            params.arch.dims_chain()
        )));
    }
    if cache.activations.len() != params.layers.len() + 1 {
        return Err(Error::StaleCache("activation count mismatch".into()));
    }
    if upstream.len() != params.arch.output_dim {
        return Err(Error::DimensionMismatch {
            expected: params.arch.output_dim,
            got: upstream.len(),
        });
    }

    let mut grads = StudentGrads::zeros_like(params);
    let mut delta = upstream.to_vec();
    for k in (0..params.layers.len()).rev() {
        let layer = &params.layers[k];
        let input = &cache.activations[k];
        let g = &mut grads.layers[k];
        for o in 0..layer.out_dim {
            let d = delta[o];
            g.bias[o] = d;
            let row = &mut g.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
            for (gw, xi) in row.iter_mut().zip(input) {
                *gw = d * xi;
            }
        }
        if k > 0 {
            // Gradient w.r.t. this layer's input, through the previous
            // hidden activation.
            let mut next = vec![0.0; layer.in_dim];
            for o in 0..layer.out_dim {
                let d = delta[o];
                let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (n, w) in next.iter_mut().zip(row) {
                    *n += w * d;
                }
            }
            let prev_out = &cache.activations[k];
            for (n, y) in next.iter_mut().zip(prev_out) {
                *n *= params.arch.activation.grad_from_output(*y);
            }
            delta = next;
        }
    }
    Ok(grads)
}

/// Frozen linear map into the shared latent space, followed by
/// normalization. Never trained.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenProjector {
    matrix: Vec<f64>,
    out_dim: usize,
    in_dim: usize,
    seed: u64,
}

impl FrozenProjector {
    /// Draw a projector with entries ~ N(0, 1/in_dim). Identical seed and
    /// shape give a bit-identical matrix.
    pub fn from_seed(out_dim: usize, in_dim: usize, seed: u64) -> Result<Self> {
        if out_dim == 0 || in_dim == 0 {
            return Err(Error::InvalidArchitecture(
                "projector dims must be at least 1".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Normal::new(0.0, 1.0 / (in_dim as f64).sqrt()).unwrap();
        let matrix = (0..out_dim * in_dim).map(|_| dist.sample(&mut rng)).collect();
        Ok(FrozenProjector {
            matrix,
            out_dim,
            in_dim,
            seed,
        })
    }

    /// Wrap an explicitly constructed matrix (row-major, out x in). The
    /// seed records provenance only.
    pub fn from_matrix(matrix: Vec<f64>, out_dim: usize, in_dim: usize, seed: u64) -> Result<Self> {
        if matrix.len() != out_dim * in_dim || out_dim == 0 || in_dim == 0 {
            return Err(Error::ShapeMismatch(format!(
                "matrix length {} does not match {}x{}",
                matrix.len(),
                out_dim,
                in_dim
            )));
        }
        Ok(FrozenProjector {
            matrix,
            out_dim,
            in_dim,
            seed,
        })
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    /// Hash of the matrix bits; frozen projectors must keep this constant
    /// across a training run.
    pub fn content_hash(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for x in &self.matrix {
            x.to_bits().hash(&mut h);
        }
        (self.out_dim, self.in_dim).hash(&mut h);
        h.finish()
    }
}

/// Project and normalize: l2_normalize(matrix . features).
pub fn frozen_encode(projector: &FrozenProjector, features: &[f64]) -> Result<Embedding> {
    if features.len() != projector.in_dim {
        return Err(Error::DimensionMismatch {
            expected: projector.in_dim,
            got: features.len(),
        });
    }
    let mut out = vec![0.0; projector.out_dim];
    for (o, out_o) in out.iter_mut().enumerate() {
        let row = &projector.matrix[o * projector.in_dim..(o + 1) * projector.in_dim];
        let mut acc = 0.0;
        for (w, x) in row.iter().zip(features) {
            acc += w * x;
        }
        *out_o = acc;
    }
    l2_normalize(&out)
}

/// Write params as a single rank-1 tensor of the flattened values.
pub fn save_checkpoint(params: &StudentEncoderParams, path: &Path) -> Result<()> {
    let flat = params.flatten();
    tensorio::write_tensor(path, &[flat.len() as u64], &flat)
}

/// Load params saved by [`save_checkpoint`], validated against the declared
/// architecture.
pub fn load_checkpoint(path: &Path, arch: &Architecture) -> Result<StudentEncoderParams> {
    let (dims, data) = tensorio::read_tensor(path)?;
    if dims.len() != 1 {
        return Err(Error::Format(format!(
            "checkpoint must be a rank-1 tensor, got rank {}",
            dims.len()
        )));
    }
    StudentEncoderParams::from_flat(arch, &data)
}
