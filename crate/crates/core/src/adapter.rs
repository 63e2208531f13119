//! Speech-side numeric stack: a pluggable encoder, the two-layer strided
//! 1-d convolution length adapter and the linear projector into the decoder's
//! embedding space.

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::stream::SpeechStream;

pub const DEFAULT_ENCODER_DIM: usize = 8;
pub const DEFAULT_CONV_FILTERS: usize = 8;
pub const DEFAULT_LLM_DIM: usize = 16;

/// Rows produced by a `k`/`s`/`p` convolution over `t` input rows, or 0 when
/// no window fits (`t - k + 2p < 0`).
pub fn output_length(t: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    assert!(kernel >= 1 && stride >= 1, "kernel and stride must be >= 1");
    let span = t as i64 - kernel as i64 + 2 * padding as i64;
    if span < 0 {
        0
    } else {
        (span / stride as i64) as usize + 1
    }
}

/// True when the input is too short for a single window.
pub fn is_degenerate(t: usize, kernel: usize, padding: usize) -> bool {
    (t as i64) - (kernel as i64) + 2 * (padding as i64) < 0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    None,
    #[default]
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::None => x,
            Activation::Relu => x.max(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvSpec {
    kernel: usize,
    stride: usize,
    padding: usize,
    in_dim: usize,
    filters: usize,
    /// `filters x (kernel * in_dim)`, row-major; column `j * in_dim + c` is
    /// window offset `j`, input channel `c`.
    weights: Vec<f64>,
    bias: Vec<f64>,
    activation: Activation,
}

impl ConvSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        kernel: usize,
        stride: usize,
        padding: usize,
        in_dim: usize,
        filters: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        if kernel == 0 || stride == 0 || filters == 0 || in_dim == 0 {
            return Err(Error::InvalidConfig(format!(
                "conv needs kernel, stride, filters, in_dim >= 1 (got k={kernel} s={stride} h={filters} d={in_dim})"
            )));
        }
        if weights.len() != filters * kernel * in_dim {
            return Err(Error::Shape(format!(
                "conv weights need {filters}x{} values, got {}",
                kernel * in_dim,
                weights.len()
            )));
        }
        if bias.len() != filters {
            return Err(Error::Shape(format!(
                "conv bias needs {filters} values, got {}",
                bias.len()
            )));
        }
        Ok(Self {
            kernel,
            stride,
            padding,
            in_dim,
            filters,
            weights,
            bias,
            activation,
        })
    }

    /// `k=1, s=1, p=0` identity map over `dim` channels.
    pub fn identity(dim: usize) -> Self {
        let mut weights = vec![0.0; dim * dim];
        for i in 0..dim {
            weights[i * dim + i] = 1.0;
        }
        Self::new(1, 1, 0, dim, dim, weights, vec![0.0; dim], Activation::None).expect("identity conv is well-formed")
    }

    /// Weights drawn uniformly from `±1/sqrt(k * in_dim)` with a fixed seed.
    pub fn seeded(
        kernel: usize,
        stride: usize,
        padding: usize,
        in_dim: usize,
        filters: usize,
        activation: Activation,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / ((kernel * in_dim.max(1)) as f64).sqrt();
        let weights = (0..filters * kernel * in_dim)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        let bias = (0..filters).map(|_| rng.gen_range(-bound..=bound)).collect();
        Self::new(kernel, stride, padding, in_dim, filters, weights, bias, activation)
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn padding(&self) -> usize {
        self.padding
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn filters(&self) -> usize {
        self.filters
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn output_length(&self, t: usize) -> usize {
        output_length(t, self.kernel, self.stride, self.padding)
    }
}

/// Zero-padded strided 1-d convolution over the time axis.
///
/// An input too short for one window yields a 0-row matrix rather than an
/// error; callers treat that as "not enough audio yet".
pub fn conv1d_forward(input: &FeatureMatrix, spec: &ConvSpec) -> Result<FeatureMatrix> {
    if input.dim() != spec.in_dim {
        return Err(Error::Shape(format!(
            "conv expects input dim {}, got {}",
            spec.in_dim,
            input.dim()
        )));
    }
    let rows_out = spec.output_length(input.rows());
    let window = spec.kernel * spec.in_dim;
    let mut out = Vec::with_capacity(rows_out * spec.filters);
    for t in 0..rows_out {
        let origin = (t * spec.stride) as i64 - spec.padding as i64;
        for f in 0..spec.filters {
            let w = &spec.weights[f * window..(f + 1) * window];
            let mut acc = spec.bias[f];
            for j in 0..spec.kernel {
                let src = origin + j as i64;
                if src < 0 || src as usize >= input.rows() {
                    continue;
                }
                let row = input.row(src as usize);
                let wj = &w[j * spec.in_dim..(j + 1) * spec.in_dim];
                acc += wj.iter().zip(row).map(|(a, b)| a * b).sum::<f64>();
            }
            out.push(spec.activation.apply(acc));
        }
    }
    FeatureMatrix::new(rows_out, spec.filters, out)
}

/// Row-wise affine map `y = W x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projector {
    in_dim: usize,
    out_dim: usize,
    /// `out_dim x in_dim`, row-major.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Projector {
    pub fn new(in_dim: usize, out_dim: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weights.len() != in_dim * out_dim || bias.len() != out_dim {
            return Err(Error::Shape(format!(
                "projector {out_dim}x{in_dim} got {} weights and {} bias values",
                weights.len(),
                bias.len()
            )));
        }
        Ok(Self {
            in_dim,
            out_dim,
            weights,
            bias,
        })
    }

    pub fn identity(dim: usize) -> Self {
        let mut weights = vec![0.0; dim * dim];
        for i in 0..dim {
            weights[i * dim + i] = 1.0;
        }
        Self::new(dim, dim, weights, vec![0.0; dim]).expect("identity projector is well-formed")
    }

    pub fn seeded(in_dim: usize, out_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (in_dim.max(1) as f64).sqrt();
        let weights = (0..in_dim * out_dim).map(|_| rng.gen_range(-bound..=bound)).collect();
        let bias = (0..out_dim).map(|_| rng.gen_range(-bound..=bound)).collect();
        Self::new(in_dim, out_dim, weights, bias).expect("seeded projector is well-formed")
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn forward(&self, input: &FeatureMatrix) -> Result<FeatureMatrix> {
        if input.dim() != self.in_dim {
            return Err(Error::Shape(format!(
                "projector expects dim {}, got {}",
                self.in_dim,
                input.dim()
            )));
        }
        let mut out = Vec::with_capacity(input.rows() * self.out_dim);
        for t in 0..input.rows() {
            let x = input.row(t);
            for o in 0..self.out_dim {
                let w = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
                out.push(self.bias[o] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>());
            }
        }
        FeatureMatrix::new(input.rows(), self.out_dim, out)
    }
}

/// Length adapter (two convolutions) followed by the projector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterConfig {
    conv1: ConvSpec,
    conv2: ConvSpec,
    projector: Projector,
}

impl AdapterConfig {
    pub fn new(conv1: ConvSpec, conv2: ConvSpec, projector: Projector) -> Result<Self> {
        if conv2.in_dim != conv1.filters {
            return Err(Error::Shape(format!(
                "conv2 input dim {} != conv1 filters {}",
                conv2.in_dim, conv1.filters
            )));
        }
        if projector.in_dim != conv2.filters {
            return Err(Error::Shape(format!(
                "projector input dim {} != conv2 filters {}",
                projector.in_dim, conv2.filters
            )));
        }
        Ok(Self {
            conv1,
            conv2,
            projector,
        })
    }

    /// Two `k=5, s=2, p=2` convolutions with rectifiers, then a projection to
    /// `llm_dim`, all with seeded weights.
    pub fn seeded(in_dim: usize, filters: usize, llm_dim: usize, seed: u64) -> Self {
        let conv1 = ConvSpec::seeded(5, 2, 2, in_dim, filters, Activation::Relu, seed).expect("valid conv1");
        let conv2 =
            ConvSpec::seeded(5, 2, 2, filters, filters, Activation::Relu, seed.wrapping_add(1)).expect("valid conv2");
        let projector = Projector::seeded(filters, llm_dim, seed.wrapping_add(2));
        Self::new(conv1, conv2, projector).expect("chained dims agree")
    }

    pub fn identity(dim: usize) -> Self {
        Self::new(
            ConvSpec::identity(dim),
            ConvSpec::identity(dim),
            Projector::identity(dim),
        )
        .expect("identity adapter is well-formed")
    }

    pub fn conv1(&self) -> &ConvSpec {
        &self.conv1
    }

    pub fn conv2(&self) -> &ConvSpec {
        &self.conv2
    }

    pub fn projector(&self) -> &Projector {
        &self.projector
    }

    pub fn in_dim(&self) -> usize {
        self.conv1.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.projector.out_dim
    }

    pub fn output_length(&self, t: usize) -> usize {
        self.conv2.output_length(self.conv1.output_length(t))
    }
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self::seeded(DEFAULT_ENCODER_DIM, DEFAULT_CONV_FILTERS, DEFAULT_LLM_DIM, 17)
    }
}

/// conv1, conv2, then the projector applied row-wise.
pub fn adapt(input: &FeatureMatrix, config: &AdapterConfig) -> Result<FeatureMatrix> {
    let z = conv1d_forward(input, &config.conv1)?;
    let z = conv1d_forward(&z, &config.conv2)?;
    config.projector.forward(&z)
}

/// Turns a stream prefix into encoder features.
pub trait Encoder: Send + Sync {
    /// Encodes frames `0..frames` of `stream` from scratch.
    fn encode(&self, stream: &SpeechStream, frames: usize) -> Result<FeatureMatrix>;

    fn dim(&self) -> usize;
}

/// Encoder that returns the stream's own frame features, recomputed on every
/// call, and counts its work.
#[derive(Debug, Default)]
pub struct MockEncoder {
    calls: AtomicUsize,
    rows_computed: AtomicUsize,
    dim: usize,
}

impl MockEncoder {
    pub fn new(dim: usize) -> Self {
        Self {
            calls: AtomicUsize::new(0),
            rows_computed: AtomicUsize::new(0),
            dim,
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    /// Total rows produced over all calls.
    pub fn rows_computed(&self) -> usize {
        self.rows_computed.load(Ordering::Relaxed)
    }
}

impl Encoder for MockEncoder {
    fn encode(&self, stream: &SpeechStream, frames: usize) -> Result<FeatureMatrix> {
        if stream.feature_dim() != self.dim {
            return Err(Error::Shape(format!(
                "encoder dim {} but stream `{}` has dim {}",
                self.dim,
                stream.id(),
                stream.feature_dim()
            )));
        }
        let out = stream.frame_rows(frames)?;
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.rows_computed.fetch_add(out.rows(), Ordering::Relaxed);
        Ok(out)
    }

    fn dim(&self) -> usize {
        self.dim
    }
}

/// Convenience wrapper over [`MockEncoder::encode`].
pub fn mock_encode(encoder: &MockEncoder, stream: &SpeechStream, frames: usize) -> Result<FeatureMatrix> {
    encoder.encode(stream, frames)
}
