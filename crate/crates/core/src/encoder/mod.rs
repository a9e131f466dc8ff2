//! Temporal encoders mapping a [`Segment`] to an L2-normalized
//! [`FeatureVector`], with exact analytic gradients.
//!
//! Two kinds are provided: a bidirectional tanh recurrence and a cheap
//! mean-pool MLP. Parameters live in one flat vector with a canonical
//! layout documented per kind (see `mlp` and `birnn`), so models
//! round-trip bit-exactly through the binary format in `io`.

mod birnn;
mod io;
mod mlp;

pub use io::{load_model, save_model};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segment::{FeatureVector, Segment};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    BiRecurrent,
    MeanPoolMlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub n_channels: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub window_length: usize,
    pub seed: u64,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_channels == 0
            || self.hidden_dim == 0
            || self.embed_dim == 0
            || self.window_length == 0
        {
            return Err(Error::InvalidConfig("encoder dims must all be >= 1".into()));
        }
        Ok(())
    }

    /// Total number of parameters implied by the config.
    pub fn param_count(&self) -> usize {
        let (c, h, e) = (self.n_channels, self.hidden_dim, self.embed_dim);
        match self.kind {
            EncoderKind::MeanPoolMlp => h * c + h + e * h + e,
            EncoderKind::BiRecurrent => 2 * (h * c + h * h + h) + e * 2 * h + e,
        }
    }

    /// Parameter blocks in canonical layout order: (length, fan_in).
    /// Biases use the fan-in of the matrix they pair with; recurrent
    /// blocks use the hidden dimension.
    fn layout(&self) -> Vec<(usize, usize)> {
        let (c, h, e) = (self.n_channels, self.hidden_dim, self.embed_dim);
        match self.kind {
            // w1 (h x c), b1, w2 (e x h), b2
            EncoderKind::MeanPoolMlp => vec![(h * c, c), (h, c), (e * h, h), (e, h)],
            // wx_f (h x c), wh_f (h x h), b_f, wx_b, wh_b, b_b, wo (e x 2h), bo
            EncoderKind::BiRecurrent => vec![
                (h * c, c),
                (h * h, h),
                (h, h),
                (h * c, c),
                (h * h, h),
                (h, h),
                (e * 2 * h, 2 * h),
                (e, 2 * h),
            ],
        }
    }
}

/// Encoder parameters as one flat vector in the canonical layout.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    config: EncoderConfig,
    parameters: Vec<f64>,
}

impl EmbeddingModel {
    /// Wrap an existing parameter vector; the count must match the config.
    pub fn from_parameters(config: EncoderConfig, parameters: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if parameters.len() != config.param_count() {
            return Err(Error::DimensionMismatch {
                expected: config.param_count(),
                got: parameters.len(),
            });
        }
        Ok(EmbeddingModel { config, parameters })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn parameters(&self) -> &[f64] {
        &self.parameters
    }

    pub fn parameters_mut(&mut self) -> &mut [f64] {
        &mut self.parameters
    }
}

/// Initialize a model with per-layer uniform draws on
/// `[-1/sqrt(fan_in), +1/sqrt(fan_in)]`, deterministically from the seed.
pub fn init_model(config: &EncoderConfig) -> Result<EmbeddingModel> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut parameters = Vec::with_capacity(config.param_count());
    for (len, fan_in) in config.layout() {
        let bound = 1.0 / (fan_in as f64).sqrt();
        for _ in 0..len {
            parameters.push(rng.random_range(-bound..=bound));
        }
    }
    Ok(EmbeddingModel {
        config: *config,
        parameters,
    })
}

/// Embed a segment. Output has unit L2 norm.
pub fn forward(model: &EmbeddingModel, segment: &Segment) -> Result<FeatureVector> {
    check_shape(model, segment)?;
    let v = match model.config.kind {
        EncoderKind::MeanPoolMlp => mlp::forward_raw(&model.config, &model.parameters, segment),
        EncoderKind::BiRecurrent => birnn::forward_raw(&model.config, &model.parameters, segment),
    };
    normalize(v).map(FeatureVector)
}

/// Exact gradient of `output_gradient . f(segment)` with respect to every
/// parameter, including the path through L2 normalization.
pub fn backward(
    model: &EmbeddingModel,
    segment: &Segment,
    output_gradient: &[f64],
) -> Result<Vec<f64>> {
    check_shape(model, segment)?;
    if output_gradient.len() != model.config.embed_dim {
        return Err(Error::DimensionMismatch {
            expected: model.config.embed_dim,
            got: output_gradient.len(),
        });
    }
    match model.config.kind {
        EncoderKind::MeanPoolMlp => {
            mlp::backward_raw(&model.config, &model.parameters, segment, output_gradient)
        }
        EncoderKind::BiRecurrent => {
            birnn::backward_raw(&model.config, &model.parameters, segment, output_gradient)
        }
    }
}

fn check_shape(model: &EmbeddingModel, segment: &Segment) -> Result<()> {
    let cfg = &model.config;
    if segment.window_length() != cfg.window_length || segment.n_channels() != cfg.n_channels {
        return Err(Error::SegmentShapeMismatch {
            rows: segment.window_length(),
            cols: segment.n_channels(),
            want_rows: cfg.window_length,
            want_cols: cfg.n_channels,
        });
    }
    Ok(())
}

fn normalize(v: Vec<f64>) -> Result<Vec<f64>> {
    let norm_sq: f64 = v.iter().map(|x| x * x).sum();
    if norm_sq == 0.0 {
        return Err(Error::DegenerateEmbedding);
    }
    let norm = norm_sq.sqrt();
    Ok(v.into_iter().map(|x| x / norm).collect())
}

/// Gradient of `g . (v / |v|)` with respect to `v`:
/// `(g - (g . f) f) / |v|` where `f = v / |v|`.
fn normalization_backward(g: &[f64], f: &[f64], norm: f64) -> Vec<f64> {
    let gf: f64 = g.iter().zip(f).map(|(a, b)| a * b).sum();
    g.iter()
        .zip(f)
        .map(|(gi, fi)| (gi - gf * fi) / norm)
        .collect()
}

// out += W x, W row-major (rows x cols)
fn matvec_acc(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        let mut acc = 0.0;
        for (wv, xv) in row.iter().zip(x) {
            acc += wv * xv;
        }
        out[r] += acc;
    }
}

// out += W^T y, W row-major (rows x cols), y length rows, out length cols
fn matvec_t_acc(w: &[f64], rows: usize, cols: usize, y: &[f64], out: &mut [f64]) {
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        let yr = y[r];
        for (o, wv) in out.iter_mut().zip(row) {
            *o += yr * wv;
        }
    }
}

// grad_w += dy (outer) x, grad_w row-major (|dy| x |x|)
fn outer_acc(grad_w: &mut [f64], dy: &[f64], x: &[f64]) {
    let cols = x.len();
    for (r, &d) in dy.iter().enumerate() {
        let row = &mut grad_w[r * cols..(r + 1) * cols];
        for (g, xv) in row.iter_mut().zip(x) {
            *g += d * xv;
        }
    }
}
