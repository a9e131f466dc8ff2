//! Mean-pool MLP encoder: time-average of channels, one tanh hidden layer,
//! one affine output layer.
//!
//! Canonical parameter layout: `w1` (hidden x channels, row-major), `b1`,
//! `w2` (embed x hidden, row-major), `b2`.

use crate::error::Result;
use crate::segment::Segment;

use super::{
    matvec_acc, matvec_t_acc, normalization_backward, normalize, outer_acc, EncoderConfig,
};

struct Views<'a> {
    w1: &'a [f64],
    b1: &'a [f64],
    w2: &'a [f64],
    b2: &'a [f64],
}

fn views<'a>(cfg: &EncoderConfig, params: &'a [f64]) -> Views<'a> {
    let (c, h, e) = (cfg.n_channels, cfg.hidden_dim, cfg.embed_dim);
    let (w1, rest) = params.split_at(h * c);
    let (b1, rest) = rest.split_at(h);
    let (w2, b2) = rest.split_at(e * h);
    debug_assert_eq!(b2.len(), e);
    Views { w1, b1, w2, b2 }
}

fn channel_means(segment: &Segment) -> Vec<f64> {
    let (rows, cols) = (segment.window_length(), segment.n_channels());
    let mut mean = vec![0.0; cols];
    for t in 0..rows {
        for (m, v) in mean.iter_mut().zip(segment.row(t)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= rows as f64;
    }
    mean
}

/// Pre-normalization output vector.
pub(super) fn forward_raw(cfg: &EncoderConfig, params: &[f64], segment: &Segment) -> Vec<f64> {
    let p = views(cfg, params);
    let (c, h, e) = (cfg.n_channels, cfg.hidden_dim, cfg.embed_dim);
    let mean = channel_means(segment);
    let mut hidden = p.b1.to_vec();
    matvec_acc(p.w1, h, c, &mean, &mut hidden);
    for v in &mut hidden {
        *v = v.tanh();
    }
    let mut out = p.b2.to_vec();
    matvec_acc(p.w2, e, h, &hidden, &mut out);
    out
}

pub(super) fn backward_raw(
    cfg: &EncoderConfig,
    params: &[f64],
    segment: &Segment,
    output_gradient: &[f64],
) -> Result<Vec<f64>> {
    let p = views(cfg, params);
    let (c, h, e) = (cfg.n_channels, cfg.hidden_dim, cfg.embed_dim);

    // recompute the forward pass
    let mean = channel_means(segment);
    let mut hidden = p.b1.to_vec();
    matvec_acc(p.w1, h, c, &mean, &mut hidden);
    for v in &mut hidden {
        *v = v.tanh();
    }
    let mut v = p.b2.to_vec();
    matvec_acc(p.w2, e, h, &hidden, &mut v);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let f = normalize(v)?;

    let dv = normalization_backward(output_gradient, &f, norm);

    let mut grad = vec![0.0; params.len()];
    let (gw1, rest) = grad.split_at_mut(h * c);
    let (gb1, rest) = rest.split_at_mut(h);
    let (gw2, gb2) = rest.split_at_mut(e * h);

    outer_acc(gw2, &dv, &hidden);
    gb2.copy_from_slice(&dv);

    let mut dhidden = vec![0.0; h];
    matvec_t_acc(p.w2, e, h, &dv, &mut dhidden);
    // through tanh
    for (d, hv) in dhidden.iter_mut().zip(&hidden) {
        *d *= 1.0 - hv * hv;
    }
    outer_acc(gw1, &dhidden, &mean);
    gb1.copy_from_slice(&dhidden);

    Ok(grad)
}
