//! Bidirectional tanh recurrence: one forward and one backward pass over the
//! time axis, final states of both directions concatenated, then one affine
//! output layer.
//!
//! Canonical parameter layout: `wx_f` (hidden x channels), `wh_f`
//! (hidden x hidden), `b_f`, `wx_b`, `wh_b`, `b_b`, `wo` (embed x 2*hidden),
//! `bo`. All matrices row-major.

use crate::error::Result;
use crate::segment::Segment;

use super::{
    matvec_acc, matvec_t_acc, normalization_backward, normalize, outer_acc, EncoderConfig,
};

struct Views<'a> {
    wx_f: &'a [f64],
    wh_f: &'a [f64],
    b_f: &'a [f64],
    wx_b: &'a [f64],
    wh_b: &'a [f64],
    b_b: &'a [f64],
    wo: &'a [f64],
    bo: &'a [f64],
}

fn views<'a>(cfg: &EncoderConfig, params: &'a [f64]) -> Views<'a> {
    let (c, h, e) = (cfg.n_channels, cfg.hidden_dim, cfg.embed_dim);
    let (wx_f, rest) = params.split_at(h * c);
    let (wh_f, rest) = rest.split_at(h * h);
    let (b_f, rest) = rest.split_at(h);
    let (wx_b, rest) = rest.split_at(h * c);
    let (wh_b, rest) = rest.split_at(h * h);
    let (b_b, rest) = rest.split_at(h);
    let (wo, bo) = rest.split_at(e * 2 * h);
    debug_assert_eq!(bo.len(), e);
    Views {
        wx_f,
        wh_f,
        b_f,
        wx_b,
        wh_b,
        b_b,
        wo,
        bo,
    }
}

/// All hidden states of both directions. Forward states indexed by time;
/// backward state `t` depends on `t + 1`.
fn recurrence_states(
    cfg: &EncoderConfig,
    p: &Views<'_>,
    segment: &Segment,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let (c, h, len) = (cfg.n_channels, cfg.hidden_dim, cfg.window_length);
    let mut fwd: Vec<Vec<f64>> = Vec::with_capacity(len);
    for t in 0..len {
        let mut a = p.b_f.to_vec();
        matvec_acc(p.wx_f, h, c, segment.row(t), &mut a);
        if t > 0 {
            matvec_acc(p.wh_f, h, h, &fwd[t - 1], &mut a);
        }
        for v in &mut a {
            *v = v.tanh();
        }
        fwd.push(a);
    }
    let mut bwd: Vec<Vec<f64>> = vec![Vec::new(); len];
    for t in (0..len).rev() {
        let mut a = p.b_b.to_vec();
        matvec_acc(p.wx_b, h, c, segment.row(t), &mut a);
        if t + 1 < len {
            let (head, tail) = bwd.split_at(t + 1);
            debug_assert!(head.len() == t + 1);
            matvec_acc(p.wh_b, h, h, &tail[0], &mut a);
        }
        for v in &mut a {
            *v = v.tanh();
        }
        bwd[t] = a;
    }
    (fwd, bwd)
}

/// Pre-normalization output vector.
pub(super) fn forward_raw(cfg: &EncoderConfig, params: &[f64], segment: &Segment) -> Vec<f64> {
    let p = views(cfg, params);
    let (h, e, len) = (cfg.hidden_dim, cfg.embed_dim, cfg.window_length);
    let (fwd, bwd) = recurrence_states(cfg, &p, segment);
    let mut z = Vec::with_capacity(2 * h);
    z.extend_from_slice(&fwd[len - 1]);
    z.extend_from_slice(&bwd[0]);
    let mut out = p.bo.to_vec();
    matvec_acc(p.wo, e, 2 * h, &z, &mut out);
    out
}

pub(super) fn backward_raw(
    cfg: &EncoderConfig,
    params: &[f64],
    segment: &Segment,
    output_gradient: &[f64],
) -> Result<Vec<f64>> {
    let p = views(cfg, params);
    let (c, h, e, len) = (
        cfg.n_channels,
        cfg.hidden_dim,
        cfg.embed_dim,
        cfg.window_length,
    );

    let (fwd, bwd) = recurrence_states(cfg, &p, segment);
    let mut z = Vec::with_capacity(2 * h);
    z.extend_from_slice(&fwd[len - 1]);
    z.extend_from_slice(&bwd[0]);
    let mut v = p.bo.to_vec();
    matvec_acc(p.wo, e, 2 * h, &z, &mut v);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let f = normalize(v)?;

    let dv = normalization_backward(output_gradient, &f, norm);

    let mut grad = vec![0.0; params.len()];
    let (gwx_f, rest) = grad.split_at_mut(h * c);
    let (gwh_f, rest) = rest.split_at_mut(h * h);
    let (gb_f, rest) = rest.split_at_mut(h);
    let (gwx_b, rest) = rest.split_at_mut(h * c);
    let (gwh_b, rest) = rest.split_at_mut(h * h);
    let (gb_b, rest) = rest.split_at_mut(h);
    let (gwo, gbo) = rest.split_at_mut(e * 2 * h);

    outer_acc(gwo, &dv, &z);
    gbo.copy_from_slice(&dv);

    let mut dz = vec![0.0; 2 * h];
    matvec_t_acc(p.wo, e, 2 * h, &dv, &mut dz);

    // forward direction: only the last state receives external gradient,
    // earlier states receive it through the recurrence
    let mut dh = dz[..h].to_vec();
    for t in (0..len).rev() {
        let mut da = dh.clone();
        for (d, state) in da.iter_mut().zip(&fwd[t]) {
            *d *= 1.0 - state * state;
        }
        outer_acc(gwx_f, &da, segment.row(t));
        for (g, d) in gb_f.iter_mut().zip(&da) {
            *g += d;
        }
        dh = vec![0.0; h];
        if t > 0 {
            outer_acc(gwh_f, &da, &fwd[t - 1]);
            matvec_t_acc(p.wh_f, h, h, &da, &mut dh);
        }
    }

    // backward direction: state 0 is the "final" one; gradient flows t -> t+1
    let mut dg = dz[h..].to_vec();
    for t in 0..len {
        let mut da = dg.clone();
        for (d, state) in da.iter_mut().zip(&bwd[t]) {
            *d *= 1.0 - state * state;
        }
        outer_acc(gwx_b, &da, segment.row(t));
        for (g, d) in gb_b.iter_mut().zip(&da) {
            *g += d;
        }
        dg = vec![0.0; h];
        if t + 1 < len {
            outer_acc(gwh_b, &da, &bwd[t + 1]);
            matvec_t_acc(p.wh_b, h, h, &da, &mut dg);
        }
    }

    Ok(grad)
}
