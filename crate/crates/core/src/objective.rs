//! The ordinal-quadruplet loss: two triplet hinge terms plus one log-ratio
//! term over a four-sample tuple (anchor, same-label positive, two negatives
//! of distinct labels), with exact analytic gradients and tuple sampling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segment::{feature_distance, FeatureVector};
use crate::space::{ClassId, LabelSpace};

/// Loss hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Hinge margin of the triplet terms.
    pub margin: f64,
    /// Distance floor applied before the logs of the log-ratio term; the
    /// term is undefined at zero feature distance.
    pub epsilon_d: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            margin: 0.2,
            epsilon_d: 1e-8,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.margin < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "margin must be >= 0, got {}",
                self.margin
            )));
        }
        if self.epsilon_d <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "epsilon_d must be > 0, got {}",
                self.epsilon_d
            )));
        }
        Ok(())
    }
}

/// Indices into a batch: anchor, same-label positive, and two negatives of
/// labels distinct from the anchor's and from each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Quadruplet {
    pub anchor: usize,
    pub positive: usize,
    pub neg_i: usize,
    pub neg_j: usize,
}

/// Anchor, positive, single negative. Emitted instead of quadruplets when a
/// batch lacks two distinct non-anchor labels, and by triplet-only sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

/// Output of quadruplet sampling over one batch.
#[derive(Debug, Clone, Default)]
pub struct SampledTuples {
    pub quadruplets: Vec<Quadruplet>,
    /// Triplet-only fallbacks from anchors that could not form a quadruplet.
    pub degraded: Vec<Triplet>,
    /// The batch carried a single distinct label, so nothing was sampled.
    pub single_label_batch: bool,
}

impl SampledTuples {
    pub fn is_degraded(&self) -> bool {
        self.single_label_batch || !self.degraded.is_empty()
    }

    pub fn tuple_count(&self) -> usize {
        self.quadruplets.len() + self.degraded.len()
    }
}

/// Triplet hinge `[D_ap - D_an + margin]_+`.
pub fn triplet_loss(d_ap: f64, d_an: f64, margin: f64) -> f64 {
    (d_ap - d_an + margin).max(0.0)
}

/// Squared difference of log distance ratios:
/// `(log(D_ai / D_aj) - log(Dy_ai / Dy_aj))^2`, with feature distances
/// clamped below by `epsilon_d` before the logs.
pub fn log_ratio_loss(d_ai: f64, d_aj: f64, dy_ai: f64, dy_aj: f64, epsilon_d: f64) -> Result<f64> {
    if dy_ai <= 0.0 || dy_aj <= 0.0 {
        return Err(Error::NonPositiveLabelDistance {
            a: format!("{dy_ai}"),
            b: format!("{dy_aj}"),
        });
    }
    let ca = d_ai.max(epsilon_d);
    let cb = d_aj.max(epsilon_d);
    let r = (ca / cb).ln() - (dy_ai / dy_aj).ln();
    Ok(r * r)
}

/// Per-vector gradients of one quadruplet loss.
#[derive(Debug, Clone)]
pub struct QuadrupletGradients {
    pub anchor: Vec<f64>,
    pub positive: Vec<f64>,
    pub neg_i: Vec<f64>,
    pub neg_j: Vec<f64>,
}

/// The ordinal-quadruplet loss
/// `L = l_t(a, s, i) + l_t(a, s, j) + l_lr(a, i, j)`
/// and its exact gradients with respect to the four feature vectors.
/// The hinge subgradient at the kink is 0.
pub fn quadruplet_loss(
    features: &[FeatureVector],
    labels: &[ClassId],
    q: &Quadruplet,
    cfg: &LossConfig,
    space: &LabelSpace,
) -> Result<(f64, QuadrupletGradients)> {
    cfg.validate()?;
    check_quadruplet(labels, q)?;
    let fa = &features[q.anchor];
    let fs = &features[q.positive];
    let fi = &features[q.neg_i];
    let fj = &features[q.neg_j];
    let dim = fa.dim();

    let d_as = feature_distance(fa, fs)?;
    let d_ai = feature_distance(fa, fi)?;
    let d_aj = feature_distance(fa, fj)?;
    let dy_ai = space.label_distance(labels[q.anchor], labels[q.neg_i])?;
    let dy_aj = space.label_distance(labels[q.anchor], labels[q.neg_j])?;

    let lt_i = triplet_loss(d_as, d_ai, cfg.margin);
    let lt_j = triplet_loss(d_as, d_aj, cfg.margin);
    let l_lr = log_ratio_loss(d_ai, d_aj, dy_ai, dy_aj, cfg.epsilon_d)?;

    let mut g = QuadrupletGradients {
        anchor: vec![0.0; dim],
        positive: vec![0.0; dim],
        neg_i: vec![0.0; dim],
        neg_j: vec![0.0; dim],
    };

    // d D(x, y) / dx = 2 (x - y)
    let diff_as: Vec<f64> = fa.0.iter().zip(&fs.0).map(|(a, b)| a - b).collect();
    let diff_ai: Vec<f64> = fa.0.iter().zip(&fi.0).map(|(a, b)| a - b).collect();
    let diff_aj: Vec<f64> = fa.0.iter().zip(&fj.0).map(|(a, b)| a - b).collect();

    if lt_i > 0.0 {
        for k in 0..dim {
            g.anchor[k] += 2.0 * (diff_as[k] - diff_ai[k]);
            g.positive[k] += -2.0 * diff_as[k];
            g.neg_i[k] += 2.0 * diff_ai[k];
        }
    }
    if lt_j > 0.0 {
        for k in 0..dim {
            g.anchor[k] += 2.0 * (diff_as[k] - diff_aj[k]);
            g.positive[k] += -2.0 * diff_as[k];
            g.neg_j[k] += 2.0 * diff_aj[k];
        }
    }

    // log-ratio term; the clamp blocks the gradient when a distance sits
    // below the floor
    let ca = d_ai.max(cfg.epsilon_d);
    let cb = d_aj.max(cfg.epsilon_d);
    let r = (ca / cb).ln() - (dy_ai / dy_aj).ln();
    let dl_ddai = if d_ai > cfg.epsilon_d {
        2.0 * r / ca
    } else {
        0.0
    };
    let dl_ddaj = if d_aj > cfg.epsilon_d {
        -2.0 * r / cb
    } else {
        0.0
    };
    for k in 0..dim {
        g.anchor[k] += dl_ddai * 2.0 * diff_ai[k] + dl_ddaj * 2.0 * diff_aj[k];
        g.neg_i[k] += dl_ddai * -2.0 * diff_ai[k];
        g.neg_j[k] += dl_ddaj * -2.0 * diff_aj[k];
    }

    Ok((lt_i + lt_j + l_lr, g))
}

/// Triplet hinge loss and gradients for a degraded (or triplet-only) tuple.
pub fn triplet_loss_with_gradients(
    features: &[FeatureVector],
    t: &Triplet,
    cfg: &LossConfig,
) -> Result<(f64, QuadrupletGradients)> {
    let fa = &features[t.anchor];
    let fp = &features[t.positive];
    let fn_ = &features[t.negative];
    let dim = fa.dim();
    let d_ap = feature_distance(fa, fp)?;
    let d_an = feature_distance(fa, fn_)?;
    let loss = triplet_loss(d_ap, d_an, cfg.margin);
    let mut g = QuadrupletGradients {
        anchor: vec![0.0; dim],
        positive: vec![0.0; dim],
        neg_i: vec![0.0; dim],
        neg_j: vec![0.0; dim],
    };
    if loss > 0.0 {
        for k in 0..dim {
            let diff_ap = fa.0[k] - fp.0[k];
            let diff_an = fa.0[k] - fn_.0[k];
            g.anchor[k] = 2.0 * (diff_ap - diff_an);
            g.positive[k] = -2.0 * diff_ap;
            g.neg_i[k] = 2.0 * diff_an;
        }
    }
    Ok((loss, g))
}

fn check_quadruplet(labels: &[ClassId], q: &Quadruplet) -> Result<()> {
    let idx = [q.anchor, q.positive, q.neg_i, q.neg_j];
    for (n, &a) in idx.iter().enumerate() {
        if a >= labels.len() {
            return Err(Error::InvalidConfig(format!(
                "quadruplet index {a} out of batch"
            )));
        }
        for &b in idx.iter().skip(n + 1) {
            if a == b {
                return Err(Error::InvalidConfig(
                    "quadruplet indices must be distinct".into(),
                ));
            }
        }
    }
    if labels[q.anchor] != labels[q.positive]
        || labels[q.neg_i] == labels[q.anchor]
        || labels[q.neg_j] == labels[q.anchor]
        || labels[q.neg_i] == labels[q.neg_j]
    {
        return Err(Error::InvalidConfig(
            "quadruplet label constraints violated".into(),
        ));
    }
    Ok(())
}

/// Group batch positions by label, in first-appearance order of the labels.
fn group_by_label(labels: &[ClassId]) -> Vec<(ClassId, Vec<usize>)> {
    let mut groups: Vec<(ClassId, Vec<usize>)> = Vec::new();
    for (idx, &label) in labels.iter().enumerate() {
        match groups.iter_mut().find(|(l, _)| *l == label) {
            Some((_, members)) => members.push(idx),
            None => groups.push((label, vec![idx])),
        }
    }
    groups
}

/// Draw `count` distinct values from `0..total` and return them ascending,
/// or everything when `total <= count`.
fn sample_indices(total: usize, count: usize, rng: &mut impl Rng) -> Vec<usize> {
    if total <= count {
        return (0..total).collect();
    }
    let mut picked = rand::seq::index::sample(rng, total, count).into_vec();
    picked.sort_unstable();
    picked
}

/// Sample up to `max_per_anchor` quadruplets per anchor, uniformly without
/// replacement from the valid combinations. Anchors whose batch lacks two
/// distinct non-anchor labels contribute degraded triplets instead; a batch
/// with a single label yields nothing.
pub fn sample_quadruplets(
    labels: &[ClassId],
    rng: &mut impl Rng,
    max_per_anchor: usize,
) -> Result<SampledTuples> {
    if labels.is_empty() {
        return Err(Error::EmptyInput("quadruplet sampling batch".into()));
    }
    let groups = group_by_label(labels);
    let mut out = SampledTuples::default();
    if groups.len() == 1 {
        out.single_label_batch = true;
        return Ok(out);
    }

    for (anchor_pos, &anchor_label) in labels.iter().enumerate() {
        let positives: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|&(p, &l)| p != anchor_pos && l == anchor_label)
            .map(|(p, _)| p)
            .collect();
        if positives.is_empty() {
            continue;
        }
        let others: Vec<&(ClassId, Vec<usize>)> =
            groups.iter().filter(|(l, _)| *l != anchor_label).collect();

        if others.len() >= 2 {
            // unordered pairs of distinct non-anchor labels, bucketed
            let mut buckets: Vec<(usize, usize)> = Vec::new(); // (g1, g2) group indices
            let mut pair_total = 0usize;
            for g1 in 0..others.len() {
                for g2 in (g1 + 1)..others.len() {
                    buckets.push((g1, g2));
                    pair_total += others[g1].1.len() * others[g2].1.len();
                }
            }
            let total = positives.len() * pair_total;
            for flat in sample_indices(total, max_per_anchor, rng) {
                let positive = positives[flat / pair_total];
                let mut pair_idx = flat % pair_total;
                let mut chosen = None;
                for &(g1, g2) in &buckets {
                    let size = others[g1].1.len() * others[g2].1.len();
                    if pair_idx < size {
                        let i = others[g1].1[pair_idx / others[g2].1.len()];
                        let j = others[g2].1[pair_idx % others[g2].1.len()];
                        chosen = Some((i, j));
                        break;
                    }
                    pair_idx -= size;
                }
                let (neg_i, neg_j) = chosen.expect("flat index within pair_total");
                out.quadruplets.push(Quadruplet {
                    anchor: anchor_pos,
                    positive,
                    neg_i,
                    neg_j,
                });
            }
        } else {
            // only one other label in the batch: degraded triplets
            let negatives = &others[0].1;
            let total = positives.len() * negatives.len();
            for flat in sample_indices(total, max_per_anchor, rng) {
                out.degraded.push(Triplet {
                    anchor: anchor_pos,
                    positive: positives[flat / negatives.len()],
                    negative: negatives[flat % negatives.len()],
                });
            }
        }
    }
    Ok(out)
}

/// Sample up to `max_per_anchor` plain triplets per anchor (any non-anchor
/// label as negative), for triplet-only training.
pub fn sample_triplets(
    labels: &[ClassId],
    rng: &mut impl Rng,
    max_per_anchor: usize,
) -> Result<SampledTuples> {
    if labels.is_empty() {
        return Err(Error::EmptyInput("triplet sampling batch".into()));
    }
    let groups = group_by_label(labels);
    let mut out = SampledTuples::default();
    if groups.len() == 1 {
        out.single_label_batch = true;
        return Ok(out);
    }
    for (anchor_pos, &anchor_label) in labels.iter().enumerate() {
        let positives: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|&(p, &l)| p != anchor_pos && l == anchor_label)
            .map(|(p, _)| p)
            .collect();
        if positives.is_empty() {
            continue;
        }
        let negatives: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|&(_, &l)| l != anchor_label)
            .map(|(p, _)| p)
            .collect();
        let total = positives.len() * negatives.len();
        for flat in sample_indices(total, max_per_anchor, rng) {
            out.degraded.push(Triplet {
                anchor: anchor_pos,
                positive: positives[flat / negatives.len()],
                negative: negatives[flat % negatives.len()],
            });
        }
    }
    Ok(out)
}

/// Total loss of a sampled tuple set and the accumulated gradient on every
/// feature vector of the batch, in a fixed (quadruplets then degraded)
/// reduction order.
pub fn batch_feature_gradients(
    features: &[FeatureVector],
    labels: &[ClassId],
    tuples: &SampledTuples,
    cfg: &LossConfig,
    space: &LabelSpace,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let dim = features.first().map(|f| f.dim()).unwrap_or(0);
    let mut grads = vec![vec![0.0; dim]; features.len()];
    let mut total = 0.0;
    let add = |target: &mut Vec<f64>, source: &[f64]| {
        for (t, s) in target.iter_mut().zip(source) {
            *t += s;
        }
    };
    for q in &tuples.quadruplets {
        let (loss, g) = quadruplet_loss(features, labels, q, cfg, space)?;
        total += loss;
        add(&mut grads[q.anchor], &g.anchor);
        add(&mut grads[q.positive], &g.positive);
        add(&mut grads[q.neg_i], &g.neg_i);
        add(&mut grads[q.neg_j], &g.neg_j);
    }
    for t in &tuples.degraded {
        let (loss, g) = triplet_loss_with_gradients(features, t, cfg)?;
        total += loss;
        add(&mut grads[t.anchor], &g.anchor);
        add(&mut grads[t.positive], &g.positive);
        add(&mut grads[t.negative], &g.neg_i);
    }
    Ok((total, grads))
}
