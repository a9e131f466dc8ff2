//! Mini-batch stochastic optimization of the encoder under the
//! ordinal-quadruplet or plain-triplet loss, plus a finite-difference
//! gradient check over the full loss -> features -> parameters chain.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{backward, forward, EmbeddingModel};
use crate::error::{Error, Result};
use crate::objective::{
    batch_feature_gradients, sample_quadruplets, sample_triplets, LossConfig, SampledTuples,
};
use crate::segment::{FeatureVector, Segment};
use crate::space::{ClassId, LabelSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    OrdinalQuadruplet,
    TripletOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam {
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    },
}

impl OptimizerKind {
    pub fn adam_default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub loss_kind: LossKind,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub loss_cfg: LossConfig,
    /// Tuples drawn per anchor per batch.
    pub max_per_anchor: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 256,
            learning_rate: 0.005,
            epochs: 50,
            loss_kind: LossKind::OrdinalQuadruplet,
            optimizer: OptimizerKind::adam_default(),
            seed: 0,
            loss_cfg: LossConfig::default(),
            max_per_anchor: 4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig("batch_size must be >= 2".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::InvalidConfig("learning_rate must be > 0".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.max_per_anchor == 0 {
            return Err(Error::InvalidConfig("max_per_anchor must be >= 1".into()));
        }
        self.loss_cfg.validate()
    }
}

/// One record per epoch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub quadruplets: u64,
    pub triplets: u64,
    pub degraded_batches: u64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
}

impl TrainReport {
    pub fn final_mean_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.mean_loss)
    }

    /// Line-oriented JSON, one record per epoch.
    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        for record in &self.epochs {
            serde_json::to_writer(&mut w, record)?;
            writeln!(w)?;
        }
        Ok(())
    }
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

fn apply_step(
    model: &mut EmbeddingModel,
    grad: &[f64],
    cfg: &TrainConfig,
    adam: &mut Option<AdamState>,
) {
    let lr = cfg.learning_rate;
    match cfg.optimizer {
        OptimizerKind::Sgd => {
            for (p, g) in model.parameters_mut().iter_mut().zip(grad) {
                *p -= lr * g;
            }
        }
        OptimizerKind::Adam {
            beta1,
            beta2,
            epsilon,
        } => {
            let state = adam.get_or_insert_with(|| AdamState {
                m: vec![0.0; grad.len()],
                v: vec![0.0; grad.len()],
                step: 0,
            });
            state.step += 1;
            let t = state.step as i32;
            let bc1 = 1.0 - beta1.powi(t);
            let bc2 = 1.0 - beta2.powi(t);
            for (k, (p, &g)) in model.parameters_mut().iter_mut().zip(grad).enumerate() {
                state.m[k] = beta1 * state.m[k] + (1.0 - beta1) * g;
                state.v[k] = beta2 * state.v[k] + (1.0 - beta2) * g * g;
                let m_hat = state.m[k] / bc1;
                let v_hat = state.v[k] / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
    }
}

fn labels_of(data: &[Segment], space: &LabelSpace) -> Result<Vec<ClassId>> {
    data.iter()
        .map(|seg| {
            let label = seg
                .label()
                .ok_or(Error::UnlabeledSegment(seg.source_index()))?;
            if space.is_missing(label) {
                return Err(Error::MissingClassInTraining(space.name(label).to_string()));
            }
            Ok(label)
        })
        .collect()
}

/// Class-stratified epoch order: shuffle within each present class, then
/// round-robin over classes so batches mix labels whenever possible.
fn stratified_order(labels: &[ClassId], space: &LabelSpace, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); space.len()];
    for (idx, &label) in labels.iter().enumerate() {
        per_class[label.0].push(idx);
    }
    for members in &mut per_class {
        members.shuffle(rng);
    }
    let longest = per_class.iter().map(|m| m.len()).max().unwrap_or(0);
    let mut order = Vec::with_capacity(labels.len());
    for round in 0..longest {
        for members in &per_class {
            if round < members.len() {
                order.push(members[round]);
            }
        }
    }
    order
}

fn sample_for(
    kind: LossKind,
    labels: &[ClassId],
    rng: &mut ChaCha8Rng,
    max_per_anchor: usize,
) -> Result<SampledTuples> {
    match kind {
        LossKind::OrdinalQuadruplet => sample_quadruplets(labels, rng, max_per_anchor),
        LossKind::TripletOnly => sample_triplets(labels, rng, max_per_anchor),
    }
}

/// Train the encoder. Deterministic given (seed, data, config); training
/// data must contain only present-class labels.
pub fn train(
    model: EmbeddingModel,
    data: &[Segment],
    cfg: &TrainConfig,
    space: &LabelSpace,
) -> Result<(EmbeddingModel, TrainReport)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyInput("training data".into()));
    }
    let labels = labels_of(data, space)?;

    let mut model = model;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam: Option<AdamState> = None;
    let mut report = TrainReport::default();

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let order = stratified_order(&labels, space, &mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_terms = 0u64;
        let mut quadruplets = 0u64;
        let mut triplets = 0u64;
        let mut degraded_batches = 0u64;

        for batch in order.chunks(cfg.batch_size) {
            let batch_labels: Vec<ClassId> = batch.iter().map(|&i| labels[i]).collect();
            let features: Vec<FeatureVector> = batch
                .iter()
                .map(|&i| forward(&model, &data[i]))
                .collect::<Result<_>>()?;

            let tuples = sample_for(cfg.loss_kind, &batch_labels, &mut rng, cfg.max_per_anchor)?;
            if tuples.is_degraded() {
                degraded_batches += 1;
            }
            let n_terms = tuples.tuple_count();
            if n_terms == 0 {
                continue;
            }
            quadruplets += tuples.quadruplets.len() as u64;
            triplets += tuples.degraded.len() as u64;

            let (batch_loss, feature_grads) =
                batch_feature_gradients(&features, &batch_labels, &tuples, &cfg.loss_cfg, space)?;
            epoch_loss += batch_loss;
            epoch_terms += n_terms as u64;

            // mean over tuples; accumulate parameter gradient in batch order
            let scale = 1.0 / n_terms as f64;
            let mut grad = vec![0.0; model.parameters().len()];
            for (pos, &data_idx) in batch.iter().enumerate() {
                if feature_grads[pos].iter().all(|&g| g == 0.0) {
                    continue;
                }
                let g = backward(&model, &data[data_idx], &feature_grads[pos])?;
                for (acc, v) in grad.iter_mut().zip(&g) {
                    *acc += scale * v;
                }
            }
            apply_step(&mut model, &grad, cfg, &mut adam);
        }

        let mean_loss = if epoch_terms == 0 {
            0.0
        } else {
            epoch_loss / epoch_terms as f64
        };
        if !mean_loss.is_finite() {
            return Err(Error::NonFinite(format!("epoch {epoch} mean loss")));
        }
        report.epochs.push(EpochRecord {
            epoch,
            mean_loss,
            quadruplets,
            triplets,
            degraded_batches,
            wall_ms: started.elapsed().as_millis() as u64,
        });
    }
    Ok((model, report))
}

/// Compare the analytic gradient of the sampled batch loss against central
/// finite differences on every parameter; returns the max relative error.
/// Restricted to small models (<= 2000 parameters).
pub fn grad_check(
    model: &EmbeddingModel,
    data: &[Segment],
    cfg: &TrainConfig,
    space: &LabelSpace,
) -> Result<f64> {
    cfg.validate()?;
    if model.parameters().len() > 2000 {
        return Err(Error::InvalidConfig(format!(
            "grad_check limited to 2000 parameters, model has {}",
            model.parameters().len()
        )));
    }
    if data.is_empty() {
        return Err(Error::EmptyInput("grad_check data".into()));
    }
    let labels = labels_of(data, space)?;

    // tuples are fixed once so the loss is a deterministic function of the
    // parameters
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let tuples = sample_for(cfg.loss_kind, &labels, &mut rng, cfg.max_per_anchor)?;
    if tuples.tuple_count() == 0 {
        return Err(Error::InsufficientData(
            "grad_check batch yielded no quadruplets or triplets".into(),
        ));
    }

    let batch_loss = |m: &EmbeddingModel| -> Result<f64> {
        let features: Vec<FeatureVector> = data
            .iter()
            .map(|seg| forward(m, seg))
            .collect::<Result<_>>()?;
        let (loss, _) = batch_feature_gradients(&features, &labels, &tuples, &cfg.loss_cfg, space)?;
        Ok(loss)
    };

    // analytic path: feature gradients, then encoder backward
    let features: Vec<FeatureVector> = data
        .iter()
        .map(|seg| forward(model, seg))
        .collect::<Result<_>>()?;
    let (_, feature_grads) =
        batch_feature_gradients(&features, &labels, &tuples, &cfg.loss_cfg, space)?;
    let mut analytic = vec![0.0; model.parameters().len()];
    for (seg, fg) in data.iter().zip(&feature_grads) {
        if fg.iter().all(|&g| g == 0.0) {
            continue;
        }
        let g = backward(model, seg, fg)?;
        for (acc, v) in analytic.iter_mut().zip(&g) {
            *acc += v;
        }
    }

    let h = 1e-5;
    let mut max_rel = 0.0f64;
    for (k, &a) in analytic.iter().enumerate() {
        let mut plus = model.clone();
        plus.parameters_mut()[k] += h;
        let mut minus = model.clone();
        minus.parameters_mut()[k] -= h;
        let numeric = (batch_loss(&plus)? - batch_loss(&minus)?) / (2.0 * h);
        let rel = (a - numeric).abs() / f64::max(1e-6, f64::max(a.abs(), numeric.abs()));
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{init_model, EncoderConfig, EncoderKind};
    use crate::retrieval::build_store;
    use crate::space::{numbered_space, LabelDistanceKind};
    use crate::stats::spearman_rho;
    use rand::Rng;

    fn synthetic_blobs(
        space: &LabelSpace,
        per_class: usize,
        window: usize,
        channels: usize,
        seed: u64,
    ) -> Vec<Segment> {
        // class c centered at ordinal * 1.0 along an all-ones direction
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        let mut source = 0usize;
        for class in space.domain() {
            let center = space.ordinal(class) as f64;
            for _ in 0..per_class {
                let values: Vec<f64> = (0..window * channels)
                    .map(|_| center + rng.random_range(-0.25..0.25))
                    .collect();
                out.push(Segment::new(values, window, channels, Some(class), source).unwrap());
                source += 1;
            }
        }
        out
    }

    fn small_encoder(
        kind: EncoderKind,
        channels: usize,
        window: usize,
        seed: u64,
    ) -> EncoderConfig {
        EncoderConfig {
            kind,
            n_channels: channels,
            hidden_dim: 8,
            embed_dim: 4,
            window_length: window,
            seed,
        }
    }

    fn quick_train_cfg(loss_kind: LossKind, epochs: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: 16,
            learning_rate: 0.01,
            epochs,
            loss_kind,
            optimizer: OptimizerKind::adam_default(),
            seed,
            loss_cfg: LossConfig::default(),
            max_per_anchor: 3,
        }
    }

    #[test]
    fn triplet_training_decreases_loss_on_separable_data() {
        let space = numbered_space(2, &[], LabelDistanceKind::Absolute).unwrap();
        let data = synthetic_blobs(&space, 24, 4, 2, 5);
        let enc = small_encoder(EncoderKind::MeanPoolMlp, 2, 4, 1);
        let model = init_model(&enc).unwrap();
        let cfg = quick_train_cfg(LossKind::TripletOnly, 50, 9);
        let (_, report) = train(model, &data, &cfg, &space).unwrap();
        let first = report.epochs.first().unwrap().mean_loss;
        let last = report.epochs.last().unwrap().mean_loss;
        assert!(last < first, "expected descent: first {first}, last {last}");
        assert!(report.epochs.iter().all(|e| e.mean_loss.is_finite()));
    }

    #[test]
    fn training_is_deterministic() {
        let space = numbered_space(3, &[], LabelDistanceKind::Absolute).unwrap();
        let data = synthetic_blobs(&space, 10, 3, 2, 8);
        let enc = small_encoder(EncoderKind::MeanPoolMlp, 2, 3, 2);
        let cfg = quick_train_cfg(LossKind::OrdinalQuadruplet, 5, 21);
        let (m1, r1) = train(init_model(&enc).unwrap(), &data, &cfg, &space).unwrap();
        let (m2, r2) = train(init_model(&enc).unwrap(), &data, &cfg, &space).unwrap();
        assert_eq!(m1.parameters(), m2.parameters());
        assert_eq!(
            r1.epochs.iter().map(|e| e.mean_loss).collect::<Vec<_>>(),
            r2.epochs.iter().map(|e| e.mean_loss).collect::<Vec<_>>()
        );
    }

    #[test]
    fn ordinal_quadruplet_training_orders_centroids() {
        let space = numbered_space(5, &[], LabelDistanceKind::Absolute).unwrap();
        let data = synthetic_blobs(&space, 30, 4, 2, 12);
        let enc = EncoderConfig {
            kind: EncoderKind::MeanPoolMlp,
            n_channels: 2,
            hidden_dim: 16,
            embed_dim: 8,
            window_length: 4,
            seed: 3,
        };
        let cfg = TrainConfig {
            batch_size: 32,
            learning_rate: 0.01,
            epochs: 60,
            seed: 33,
            ..quick_train_cfg(LossKind::OrdinalQuadruplet, 60, 33)
        };
        let (model, _) = train(init_model(&enc).unwrap(), &data, &cfg, &space).unwrap();
        let store = build_store(&model, &data, &space).unwrap();

        let mut feat = Vec::new();
        let mut label = Vec::new();
        let present = space.present();
        for a in 0..present.len() {
            for b in (a + 1)..present.len() {
                let ca = store.centroid(present[a]).unwrap();
                let cb = store.centroid(present[b]).unwrap();
                feat.push(crate::segment::squared_distance(ca, cb));
                label.push(space.label_distance(present[a], present[b]).unwrap());
            }
        }
        let rho = spearman_rho(&feat, &label).unwrap();
        assert!(
            rho >= 0.9,
            "centroid/label distance correlation too low: {rho}"
        );
    }

    #[test]
    fn training_rejects_missing_class_labels() {
        let space = numbered_space(3, &[2], LabelDistanceKind::Absolute).unwrap();
        let full = numbered_space(3, &[], LabelDistanceKind::Absolute).unwrap();
        let data = synthetic_blobs(&full, 4, 3, 1, 3);
        let enc = small_encoder(EncoderKind::MeanPoolMlp, 1, 3, 0);
        let cfg = quick_train_cfg(LossKind::TripletOnly, 1, 0);
        let err = train(init_model(&enc).unwrap(), &data, &cfg, &space).unwrap_err();
        assert!(matches!(err, Error::MissingClassInTraining(_)));
    }

    #[test]
    fn training_rejects_unlabeled_segments() {
        let space = numbered_space(3, &[], LabelDistanceKind::Absolute).unwrap();
        let data = vec![Segment::new(vec![0.0; 3], 3, 1, None, 0).unwrap()];
        let enc = small_encoder(EncoderKind::MeanPoolMlp, 1, 3, 0);
        let cfg = quick_train_cfg(LossKind::TripletOnly, 1, 0);
        assert!(train(init_model(&enc).unwrap(), &data, &cfg, &space).is_err());
    }

    #[test]
    fn no_tuples_means_no_parameter_updates() {
        // single-class data: every batch is single-label, the sampler yields
        // nothing, and the optimizer never steps
        let space = numbered_space(3, &[], LabelDistanceKind::Absolute).unwrap();
        let data: Vec<Segment> = synthetic_blobs(&space, 12, 3, 1, 6)
            .into_iter()
            .filter(|s| s.label() == Some(ClassId(0)))
            .collect();
        let enc = small_encoder(EncoderKind::MeanPoolMlp, 1, 3, 4);
        let initial = init_model(&enc).unwrap();
        let cfg = quick_train_cfg(LossKind::OrdinalQuadruplet, 3, 5);
        let (trained, report) = train(initial.clone(), &data, &cfg, &space).unwrap();
        assert_eq!(trained.parameters(), initial.parameters());
        assert!(report.epochs.iter().all(|e| e.mean_loss == 0.0));
        assert!(report.epochs.iter().all(|e| e.degraded_batches > 0));
    }

    #[test]
    fn grad_check_mlp_quadruplet_batch() {
        let space = numbered_space(4, &[], LabelDistanceKind::Absolute).unwrap();
        let data = synthetic_blobs(&space, 2, 3, 2, 19);
        let enc = small_encoder(EncoderKind::MeanPoolMlp, 2, 3, 7);
        let model = init_model(&enc).unwrap();
        let cfg = quick_train_cfg(LossKind::OrdinalQuadruplet, 1, 40);
        let err = grad_check(&model, &data, &cfg, &space).unwrap();
        assert!(err < 1e-4, "max rel err {err}");
    }

    #[test]
    fn grad_check_birnn_short_window() {
        let space = numbered_space(4, &[], LabelDistanceKind::Absolute).unwrap();
        let data = synthetic_blobs(&space, 2, 3, 2, 23);
        let enc = EncoderConfig {
            kind: EncoderKind::BiRecurrent,
            n_channels: 2,
            hidden_dim: 4,
            embed_dim: 3,
            window_length: 3,
            seed: 8,
        };
        let model = init_model(&enc).unwrap();
        let cfg = quick_train_cfg(LossKind::OrdinalQuadruplet, 1, 41);
        let err = grad_check(&model, &data, &cfg, &space).unwrap();
        assert!(err < 1e-4, "max rel err {err}");
    }

    #[test]
    fn grad_check_rejects_large_models() {
        let space = numbered_space(3, &[], LabelDistanceKind::Absolute).unwrap();
        let data = synthetic_blobs(&space, 2, 4, 4, 2);
        let enc = EncoderConfig {
            kind: EncoderKind::BiRecurrent,
            n_channels: 4,
            hidden_dim: 40,
            embed_dim: 16,
            window_length: 4,
            seed: 0,
        };
        let model = init_model(&enc).unwrap();
        let cfg = quick_train_cfg(LossKind::OrdinalQuadruplet, 1, 0);
        assert!(grad_check(&model, &data, &cfg, &space).is_err());
    }

    #[test]
    fn report_jsonl_has_one_line_per_epoch() {
        let space = numbered_space(2, &[], LabelDistanceKind::Absolute).unwrap();
        let data = synthetic_blobs(&space, 6, 3, 1, 4);
        let enc = small_encoder(EncoderKind::MeanPoolMlp, 1, 3, 5);
        let cfg = quick_train_cfg(LossKind::TripletOnly, 3, 2);
        let (_, report) = train(init_model(&enc).unwrap(), &data, &cfg, &space).unwrap();
        let mut buf = Vec::new();
        report.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        for line in text.lines() {
            let record: EpochRecord = serde_json::from_str(line).unwrap();
            assert!(record.mean_loss.is_finite());
        }
    }
}
