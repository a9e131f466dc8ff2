//! Post-training inference: the embedding store, k-nn, rank-based
//! classification with missing classes, the interpolation baseline, and
//! historical window correction.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::encoder::{forward, EmbeddingModel};
use crate::error::{Error, Result};
use crate::segment::{squared_distance, FeatureVector, Segment};
use crate::space::{ClassId, LabelSpace};
use crate::stats::{missing_class_test_with_threshold, Decision, RankStatKind, TestConfig};

/// Training embeddings grouped by present class, with per-class centroids
/// (arithmetic means, stored un-renormalized) and the populations of
/// member-to-centroid distances used by the hypothesis test.
#[derive(Debug, Clone)]
pub struct EmbeddingStore {
    classes: Vec<ClassId>,
    members: Vec<Vec<FeatureVector>>,
    centroids: Vec<Vec<f64>>,
    populations: Vec<Vec<f64>>,
    embed_dim: usize,
}

impl EmbeddingStore {
    /// Build a store directly from precomputed embeddings grouped by class.
    /// Every group must be nonempty and share one dimension.
    pub fn from_features(groups: Vec<(ClassId, Vec<FeatureVector>)>) -> Result<Self> {
        let embed_dim = groups
            .first()
            .and_then(|(_, m)| m.first())
            .map(|f| f.dim())
            .ok_or_else(|| Error::EmptyInput("embedding store groups".into()))?;
        let classes: Vec<ClassId> = groups.iter().map(|(c, _)| *c).collect();
        let members: Vec<Vec<FeatureVector>> = groups.into_iter().map(|(_, m)| m).collect();
        for group in &members {
            if group.is_empty() {
                return Err(Error::EmptyInput("class with no members".into()));
            }
            for f in group {
                if f.dim() != embed_dim {
                    return Err(Error::DimensionMismatch {
                        expected: embed_dim,
                        got: f.dim(),
                    });
                }
            }
        }
        let centroids: Vec<Vec<f64>> = members
            .iter()
            .map(|group| {
                let mut mean = vec![0.0; embed_dim];
                for f in group {
                    for (m, v) in mean.iter_mut().zip(f.as_slice()) {
                        *m += v;
                    }
                }
                for m in &mut mean {
                    *m /= group.len() as f64;
                }
                mean
            })
            .collect();
        let populations: Vec<Vec<f64>> = members
            .iter()
            .zip(&centroids)
            .map(|(group, centroid)| {
                group
                    .iter()
                    .map(|f| squared_distance(f.as_slice(), centroid))
                    .collect()
            })
            .collect();
        Ok(EmbeddingStore {
            classes,
            members,
            centroids,
            populations,
            embed_dim,
        })
    }

    pub fn classes(&self) -> &[ClassId] {
        &self.classes
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    fn slot(&self, class: ClassId) -> Option<usize> {
        self.classes.iter().position(|&c| c == class)
    }

    pub fn centroid(&self, class: ClassId) -> Option<&[f64]> {
        self.slot(class).map(|s| self.centroids[s].as_slice())
    }

    pub fn members(&self, class: ClassId) -> Option<&[FeatureVector]> {
        self.slot(class).map(|s| self.members[s].as_slice())
    }

    /// Distances of class members to their own centroid.
    pub fn population(&self, class: ClassId) -> Option<&[f64]> {
        self.slot(class).map(|s| self.populations[s].as_slice())
    }
}

/// Embed every training segment, group by class, compute centroids and
/// distance populations. Every present class must have at least one member.
pub fn build_store(
    model: &EmbeddingModel,
    data: &[Segment],
    space: &LabelSpace,
) -> Result<EmbeddingStore> {
    let classes: Vec<ClassId> = space.present().to_vec();
    let mut members: Vec<Vec<FeatureVector>> = vec![Vec::new(); classes.len()];

    for seg in data {
        let label = seg
            .label()
            .ok_or(Error::UnlabeledSegment(seg.source_index()))?;
        if space.is_missing(label) {
            return Err(Error::MissingClassInTraining(space.name(label).to_string()));
        }
        let slot = classes
            .iter()
            .position(|&c| c == label)
            .expect("present class");
        members[slot].push(forward(model, seg)?);
    }
    for (slot, group) in members.iter().enumerate() {
        if group.is_empty() {
            return Err(Error::InsufficientData(format!(
                "present class {} has no training members",
                space.name(classes[slot])
            )));
        }
    }
    EmbeddingStore::from_features(classes.into_iter().zip(members).collect())
}

/// k-nearest-neighbor prediction. `k = 1` (the default used by `classify`)
/// is nearest-centroid; `k > 1` is a majority vote over the k nearest
/// training embeddings, ties broken by smaller mean distance, then lower
/// ordinal.
pub fn knn_predict(store: &EmbeddingStore, f_te: &FeatureVector, k: usize) -> Result<ClassId> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be >= 1".into()));
    }
    if store.classes.is_empty() {
        return Err(Error::EmptyInput("embedding store".into()));
    }
    if f_te.dim() != store.embed_dim {
        return Err(Error::DimensionMismatch {
            expected: store.embed_dim,
            got: f_te.dim(),
        });
    }
    if k == 1 {
        let mut best = store.classes[0];
        let mut best_dist = f64::INFINITY;
        for (slot, centroid) in store.centroids.iter().enumerate() {
            let d = squared_distance(f_te.as_slice(), centroid);
            // strict less keeps the lower ordinal on ties
            if d < best_dist {
                best_dist = d;
                best = store.classes[slot];
            }
        }
        return Ok(best);
    }

    let mut all: Vec<(f64, ClassId)> = Vec::new();
    for (slot, group) in store.members.iter().enumerate() {
        for f in group {
            all.push((
                squared_distance(f_te.as_slice(), f.as_slice()),
                store.classes[slot],
            ));
        }
    }
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let k = k.min(all.len());
    let nearest = &all[..k];

    let mut votes: Vec<(ClassId, usize, f64)> = Vec::new(); // class, count, dist sum
    for &(d, c) in nearest {
        match votes.iter_mut().find(|(vc, _, _)| *vc == c) {
            Some((_, count, sum)) => {
                *count += 1;
                *sum += d;
            }
            None => votes.push((c, 1, d)),
        }
    }
    let top_count = votes.iter().map(|&(_, c, _)| c).max().unwrap();
    let mut tied: Vec<(ClassId, f64)> = votes
        .iter()
        .filter(|&&(_, c, _)| c == top_count)
        .map(|&(class, count, sum)| (class, sum / count as f64))
        .collect();
    tied.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    Ok(tied[0].0)
}

/// Label distance rows: `rows[s][n] = D_y(s, n)` for every domain class `s`
/// against the present classes `n`.
#[derive(Debug, Clone)]
pub struct LabelRankMatrix {
    rows: Vec<Vec<f64>>,
    present: Vec<ClassId>,
}

impl LabelRankMatrix {
    pub fn new(space: &LabelSpace) -> Result<Self> {
        let present = space.present().to_vec();
        let rows = space
            .domain()
            .map(|s| {
                present
                    .iter()
                    .map(|&n| space.label_distance(s, n))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(LabelRankMatrix { rows, present })
    }

    pub fn row(&self, s: ClassId) -> &[f64] {
        &self.rows[s.0]
    }

    pub fn present(&self) -> &[ClassId] {
        &self.present
    }

    /// Mean label distance from `s` to the present classes; the first
    /// tie-break key of the top-2 selection.
    pub fn mean_distance(&self, s: ClassId) -> f64 {
        let row = &self.rows[s.0];
        row.iter().sum::<f64>() / row.len() as f64
    }
}

/// Which branch of the classification algorithm produced the label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Knn,
    BothMissing,
    Test,
}

/// Hypothesis-test record inside a trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestRecord {
    pub present_candidate: ClassId,
    pub missing_candidate: ClassId,
    pub d_te: f64,
    pub threshold: f64,
    pub decision: Decision,
}

/// Per-sample record of the classification: distances, scores, the chosen
/// branch, the test decision if any, and the final label.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionTrace {
    pub source_index: usize,
    /// Feature distances to present-class centroids, in present order.
    pub feature_distances: Vec<f64>,
    /// Rank statistic per domain class, in domain order.
    pub scores: Vec<f64>,
    pub top2: (ClassId, ClassId),
    pub top2_tie: bool,
    /// All feature distances were identical; fell back to k-nn.
    pub degenerate_distances: bool,
    pub branch: Branch,
    pub test: Option<TestRecord>,
    pub final_label: ClassId,
}

/// Select the two highest-scoring classes. Ties break by smaller mean label
/// distance to the present classes, then lower ordinal.
fn top_two(scores: &[f64], matrix: &LabelRankMatrix) -> (ClassId, ClassId, bool) {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then(
                matrix
                    .mean_distance(ClassId(a))
                    .total_cmp(&matrix.mean_distance(ClassId(b))),
            )
            .then(a.cmp(&b))
    });
    let s1 = order[0];
    let s2 = order[1];
    let tie = scores[s1] == scores[s2] || order.get(2).is_some_and(|&s3| scores[s2] == scores[s3]);
    (ClassId(s1), ClassId(s2), tie)
}

/// Rank-based ordinal classification with missing classes.
///
/// Computes the feature-distance vector to present centroids, scores every
/// domain class by rank correlation against its label-distance row, takes
/// the top two, and branches: both present -> k-nn; both missing -> the
/// higher-scoring one; mixed -> the hypothesis test against the present
/// candidate's distance population.
pub fn classify(
    store: &EmbeddingStore,
    matrix: &LabelRankMatrix,
    f_te: &FeatureVector,
    space: &LabelSpace,
    stat: RankStatKind,
    test_cfg: &TestConfig,
) -> Result<PredictionTrace> {
    classify_indexed(store, matrix, f_te, space, stat, test_cfg, 0)
}

/// `classify` with an explicit source index recorded in the trace.
pub fn classify_indexed(
    store: &EmbeddingStore,
    matrix: &LabelRankMatrix,
    f_te: &FeatureVector,
    space: &LabelSpace,
    stat: RankStatKind,
    test_cfg: &TestConfig,
    source_index: usize,
) -> Result<PredictionTrace> {
    test_cfg.validate()?;
    let present = space.present();
    if present.len() < 2 {
        return Err(Error::InvalidLabelSpace(
            "classification needs at least 2 present classes".into(),
        ));
    }
    if matrix.present() != present {
        return Err(Error::InvalidConfig(
            "label rank matrix does not match the space's present set".into(),
        ));
    }

    let feature_distances: Vec<f64> = present
        .iter()
        .map(|&n| {
            store
                .centroid(n)
                .map(|c| squared_distance(f_te.as_slice(), c))
                .ok_or_else(|| Error::UnknownClass(space.name(n).to_string()))
        })
        .collect::<Result<_>>()?;

    // degenerate distance vector: rank statistics carry no information
    let degenerate = feature_distances.windows(2).all(|w| w[0] == w[1]);
    if degenerate {
        let label = knn_predict(store, f_te, 1)?;
        return Ok(PredictionTrace {
            source_index,
            feature_distances,
            scores: vec![0.0; space.len()],
            top2: (label, label),
            top2_tie: false,
            degenerate_distances: true,
            branch: Branch::Knn,
            test: None,
            final_label: label,
        });
    }

    let scores: Vec<f64> = space
        .domain()
        .map(|s| stat.compute(&feature_distances, matrix.row(s)))
        .collect::<Result<_>>()?;

    let (s1, s2, top2_tie) = top_two(&scores, matrix);

    let (branch, test, final_label) = match (space.is_present(s1), space.is_present(s2)) {
        (true, true) => (Branch::Knn, None, knn_predict(store, f_te, 1)?),
        (false, false) => (Branch::BothMissing, None, s1),
        (s1_present, _) => {
            let (present_candidate, missing_candidate) =
                if s1_present { (s1, s2) } else { (s2, s1) };
            let d_te = feature_distances[present
                .iter()
                .position(|&n| n == present_candidate)
                .expect("present")];
            let population = store.population(present_candidate).expect("present class");
            let (decision, threshold) =
                missing_class_test_with_threshold(d_te, population, test_cfg)?;
            let label = match decision {
                Decision::RejectToMissing => missing_candidate,
                Decision::RetainNonMissing => present_candidate,
            };
            let record = TestRecord {
                present_candidate,
                missing_candidate,
                d_te,
                threshold,
                decision,
            };
            (Branch::Test, Some(record), label)
        }
    };

    Ok(PredictionTrace {
        source_index,
        feature_distances,
        scores,
        top2: (s1, s2),
        top2_tie,
        degenerate_distances: false,
        branch,
        test,
        final_label,
    })
}

/// Centroids for every domain class: present classes keep their store
/// centroid, missing classes get the gap-weighted combination of the nearest
/// present neighbors below and above,
/// `(D_y(m,a) * centroid_b + D_y(m,b) * centroid_a) / (D_y(m,b) + D_y(m,a))`,
/// and boundary missing classes are linearly extrapolated from the two
/// nearest present classes on the existing side.
pub fn interpolate_missing(store: &EmbeddingStore, space: &LabelSpace) -> Result<Vec<Vec<f64>>> {
    let present = space.present();
    if present.len() < 2 {
        return Err(Error::InvalidLabelSpace(
            "interpolation needs at least 2 present classes".into(),
        ));
    }
    let dim = store.embed_dim();
    let mut centroids: Vec<Vec<f64>> = vec![Vec::new(); space.len()];
    for &n in present {
        centroids[n.0] = store
            .centroid(n)
            .ok_or_else(|| Error::UnknownClass(space.name(n).to_string()))?
            .to_vec();
    }

    for &m in space.missing() {
        let below = present.iter().rev().find(|&&n| n < m).copied();
        let above = present.iter().find(|&&n| n > m).copied();
        let combined: Vec<f64> = match (below, above) {
            (Some(b), Some(a)) => {
                let w_b = space.label_distance(m, a)?; // weight of the lower neighbor
                let w_a = space.label_distance(m, b)?;
                let cb = &centroids[b.0];
                let ca = &centroids[a.0];
                (0..dim)
                    .map(|k| (w_b * cb[k] + w_a * ca[k]) / (w_b + w_a))
                    .collect()
            }
            // boundary: extrapolate from the two nearest present classes on
            // the existing side, linear in label distance
            (None, Some(_)) => {
                let p1 = present[0];
                let p2 = present[1];
                let t = space.label_distance(m, p1)? / space.label_distance(p1, p2)?;
                let c1 = &centroids[p1.0];
                let c2 = &centroids[p2.0];
                (0..dim).map(|k| c1[k] + t * (c1[k] - c2[k])).collect()
            }
            (Some(_), None) => {
                let p1 = present[present.len() - 1];
                let p2 = present[present.len() - 2];
                let t = space.label_distance(m, p1)? / space.label_distance(p1, p2)?;
                let c1 = &centroids[p1.0];
                let c2 = &centroids[p2.0];
                (0..dim).map(|k| c1[k] + t * (c1[k] - c2[k])).collect()
            }
            (None, None) => unreachable!("present classes exist on at least one side"),
        };
        centroids[m.0] = combined;
    }
    Ok(centroids)
}

/// Nearest-centroid prediction over the augmented (interpolated) centroid
/// set covering all domain classes. Ties go to the lower ordinal.
pub fn baseline_predict(augmented_centroids: &[Vec<f64>], f_te: &FeatureVector) -> Result<ClassId> {
    if augmented_centroids.is_empty() {
        return Err(Error::EmptyInput("augmented centroids".into()));
    }
    let mut best = 0usize;
    let mut best_dist = f64::INFINITY;
    for (idx, centroid) in augmented_centroids.iter().enumerate() {
        if centroid.len() != f_te.dim() {
            return Err(Error::DimensionMismatch {
                expected: f_te.dim(),
                got: centroid.len(),
            });
        }
        let d = squared_distance(f_te.as_slice(), centroid);
        if d < best_dist {
            best_dist = d;
            best = idx;
        }
    }
    Ok(ClassId(best))
}

/// Majority-rule correction over consecutive non-overlapping windows of
/// size `w` (the last window may be shorter); `w = 0` is the identity.
/// Modal ties go to the previous corrected window's label when it is among
/// the tied classes, else to the lowest ordinal.
pub fn window_correct(predictions: &[ClassId], w: usize) -> Vec<ClassId> {
    if w == 0 {
        return predictions.to_vec();
    }
    let mut out = Vec::with_capacity(predictions.len());
    let mut previous: Option<ClassId> = None;
    for window in predictions.chunks(w) {
        let mut counts: Vec<(ClassId, usize)> = Vec::new();
        for &p in window {
            match counts.iter_mut().find(|(c, _)| *c == p) {
                Some((_, n)) => *n += 1,
                None => counts.push((p, 1)),
            }
        }
        let top = counts.iter().map(|&(_, n)| n).max().unwrap();
        let mut tied: Vec<ClassId> = counts
            .iter()
            .filter(|&&(_, n)| n == top)
            .map(|&(c, _)| c)
            .collect();
        tied.sort();
        let modal = match previous {
            Some(prev) if tied.contains(&prev) => prev,
            _ => tied[0],
        };
        out.extend(std::iter::repeat_n(modal, window.len()));
        previous = Some(modal);
    }
    out
}

/// Serializable per-sample record with class names resolved, for the
/// line-oriented JSON trace export.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRecord {
    pub source_index: usize,
    pub feature_distances: Vec<f64>,
    pub scores: Vec<f64>,
    pub top2: (String, String),
    pub top2_tie: bool,
    pub degenerate_distances: bool,
    pub branch: Branch,
    pub test: Option<TestExport>,
    pub final_label: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestExport {
    pub present_candidate: String,
    pub missing_candidate: String,
    pub d_te: f64,
    pub threshold: f64,
    pub decision: Decision,
}

impl TraceRecord {
    pub fn from_trace(trace: &PredictionTrace, space: &LabelSpace) -> Self {
        TraceRecord {
            source_index: trace.source_index,
            feature_distances: trace.feature_distances.clone(),
            scores: trace.scores.clone(),
            top2: (
                space.name(trace.top2.0).to_string(),
                space.name(trace.top2.1).to_string(),
            ),
            top2_tie: trace.top2_tie,
            degenerate_distances: trace.degenerate_distances,
            branch: trace.branch,
            test: trace.test.map(|t| TestExport {
                present_candidate: space.name(t.present_candidate).to_string(),
                missing_candidate: space.name(t.missing_candidate).to_string(),
                d_te: t.d_te,
                threshold: t.threshold,
                decision: t.decision,
            }),
            final_label: space.name(trace.final_label).to_string(),
        }
    }
}

/// Write traces as line-oriented JSON.
pub fn write_traces_jsonl(
    traces: &[PredictionTrace],
    space: &LabelSpace,
    mut w: impl Write,
) -> Result<()> {
    for trace in traces {
        serde_json::to_writer(&mut w, &TraceRecord::from_trace(trace, space))?;
        writeln!(w)?;
    }
    Ok(())
}
