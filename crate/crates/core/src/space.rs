//! Ordered label space: the class domain, its present/missing partition, and
//! the label distance function defining the ordinal geometry.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of a class within a [`LabelSpace`] domain.
///
/// Classes are stored sorted by ordinal, so the natural ordering of
/// `ClassId` values is the ordinal ordering of the classes themselves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ClassId(pub usize);

/// One class of the domain: an opaque name plus its integer ordinal position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassDef {
    pub name: String,
    pub ordinal: i64,
}

/// Distance function on ordinal labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LabelDistanceKind {
    /// `|i - j|`
    Absolute,
    /// `(i - j)^2`
    Squared,
    /// `|10^(i/10) - 10^(j/10)|`, for decibel-like label scales.
    ExpDecibel,
    /// Explicit dense table indexed by domain position; must be symmetric
    /// with zero diagonal and positive off-diagonal entries.
    Custom { table: Vec<Vec<f64>> },
}

/// The ordered class domain `S` with its partition into present classes `N`
/// and missing classes `M`, plus the label distance function.
///
/// Immutable after construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LabelSpaceRepr", into = "LabelSpaceRepr")]
pub struct LabelSpace {
    classes: Vec<ClassDef>,
    by_name: HashMap<String, usize>,
    present: Vec<ClassId>,
    missing: Vec<ClassId>,
    label_distance: LabelDistanceKind,
}

/// Serialized form of a [`LabelSpace`]; also the schema of space JSON files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelSpaceRepr {
    pub classes: Vec<ClassDef>,
    #[serde(default)]
    pub missing: Vec<String>,
    pub label_distance: LabelDistanceKind,
}

impl TryFrom<LabelSpaceRepr> for LabelSpace {
    type Error = Error;
    fn try_from(repr: LabelSpaceRepr) -> Result<Self> {
        let missing: Vec<&str> = repr.missing.iter().map(|s| s.as_str()).collect();
        LabelSpace::new(repr.classes, &missing, repr.label_distance)
    }
}

impl From<LabelSpace> for LabelSpaceRepr {
    fn from(space: LabelSpace) -> Self {
        LabelSpaceRepr {
            missing: space
                .missing
                .iter()
                .map(|&c| space.classes[c.0].name.clone())
                .collect(),
            classes: space.classes,
            label_distance: space.label_distance,
        }
    }
}

impl LabelSpace {
    /// Build a label space from the full domain (sorted by strictly
    /// increasing ordinal), the names of the classes missing from training,
    /// and the label distance function.
    pub fn new(
        classes: Vec<ClassDef>,
        missing_names: &[&str],
        label_distance: LabelDistanceKind,
    ) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::InvalidLabelSpace("domain is empty".into()));
        }
        for pair in classes.windows(2) {
            if pair[1].ordinal <= pair[0].ordinal {
                return Err(Error::InvalidLabelSpace(format!(
                    "ordinals must be strictly increasing: {} ({}) then {} ({})",
                    pair[0].name, pair[0].ordinal, pair[1].name, pair[1].ordinal
                )));
            }
        }
        let mut by_name = HashMap::with_capacity(classes.len());
        for (idx, class) in classes.iter().enumerate() {
            if by_name.insert(class.name.clone(), idx).is_some() {
                return Err(Error::InvalidLabelSpace(format!(
                    "duplicate class name {}",
                    class.name
                )));
            }
        }

        let mut is_missing = vec![false; classes.len()];
        for name in missing_names {
            let idx = *by_name
                .get(*name)
                .ok_or_else(|| Error::UnknownClass((*name).to_string()))?;
            is_missing[idx] = true;
        }
        let present: Vec<ClassId> = (0..classes.len())
            .filter(|&i| !is_missing[i])
            .map(ClassId)
            .collect();
        let missing: Vec<ClassId> = (0..classes.len())
            .filter(|&i| is_missing[i])
            .map(ClassId)
            .collect();
        if present.len() < 2 {
            return Err(Error::InvalidLabelSpace(format!(
                "at least 2 present classes required, got {}",
                present.len()
            )));
        }

        if let LabelDistanceKind::Custom { table } = &label_distance {
            validate_custom_table(table, classes.len())?;
        }

        Ok(LabelSpace {
            classes,
            by_name,
            present,
            missing,
            label_distance,
        })
    }

    /// Same domain and distance function, different missing set.
    pub fn with_missing(&self, missing: &[ClassId]) -> Result<Self> {
        let names: Vec<&str> = missing.iter().map(|&c| self.name(c)).collect();
        LabelSpace::new(self.classes.clone(), &names, self.label_distance.clone())
    }

    /// Same domain and partition, different label distance function.
    pub fn with_label_distance(&self, kind: LabelDistanceKind) -> Result<Self> {
        let names: Vec<&str> = self.missing.iter().map(|&c| self.name(c)).collect();
        LabelSpace::new(self.classes.clone(), &names, kind)
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    /// All classes in domain (ordinal) order.
    pub fn domain(&self) -> impl Iterator<Item = ClassId> + '_ {
        (0..self.classes.len()).map(ClassId)
    }

    pub fn present(&self) -> &[ClassId] {
        &self.present
    }

    pub fn missing(&self) -> &[ClassId] {
        &self.missing
    }

    pub fn is_present(&self, id: ClassId) -> bool {
        self.present.binary_search(&id).is_ok()
    }

    pub fn is_missing(&self, id: ClassId) -> bool {
        self.missing.binary_search(&id).is_ok()
    }

    pub fn name(&self, id: ClassId) -> &str {
        &self.classes[id.0].name
    }

    pub fn ordinal(&self, id: ClassId) -> i64 {
        self.classes[id.0].ordinal
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }

    pub fn label_distance_kind(&self) -> &LabelDistanceKind {
        &self.label_distance
    }

    /// Resolve a class name to its id.
    pub fn resolve(&self, name: &str) -> Result<ClassId> {
        self.by_name
            .get(name)
            .map(|&i| ClassId(i))
            .ok_or_else(|| Error::UnknownClass(name.to_string()))
    }

    /// Label distance `D_y(i, j)` between two classes of the domain.
    pub fn label_distance(&self, i: ClassId, j: ClassId) -> Result<f64> {
        if i.0 >= self.classes.len() {
            return Err(Error::UnknownClass(format!("class index {}", i.0)));
        }
        if j.0 >= self.classes.len() {
            return Err(Error::UnknownClass(format!("class index {}", j.0)));
        }
        Ok(self.label_distance_unchecked(i, j))
    }

    pub(crate) fn label_distance_unchecked(&self, i: ClassId, j: ClassId) -> f64 {
        let oi = self.classes[i.0].ordinal as f64;
        let oj = self.classes[j.0].ordinal as f64;
        match &self.label_distance {
            LabelDistanceKind::Absolute => (oi - oj).abs(),
            LabelDistanceKind::Squared => (oi - oj) * (oi - oj),
            LabelDistanceKind::ExpDecibel => (10f64.powf(oi / 10.0) - 10f64.powf(oj / 10.0)).abs(),
            LabelDistanceKind::Custom { table } => table[i.0][j.0],
        }
    }
}

#[allow(clippy::needless_range_loop)] // (i, j) indexing mirrors the matrix contract
fn validate_custom_table(table: &[Vec<f64>], n: usize) -> Result<()> {
    if table.len() != n || table.iter().any(|row| row.len() != n) {
        return Err(Error::InvalidLabelSpace(format!(
            "custom distance table must be {n}x{n}"
        )));
    }
    for i in 0..n {
        if table[i][i] != 0.0 {
            return Err(Error::InvalidLabelSpace(format!(
                "custom table diagonal must be zero (row {i})"
            )));
        }
        for j in 0..n {
            let v = table[i][j];
            if !v.is_finite() {
                return Err(Error::InvalidLabelSpace(format!(
                    "custom table entry ({i},{j}) is not finite"
                )));
            }
            if i != j && v <= 0.0 {
                return Err(Error::InvalidLabelSpace(format!(
                    "custom table entry ({i},{j}) must be positive"
                )));
            }
            if v != table[j][i] {
                return Err(Error::InvalidLabelSpace(format!(
                    "custom table must be symmetric (({i},{j}) != ({j},{i}))"
                )));
            }
        }
    }
    Ok(())
}

/// Convenience constructor for spaces with consecutive integer ordinals and
/// generated names `c<ordinal>`.
pub fn numbered_space(
    n_classes: usize,
    missing_ordinals: &[i64],
    kind: LabelDistanceKind,
) -> Result<LabelSpace> {
    let classes: Vec<ClassDef> = (1..=n_classes as i64)
        .map(|o| ClassDef {
            name: format!("c{o}"),
            ordinal: o,
        })
        .collect();
    let missing_names: Vec<String> = missing_ordinals.iter().map(|o| format!("c{o}")).collect();
    let missing_refs: Vec<&str> = missing_names.iter().map(|s| s.as_str()).collect();
    LabelSpace::new(classes, &missing_refs, kind)
}
