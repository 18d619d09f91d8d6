//! Domain types shared by every stage: class indices, boxes, probability
//! vectors, detections, ground truth and evaluation records.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `|sum - 1|` accepted by [`ProbVector::new`].
pub const SUM_TOLERANCE: f64 = 1e-6;

/// Tolerance on `|sum - 1|` within which [`ProbVector::renormalized`] rescales.
pub const RENORMALIZE_TOLERANCE: f64 = 1e-3;

/// Sums this close to one are already normalized to float precision and are
/// kept verbatim, so serialized vectors parse back bit-identically.
const EXACT_SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageId(pub u64);

impl fmt::Display for ImageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Index into a probability vector. Object classes occupy `0..K`, the
/// background class is `K`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassIndex(pub usize);

impl ClassIndex {
    pub fn background(num_classes: usize) -> Self {
        ClassIndex(num_classes)
    }

    pub fn is_background(self, num_classes: usize) -> bool {
        self.0 == num_classes
    }

    pub fn get(self) -> usize {
        self.0
    }
}

impl fmt::Display for ClassIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Axis-aligned box in normalized corner format.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BBox {
    /// Placeholder box attached to background labels and missing predictions.
    /// It never takes part in geometric computations.
    pub const ZERO: BBox = BBox {
        x1: 0.0,
        y1: 0.0,
        x2: 0.0,
        y2: 0.0,
    };

    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let coords = [x1, y1, x2, y2];
        if coords
            .iter()
            .any(|c| !c.is_finite() || !(0.0..=1.0).contains(c))
        {
            return Err(Error::MalformedInput(format!(
                "box coordinates {coords:?} outside [0, 1]"
            )));
        }
        if x2 < x1 || y2 < y1 {
            return Err(Error::MalformedInput(format!(
                "box corners {coords:?} are not ordered"
            )));
        }
        Ok(BBox { x1, y1, x2, y2 })
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }
    pub fn y1(&self) -> f64 {
        self.y1
    }
    pub fn x2(&self) -> f64 {
        self.x2
    }
    pub fn y2(&self) -> f64 {
        self.y2
    }

    pub fn corners(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }
}

/// Intersection over union. Zero when the union has zero area.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Point on the probability simplex over `K` object classes plus background.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    /// Strict constructor: entries in `[0, 1]`, sum within [`SUM_TOLERANCE`].
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_entries(&values)?;
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidProbability(format!("entries sum to {sum}")));
        }
        if values.iter().any(|&v| v > 1.0) {
            return Err(Error::InvalidProbability("entry above 1".into()));
        }
        Ok(ProbVector(values))
    }

    /// Accepts float-rounded vectors: a sum within [`RENORMALIZE_TOLERANCE`]
    /// of one is rescaled, anything further off is rejected.
    pub fn renormalized(values: Vec<f64>) -> Result<Self> {
        check_entries(&values)?;
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > RENORMALIZE_TOLERANCE {
            return Err(Error::InvalidProbability(format!("entries sum to {sum}")));
        }
        if (sum - 1.0).abs() <= EXACT_SUM_TOLERANCE {
            return Ok(ProbVector(values));
        }
        Ok(ProbVector(values.into_iter().map(|v| v / sum).collect()))
    }

    /// Rescales any non-negative vector with a positive sum onto the simplex.
    pub fn normalize(values: Vec<f64>) -> Result<Self> {
        check_entries(&values)?;
        let sum: f64 = values.iter().sum();
        if sum <= 0.0 || !sum.is_finite() {
            return Err(Error::InvalidProbability(format!(
                "cannot normalize vector with sum {sum}"
            )));
        }
        Ok(ProbVector(values.into_iter().map(|v| v / sum).collect()))
    }

    /// Max-subtracted softmax over arbitrary finite logits.
    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        if logits.len() < 2 {
            return Err(Error::InvalidProbability("need at least two logits".into()));
        }
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::InvalidProbability("non-finite logit".into()));
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        Ok(ProbVector(exps.into_iter().map(|e| e / sum).collect()))
    }

    pub fn one_hot(len: usize, index: usize) -> Self {
        assert!(
            index < len,
            "one-hot index {index} out of range for length {len}"
        );
        let mut values = vec![0.0; len];
        values[index] = 1.0;
        ProbVector(values)
    }

    /// The placeholder vector for missing predictions: all mass on background.
    pub fn background(num_classes: usize) -> Self {
        Self::one_hot(num_classes + 1, num_classes)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Number of object classes `K` (length minus the background entry).
    pub fn num_classes(&self) -> usize {
        self.0.len() - 1
    }

    pub fn get(&self, class: usize) -> f64 {
        self.0[class]
    }

    /// Index of the largest entry; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn max(&self) -> f64 {
        self.0[self.argmax()]
    }

    /// Largest entry among object classes only (background excluded).
    pub fn object_max(&self) -> f64 {
        self.0[..self.num_classes()]
            .iter()
            .copied()
            .fold(0.0, f64::max)
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn check_entries(values: &[f64]) -> Result<()> {
    if values.len() < 2 {
        return Err(Error::InvalidProbability(
            "vector needs at least one object class and background".into(),
        ));
    }
    if let Some(bad) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::InvalidProbability(format!("invalid entry {bad}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub image_id: ImageId,
    pub label: ClassIndex,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: ImageId,
    pub probs: ProbVector,
    pub bbox: BBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    /// A prediction paired with a ground-truth object (TP or FP).
    Matched,
    /// A prediction without a partner, labelled background (FP or TN).
    UnmatchedPrediction,
    /// A ground-truth object nobody predicted (FN).
    MissingGroundTruth,
}

/// One element `(y, b, p, b_pred)` of the evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    image_id: ImageId,
    kind: RecordKind,
    y: ClassIndex,
    b: BBox,
    probs: ProbVector,
    pred_box: BBox,
}

impl EvaluationRecord {
    pub fn matched(gt: &GroundTruth, det: &Detection) -> Self {
        EvaluationRecord {
            image_id: gt.image_id,
            kind: RecordKind::Matched,
            y: gt.label,
            b: gt.bbox,
            probs: det.probs.clone(),
            pred_box: det.bbox,
        }
    }

    pub fn unmatched_prediction(det: &Detection) -> Self {
        EvaluationRecord {
            image_id: det.image_id,
            kind: RecordKind::UnmatchedPrediction,
            y: ClassIndex::background(det.probs.num_classes()),
            b: BBox::ZERO,
            probs: det.probs.clone(),
            pred_box: det.bbox,
        }
    }

    pub fn missing_ground_truth(gt: &GroundTruth, num_classes: usize) -> Self {
        EvaluationRecord {
            image_id: gt.image_id,
            kind: RecordKind::MissingGroundTruth,
            y: gt.label,
            b: gt.bbox,
            probs: ProbVector::background(num_classes),
            pred_box: BBox::ZERO,
        }
    }

    /// Builds a record from its parts, enforcing the per-kind invariants.
    pub fn from_parts(
        image_id: ImageId,
        kind: RecordKind,
        y: ClassIndex,
        b: BBox,
        probs: ProbVector,
        pred_box: BBox,
    ) -> Result<Self> {
        let k = probs.num_classes();
        if y.0 > k {
            return Err(Error::InvalidConfig(format!(
                "label {y} exceeds background index {k}"
            )));
        }
        match kind {
            RecordKind::Matched if y.is_background(k) => {
                return Err(Error::InvalidConfig(
                    "matched record labelled background".into(),
                ))
            }
            RecordKind::UnmatchedPrediction if !y.is_background(k) || b != BBox::ZERO => {
                return Err(Error::InvalidConfig(
                    "unmatched prediction must carry the background label and zero box".into(),
                ))
            }
            RecordKind::MissingGroundTruth
                if probs != ProbVector::background(k) || pred_box != BBox::ZERO =>
            {
                return Err(Error::InvalidConfig(
                    "missing ground truth must carry the background vector and zero box".into(),
                ))
            }
            RecordKind::MissingGroundTruth if y.is_background(k) => {
                return Err(Error::InvalidConfig(
                    "missing ground truth labelled background".into(),
                ))
            }
            _ => {}
        }
        Ok(EvaluationRecord {
            image_id,
            kind,
            y,
            b,
            probs,
            pred_box,
        })
    }

    pub fn image_id(&self) -> ImageId {
        self.image_id
    }
    pub fn kind(&self) -> RecordKind {
        self.kind
    }
    pub fn label(&self) -> ClassIndex {
        self.y
    }
    pub fn gt_box(&self) -> &BBox {
        &self.b
    }
    pub fn probs(&self) -> &ProbVector {
        &self.probs
    }
    pub fn pred_box(&self) -> &BBox {
        &self.pred_box
    }

    /// Same record with its probability vector replaced. The kind invariants
    /// are the caller's responsibility for missing-ground-truth records.
    pub(crate) fn with_probs(&self, probs: ProbVector) -> Self {
        EvaluationRecord {
            probs,
            ..self.clone()
        }
    }
}

/// The union of per-image evaluation records, ordered by image then record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSet {
    num_classes: usize,
    records: Vec<EvaluationRecord>,
}

impl EvaluationSet {
    pub fn new(num_classes: usize, records: Vec<EvaluationRecord>) -> Result<Self> {
        if let Some(r) = records
            .iter()
            .find(|r| r.probs.num_classes() != num_classes)
        {
            return Err(Error::DimensionMismatch {
                expected: num_classes + 1,
                found: r.probs.len(),
            });
        }
        Ok(EvaluationSet {
            num_classes,
            records,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn records(&self) -> &[EvaluationRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn into_records(self) -> Vec<EvaluationRecord> {
        self.records
    }
}
