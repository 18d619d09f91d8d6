//! Scores computed over an evaluation set: proper scoring rules (NLL, Brier),
//! top-label and marginal calibration curves and errors, their detection
//! variants, entropy histograms and AP at IoU 0.5.
//!
//! Every accumulation runs over the records sorted into a canonical order and
//! folded in fixed-size chunks, so results are bit-identical under any
//! reordering of the input and any thread count.
//!
//! Binning uses `M` equal-width bins: the first is `[0, 1/M]`, bin `m > 0` is
//! `(m/M, (m+1)/M]`.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Dataset, PredictionDump};
use crate::par;
use crate::types::{argmax, iou, EvaluationRecord, EvaluationSet, ImageId, ProbVector, RecordKind};

/// Floor applied to probabilities before taking logarithms.
pub const LOG_EPSILON: f64 = 1e-12;

/// IoU a detection needs to count as a true positive in [`ap50`].
pub const AP_IOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinningConfig {
    pub num_bins: usize,
}

impl Default for BinningConfig {
    fn default() -> Self {
        BinningConfig { num_bins: 10 }
    }
}

impl BinningConfig {
    pub fn new(num_bins: usize) -> Result<Self> {
        if num_bins == 0 {
            return Err(Error::InvalidConfig("need at least one bin".into()));
        }
        Ok(BinningConfig { num_bins })
    }
}

/// Bin holding probability `p` among `num_bins` equal-width bins.
pub fn bin_index(p: f64, num_bins: usize) -> usize {
    let m = num_bins as f64;
    let last = num_bins as isize - 1;
    let mut idx = ((p * m).ceil() as isize - 1).clamp(0, last) as usize;
    // the product above can land one bin off near the edges
    while idx > 0 && p <= idx as f64 / m {
        idx -= 1;
    }
    while idx + 1 < num_bins && p > (idx + 1) as f64 / m {
        idx += 1;
    }
    idx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinStats {
    pub bin_index: usize,
    pub count: u64,
    /// `None` for empty bins.
    pub mean_prob: Option<f64>,
    /// Accuracy, or precision for the detection variants. `None` when empty.
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveVariant {
    TopLabel,
    Marginal,
    DetTopLabel,
    DetMarginal,
}

impl CurveVariant {
    pub fn name(self) -> &'static str {
        match self {
            CurveVariant::TopLabel => "top_label",
            CurveVariant::Marginal => "marginal",
            CurveVariant::DetTopLabel => "det_top_label",
            CurveVariant::DetMarginal => "det_marginal",
        }
    }

    pub fn is_marginal(self) -> bool {
        matches!(self, CurveVariant::Marginal | CurveVariant::DetMarginal)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCurve {
    /// Class index; `None` for the single top-label line.
    pub class: Option<usize>,
    pub bins: Vec<BinStats>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCurve {
    pub variant: CurveVariant,
    pub num_bins: usize,
    /// Number of records the curve was built from.
    pub total: u64,
    pub classes: Vec<ClassCurve>,
    /// Per-bin quartiles of accuracy across classes (marginal variants).
    pub quartile_band: Option<Vec<Option<Quartiles>>>,
}

impl CalibrationCurve {
    /// Root of the count-weighted squared gap between accuracy and mean
    /// probability, summed over every class line and bin.
    pub fn calibration_error(&self) -> f64 {
        let total = self.total as f64;
        let mut sum = 0.0;
        for class in &self.classes {
            for bin in &class.bins {
                if let (Some(p), Some(a)) = (bin.mean_prob, bin.accuracy) {
                    sum += bin.count as f64 / total * (a - p).powi(2);
                }
            }
        }
        sum.sqrt()
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct BinAcc {
    count: u64,
    sum_prob: f64,
    hits: u64,
}

impl BinAcc {
    fn add(&mut self, p: f64, hit: bool) {
        self.count += 1;
        self.sum_prob += p;
        self.hits += u64::from(hit);
    }

    fn merge(&mut self, other: &BinAcc) {
        self.count += other.count;
        self.sum_prob += other.sum_prob;
        self.hits += other.hits;
    }

    fn stats(&self, bin_index: usize) -> BinStats {
        if self.count == 0 {
            return BinStats {
                bin_index,
                count: 0,
                mean_prob: None,
                accuracy: None,
            };
        }
        let n = self.count as f64;
        BinStats {
            bin_index,
            count: self.count,
            mean_prob: Some(self.sum_prob / n),
            accuracy: Some(self.hits as f64 / n),
        }
    }
}

struct Accumulator {
    records: u64,
    nll: f64,
    brier: f64,
    top: Vec<BinAcc>,
    marginal: Vec<BinAcc>,
    det_records: u64,
    det_top: Vec<BinAcc>,
    det_marginal: Vec<BinAcc>,
}

impl Accumulator {
    fn new(num_classes: usize, num_bins: usize) -> Self {
        Accumulator {
            records: 0,
            nll: 0.0,
            brier: 0.0,
            top: vec![BinAcc::default(); num_bins],
            marginal: vec![BinAcc::default(); (num_classes + 1) * num_bins],
            det_records: 0,
            det_top: vec![BinAcc::default(); num_bins],
            det_marginal: vec![BinAcc::default(); num_classes * num_bins],
        }
    }

    fn add(&mut self, r: &EvaluationRecord, num_bins: usize) {
        let p = r.probs().as_slice();
        let k = p.len() - 1;
        let y = r.label().get();

        self.records += 1;
        self.nll -= p[y].max(LOG_EPSILON).ln();
        self.brier += brier_term(p, y);

        let top = argmax(p);
        let conf = p[top];
        let top_bin = bin_index(conf, num_bins);
        self.top[top_bin].add(conf, top == y);
        for (class, &pk) in p.iter().enumerate() {
            self.marginal[class * num_bins + bin_index(pk, num_bins)].add(pk, class == y);
        }

        if in_detection_subset(r) {
            self.det_records += 1;
            self.det_top[top_bin].add(conf, top == y);
            for (class, &pk) in p[..k].iter().enumerate() {
                self.det_marginal[class * num_bins + bin_index(pk, num_bins)].add(pk, class == y);
            }
        }
    }

    fn merge(&mut self, other: Accumulator) {
        self.records += other.records;
        self.nll += other.nll;
        self.brier += other.brier;
        self.det_records += other.det_records;
        for (a, b) in [
            (&mut self.top, &other.top),
            (&mut self.marginal, &other.marginal),
            (&mut self.det_top, &other.det_top),
            (&mut self.det_marginal, &other.det_marginal),
        ] {
            for (x, y) in a.iter_mut().zip(b) {
                x.merge(y);
            }
        }
    }
}

fn brier_term(p: &[f64], y: usize) -> f64 {
    p.iter()
        .enumerate()
        .map(|(k, &pk)| {
            let target = if k == y { 1.0 } else { 0.0 };
            (target - pk).powi(2)
        })
        .sum()
}

/// Records kept by the detection variants: predictions (matched or not)
/// whose argmax is an object class.
fn in_detection_subset(r: &EvaluationRecord) -> bool {
    r.kind() != RecordKind::MissingGroundTruth && r.probs().argmax() != r.probs().num_classes()
}

fn compare_records(a: &EvaluationRecord, b: &EvaluationRecord) -> Ordering {
    a.kind()
        .cmp(&b.kind())
        .then(a.label().cmp(&b.label()))
        .then_with(|| {
            a.probs()
                .as_slice()
                .iter()
                .zip(b.probs().as_slice())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
}

/// Records in an order that depends only on the fields metrics read.
pub(crate) fn canonical(set: &EvaluationSet) -> Vec<&EvaluationRecord> {
    let mut view: Vec<&EvaluationRecord> = set.records().iter().collect();
    view.sort_by(|a, b| compare_records(a, b));
    view
}

fn bins_to_curve(
    variant: CurveVariant,
    accs: &[BinAcc],
    num_bins: usize,
    total: u64,
    classes: Option<usize>,
) -> CalibrationCurve {
    let class_curves: Vec<ClassCurve> = match classes {
        None => vec![ClassCurve {
            class: None,
            bins: accs.iter().enumerate().map(|(m, a)| a.stats(m)).collect(),
        }],
        Some(n) => (0..n)
            .map(|class| ClassCurve {
                class: Some(class),
                bins: accs[class * num_bins..(class + 1) * num_bins]
                    .iter()
                    .enumerate()
                    .map(|(m, a)| a.stats(m))
                    .collect(),
            })
            .collect(),
    };
    let quartile_band = classes.map(|_| {
        (0..num_bins)
            .map(|m| {
                let values: Vec<f64> = class_curves
                    .iter()
                    .filter_map(|c| c.bins[m].accuracy)
                    .collect();
                quartiles(values)
            })
            .collect()
    });
    CalibrationCurve {
        variant,
        num_bins,
        total,
        classes: class_curves,
        quartile_band,
    }
}

/// Linear-interpolation quartiles (the usual "type 7" definition).
pub fn quartiles(mut values: Vec<f64>) -> Option<Quartiles> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let at = |q: f64| {
        let pos = q * (values.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        values[lo] + (values[hi] - values[lo]) * (pos - lo as f64)
    };
    Some(Quartiles {
        q1: at(0.25),
        median: at(0.5),
        q3: at(0.75),
    })
}

/// Everything the binned metrics produce for one evaluation set.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub records: u64,
    pub nll: f64,
    pub brier: f64,
    pub top_label: CalibrationCurve,
    pub marginal: CalibrationCurve,
    /// `None` when no prediction has an object-class argmax.
    pub detection: Option<DetectionCalibration>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionCalibration {
    pub dtce: f64,
    pub dmce: f64,
    pub top_label: CalibrationCurve,
    pub marginal: CalibrationCurve,
}

impl Summary {
    pub fn tce(&self) -> f64 {
        self.top_label.calibration_error()
    }

    pub fn mce(&self) -> f64 {
        self.marginal.calibration_error()
    }
}

/// Computes every binned metric in a single pass.
pub fn summarize(set: &EvaluationSet, cfg: &BinningConfig) -> Result<Summary> {
    if set.is_empty() {
        return Err(Error::EmptyEvaluationSet);
    }
    let k = set.num_classes();
    let m = cfg.num_bins;
    let view = canonical(set);
    let acc = par::chunked_fold(
        &view,
        || Accumulator::new(k, m),
        |acc, r| acc.add(r, m),
        |a, b| a.merge(b),
    );

    let n = acc.records as f64;
    let detection = (acc.det_records > 0).then(|| {
        let top_label = bins_to_curve(
            CurveVariant::DetTopLabel,
            &acc.det_top,
            m,
            acc.det_records,
            None,
        );
        let marginal = bins_to_curve(
            CurveVariant::DetMarginal,
            &acc.det_marginal,
            m,
            acc.det_records,
            Some(k),
        );
        DetectionCalibration {
            dtce: top_label.calibration_error(),
            dmce: marginal.calibration_error(),
            top_label,
            marginal,
        }
    });
    Ok(Summary {
        records: acc.records,
        nll: acc.nll / n,
        brier: acc.brier / n,
        top_label: bins_to_curve(CurveVariant::TopLabel, &acc.top, m, acc.records, None),
        marginal: bins_to_curve(
            CurveVariant::Marginal,
            &acc.marginal,
            m,
            acc.records,
            Some(k + 1),
        ),
        detection,
    })
}

/// Mean negative log-likelihood of the labels, probabilities floored at
/// [`LOG_EPSILON`].
pub fn nll(set: &EvaluationSet) -> Result<f64> {
    summarize(set, &BinningConfig::default()).map(|s| s.nll)
}

/// Mean squared Euclidean distance between one-hot labels and predictions.
pub fn brier(set: &EvaluationSet) -> Result<f64> {
    summarize(set, &BinningConfig::default()).map(|s| s.brier)
}

pub fn top_label_curve(set: &EvaluationSet, cfg: &BinningConfig) -> Result<CalibrationCurve> {
    summarize(set, cfg).map(|s| s.top_label)
}

/// One curve per class, background included, binned by that class's
/// probability. Classes are never pooled within a bin.
pub fn marginal_curve(set: &EvaluationSet, cfg: &BinningConfig) -> Result<CalibrationCurve> {
    summarize(set, cfg).map(|s| s.marginal)
}

pub fn tce(set: &EvaluationSet, cfg: &BinningConfig) -> Result<f64> {
    summarize(set, cfg).map(|s| s.tce())
}

pub fn mce(set: &EvaluationSet, cfg: &BinningConfig) -> Result<f64> {
    summarize(set, cfg).map(|s| s.mce())
}

/// dTCE and dMCE: calibration restricted to predictions with an object-class
/// argmax (missing ground truths and background predictions dropped), where
/// the per-bin hit rate is a precision. dMCE sums over object classes only.
pub fn detection_variants(
    set: &EvaluationSet,
    cfg: &BinningConfig,
) -> Result<DetectionCalibration> {
    summarize(set, cfg)?
        .detection
        .ok_or(Error::EmptyEvaluationSet)
}

/// MCE computed from per-bin statistics pooled across classes.
///
/// This is the aggregation the marginal error deliberately avoids: pooling
/// pulls every bin towards the diagonal, so the result never exceeds the
/// proper [`mce`]. Exposed for diagnostics and comparison only.
pub fn class_pooled_mce(set: &EvaluationSet, cfg: &BinningConfig) -> Result<f64> {
    let curve = marginal_curve(set, cfg)?;
    let lines = curve.classes.len() as f64;
    let total = curve.total as f64;
    let mut sum = 0.0;
    for m in 0..curve.num_bins {
        let (mut count, mut probs, mut hits) = (0.0, 0.0, 0.0);
        for c in &curve.classes {
            let b = &c.bins[m];
            if let (Some(p), Some(a)) = (b.mean_prob, b.accuracy) {
                let n = b.count as f64;
                count += n;
                probs += p * n;
                hits += a * n;
            }
        }
        if count > 0.0 {
            sum += count / (lines * total) * (hits / count - probs / count).powi(2);
        }
    }
    Ok(sum.sqrt())
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(p: &ProbVector) -> f64 {
    -p.as_slice()
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * v.ln())
        .sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn num_bins(&self) -> usize {
        self.counts.len()
    }

    pub fn edges(&self, bin: usize) -> (f64, f64) {
        let w = (self.hi - self.lo) / self.counts.len() as f64;
        (self.lo + w * bin as f64, self.lo + w * (bin + 1) as f64)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Histogram of `ln(max(H(p), 1e-12))` over matched and missing records, with
/// equal-width bins spanning `[ln 1e-12, ln ln(K+1)]`.
pub fn entropy_histogram(set: &EvaluationSet, bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::InvalidConfig(
            "need at least one histogram bin".into(),
        ));
    }
    let lo = LOG_EPSILON.ln();
    let hi = ((set.num_classes() + 1) as f64).ln().ln();
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0u64; bins];
    let mut any = false;
    for r in set.records() {
        if !matches!(
            r.kind(),
            RecordKind::Matched | RecordKind::MissingGroundTruth
        ) {
            continue;
        }
        any = true;
        let v = entropy(r.probs()).max(LOG_EPSILON).ln();
        let bin = (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1);
        counts[bin] += 1;
    }
    if !any {
        return Err(Error::EmptyEvaluationSet);
    }
    Ok(Histogram { lo, hi, counts })
}

/// Mean over classes with ground truth of the all-point interpolated average
/// precision at IoU 0.5.
///
/// Detections count for their argmax class, ranked by that class's
/// probability (ties by image id, then position in the image). Each one claims
/// the best-overlapping unclaimed ground truth of its class in its image.
pub fn ap50(dataset: &Dataset, dump: &PredictionDump) -> Result<f64> {
    if dataset.num_annotations() == 0 {
        return Err(Error::NoGroundTruth);
    }
    let k = dataset.num_classes();
    let mut aps = Vec::new();
    for class in 0..k {
        let num_gt = dataset
            .images()
            .iter()
            .flat_map(|i| dataset.targets(i.id))
            .filter(|g| g.label.0 == class)
            .count();
        if num_gt == 0 {
            continue;
        }
        let mut ranked: Vec<(f64, ImageId, usize)> = Vec::new();
        for (&image, dets) in dump.per_image() {
            for (i, d) in dets.iter().enumerate() {
                if d.probs.argmax() == class {
                    ranked.push((d.probs.get(class), image, i));
                }
            }
        }
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

        let mut claimed: HashMap<ImageId, Vec<bool>> = HashMap::new();
        let mut hits = Vec::with_capacity(ranked.len());
        for &(_, image, i) in &ranked {
            let det = &dump.detections(image)[i];
            let gts = dataset.targets(image);
            let used = claimed
                .entry(image)
                .or_insert_with(|| vec![false; gts.len()]);
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in gts.iter().enumerate() {
                if gt.label.0 != class || used[g] {
                    continue;
                }
                let overlap = iou(&gt.bbox, &det.bbox);
                if overlap >= AP_IOU_THRESHOLD && best.is_none_or(|(_, b)| overlap > b) {
                    best = Some((g, overlap));
                }
            }
            if let Some((g, _)) = best {
                used[g] = true;
            }
            hits.push(best.is_some());
        }
        aps.push(average_precision(&hits, num_gt));
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

/// Area under the precision envelope for a ranked list of hit flags.
fn average_precision(hits: &[bool], num_gt: usize) -> f64 {
    let mut recall = Vec::with_capacity(hits.len());
    let mut precision = Vec::with_capacity(hits.len());
    let mut tp = 0usize;
    for (i, &hit) in hits.iter().enumerate() {
        tp += usize::from(hit);
        recall.push(tp as f64 / num_gt as f64);
        precision.push(tp as f64 / (i + 1) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev = 0.0;
    for (r, p) in recall.iter().zip(&precision) {
        ap += (r - prev) * p;
        prev = *r;
    }
    ap
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordCounts {
    pub matched: u64,
    pub unmatched_pred: u64,
    pub missing_gt: u64,
}

impl RecordCounts {
    pub fn of(set: &EvaluationSet) -> Self {
        let mut c = RecordCounts::default();
        for r in set.records() {
            match r.kind() {
                RecordKind::Matched => c.matched += 1,
                RecordKind::UnmatchedPrediction => c.unmatched_pred += 1,
                RecordKind::MissingGroundTruth => c.missing_gt += 1,
            }
        }
        c
    }
}

/// Serializable result of one evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub num_classes: usize,
    pub num_bins: usize,
    pub nll: f64,
    pub brier: f64,
    pub tce: f64,
    pub mce: f64,
    pub dtce: Option<f64>,
    pub dmce: Option<f64>,
    /// `None` when not applicable (no ground truth, or out-of-distribution).
    pub ap50: Option<f64>,
    pub counts: RecordCounts,
    pub curves: Vec<CalibrationCurve>,
    pub entropy_histogram: Option<Histogram>,
    pub provenance: serde_json::Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportOptions {
    pub binning: BinningConfig,
    pub entropy_bins: usize,
    /// Out-of-distribution runs skip AP.
    pub out_of_distribution: bool,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            binning: BinningConfig::default(),
            entropy_bins: 20,
            out_of_distribution: false,
        }
    }
}

impl MetricsReport {
    /// Scores `set`, which must have been built from `dataset` and `dump`.
    pub fn compute(
        set: &EvaluationSet,
        dataset: &Dataset,
        dump: &PredictionDump,
        opts: &ReportOptions,
        provenance: serde_json::Value,
    ) -> Result<Self> {
        let summary = summarize(set, &opts.binning)?;
        let ap = if opts.out_of_distribution {
            None
        } else {
            match ap50(dataset, dump) {
                Ok(v) => Some(v),
                Err(Error::NoGroundTruth) => None,
                Err(e) => return Err(e),
            }
        };
        let histogram = match entropy_histogram(set, opts.entropy_bins) {
            Ok(h) => Some(h),
            Err(Error::EmptyEvaluationSet) => None,
            Err(e) => return Err(e),
        };
        let tce = summary.tce();
        let mce = summary.mce();
        let mut curves = vec![summary.top_label, summary.marginal];
        let (dtce, dmce) = match summary.detection {
            Some(d) => {
                curves.push(d.top_label);
                curves.push(d.marginal);
                (Some(d.dtce), Some(d.dmce))
            }
            None => (None, None),
        };
        Ok(MetricsReport {
            num_classes: set.num_classes(),
            num_bins: opts.binning.num_bins,
            nll: summary.nll,
            brier: summary.brier,
            tce,
            mce,
            dtce,
            dmce,
            ap50: ap,
            counts: RecordCounts::of(set),
            curves,
            entropy_histogram: histogram,
            provenance,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::ImageInfo;
    use crate::types::{BBox, ClassIndex, Detection, GroundTruth};

    fn record(y: usize, p: &[f64]) -> EvaluationRecord {
        let probs = ProbVector::new(p.to_vec()).unwrap();
        let k = probs.num_classes();
        let b = BBox::new(0.1, 0.1, 0.2, 0.2).unwrap();
        if y == k {
            EvaluationRecord::from_parts(
                ImageId(0),
                RecordKind::UnmatchedPrediction,
                ClassIndex(y),
                BBox::ZERO,
                probs,
                b,
            )
            .unwrap()
        } else {
            EvaluationRecord::from_parts(
                ImageId(0),
                RecordKind::Matched,
                ClassIndex(y),
                b,
                probs,
                b,
            )
            .unwrap()
        }
    }

    fn set(k: usize, records: Vec<EvaluationRecord>) -> EvaluationSet {
        EvaluationSet::new(k, records).unwrap()
    }

    fn nll_fixture() -> EvaluationSet {
        set(
            2,
            vec![record(0, &[0.5, 0.25, 0.25]), record(1, &[0.1, 0.8, 0.1])],
        )
    }

    #[test]
    fn bin_edges() {
        assert_eq!(bin_index(0.0, 10), 0);
        assert_eq!(bin_index(0.1, 10), 0);
        assert_eq!(bin_index(0.10000001, 10), 1);
        assert_eq!(bin_index(0.3, 10), 2);
        assert_eq!(bin_index(0.7, 10), 6);
        assert_eq!(bin_index(0.75, 10), 7);
        assert_eq!(bin_index(1.0, 10), 9);
        assert_eq!(bin_index(0.5, 1), 0);
        for m in 1..40 {
            for j in 0..=m {
                let edge = j as f64 / m as f64;
                assert_eq!(bin_index(edge, m), j.saturating_sub(1), "edge {j}/{m}");
            }
        }
    }

    #[test]
    fn nll_examples() {
        let perfect = set(
            2,
            vec![record(0, &[1.0, 0.0, 0.0]), record(2, &[0.0, 0.0, 1.0])],
        );
        assert_eq!(nll(&perfect).unwrap(), 0.0);
        assert!((nll(&nll_fixture()).unwrap() - 0.458146).abs() < 1e-6);
        let zero = set(2, vec![record(1, &[1.0, 0.0, 0.0])]);
        assert!((nll(&zero).unwrap() - 27.631021).abs() < 1e-6);
    }

    #[test]
    fn missing_record_nll_penalty() {
        let g = GroundTruth {
            image_id: ImageId(0),
            label: ClassIndex(0),
            bbox: BBox::new(0.0, 0.0, 0.5, 0.5).unwrap(),
        };
        let s = set(2, vec![EvaluationRecord::missing_ground_truth(&g, 2)]);
        assert!((nll(&s).unwrap() - (-(1e-12f64).ln())).abs() < 1e-9);
    }

    #[test]
    fn brier_examples() {
        let perfect = set(2, vec![record(0, &[1.0, 0.0, 0.0])]);
        assert_eq!(brier(&perfect).unwrap(), 0.0);
        let single = set(2, vec![record(0, &[0.5, 0.25, 0.25])]);
        assert!((brier(&single).unwrap() - 0.375).abs() < 1e-12);
        assert!((brier(&nll_fixture()).unwrap() - 0.2175).abs() < 1e-12);
    }

    #[test]
    fn empty_set_errors() {
        let empty = set(2, vec![]);
        assert!(matches!(nll(&empty), Err(Error::EmptyEvaluationSet)));
        assert!(matches!(brier(&empty), Err(Error::EmptyEvaluationSet)));
        assert!(matches!(
            tce(&empty, &BinningConfig::default()),
            Err(Error::EmptyEvaluationSet)
        ));
        assert!(matches!(
            entropy_histogram(&empty, 10),
            Err(Error::EmptyEvaluationSet)
        ));
    }

    fn tce_fixture() -> EvaluationSet {
        set(
            2,
            vec![
                record(0, &[0.75, 0.15, 0.10]),
                record(1, &[0.10, 0.75, 0.15]),
                record(0, &[0.75, 0.05, 0.20]),
                record(2, &[0.75, 0.05, 0.20]),
                record(0, &[0.95, 0.03, 0.02]),
                record(2, &[0.02, 0.03, 0.95]),
            ],
        )
    }

    #[test]
    fn top_label_curve_examples() {
        let curve = top_label_curve(&tce_fixture(), &BinningConfig::default()).unwrap();
        let b7 = &curve.classes[0].bins[7];
        assert_eq!(b7.count, 4);
        assert!((b7.mean_prob.unwrap() - 0.75).abs() < 1e-12);
        assert!((b7.accuracy.unwrap() - 0.75).abs() < 1e-12);

        let perfect = set(
            2,
            vec![record(0, &[1.0, 0.0, 0.0]), record(1, &[0.0, 1.0, 0.0])],
        );
        let curve = top_label_curve(&perfect, &BinningConfig::default()).unwrap();
        let populated: Vec<_> = curve.classes[0]
            .bins
            .iter()
            .filter(|b| b.count > 0)
            .collect();
        assert_eq!(populated.len(), 1);
        assert_eq!(populated[0].bin_index, 9);
        assert_eq!(populated[0].accuracy, Some(1.0));
    }

    #[test]
    fn missing_records_fill_last_bin_as_errors() {
        let g = GroundTruth {
            image_id: ImageId(0),
            label: ClassIndex(1),
            bbox: BBox::new(0.0, 0.0, 0.5, 0.5).unwrap(),
        };
        let s = set(2, vec![EvaluationRecord::missing_ground_truth(&g, 2)]);
        let curve = top_label_curve(&s, &BinningConfig::default()).unwrap();
        assert_eq!(curve.classes[0].bins[9].count, 1);
        assert_eq!(curve.classes[0].bins[9].accuracy, Some(0.0));
    }

    #[test]
    fn tce_examples() {
        let v = tce(&tce_fixture(), &BinningConfig::default()).unwrap();
        assert!((v - (2.0f64 / 6.0 * 0.0025).sqrt()).abs() < 1e-12);
        assert!((v - 0.02887).abs() < 1e-5);
    }

    fn mce_fixture() -> EvaluationSet {
        set(
            2,
            vec![record(0, &[0.8, 0.1, 0.1]), record(2, &[0.2, 0.1, 0.7])],
        )
    }

    #[test]
    fn mce_example_and_bins() {
        let cfg = BinningConfig::default();
        let v = mce(&mce_fixture(), &cfg).unwrap();
        assert!((v - 0.1f64.sqrt()).abs() < 1e-12, "{v}");

        let curve = marginal_curve(&mce_fixture(), &cfg).unwrap();
        assert_eq!(curve.classes.len(), 3);
        let populated = |c: usize| -> Vec<(usize, u64, f64, f64)> {
            curve.classes[c]
                .bins
                .iter()
                .filter(|b| b.count > 0)
                .map(|b| {
                    (
                        b.bin_index,
                        b.count,
                        b.mean_prob.unwrap(),
                        b.accuracy.unwrap(),
                    )
                })
                .collect()
        };
        assert_eq!(populated(0), vec![(1, 1, 0.2, 0.0), (7, 1, 0.8, 1.0)]);
        assert_eq!(populated(1), vec![(0, 2, 0.1, 0.0)]);
        assert_eq!(populated(2), vec![(0, 1, 0.1, 0.0), (6, 1, 0.7, 1.0)]);

        let band = curve.quartile_band.unwrap();
        let q0 = band[0].unwrap();
        assert_eq!((q0.q1, q0.median, q0.q3), (0.0, 0.0, 0.0));
        assert!(band[3].is_none());
    }

    #[test]
    fn one_hot_correct_is_perfectly_calibrated() {
        let s = set(
            2,
            vec![
                record(0, &[1.0, 0.0, 0.0]),
                record(1, &[0.0, 1.0, 0.0]),
                record(2, &[0.0, 0.0, 1.0]),
            ],
        );
        let cfg = BinningConfig::default();
        assert_eq!(tce(&s, &cfg).unwrap(), 0.0);
        assert_eq!(mce(&s, &cfg).unwrap(), 0.0);
        let d = detection_variants(&s, &cfg).unwrap();
        assert_eq!((d.dtce, d.dmce), (0.0, 0.0));
        for c in &marginal_curve(&s, &cfg).unwrap().classes {
            for b in c.bins.iter().filter(|b| b.count > 0) {
                assert_eq!(b.mean_prob, b.accuracy);
            }
        }
    }

    #[test]
    fn detection_variants_drop_background_and_missing() {
        let only_bg = set(
            2,
            vec![record(2, &[0.1, 0.1, 0.8]), record(0, &[0.2, 0.1, 0.7])],
        );
        assert!(matches!(
            detection_variants(&only_bg, &BinningConfig::default()),
            Err(Error::EmptyEvaluationSet)
        ));

        // one TP at 0.8 and one FP at 0.6
        let s = set(
            2,
            vec![
                record(0, &[0.8, 0.1, 0.1]),
                record(2, &[0.6, 0.1, 0.3]),
                record(2, &[0.1, 0.1, 0.8]),
            ],
        );
        let d = detection_variants(&s, &BinningConfig::default()).unwrap();
        assert_eq!(d.top_label.total, 2);
        let expect = (0.5f64 * 0.2f64.powi(2) + 0.5 * 0.6f64.powi(2)).sqrt();
        assert!((d.dtce - expect).abs() < 1e-12);
        assert_eq!(d.marginal.classes.len(), 2);
    }

    #[test]
    fn marginal_error_can_exceed_one() {
        // confidently wrong everywhere: two classes each contribute a unit gap
        let s = set(2, vec![record(1, &[1.0, 0.0, 0.0])]);
        let v = mce(&s, &BinningConfig::default()).unwrap();
        assert!((v - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn pooled_mce_is_not_larger() {
        let cfg = BinningConfig::default();
        for s in [mce_fixture(), tce_fixture(), nll_fixture()] {
            assert!(class_pooled_mce(&s, &cfg).unwrap() <= mce(&s, &cfg).unwrap() + 1e-15);
        }
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy(&ProbVector::one_hot(3, 1)), 0.0);
        let uniform = ProbVector::new(vec![1.0 / 3.0; 3]).unwrap();
        assert!((entropy(&uniform) - 3f64.ln()).abs() < 1e-12);
        let p = ProbVector::new(vec![0.5, 0.25, 0.25]).unwrap();
        assert!((entropy(&p) - 1.03972).abs() < 1e-5);
    }

    #[test]
    fn entropy_histogram_examples() {
        let third = 1.0 / 3.0;
        let s = set(
            2,
            vec![
                record(0, &[third, third, third]),
                record(1, &[third, third, third]),
            ],
        );
        let h = entropy_histogram(&s, 10).unwrap();
        assert!((h.hi - 0.0940).abs() < 1e-4);
        assert_eq!(h.counts[9], 2);
        assert_eq!(h.total(), 2);
        assert_eq!(h, entropy_histogram(&s, 10).unwrap());

        let g = GroundTruth {
            image_id: ImageId(0),
            label: ClassIndex(0),
            bbox: BBox::new(0.0, 0.0, 0.5, 0.5).unwrap(),
        };
        let missing = set(2, vec![EvaluationRecord::missing_ground_truth(&g, 2)]);
        let h = entropy_histogram(&missing, 10).unwrap();
        assert_eq!(h.counts[0], 1);

        // unmatched predictions are ignored
        let bg = set(2, vec![record(2, &[0.1, 0.1, 0.8])]);
        assert!(entropy_histogram(&bg, 10).is_err());
    }

    fn ap_fixture(scores: &[(f64, [f64; 4])]) -> (Dataset, PredictionDump) {
        let gt = GroundTruth {
            image_id: ImageId(1),
            label: ClassIndex(0),
            bbox: BBox::new(0.1, 0.1, 0.5, 0.5).unwrap(),
        };
        let ds = Dataset::new(
            vec![ImageInfo {
                id: ImageId(1),
                width: 10,
                height: 10,
            }],
            vec!["a".into(), "b".into()],
            vec![gt],
        )
        .unwrap();
        let dets = scores
            .iter()
            .map(|(s, b)| Detection {
                image_id: ImageId(1),
                probs: ProbVector::new(vec![*s, (1.0 - s) / 2.0, (1.0 - s) / 2.0]).unwrap(),
                bbox: BBox::new(b[0], b[1], b[2], b[3]).unwrap(),
            })
            .collect();
        (ds, PredictionDump::new(2, "raw", dets).unwrap())
    }

    const HIT: [f64; 4] = [0.1, 0.1, 0.5, 0.5];
    const MISS: [f64; 4] = [0.6, 0.6, 0.9, 0.9];

    #[test]
    fn ap50_examples() {
        let (ds, dump) = ap_fixture(&[(0.9, HIT)]);
        assert_eq!(ap50(&ds, &dump).unwrap(), 1.0);
        let (ds, dump) = ap_fixture(&[(0.9, HIT), (0.8, MISS)]);
        assert_eq!(ap50(&ds, &dump).unwrap(), 1.0);
        let (ds, dump) = ap_fixture(&[(0.8, HIT), (0.9, MISS)]);
        assert_eq!(ap50(&ds, &dump).unwrap(), 0.5);
        // a duplicate of a claimed object is a false positive
        let (ds, dump) = ap_fixture(&[(0.9, HIT), (0.8, HIT)]);
        assert_eq!(ap50(&ds, &dump).unwrap(), 1.0);
    }

    #[test]
    fn ap50_needs_ground_truth() {
        let ds = Dataset::new(vec![], vec!["a".into(), "b".into()], vec![]).unwrap();
        let dump = PredictionDump::new(2, "raw", vec![]).unwrap();
        assert!(matches!(ap50(&ds, &dump), Err(Error::NoGroundTruth)));
    }

    #[test]
    fn quartile_interpolation() {
        let q = quartiles(vec![0.0, 1.0, 0.5, 0.25, 0.75]).unwrap();
        assert_eq!((q.q1, q.median, q.q3), (0.25, 0.5, 0.75));
        let q = quartiles(vec![0.0, 1.0]).unwrap();
        assert_eq!((q.q1, q.median, q.q3), (0.25, 0.5, 0.75));
        assert!(quartiles(vec![]).is_none());
    }
}
