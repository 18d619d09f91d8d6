//! Assignment of predictions to ground truth and construction of the
//! evaluation set.
//!
//! Matching is class-agnostic and purely IoU based. A prediction that lands on
//! an object of another class is still matched; it becomes a wrong-label
//! record rather than a background one.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Dataset, PredictionDump};
use crate::par;
use crate::types::{iou, Detection, EvaluationRecord, EvaluationSet, GroundTruth, ImageId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    /// Each ground truth and each prediction is used at most once.
    OneToOne,
    /// Several predictions may share one ground truth.
    ManyToOne,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    pub iou_threshold: f64,
    pub mode: MatchMode,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            iou_threshold: 0.5,
            mode: MatchMode::OneToOne,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "iou threshold {} outside (0, 1]",
                self.iou_threshold
            )));
        }
        Ok(())
    }
}

/// Index sets for one image. Pairs are `(gt_index, pred_index)`, sorted.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchResult {
    pub matched_pairs: Vec<(usize, usize)>,
    pub unmatched_pred_indices: Vec<usize>,
    pub unmatched_gt_indices: Vec<usize>,
}

/// Matches one image. Pairs qualify when `iou >= threshold`.
///
/// One-to-one matching is greedy by descending IoU; ties prefer the
/// prediction with the higher object-class probability, then the lower ground
/// truth index, then the lower prediction index. Many-to-one sends every
/// prediction to its best-overlapping ground truth (ties to the lower index).
pub fn match_image(gts: &[GroundTruth], dets: &[Detection], cfg: &MatchConfig) -> MatchResult {
    let mut gt_used = vec![false; gts.len()];
    let mut pred_used = vec![false; dets.len()];
    let mut pairs = Vec::new();

    match cfg.mode {
        MatchMode::OneToOne => {
            let mut candidates = Vec::new();
            for (g, gt) in gts.iter().enumerate() {
                for (p, det) in dets.iter().enumerate() {
                    let overlap = iou(&gt.bbox, &det.bbox);
                    if overlap >= cfg.iou_threshold {
                        candidates.push((overlap, det.probs.object_max(), g, p));
                    }
                }
            }
            candidates.sort_by(|a, b| {
                b.0.total_cmp(&a.0)
                    .then(b.1.total_cmp(&a.1))
                    .then(a.2.cmp(&b.2))
                    .then(a.3.cmp(&b.3))
            });
            for (_, _, g, p) in candidates {
                if !gt_used[g] && !pred_used[p] {
                    gt_used[g] = true;
                    pred_used[p] = true;
                    pairs.push((g, p));
                }
            }
        }
        MatchMode::ManyToOne => {
            for (p, det) in dets.iter().enumerate() {
                let mut best: Option<(usize, f64)> = None;
                for (g, gt) in gts.iter().enumerate() {
                    let overlap = iou(&gt.bbox, &det.bbox);
                    if overlap >= cfg.iou_threshold && best.is_none_or(|(_, b)| overlap > b) {
                        best = Some((g, overlap));
                    }
                }
                if let Some((g, _)) = best {
                    gt_used[g] = true;
                    pred_used[p] = true;
                    pairs.push((g, p));
                }
            }
        }
    }

    pairs.sort_unstable();
    MatchResult {
        matched_pairs: pairs,
        unmatched_pred_indices: (0..dets.len()).filter(|&p| !pred_used[p]).collect(),
        unmatched_gt_indices: (0..gts.len()).filter(|&g| !gt_used[g]).collect(),
    }
}

/// Evaluation records for one image: matched pairs, then unmatched
/// predictions, then missing ground truths.
pub fn image_records(
    gts: &[GroundTruth],
    dets: &[Detection],
    result: &MatchResult,
    num_classes: usize,
) -> Vec<EvaluationRecord> {
    let mut records = Vec::with_capacity(
        result.matched_pairs.len()
            + result.unmatched_pred_indices.len()
            + result.unmatched_gt_indices.len(),
    );
    records.extend(
        result
            .matched_pairs
            .iter()
            .map(|&(g, p)| EvaluationRecord::matched(&gts[g], &dets[p])),
    );
    records.extend(
        result
            .unmatched_pred_indices
            .iter()
            .map(|&p| EvaluationRecord::unmatched_prediction(&dets[p])),
    );
    records.extend(
        result
            .unmatched_gt_indices
            .iter()
            .map(|&g| EvaluationRecord::missing_ground_truth(&gts[g], num_classes)),
    );
    records
}

/// Matches every image of `dataset` and returns the per-image results
/// alongside the evaluation set.
pub fn build_evaluation_set_with_matches(
    dataset: &Dataset,
    dump: &PredictionDump,
    cfg: &MatchConfig,
) -> Result<(EvaluationSet, Vec<(ImageId, MatchResult)>)> {
    let k = dataset.num_classes();
    if dump.num_classes() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: dump.num_classes(),
        });
    }
    if let Some(id) = dump
        .per_image()
        .keys()
        .find(|id| !dataset.contains_image(**id))
    {
        return Err(Error::InconsistentReference(format!(
            "predictions refer to unknown image {id}"
        )));
    }

    let ids: Vec<ImageId> = dataset.images().iter().map(|i| i.id).collect();
    let per_image = par::map(&ids, |&id| {
        let gts = dataset.targets(id);
        let dets = dump.detections(id);
        let result = match_image(gts, dets, cfg);
        let records = image_records(gts, dets, &result, k);
        (id, result, records)
    });

    let total = per_image.iter().map(|(_, _, r)| r.len()).sum();
    let mut records = Vec::with_capacity(total);
    let mut matches = Vec::with_capacity(per_image.len());
    for (id, result, recs) in per_image {
        records.extend(recs);
        matches.push((id, result));
    }
    Ok((EvaluationSet::new(k, records)?, matches))
}

pub fn build_evaluation_set(
    dataset: &Dataset,
    dump: &PredictionDump,
    cfg: &MatchConfig,
) -> Result<EvaluationSet> {
    build_evaluation_set_with_matches(dataset, dump, cfg).map(|(set, _)| set)
}

#[derive(Serialize)]
struct MatchLine<'a> {
    image_id: ImageId,
    #[serde(flatten)]
    result: &'a MatchResult,
}

/// Writes one JSON object per image.
pub fn write_match_lines<W: Write>(mut out: W, matches: &[(ImageId, MatchResult)]) -> Result<()> {
    for (image_id, result) in matches {
        serde_json::to_writer(
            &mut out,
            &MatchLine {
                image_id: *image_id,
                result,
            },
        )?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::ImageInfo;
    use crate::types::{BBox, ClassIndex, ProbVector, RecordKind};

    fn gt(label: usize, b: [f64; 4]) -> GroundTruth {
        GroundTruth {
            image_id: ImageId(0),
            label: ClassIndex(label),
            bbox: BBox::new(b[0], b[1], b[2], b[3]).unwrap(),
        }
    }

    fn det(probs: &[f64], b: [f64; 4]) -> Detection {
        Detection {
            image_id: ImageId(0),
            probs: ProbVector::new(probs.to_vec()).unwrap(),
            bbox: BBox::new(b[0], b[1], b[2], b[3]).unwrap(),
        }
    }

    const P: [f64; 3] = [0.7, 0.2, 0.1];

    /// One GT over `[0, 1] x [0, 0.5]`; predictions with IoU 0.6 and 0.55.
    fn two_candidates() -> (Vec<GroundTruth>, Vec<Detection>) {
        let g = vec![gt(0, [0.0, 0.0, 1.0, 0.5])];
        let d = vec![
            det(&P, [0.0, 0.0, 1.0, 0.3]),
            det(&P, [0.0, 0.0, 1.0, 0.275]),
        ];
        assert!((iou(&g[0].bbox, &d[0].bbox) - 0.6).abs() < 1e-12);
        assert!((iou(&g[0].bbox, &d[1].bbox) - 0.55).abs() < 1e-12);
        (g, d)
    }

    #[test]
    fn one_to_one_takes_highest_iou() {
        let (g, d) = two_candidates();
        let r = match_image(&g, &d, &MatchConfig::default());
        assert_eq!(r.matched_pairs, vec![(0, 0)]);
        assert_eq!(r.unmatched_pred_indices, vec![1]);
        assert!(r.unmatched_gt_indices.is_empty());
    }

    #[test]
    fn many_to_one_keeps_both() {
        let (g, d) = two_candidates();
        let cfg = MatchConfig {
            mode: MatchMode::ManyToOne,
            ..Default::default()
        };
        let r = match_image(&g, &d, &cfg);
        assert_eq!(r.matched_pairs, vec![(0, 0), (0, 1)]);
        assert!(r.unmatched_pred_indices.is_empty());
        assert!(r.unmatched_gt_indices.is_empty());
    }

    #[test]
    fn below_threshold_is_unmatched() {
        let g = vec![gt(0, [0.0, 0.0, 1.0, 0.5])];
        let d = vec![det(&P, [0.0, 0.0, 1.0, 0.2])];
        assert!((iou(&g[0].bbox, &d[0].bbox) - 0.4).abs() < 1e-12);
        let r = match_image(&g, &d, &MatchConfig::default());
        assert!(r.matched_pairs.is_empty());
        assert_eq!(r.unmatched_gt_indices, vec![0]);
        assert_eq!(r.unmatched_pred_indices, vec![0]);
    }

    #[test]
    fn threshold_is_inclusive() {
        let g = vec![gt(0, [0.0, 0.0, 1.0, 0.5])];
        let d = vec![det(&P, [0.0, 0.0, 1.0, 0.25])];
        assert_eq!(iou(&g[0].bbox, &d[0].bbox), 0.5);
        let r = match_image(&g, &d, &MatchConfig::default());
        assert_eq!(r.matched_pairs, vec![(0, 0)]);
    }

    #[test]
    fn equal_iou_prefers_confident_prediction() {
        let g = vec![gt(0, [0.0, 0.0, 0.5, 0.5])];
        let d = vec![
            det(&[0.5, 0.2, 0.3], [0.0, 0.0, 0.5, 0.5]),
            det(&[0.2, 0.6, 0.2], [0.0, 0.0, 0.5, 0.5]),
        ];
        let r = match_image(&g, &d, &MatchConfig::default());
        assert_eq!(r.matched_pairs, vec![(0, 1)]);
    }

    #[test]
    fn wrong_class_still_matches() {
        let g = vec![gt(1, [0.0, 0.0, 0.5, 0.5])];
        let d = vec![det(&[0.9, 0.05, 0.05], [0.0, 0.0, 0.5, 0.5])];
        let r = match_image(&g, &d, &MatchConfig::default());
        assert_eq!(r.matched_pairs, vec![(0, 0)]);
    }

    fn dataset(gts: Vec<GroundTruth>, extra_images: &[u64]) -> Dataset {
        let mut images = vec![ImageInfo {
            id: ImageId(0),
            width: 100,
            height: 100,
        }];
        images.extend(extra_images.iter().map(|&i| ImageInfo {
            id: ImageId(i),
            width: 100,
            height: 100,
        }));
        Dataset::new(images, vec!["a".into(), "b".into()], gts).unwrap()
    }

    #[test]
    fn evaluation_set_cardinality() {
        let gts = vec![gt(0, [0.0, 0.0, 0.2, 0.2]), gt(1, [0.5, 0.5, 0.9, 0.9])];
        let dets = vec![
            det(&P, [0.0, 0.0, 0.2, 0.2]),
            det(&P, [0.3, 0.0, 0.4, 0.1]),
            det(&P, [0.0, 0.6, 0.1, 0.7]),
        ];
        let ds = dataset(gts, &[5]);
        let dump = PredictionDump::new(2, "raw", dets).unwrap();
        let set = build_evaluation_set(&ds, &dump, &MatchConfig::default()).unwrap();
        assert_eq!(set.len(), 4);
        let kinds: Vec<RecordKind> = set.records().iter().map(|r| r.kind()).collect();
        assert_eq!(
            kinds,
            vec![
                RecordKind::Matched,
                RecordKind::UnmatchedPrediction,
                RecordKind::UnmatchedPrediction,
                RecordKind::MissingGroundTruth
            ]
        );
        assert!(set.records().iter().all(|r| r.image_id() == ImageId(0)));
    }

    #[test]
    fn empty_image_contributes_nothing() {
        let ds = dataset(vec![], &[]);
        let dump = PredictionDump::new(2, "raw", vec![]).unwrap();
        let set = build_evaluation_set(&ds, &dump, &MatchConfig::default()).unwrap();
        assert!(set.is_empty());
    }

    #[test]
    fn perfect_detector_is_all_matched() {
        let gts = vec![gt(0, [0.0, 0.0, 0.2, 0.2]), gt(1, [0.5, 0.5, 0.9, 0.9])];
        let dets: Vec<Detection> = gts
            .iter()
            .map(|g| Detection {
                image_id: g.image_id,
                probs: ProbVector::one_hot(3, g.label.0),
                bbox: g.bbox,
            })
            .collect();
        let ds = dataset(gts, &[]);
        let dump = PredictionDump::new(2, "raw", dets).unwrap();
        let set = build_evaluation_set(&ds, &dump, &MatchConfig::default()).unwrap();
        assert!(set
            .records()
            .iter()
            .all(|r| r.kind() == RecordKind::Matched));
    }

    #[test]
    fn reference_errors() {
        let ds = dataset(vec![], &[]);
        let stray = Detection {
            image_id: ImageId(9),
            ..det(&P, [0.0, 0.0, 0.1, 0.1])
        };
        let dump = PredictionDump::new(2, "raw", vec![stray]).unwrap();
        assert!(matches!(
            build_evaluation_set(&ds, &dump, &MatchConfig::default()),
            Err(Error::InconsistentReference(_))
        ));
        let dump3 = PredictionDump::new(3, "raw", vec![]).unwrap();
        assert!(matches!(
            build_evaluation_set(&ds, &dump3, &MatchConfig::default()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn match_lines_are_json() {
        let (g, d) = two_candidates();
        let r = match_image(&g, &d, &MatchConfig::default());
        let mut buf = Vec::new();
        write_match_lines(&mut buf, &[(ImageId(3), r)]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "{\"image_id\":3,\"matched_pairs\":[[0,0]],\"unmatched_pred_indices\":[1],\"unmatched_gt_indices\":[]}\n"
        );
    }
}
