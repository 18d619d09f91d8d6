//! Deploy-style post-processing of raw prediction sets: score threshold,
//! per-class NMS and top-k, or an untouched pass-through.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::PredictionDump;
use crate::par;
use crate::types::{iou, Detection, ImageId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostProcessConfig {
    pub enabled: bool,
    pub score_threshold: f64,
    pub nms_iou_threshold: f64,
    pub top_k: usize,
}

impl Default for PostProcessConfig {
    fn default() -> Self {
        PostProcessConfig {
            enabled: true,
            score_threshold: 0.05,
            nms_iou_threshold: 0.5,
            top_k: 100,
        }
    }
}

impl PostProcessConfig {
    pub fn disabled() -> Self {
        PostProcessConfig {
            enabled: false,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("score threshold", self.score_threshold),
            ("nms iou threshold", self.nms_iou_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("{name} {v} outside [0, 1]")));
            }
        }
        if self.top_k == 0 {
            return Err(Error::InvalidConfig("top-k must be at least 1".into()));
        }
        Ok(())
    }
}

/// Keeps detections whose largest object-class probability reaches
/// `threshold`. Order is preserved.
pub fn score_filter(dets: &[Detection], threshold: f64) -> Vec<Detection> {
    dets.iter()
        .filter(|d| d.probs.object_max() >= threshold)
        .cloned()
        .collect()
}

/// Greedy non-maximum suppression, run independently for each argmax class.
///
/// Background-argmax detections are never suppressed and are appended after
/// the object detections in input order. Object detections come out sorted by
/// descending score, then class index, then input position.
pub fn nms_per_class(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut candidates: Vec<(usize, usize, f64)> = Vec::new();
    let mut background = Vec::new();
    for (i, d) in dets.iter().enumerate() {
        let class = d.probs.argmax();
        if class == d.probs.num_classes() {
            background.push(i);
        } else {
            candidates.push((i, class, d.probs.get(class)));
        }
    }
    candidates.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.1.cmp(&b.1)).then(a.0.cmp(&b.0)));

    let mut kept_by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut kept = Vec::new();
    for &(i, class, _) in &candidates {
        let same_class = kept_by_class.entry(class).or_default();
        if same_class
            .iter()
            .all(|&j| iou(&dets[i].bbox, &dets[j].bbox) < iou_threshold)
        {
            same_class.push(i);
            kept.push(i);
        }
    }
    kept.into_iter()
        .chain(background)
        .map(|i| dets[i].clone())
        .collect()
}

/// The `k` detections with the largest object-class probability, kept in
/// input order. Ties favour earlier detections.
pub fn top_k(dets: &[Detection], k: usize) -> Vec<Detection> {
    if dets.len() <= k {
        return dets.to_vec();
    }
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .probs
            .object_max()
            .total_cmp(&dets[a].probs.object_max())
            .then(a.cmp(&b))
    });
    let mut chosen = order[..k].to_vec();
    chosen.sort_unstable();
    chosen.into_iter().map(|i| dets[i].clone()).collect()
}

pub fn postprocess_image(dets: &[Detection], cfg: &PostProcessConfig) -> Vec<Detection> {
    let filtered = score_filter(dets, cfg.score_threshold);
    let suppressed = nms_per_class(&filtered, cfg.nms_iou_threshold);
    top_k(&suppressed, cfg.top_k)
}

/// Applies the configured stages image by image. A disabled config returns the
/// detections unchanged, tagged `raw`.
pub fn run_pipeline(dump: &PredictionDump, cfg: &PostProcessConfig) -> PredictionDump {
    if !cfg.enabled {
        return PredictionDump::from_grouped(dump.num_classes(), "raw", dump.per_image().clone());
    }
    let images: Vec<(&ImageId, &Vec<Detection>)> = dump.per_image().iter().collect();
    let processed = par::map(&images, |(id, dets)| (**id, postprocess_image(dets, cfg)));
    PredictionDump::from_grouped(
        dump.num_classes(),
        "postprocessed",
        processed.into_iter().collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{BBox, ProbVector};
    use proptest::prelude::*;

    fn det(probs: &[f64], b: [f64; 4]) -> Detection {
        Detection {
            image_id: ImageId(0),
            probs: ProbVector::new(probs.to_vec()).unwrap(),
            bbox: BBox::new(b[0], b[1], b[2], b[3]).unwrap(),
        }
    }

    const A: [f64; 4] = [0.1, 0.1, 0.5, 0.5];

    #[test]
    fn score_filter_examples() {
        let dets = vec![det(&[0.9, 0.05, 0.05], A), det(&[0.04, 0.03, 0.93], A)];
        assert_eq!(score_filter(&dets, 0.0), dets);
        assert_eq!(score_filter(&dets, 0.05), vec![dets[0].clone()]);
        assert!(score_filter(&[], 0.5).is_empty());
    }

    #[test]
    fn nms_suppresses_same_class_duplicate() {
        // IoU of these two boxes is 0.8.
        let a = det(&[0.9, 0.05, 0.05], [0.0, 0.0, 1.0, 0.5]);
        let b = det(&[0.8, 0.1, 0.1], [0.0, 0.0, 1.0, 0.4]);
        assert!((iou(&a.bbox, &b.bbox) - 0.8).abs() < 1e-12);
        assert_eq!(nms_per_class(&[b.clone(), a.clone()], 0.5), vec![a]);
    }

    #[test]
    fn nms_keeps_disjoint_and_cross_class() {
        let a = det(&[0.9, 0.05, 0.05], [0.0, 0.0, 0.2, 0.2]);
        let b = det(&[0.8, 0.1, 0.1], [0.5, 0.5, 0.7, 0.7]);
        assert_eq!(nms_per_class(&[a.clone(), b.clone()], 0.5).len(), 2);

        let c = det(&[0.1, 0.8, 0.1], [0.0, 0.0, 0.2, 0.2]);
        let out = nms_per_class(&[c.clone(), a.clone()], 0.5);
        assert_eq!(out, vec![a, c]);
    }

    #[test]
    fn nms_leaves_background_rows() {
        let bg1 = det(&[0.1, 0.1, 0.8], A);
        let bg2 = det(&[0.05, 0.05, 0.9], A);
        let obj = det(&[0.6, 0.1, 0.3], A);
        let out = nms_per_class(&[bg1.clone(), obj.clone(), bg2.clone()], 0.5);
        assert_eq!(out, vec![obj, bg1, bg2]);
    }

    #[test]
    fn top_k_examples() {
        let d9 = det(&[0.9, 0.05, 0.05], A);
        let d5 = det(&[0.5, 0.2, 0.3], A);
        let d7 = det(&[0.1, 0.7, 0.2], A);
        let dets = vec![d9.clone(), d5.clone(), d7.clone()];
        assert_eq!(top_k(&dets, 3), dets);
        assert_eq!(top_k(&dets, 2), vec![d9.clone(), d7]);
        assert_eq!(top_k(&dets, 1), vec![d9]);
    }

    /// Five detections in one image: a duplicated object (two detections), a
    /// sub-threshold detection and two further objects.
    fn five_detection_fixture() -> Vec<Detection> {
        vec![
            det(&[0.85, 0.05, 0.10], [0.11, 0.1, 0.41, 0.4]),
            det(&[0.9, 0.05, 0.05], [0.1, 0.1, 0.4, 0.4]),
            det(&[0.03, 0.02, 0.95], [0.6, 0.6, 0.9, 0.9]),
            det(&[0.1, 0.8, 0.1], [0.5, 0.0, 0.9, 0.3]),
            det(&[0.6, 0.1, 0.3], [0.0, 0.6, 0.3, 0.9]),
        ]
    }

    #[test]
    fn pipeline_on_fixture() {
        let dets = five_detection_fixture();
        let dump = PredictionDump::new(2, "raw", dets.clone()).unwrap();
        let out = run_pipeline(&dump, &PostProcessConfig::default());
        assert_eq!(out.source_tag(), "postprocessed");
        // score filter drops the 0.03 detection, NMS drops the 0.85 duplicate
        assert_eq!(
            out.detections(ImageId(0)),
            &[dets[1].clone(), dets[3].clone(), dets[4].clone()]
        );
    }

    #[test]
    fn pipeline_keeps_background_rows_above_threshold() {
        let mut dets = five_detection_fixture();
        dets.push(det(&[0.06, 0.04, 0.9], [0.0, 0.6, 0.3, 0.9]));
        let dump = PredictionDump::new(2, "raw", dets.clone()).unwrap();
        let kept = run_pipeline(&dump, &PostProcessConfig::default());
        assert_eq!(kept.detections(ImageId(0)).len(), 4);
        assert_eq!(kept.detections(ImageId(0))[3], dets[5]);
    }

    #[test]
    fn disabled_pipeline_is_identity() {
        let dump = PredictionDump::new(2, "whatever", five_detection_fixture()).unwrap();
        let out = run_pipeline(&dump, &PostProcessConfig::disabled());
        assert_eq!(out.per_image(), dump.per_image());
        assert_eq!(out.source_tag(), "raw");

        let empty = PredictionDump::new(2, "raw", vec![]).unwrap();
        assert!(run_pipeline(&empty, &PostProcessConfig::default()).is_empty());
    }

    #[test]
    fn config_validation() {
        assert!(PostProcessConfig::default().validate().is_ok());
        let bad = PostProcessConfig {
            score_threshold: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = PostProcessConfig {
            top_k: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    fn arb_dets() -> impl Strategy<Value = Vec<Detection>> {
        let one = (
            prop::collection::vec(0.01..1.0f64, 3),
            0.0..0.6f64,
            0.0..0.6f64,
            0.05..0.4f64,
            0.05..0.4f64,
        )
            .prop_map(|(v, x, y, w, h)| Detection {
                image_id: ImageId(0),
                probs: ProbVector::normalize(v).unwrap(),
                bbox: BBox::new(x, y, x + w, y + h).unwrap(),
            });
        prop::collection::vec(one, 0..25)
    }

    proptest! {
        #[test]
        fn nms_is_idempotent(dets in arb_dets(), t in 0.1..0.9f64) {
            let once = nms_per_class(&dets, t);
            prop_assert_eq!(nms_per_class(&once, t), once);
        }

        #[test]
        fn pipeline_output_is_bounded_subset(dets in arb_dets(), k in 1usize..10, s in 0.0..0.6f64) {
            let cfg = PostProcessConfig { score_threshold: s, top_k: k, ..Default::default() };
            let out = postprocess_image(&dets, &cfg);
            prop_assert!(out.len() <= k.min(dets.len()));
            for d in &out {
                prop_assert!(dets.contains(d));
            }
        }

        #[test]
        fn raising_threshold_never_adds(dets in arb_dets(), a in 0.0..1.0f64, b in 0.0..1.0f64) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let run = |s| postprocess_image(&dets, &PostProcessConfig { score_threshold: s, ..Default::default() }).len();
            prop_assert!(run(hi) <= run(lo));
        }
    }
}
