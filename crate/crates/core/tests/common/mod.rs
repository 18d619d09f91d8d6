#![allow(dead_code)]

use detcal_core::{
    BBox, ClassIndex, EvaluationRecord, EvaluationSet, ImageId, ProbVector, RecordKind,
};
use detcal_oracle::Rec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Oracle records turned into an evaluation set. Unmatched predictions carry
/// the background label, missing ground truths the one-hot background vector.
pub fn to_set(recs: &[Rec], k: usize) -> EvaluationSet {
    let b = BBox::new(0.1, 0.1, 0.4, 0.4).unwrap();
    let records = recs
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let (kind, gt_box, pred_box) = if r.missing {
                (RecordKind::MissingGroundTruth, b, BBox::ZERO)
            } else if r.label == k {
                (RecordKind::UnmatchedPrediction, BBox::ZERO, b)
            } else {
                (RecordKind::Matched, b, b)
            };
            EvaluationRecord::from_parts(
                ImageId(i as u64 / 7),
                kind,
                ClassIndex(r.label),
                gt_box,
                ProbVector::new(r.probs.clone()).unwrap(),
                pred_box,
            )
            .unwrap()
        })
        .collect();
    EvaluationSet::new(k, records).unwrap()
}

pub fn random_set(rng: &mut ChaCha8Rng, n: usize, k: usize) -> (EvaluationSet, Vec<Rec>) {
    let recs = detcal_oracle::gen::random_recs(rng, n, k);
    (to_set(&recs, k), recs)
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}
