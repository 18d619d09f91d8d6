//! Reference implementations written for clarity, not speed.
//!
//! Everything here works on plain vectors and recomputes from scratch with
//! nested loops, so it shares no code with `detcal-core`.

pub mod gen;

pub const EPS: f64 = 1e-12;

/// One scored record: class probabilities (background last), the label and
/// whether it stands for a ground truth nobody predicted.
#[derive(Debug, Clone)]
pub struct Rec {
    pub probs: Vec<f64>,
    pub label: usize,
    pub missing: bool,
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..p.len() {
        if p[i] > p[best] {
            best = i;
        }
    }
    best
}

fn in_bin(p: f64, m: usize, bins: usize) -> bool {
    let lo = m as f64 / bins as f64;
    let hi = (m + 1) as f64 / bins as f64;
    let above = if m == 0 { p >= lo } else { p > lo };
    above && (p <= hi || m + 1 == bins)
}

pub fn nll(recs: &[Rec]) -> f64 {
    let mut total = 0.0;
    for r in recs {
        let p = r.probs[r.label];
        total += -(if p < EPS { EPS } else { p }).ln();
    }
    total / recs.len() as f64
}

pub fn brier(recs: &[Rec]) -> f64 {
    let mut total = 0.0;
    for r in recs {
        for (k, p) in r.probs.iter().enumerate() {
            let t = if k == r.label { 1.0 } else { 0.0 };
            total += (p - t) * (p - t);
        }
    }
    total / recs.len() as f64
}

/// Weighted gap between accuracy and confidence, where `score(r)` gives the
/// confidence and whether the event happened, and weights are divided by
/// `denom`.
fn binned_error<F>(recs: &[&Rec], bins: usize, denom: f64, score: F) -> f64
where
    F: Fn(&Rec) -> (f64, bool),
{
    let mut total = 0.0;
    for m in 0..bins {
        let mut count = 0usize;
        let mut sum_p = 0.0;
        let mut hits = 0usize;
        for r in recs {
            let (p, hit) = score(r);
            if in_bin(p, m, bins) {
                count += 1;
                sum_p += p;
                if hit {
                    hits += 1;
                }
            }
        }
        if count > 0 {
            let gap = hits as f64 / count as f64 - sum_p / count as f64;
            total += count as f64 / denom * gap * gap;
        }
    }
    total
}

pub fn tce(recs: &[Rec], bins: usize) -> f64 {
    let all: Vec<&Rec> = recs.iter().collect();
    let n = recs.len() as f64;
    binned_error(&all, bins, n, |r| {
        let a = argmax(&r.probs);
        (r.probs[a], a == r.label)
    })
    .sqrt()
}

pub fn mce(recs: &[Rec], bins: usize) -> f64 {
    let all: Vec<&Rec> = recs.iter().collect();
    let n = recs.len() as f64;
    let classes = recs[0].probs.len();
    let mut total = 0.0;
    for k in 0..classes {
        total += binned_error(&all, bins, n, |r| (r.probs[k], r.label == k));
    }
    total.sqrt()
}

fn detection_subset(recs: &[Rec]) -> Vec<&Rec> {
    recs.iter()
        .filter(|r| !r.missing && argmax(&r.probs) != r.probs.len() - 1)
        .collect()
}

pub fn dtce(recs: &[Rec], bins: usize) -> Option<f64> {
    let sub = detection_subset(recs);
    if sub.is_empty() {
        return None;
    }
    let n = sub.len() as f64;
    Some(
        binned_error(&sub, bins, n, |r| {
            let a = argmax(&r.probs);
            (r.probs[a], a == r.label)
        })
        .sqrt(),
    )
}

pub fn dmce(recs: &[Rec], bins: usize) -> Option<f64> {
    let sub = detection_subset(recs);
    if sub.is_empty() {
        return None;
    }
    let n = sub.len() as f64;
    let objects = recs[0].probs.len() - 1;
    let mut total = 0.0;
    for k in 0..objects {
        total += binned_error(&sub, bins, n, |r| (r.probs[k], r.label == k));
    }
    Some(total.sqrt())
}

pub fn entropy(p: &[f64]) -> f64 {
    let mut h = 0.0;
    for &x in p {
        if x > 0.0 {
            h -= x * x.ln();
        }
    }
    h
}

pub fn iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    let w = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let h = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = w * h;
    let union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// One-to-one matching by exhaustive search: among all matchings made of
/// pairs with IoU at least `threshold`, the one whose membership vector,
/// read in priority order, is lexicographically greatest. Priority is IoU
/// descending, then prediction object score descending, then ground-truth
/// index, then prediction index. Returns sorted `(gt, pred)` pairs.
pub fn best_matching(
    gts: &[[f64; 4]],
    preds: &[[f64; 4]],
    object_scores: &[f64],
    threshold: f64,
) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for (g, gb) in gts.iter().enumerate() {
        for (p, pb) in preds.iter().enumerate() {
            let o = iou(*gb, *pb);
            if o >= threshold {
                pairs.push((o, object_scores[p], g, p));
            }
        }
    }
    pairs.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then(b.1.partial_cmp(&a.1).unwrap())
            .then(a.2.cmp(&b.2))
            .then(a.3.cmp(&b.3))
    });

    let mut best: Option<Vec<bool>> = None;
    let mut chosen = vec![false; pairs.len()];
    enumerate(&pairs, 0, &mut chosen, &mut best);
    let best = best.unwrap_or_default();
    let mut out: Vec<(usize, usize)> = pairs
        .iter()
        .zip(&best)
        .filter(|(_, &c)| c)
        .map(|(&(_, _, g, p), _)| (g, p))
        .collect();
    out.sort();
    out
}

fn enumerate(
    pairs: &[(f64, f64, usize, usize)],
    i: usize,
    chosen: &mut Vec<bool>,
    best: &mut Option<Vec<bool>>,
) {
    if i == pairs.len() {
        if best.as_ref().is_none_or(|b| *chosen > *b) {
            *best = Some(chosen.clone());
        }
        return;
    }
    let (_, _, g, p) = pairs[i];
    let free = (0..i).all(|j| !chosen[j] || (pairs[j].2 != g && pairs[j].3 != p));
    if free {
        chosen[i] = true;
        enumerate(pairs, i + 1, chosen, best);
        chosen[i] = false;
    }
    enumerate(pairs, i + 1, chosen, best);
}

pub struct OracleGt {
    pub image: u64,
    pub label: usize,
    pub bbox: [f64; 4],
}

pub struct OracleDet {
    pub image: u64,
    /// Position of the detection within its image.
    pub index: usize,
    pub probs: Vec<f64>,
    pub bbox: [f64; 4],
}

/// Class-averaged AP at IoU 0.5 over classes that have ground truth, with
/// precision at each recall step taken as the best precision at any later
/// rank.
pub fn ap50(gts: &[OracleGt], dets: &[OracleDet], num_classes: usize) -> Option<f64> {
    let mut aps = Vec::new();
    for class in 0..num_classes {
        let num_gt = gts.iter().filter(|g| g.label == class).count();
        if num_gt == 0 {
            continue;
        }
        let mut ranked: Vec<&OracleDet> =
            dets.iter().filter(|d| argmax(&d.probs) == class).collect();
        ranked.sort_by(|a, b| {
            b.probs[class]
                .partial_cmp(&a.probs[class])
                .unwrap()
                .then(a.image.cmp(&b.image))
                .then(a.index.cmp(&b.index))
        });
        let mut used = vec![false; gts.len()];
        let mut hits = Vec::new();
        for d in &ranked {
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in gts.iter().enumerate() {
                if gt.image != d.image || gt.label != class || used[g] {
                    continue;
                }
                let o = iou(gt.bbox, d.bbox);
                if o >= 0.5 && best.is_none_or(|(_, b)| o > b) {
                    best = Some((g, o));
                }
            }
            if let Some((g, _)) = best {
                used[g] = true;
            }
            hits.push(best.is_some());
        }
        let mut ap = 0.0;
        let mut tp = 0;
        for i in 0..hits.len() {
            if !hits[i] {
                continue;
            }
            let mut envelope: f64 = 0.0;
            let mut tp_j = tp;
            for (j, &h) in hits.iter().enumerate().skip(i) {
                if h {
                    tp_j += 1;
                }
                envelope = envelope.max(tp_j as f64 / (j + 1) as f64);
            }
            tp += 1;
            ap += envelope / num_gt as f64;
        }
        aps.push(ap);
    }
    if aps.is_empty() {
        None
    } else {
        Some(aps.iter().sum::<f64>() / aps.len() as f64)
    }
}
