//! Synthetic detection scenarios whose calibration is known by construction.
//!
//! Every emitted probability vector is drawn first and its label second,
//! sampled from that very vector. A label that lands on background turns the
//! detection into a background-region prediction with no ground truth; an
//! object label creates the ground-truth object the detection sits on. The
//! evaluated set is therefore calibrated in expectation for every class,
//! background included. Miscalibration knobs act on the vectors after the
//! labels are fixed, so their direction is known.
//!
//! Objects are placed in disjoint grid cells so IoU matching recovers the
//! generating pairs exactly when the box jitter is zero.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Dataset, ImageInfo, PredictionDump};
use crate::types::{BBox, ClassIndex, Detection, GroundTruth, ImageId, ProbVector};

const IMAGE_WIDTH: u32 = 640;
const IMAGE_HEIGHT: u32 = 480;

/// Temperature applied to duplicate detections: they are flatter copies of the
/// detection they duplicate.
const DUPLICATE_TEMPERATURE: f64 = 2.0;
/// Box jitter of duplicates relative to the detection they copy.
const DUPLICATE_JITTER: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Miscalibration {
    None,
    /// Emitted vectors become `p^(1/t)` renormalized; `t < 1` sharpens.
    Temperature(f64),
    /// The background entry is multiplied by the factor and renormalized.
    BackgroundBias(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub num_images: usize,
    pub num_classes: usize,
    /// Inclusive range of object slots per image.
    pub objects_per_image: (usize, usize),
    pub miscalibration: Miscalibration,
    /// Half-width of the uniform noise added to each box coordinate.
    pub detector_noise: f64,
    pub miss_rate: f64,
    /// Probability that an image gets an extra background-leaning slot.
    pub spurious_rate: f64,
    /// Symmetric Dirichlet concentration for object slots.
    pub concentration: f64,
    /// Extra, flatter copies emitted for each detected object.
    pub duplicates: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            seed: 0,
            num_images: 1000,
            num_classes: 3,
            objects_per_image: (1, 6),
            miscalibration: Miscalibration::None,
            detector_noise: 0.02,
            miss_rate: 0.0,
            spurious_rate: 0.3,
            concentration: 0.5,
            duplicates: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.num_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.num_classes));
        }
        let (lo, hi) = self.objects_per_image;
        if lo > hi {
            return bad(format!("objects per image range {lo}..={hi} is empty"));
        }
        for (name, v) in [
            ("miss rate", self.miss_rate),
            ("spurious rate", self.spurious_rate),
            ("detector noise", self.detector_noise),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} {v} outside [0, 1]"));
            }
        }
        if !(self.concentration > 0.0 && self.concentration.is_finite()) {
            return bad(format!(
                "concentration {} must be positive",
                self.concentration
            ));
        }
        match self.miscalibration {
            Miscalibration::Temperature(t) if !(t > 0.0 && t.is_finite()) => {
                bad(format!("temperature {t} must be positive"))
            }
            Miscalibration::BackgroundBias(b) if !(b > 0.0 && b.is_finite()) => {
                bad(format!("background bias {b} must be positive"))
            }
            _ => Ok(()),
        }
    }
}

fn dirichlet(rng: &mut ChaCha8Rng, alphas: &[f64]) -> Vec<f64> {
    loop {
        let draws: Vec<f64> = alphas
            .iter()
            .map(|&a| Gamma::new(a, 1.0).expect("positive shape").sample(rng))
            .collect();
        let sum: f64 = draws.iter().sum();
        if sum > 0.0 && sum.is_finite() {
            return draws.into_iter().map(|g| g / sum).collect();
        }
    }
}

fn categorical(rng: &mut ChaCha8Rng, p: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    for (i, &v) in p.iter().enumerate() {
        cum += v;
        if u < cum {
            return i;
        }
    }
    p.iter().rposition(|&v| v > 0.0).unwrap_or(p.len() - 1)
}

fn power_normalize(p: &[f64], exponent: f64) -> Vec<f64> {
    let raised: Vec<f64> = p.iter().map(|v| v.powf(exponent)).collect();
    let sum: f64 = raised.iter().sum();
    raised.into_iter().map(|v| v / sum).collect()
}

fn miscalibrate(p: &[f64], m: Miscalibration) -> Vec<f64> {
    match m {
        Miscalibration::None => p.to_vec(),
        Miscalibration::Temperature(t) => power_normalize(p, 1.0 / t),
        Miscalibration::BackgroundBias(beta) => {
            let mut q = p.to_vec();
            let k = q.len() - 1;
            q[k] *= beta;
            let sum: f64 = q.iter().sum();
            q.into_iter().map(|v| v / sum).collect()
        }
    }
}

fn to_probs(values: Vec<f64>) -> ProbVector {
    ProbVector::normalize(values).expect("generated vectors are non-negative with positive mass")
}

/// Box inside grid cell `(col, row)` of a `grid x grid` layout, covering
/// between half and nine tenths of the cell along each axis.
fn box_in_cell(rng: &mut ChaCha8Rng, grid: usize, cell: usize) -> BBox {
    let size = 1.0 / grid as f64;
    let (col, row) = ((cell % grid) as f64, (cell / grid) as f64);
    let w = size * rng.random_range(0.5..0.9);
    let h = size * rng.random_range(0.5..0.9);
    let x = col * size + rng.random_range(0.0..(size - w));
    let y = row * size + rng.random_range(0.0..(size - h));
    BBox::new(x, y, (x + w).min(1.0), (y + h).min(1.0)).expect("cell box inside unit square")
}

fn jitter(rng: &mut ChaCha8Rng, b: &BBox, sigma: f64) -> BBox {
    if sigma == 0.0 {
        return *b;
    }
    let mut c = b.corners();
    for v in &mut c {
        *v = (*v + rng.random_range(-sigma..=sigma)).clamp(0.0, 1.0);
    }
    let (x1, x2) = (c[0].min(c[2]), c[0].max(c[2]));
    let (y1, y2) = (c[1].min(c[3]), c[1].max(c[3]));
    BBox::new(x1, y1, x2, y2).expect("clamped box")
}

/// Generates a dataset and a raw prediction dump from `cfg`.
pub fn generate(cfg: &SyntheticConfig) -> Result<(Dataset, PredictionDump)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let k = cfg.num_classes;
    let (min_obj, max_obj) = cfg.objects_per_image;
    let max_slots = max_obj + usize::from(cfg.spurious_rate > 0.0);
    let grid = (max_slots.max(1) as f64).sqrt().ceil() as usize;

    let object_alpha = vec![cfg.concentration; k + 1];
    let mut spurious_alpha = vec![cfg.concentration * 0.5; k + 1];
    spurious_alpha[k] = cfg.concentration * 4.0;

    let mut images = Vec::with_capacity(cfg.num_images);
    let mut annotations = Vec::new();
    let mut detections = Vec::new();

    for n in 0..cfg.num_images {
        let image_id = ImageId(n as u64 + 1);
        images.push(ImageInfo {
            id: image_id,
            width: IMAGE_WIDTH,
            height: IMAGE_HEIGHT,
        });
        let objects = rng.random_range(min_obj..=max_obj);
        let spurious = rng.random::<f64>() < cfg.spurious_rate;
        let mut cells: Vec<usize> = (0..grid * grid).collect();
        // partial Fisher-Yates: the first `slots` cells are a uniform draw
        let slots = objects + usize::from(spurious);
        for i in 0..slots {
            let j = rng.random_range(i..cells.len());
            cells.swap(i, j);
        }

        for (slot, &cell) in cells[..slots].iter().enumerate() {
            let alphas = if slot < objects {
                &object_alpha
            } else {
                &spurious_alpha
            };
            let bbox = box_in_cell(&mut rng, grid, cell);
            let p = dirichlet(&mut rng, alphas);
            let label = categorical(&mut rng, &p);
            let detected = rng.random::<f64>() >= cfg.miss_rate;
            let emitted = miscalibrate(&p, cfg.miscalibration);

            if label < k {
                annotations.push(GroundTruth {
                    image_id,
                    label: ClassIndex(label),
                    bbox,
                });
                if !detected {
                    continue;
                }
            }
            let det_box = jitter(&mut rng, &bbox, cfg.detector_noise);
            detections.push(Detection {
                image_id,
                probs: to_probs(emitted.clone()),
                bbox: det_box,
            });
            if label < k && crate::types::argmax(&emitted) < k {
                for _ in 0..cfg.duplicates {
                    detections.push(Detection {
                        image_id,
                        probs: to_probs(power_normalize(&emitted, 1.0 / DUPLICATE_TEMPERATURE)),
                        bbox: jitter(&mut rng, &det_box, DUPLICATE_JITTER),
                    });
                }
            }
        }
    }

    let class_names = (0..k).map(|c| format!("class_{c}")).collect();
    let dataset = Dataset::new(images, class_names, annotations)?;
    let dump = PredictionDump::new(k, "raw", detections)?;
    Ok((dataset, dump))
}

/// Object classes in [`make_tce_blind_instance`].
pub const TCE_BLIND_CLASSES: usize = 3;
/// Confidence placed on the predicted class in [`make_tce_blind_instance`].
pub const TCE_BLIND_CONFIDENCE: f64 = 0.7;

/// `n` matched detections whose top-label confidence is calibrated while the
/// remaining mass is systematically misplaced.
///
/// Each detection puts 0.7 on a uniformly chosen object class and 0.3 on
/// background. Its true label is the predicted class with probability 0.7 and
/// otherwise one of the other object classes, never background. Top-label
/// calibration is exact in expectation; the background and non-top entries
/// are badly off. Statistical guarantees assume `n >= 1000`.
pub fn make_tce_blind_instance(seed: u64, n: usize) -> (Dataset, PredictionDump) {
    const PER_IMAGE: usize = 4;
    let k = TCE_BLIND_CLASSES;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let num_images = n.div_ceil(PER_IMAGE);
    let mut images = Vec::with_capacity(num_images);
    let mut annotations = Vec::with_capacity(n);
    let mut detections = Vec::with_capacity(n);

    for i in 0..n {
        let image_id = ImageId((i / PER_IMAGE) as u64 + 1);
        if i % PER_IMAGE == 0 {
            images.push(ImageInfo {
                id: image_id,
                width: IMAGE_WIDTH,
                height: IMAGE_HEIGHT,
            });
        }
        let bbox = box_in_cell(&mut rng, 2, i % PER_IMAGE);
        let predicted = rng.random_range(0..k);
        let label = if rng.random::<f64>() < TCE_BLIND_CONFIDENCE {
            predicted
        } else {
            let other = rng.random_range(0..k - 1);
            if other >= predicted {
                other + 1
            } else {
                other
            }
        };
        let mut p = vec![0.0; k + 1];
        p[predicted] = TCE_BLIND_CONFIDENCE;
        p[k] = 1.0 - TCE_BLIND_CONFIDENCE;
        annotations.push(GroundTruth {
            image_id,
            label: ClassIndex(label),
            bbox,
        });
        detections.push(Detection {
            image_id,
            probs: ProbVector::new(p).expect("fixed simplex point"),
            bbox,
        });
    }

    let class_names = (0..k).map(|c| format!("class_{c}")).collect();
    let dataset = Dataset::new(images, class_names, annotations).expect("valid construction");
    let dump = PredictionDump::new(k, "raw", detections).expect("valid construction");
    (dataset, dump)
}

/// A raw dump rich in duplicates: every detected object comes with three
/// flatter, slightly shifted copies, the way an unfiltered two-stage detector
/// reports one object several times.
pub fn make_duplicate_rich_instance(seed: u64, num_images: usize) -> (Dataset, PredictionDump) {
    let cfg = SyntheticConfig {
        seed,
        num_images,
        num_classes: 3,
        objects_per_image: (2, 5),
        detector_noise: 0.0,
        spurious_rate: 0.5,
        duplicates: 3,
        ..Default::default()
    };
    generate(&cfg).expect("valid fixed config")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{parse_ground_truth, parse_predictions, GtFormat, InputKind};
    use crate::matching::{build_evaluation_set, MatchConfig};
    use crate::types::RecordKind;

    #[test]
    fn deterministic_for_a_seed() {
        let cfg = SyntheticConfig {
            seed: 11,
            num_images: 50,
            ..Default::default()
        };
        let (a_ds, a_dump) = generate(&cfg).unwrap();
        let (b_ds, b_dump) = generate(&cfg).unwrap();
        assert_eq!(a_ds.to_native_json(), b_ds.to_native_json());
        assert_eq!(a_dump.to_native_json(), b_dump.to_native_json());

        let (c_ds, _) = generate(&SyntheticConfig { seed: 12, ..cfg }).unwrap();
        assert_ne!(a_ds.to_native_json(), c_ds.to_native_json());
    }

    #[test]
    fn output_round_trips_through_native_json() {
        let cfg = SyntheticConfig {
            num_images: 40,
            ..Default::default()
        };
        let (ds, dump) = generate(&cfg).unwrap();
        let ds2 = parse_ground_truth(ds.to_native_json().as_bytes(), GtFormat::Native).unwrap();
        let dump2 =
            parse_predictions(dump.to_native_json().as_bytes(), 3, InputKind::Probs).unwrap();
        assert_eq!(ds2, ds);
        assert_eq!(dump2.per_image(), dump.per_image());
    }

    #[test]
    fn boxes_are_large_enough() {
        let (ds, _) = generate(&SyntheticConfig::default()).unwrap();
        for info in ds.images() {
            for g in ds.targets(info.id) {
                assert!(g.bbox.area() >= 0.001);
            }
        }
    }

    #[test]
    fn full_miss_rate_leaves_only_missing_objects() {
        let cfg = SyntheticConfig {
            num_images: 100,
            miss_rate: 1.0,
            ..Default::default()
        };
        let (ds, dump) = generate(&cfg).unwrap();
        let set = build_evaluation_set(&ds, &dump, &MatchConfig::default()).unwrap();
        let missing = set
            .records()
            .iter()
            .filter(|r| r.kind() == RecordKind::MissingGroundTruth)
            .count();
        assert_eq!(missing, ds.num_annotations());
        assert!(set
            .records()
            .iter()
            .all(|r| r.kind() != RecordKind::Matched));
    }

    #[test]
    fn zero_noise_matching_recovers_every_pair() {
        let cfg = SyntheticConfig {
            num_images: 200,
            detector_noise: 0.0,
            ..Default::default()
        };
        let (ds, dump) = generate(&cfg).unwrap();
        let set = build_evaluation_set(&ds, &dump, &MatchConfig::default()).unwrap();
        assert!(set
            .records()
            .iter()
            .all(|r| r.kind() != RecordKind::MissingGroundTruth));
        let matched = set
            .records()
            .iter()
            .filter(|r| r.kind() == RecordKind::Matched)
            .count();
        assert_eq!(matched, ds.num_annotations());
    }

    #[test]
    fn invalid_configs() {
        let base = SyntheticConfig::default();
        for cfg in [
            SyntheticConfig {
                miss_rate: 1.5,
                ..base.clone()
            },
            SyntheticConfig {
                miscalibration: Miscalibration::Temperature(0.0),
                ..base.clone()
            },
            SyntheticConfig {
                miscalibration: Miscalibration::BackgroundBias(-1.0),
                ..base.clone()
            },
            SyntheticConfig {
                num_classes: 1,
                ..base.clone()
            },
            SyntheticConfig {
                objects_per_image: (3, 2),
                ..base.clone()
            },
        ] {
            assert!(matches!(generate(&cfg), Err(Error::InvalidConfig(_))));
        }
    }

    #[test]
    fn tce_blind_is_deterministic() {
        let (a, da) = make_tce_blind_instance(5, 1000);
        let (b, db) = make_tce_blind_instance(5, 1000);
        assert_eq!(a.to_native_json(), b.to_native_json());
        assert_eq!(da.to_native_json(), db.to_native_json());
        assert_eq!(da.len(), 1000);
    }

    #[test]
    fn duplicates_are_flatter_copies() {
        let (_, dump) = make_duplicate_rich_instance(1, 5);
        for dets in dump.per_image().values() {
            for w in dets.windows(2) {
                let (a, b) = (&w[0], &w[1]);
                if a.probs.argmax() == b.probs.argmax() && b.probs.max() < a.probs.max() {
                    return;
                }
            }
        }
        panic!("no duplicate pair found");
    }
}
