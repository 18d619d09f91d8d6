//! Parsers for ground-truth annotations and detector prediction dumps.
//!
//! Two ground-truth formats are read: the COCO subset (`images`,
//! `annotations`, `categories`, boxes as absolute-pixel `[x, y, w, h]`) and a
//! native format with normalized corner boxes and dense labels. Predictions
//! are always native: one record per detection carrying the full `K + 1`
//! vector of probabilities or logits.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{BBox, ClassIndex, Detection, GroundTruth, ImageId, ProbVector};

/// Coordinates may overshoot `[0, 1]` by this much without being counted as
/// clamped.
const CLAMP_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GtFormat {
    Coco,
    Native,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    Probs,
    Logits,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageInfo {
    pub id: ImageId,
    pub width: u32,
    pub height: u32,
}

/// Images, per-image targets and class names.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Vec<ImageInfo>,
    targets: BTreeMap<ImageId, Vec<GroundTruth>>,
    class_names: Vec<String>,
    category_ids: Vec<i64>,
    clamped_boxes: usize,
}

impl Dataset {
    /// Groups `annotations` by image. Images are kept sorted by id; every
    /// image gets a (possibly empty) target list.
    pub fn new(
        mut images: Vec<ImageInfo>,
        class_names: Vec<String>,
        annotations: Vec<GroundTruth>,
    ) -> Result<Self> {
        if class_names.len() < 2 {
            return Err(Error::MalformedInput(format!(
                "need at least 2 object classes, found {}",
                class_names.len()
            )));
        }
        images.sort_by_key(|i| i.id);
        if let Some(w) = images.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::MalformedInput(format!(
                "duplicate image id {}",
                w[0].id
            )));
        }
        let mut targets: BTreeMap<ImageId, Vec<GroundTruth>> =
            images.iter().map(|i| (i.id, Vec::new())).collect();
        let k = class_names.len();
        for gt in annotations {
            if gt.label.0 >= k {
                return Err(Error::MalformedInput(format!(
                    "label {} out of range for {k} classes",
                    gt.label
                )));
            }
            match targets.get_mut(&gt.image_id) {
                Some(list) => list.push(gt),
                None => {
                    return Err(Error::InconsistentReference(format!(
                        "annotation refers to unknown image {}",
                        gt.image_id
                    )))
                }
            }
        }
        let category_ids = (0..k as i64).collect();
        Ok(Dataset {
            images,
            targets,
            class_names,
            category_ids,
            clamped_boxes: 0,
        })
    }

    pub fn images(&self) -> &[ImageInfo] {
        &self.images
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    /// Original category id for each dense label.
    pub fn category_ids(&self) -> &[i64] {
        &self.category_ids
    }

    /// Boxes that had to be clamped into the image during parsing.
    pub fn clamped_boxes(&self) -> usize {
        self.clamped_boxes
    }

    pub fn targets(&self, image: ImageId) -> &[GroundTruth] {
        self.targets.get(&image).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn contains_image(&self, image: ImageId) -> bool {
        self.targets.contains_key(&image)
    }

    pub fn num_annotations(&self) -> usize {
        self.targets.values().map(Vec::len).sum()
    }

    /// Serializes to the native ground-truth schema.
    pub fn to_native_json(&self) -> String {
        let file = NativeGtFile {
            class_names: self.class_names.clone(),
            images: self
                .images
                .iter()
                .map(|i| NativeImage {
                    id: i.id.0,
                    width: i.width,
                    height: i.height,
                })
                .collect(),
            annotations: self
                .targets
                .values()
                .flatten()
                .map(|g| NativeAnnotation {
                    image_id: g.image_id.0,
                    label: g.label.0,
                    bbox: g.bbox.corners(),
                })
                .collect(),
        };
        serde_json::to_string(&file).expect("dataset serializes")
    }
}

/// Detections grouped per image, in file order within each image.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionDump {
    num_classes: usize,
    source_tag: String,
    detections: BTreeMap<ImageId, Vec<Detection>>,
    clamped_boxes: usize,
}

impl PredictionDump {
    pub fn new(
        num_classes: usize,
        source_tag: impl Into<String>,
        detections: Vec<Detection>,
    ) -> Result<Self> {
        let mut grouped: BTreeMap<ImageId, Vec<Detection>> = BTreeMap::new();
        for d in detections {
            if d.probs.len() != num_classes + 1 {
                return Err(Error::DimensionMismatch {
                    expected: num_classes + 1,
                    found: d.probs.len(),
                });
            }
            grouped.entry(d.image_id).or_default().push(d);
        }
        Ok(PredictionDump {
            num_classes,
            source_tag: source_tag.into(),
            detections: grouped,
            clamped_boxes: 0,
        })
    }

    pub(crate) fn from_grouped(
        num_classes: usize,
        source_tag: impl Into<String>,
        detections: BTreeMap<ImageId, Vec<Detection>>,
    ) -> Self {
        PredictionDump {
            num_classes,
            source_tag: source_tag.into(),
            detections,
            clamped_boxes: 0,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn source_tag(&self) -> &str {
        &self.source_tag
    }

    pub fn clamped_boxes(&self) -> usize {
        self.clamped_boxes
    }

    /// Per-image detection lists in image-id order.
    pub fn per_image(&self) -> &BTreeMap<ImageId, Vec<Detection>> {
        &self.detections
    }

    pub fn detections(&self, image: ImageId) -> &[Detection] {
        self.detections
            .get(&image)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.detections.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Serializes to the native prediction schema with `kind = "probs"`.
    pub fn to_native_json(&self) -> String {
        let file = NativePredFile {
            num_classes: self.num_classes,
            kind: Some(InputKind::Probs),
            detections: self
                .detections
                .values()
                .flatten()
                .map(|d| NativeDetection {
                    image_id: d.image_id.0,
                    bbox: d.bbox.corners(),
                    vector: d.probs.as_slice().to_vec(),
                })
                .collect(),
        };
        serde_json::to_string(&file).expect("dump serializes")
    }
}

#[derive(Serialize, Deserialize)]
struct NativeGtFile {
    class_names: Vec<String>,
    images: Vec<NativeImage>,
    annotations: Vec<NativeAnnotation>,
}

#[derive(Serialize, Deserialize)]
struct NativeImage {
    id: u64,
    width: u32,
    height: u32,
}

#[derive(Serialize, Deserialize)]
struct NativeAnnotation {
    image_id: u64,
    label: usize,
    bbox: [f64; 4],
}

#[derive(Deserialize)]
struct CocoFile {
    images: Vec<CocoImage>,
    #[serde(default)]
    annotations: Vec<CocoAnnotation>,
    categories: Vec<CocoCategory>,
}

#[derive(Deserialize)]
struct CocoImage {
    id: u64,
    width: u32,
    height: u32,
}

#[derive(Deserialize)]
struct CocoAnnotation {
    image_id: u64,
    category_id: i64,
    bbox: [f64; 4],
}

#[derive(Deserialize)]
struct CocoCategory {
    id: i64,
    name: String,
}

#[derive(Serialize, Deserialize)]
struct NativePredFile {
    num_classes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kind: Option<InputKind>,
    detections: Vec<NativeDetection>,
}

#[derive(Serialize, Deserialize)]
struct NativeDetection {
    image_id: u64,
    bbox: [f64; 4],
    vector: Vec<f64>,
}

/// Clamps a normalized corner box into the unit square. Counts boxes that
/// overshoot by more than [`CLAMP_SLACK`]; rejects inverted boxes and boxes
/// lying entirely outside.
fn clamp_box(image_id: ImageId, c: [f64; 4], clamped: &mut usize) -> Result<BBox> {
    if c.iter().any(|v| !v.is_finite()) {
        return Err(Error::MalformedInput(format!(
            "non-finite box coordinate for image {image_id}"
        )));
    }
    let [x1, y1, x2, y2] = c;
    if x2 < x1 || y2 < y1 {
        return Err(Error::MalformedInput(format!(
            "inverted box {c:?} for image {image_id}"
        )));
    }
    if x1 > 1.0 || y1 > 1.0 || x2 < 0.0 || y2 < 0.0 {
        return Err(Error::OutOfRangeBox { image_id });
    }
    let fixed = c.map(|v| v.clamp(0.0, 1.0));
    if c.iter()
        .zip(&fixed)
        .any(|(a, b)| (a - b).abs() > CLAMP_SLACK)
    {
        *clamped += 1;
    }
    BBox::new(fixed[0], fixed[1], fixed[2], fixed[3])
}

pub fn parse_ground_truth(bytes: &[u8], format: GtFormat) -> Result<Dataset> {
    match format {
        GtFormat::Native => parse_native_gt(bytes),
        GtFormat::Coco => parse_coco_gt(bytes),
    }
}

fn parse_native_gt(bytes: &[u8]) -> Result<Dataset> {
    let file: NativeGtFile = serde_json::from_slice(bytes)?;
    let images: Vec<ImageInfo> = file
        .images
        .iter()
        .map(|i| ImageInfo {
            id: ImageId(i.id),
            width: i.width,
            height: i.height,
        })
        .collect();
    let mut clamped = 0;
    let annotations = file
        .annotations
        .iter()
        .map(|a| {
            let image_id = ImageId(a.image_id);
            Ok(GroundTruth {
                image_id,
                label: ClassIndex(a.label),
                bbox: clamp_box(image_id, a.bbox, &mut clamped)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut ds = Dataset::new(images, file.class_names, annotations)?;
    ds.clamped_boxes = clamped;
    Ok(ds)
}

fn parse_coco_gt(bytes: &[u8]) -> Result<Dataset> {
    let file: CocoFile = serde_json::from_slice(bytes)?;

    let mut categories: Vec<&CocoCategory> = file.categories.iter().collect();
    categories.sort_by_key(|c| c.id);
    if let Some(w) = categories.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(Error::MalformedInput(format!(
            "duplicate category id {}",
            w[0].id
        )));
    }
    let dense: HashMap<i64, usize> = categories
        .iter()
        .enumerate()
        .map(|(i, c)| (c.id, i))
        .collect();

    let sizes: HashMap<u64, (u32, u32)> = file
        .images
        .iter()
        .map(|i| (i.id, (i.width, i.height)))
        .collect();

    let mut clamped = 0;
    let mut annotations = Vec::with_capacity(file.annotations.len());
    for a in &file.annotations {
        let image_id = ImageId(a.image_id);
        let &(w, h) = sizes.get(&a.image_id).ok_or_else(|| {
            Error::InconsistentReference(format!("annotation refers to unknown image {image_id}"))
        })?;
        if w == 0 || h == 0 {
            return Err(Error::MalformedInput(format!(
                "image {image_id} has zero size"
            )));
        }
        let label = *dense.get(&a.category_id).ok_or_else(|| {
            Error::InconsistentReference(format!("unknown category id {}", a.category_id))
        })?;
        let [x, y, bw, bh] = a.bbox;
        let (w, h) = (f64::from(w), f64::from(h));
        let corners = [x / w, y / h, (x + bw) / w, (y + bh) / h];
        annotations.push(GroundTruth {
            image_id,
            label: ClassIndex(label),
            bbox: clamp_box(image_id, corners, &mut clamped)?,
        });
    }

    let images = file
        .images
        .iter()
        .map(|i| ImageInfo {
            id: ImageId(i.id),
            width: i.width,
            height: i.height,
        })
        .collect();
    let class_names = categories.iter().map(|c| c.name.clone()).collect();
    let mut ds = Dataset::new(images, class_names, annotations)?;
    ds.category_ids = categories.iter().map(|c| c.id).collect();
    ds.clamped_boxes = clamped;
    Ok(ds)
}

/// Parses a native prediction dump for `num_classes` object classes.
///
/// Logit vectors go through a max-subtracted softmax. Probability vectors are
/// validated and rescaled when their sum is within float rounding of one. A
/// `kind` field in the file, when present, must agree with `input_kind`.
pub fn parse_predictions(
    bytes: &[u8],
    num_classes: usize,
    input_kind: InputKind,
) -> Result<PredictionDump> {
    let file: NativePredFile = serde_json::from_slice(bytes)?;
    if file.num_classes != num_classes {
        return Err(Error::DimensionMismatch {
            expected: num_classes,
            found: file.num_classes,
        });
    }
    if let Some(kind) = file.kind {
        if kind != input_kind {
            return Err(Error::MalformedInput(format!(
                "file declares {kind:?} vectors but {input_kind:?} was requested"
            )));
        }
    }
    let mut clamped = 0;
    let detections = file
        .detections
        .into_iter()
        .map(|d| {
            if d.vector.len() != num_classes + 1 {
                return Err(Error::DimensionMismatch {
                    expected: num_classes + 1,
                    found: d.vector.len(),
                });
            }
            let image_id = ImageId(d.image_id);
            let probs = match input_kind {
                InputKind::Logits => ProbVector::from_logits(&d.vector)?,
                InputKind::Probs => ProbVector::renormalized(d.vector)?,
            };
            Ok(Detection {
                image_id,
                probs,
                bbox: clamp_box(image_id, d.bbox, &mut clamped)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut dump = PredictionDump::new(num_classes, "raw", detections)?;
    dump.clamped_boxes = clamped;
    Ok(dump)
}

pub fn load_ground_truth(path: &Path, format: GtFormat) -> Result<Dataset> {
    parse_ground_truth(&std::fs::read(path)?, format)
}

pub fn load_predictions(
    path: &Path,
    num_classes: usize,
    kind: InputKind,
) -> Result<PredictionDump> {
    parse_predictions(&std::fs::read(path)?, num_classes, kind)
}
