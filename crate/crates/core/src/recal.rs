//! Post-hoc probability transforms and grid sweeps over them.
//!
//! The background-weight sweep is a post-hoc analog of retraining a detector
//! with a heavier background loss weight: it rescales the predicted
//! background probability instead of changing the model.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{summarize, BinningConfig, LOG_EPSILON};
use crate::par;
use crate::types::{EvaluationSet, ProbVector, RecordKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum RecalTransform {
    Identity,
    /// `softmax(ln p / t)`.
    TemperatureScale(f64),
    /// Multiplies the background entry by `w` and renormalizes.
    BackgroundWeight(f64),
}

impl RecalTransform {
    pub fn validate(&self) -> Result<()> {
        match *self {
            RecalTransform::TemperatureScale(v) | RecalTransform::BackgroundWeight(v)
                if !(v > 0.0 && v.is_finite()) =>
            {
                Err(Error::InvalidConfig(format!(
                    "transform parameter {v} must be positive"
                )))
            }
            _ => Ok(()),
        }
    }

    /// Scalar parameter; 1 for the identity.
    pub fn param(&self) -> f64 {
        match *self {
            RecalTransform::Identity => 1.0,
            RecalTransform::TemperatureScale(v) | RecalTransform::BackgroundWeight(v) => v,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            RecalTransform::Identity => "identity",
            RecalTransform::TemperatureScale(_) => "temperature",
            RecalTransform::BackgroundWeight(_) => "background_weight",
        }
    }

    fn rank(&self) -> u8 {
        match self {
            RecalTransform::Identity => 0,
            RecalTransform::TemperatureScale(_) => 1,
            RecalTransform::BackgroundWeight(_) => 2,
        }
    }
}

pub fn apply(t: &RecalTransform, p: &ProbVector) -> ProbVector {
    match *t {
        RecalTransform::Identity => p.clone(),
        RecalTransform::TemperatureScale(tau) => {
            let logits: Vec<f64> = p
                .as_slice()
                .iter()
                .map(|v| v.max(LOG_EPSILON).ln() / tau)
                .collect();
            ProbVector::from_logits(&logits).expect("finite logits")
        }
        RecalTransform::BackgroundWeight(w) => {
            let mut values = p.as_slice().to_vec();
            let k = values.len() - 1;
            values[k] *= w;
            ProbVector::normalize(values).expect("positive mass")
        }
    }
}

/// Applies `t` to every record. Missing-ground-truth placeholders are left
/// alone when `skip_missing` is set.
pub fn apply_to_set(set: &EvaluationSet, t: &RecalTransform, skip_missing: bool) -> EvaluationSet {
    if *t == RecalTransform::Identity {
        return set.clone();
    }
    let records = par::map(set.records(), |r| {
        if skip_missing && r.kind() == RecordKind::MissingGroundTruth {
            r.clone()
        } else {
            r.with_probs(apply(t, r.probs()))
        }
    });
    EvaluationSet::new(set.num_classes(), records).expect("transforms keep the class count")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub transform: RecalTransform,
    pub param: f64,
    pub nll: f64,
    pub brier: f64,
    pub tce: f64,
    pub mce: f64,
    pub dmce: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    /// Sorted by transform kind, then parameter.
    pub rows: Vec<SweepRow>,
    /// Row minimizing each metric (first row on ties).
    pub argmin: BTreeMap<String, SweepRow>,
}

impl SweepTable {
    pub fn column(&self, metric: &str) -> Vec<Option<f64>> {
        self.rows.iter().map(|r| metric_of(r, metric)).collect()
    }
}

pub const SWEEP_METRICS: [&str; 5] = ["nll", "brier", "tce", "mce", "dmce"];

fn metric_of(row: &SweepRow, metric: &str) -> Option<f64> {
    match metric {
        "nll" => Some(row.nll),
        "brier" => Some(row.brier),
        "tce" => Some(row.tce),
        "mce" => Some(row.mce),
        "dmce" => row.dmce,
        _ => None,
    }
}

/// Re-scores `set` under every transform in `grid`.
pub fn sweep(
    set: &EvaluationSet,
    grid: &[RecalTransform],
    cfg: &BinningConfig,
    skip_missing: bool,
) -> Result<SweepTable> {
    if set.is_empty() {
        return Err(Error::EmptyEvaluationSet);
    }
    if grid.is_empty() {
        return Err(Error::InvalidConfig("empty transform grid".into()));
    }
    for t in grid {
        t.validate()?;
    }
    let mut grid = grid.to_vec();
    grid.sort_by(|a, b| {
        a.rank()
            .cmp(&b.rank())
            .then(a.param().total_cmp(&b.param()))
    });

    let rows = par::map(&grid, |t| {
        let transformed = apply_to_set(set, t, skip_missing);
        summarize(&transformed, cfg).map(|s| SweepRow {
            transform: *t,
            param: t.param(),
            nll: s.nll,
            brier: s.brier,
            tce: s.tce(),
            mce: s.mce(),
            dmce: s.detection.as_ref().map(|d| d.dmce),
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut argmin = BTreeMap::new();
    for metric in SWEEP_METRICS {
        let best = rows
            .iter()
            .filter_map(|r| metric_of(r, metric).map(|v| (v, r)))
            .fold(None::<(f64, &SweepRow)>, |best, (v, r)| match best {
                Some((bv, _)) if bv <= v => best,
                _ => Some((v, r)),
            });
        if let Some((_, row)) = best {
            argmin.insert(metric.to_string(), *row);
        }
    }
    Ok(SweepTable { rows, argmin })
}

/// `start, start + step, ...` up to and including `stop` (within 1e-9).
pub fn linear_grid(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if step <= 0.0 || !step.is_finite() || !start.is_finite() || !stop.is_finite() || stop < start {
        return Err(Error::InvalidConfig(format!(
            "grid {start}:{stop}:{step} is empty or malformed"
        )));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| start + step * i as f64).collect())
}
