//! Detector backends and the two cascaded detection stages.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::match_detections;
use crate::geometry::{expand_margin, BBox, FrameDims};
use crate::recognize::CharDomain;

/// IoU at which a detection counts as correct.
pub const IOU_CORRECT: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("backend failure: {0}")]
    Failed(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("no license plate found in vehicle patch")]
    NoPlate,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("no threshold in the grid detects every validation object ({missed} missed at the lowest)")]
    NoThreshold { missed: usize },
    #[error("no margin up to {max} contains every inner box")]
    NoMargin { max: f64 },
    #[error("calibration needs at least one ground-truth object")]
    Empty,
}

/// What a backend is asked to find.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Vehicle,
    Plate,
    Characters,
}

impl Task {
    pub fn tag(self) -> &'static str {
        match self {
            Task::Vehicle => "vehicle",
            Task::Plate => "plate",
            Task::Characters => "characters",
        }
    }
}

/// Opaque reference to a region of an image. Backends never receive pixels
/// from the pipeline; a real backend resolves `source` itself.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRef {
    pub source: String,
    pub frame: FrameDims,
    /// Region of the frame, in frame coordinates.
    pub patch: BBox,
}

impl ImageRef {
    pub fn full_frame(source: impl Into<String>, frame: FrameDims) -> Self {
        Self {
            source: source.into(),
            frame,
            patch: frame.bounds(),
        }
    }

    pub fn with_patch(&self, patch: BBox) -> Self {
        Self {
            source: self.source.clone(),
            frame: self.frame,
            patch,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class_id: usize,
    pub confidence: f64,
    pub bbox: BBox,
}

impl Detection {
    pub fn to_parent(&self, patch: &BBox) -> Detection {
        Detection {
            bbox: self.bbox.to_parent(patch),
            ..*self
        }
    }
}

/// Descending confidence, then ascending `(x, y, class_id)`.
pub fn rank(a: &Detection, b: &Detection) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then(a.bbox.x.total_cmp(&b.bbox.x))
        .then(a.bbox.y.total_cmp(&b.bbox.y))
        .then(a.class_id.cmp(&b.class_id))
}

/// Inference backend. Detections come back in the coordinates of
/// `image.patch`; class scores are keyed by label.
pub trait Backend: Send + Sync {
    fn detect(&self, task: Task, image: &ImageRef) -> Result<Vec<Detection>, BackendError>;

    fn classify(&self, image: &ImageRef, domain: CharDomain) -> Result<Vec<(char, f64)>, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectPolicy {
    AllAboveThreshold,
    SingleBest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub arch: String,
    pub confidence_threshold: f64,
    pub margin: f64,
    pub select_policy: SelectPolicy,
}

impl StageConfig {
    pub fn check(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.confidence_threshold) {
            return Err(format!(
                "confidence_threshold {} outside [0, 1]",
                self.confidence_threshold
            ));
        }
        if !(self.margin >= 0.0) || !self.margin.is_finite() {
            return Err(format!("margin {} must be >= 0", self.margin));
        }
        Ok(())
    }
}

/// Runs the backend and applies the stage's threshold, ordering and
/// selection policy. Boxes stay in patch coordinates.
pub fn detect(backend: &dyn Backend, task: Task, image: &ImageRef, stage: &StageConfig) -> Result<Vec<Detection>, BackendError> {
    let mut dets: Vec<Detection> = backend
        .detect(task, image)?
        .into_iter()
        .filter(|d| d.confidence >= stage.confidence_threshold)
        .collect();
    dets.sort_by(rank);
    if stage.select_policy == SelectPolicy::SingleBest {
        dets.truncate(1);
    }
    Ok(dets)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleHit {
    /// Detection in frame coordinates.
    pub detection: Detection,
    /// Detection box grown by the stage margin and clipped to the frame.
    pub patch: BBox,
}

/// Finds vehicles in the whole frame. An empty result means the frame
/// yields a negative recognition result.
pub fn vehicle_stage(backend: &dyn Backend, frame: &ImageRef, config: &StageConfig) -> Result<Vec<VehicleHit>, BackendError> {
    let whole = frame.with_patch(frame.frame.bounds());
    Ok(detect(backend, Task::Vehicle, &whole, config)?
        .into_iter()
        .map(|d| {
            let detection = d.to_parent(&whole.patch);
            let bbox = detection.bbox.clip(frame.frame);
            VehicleHit {
                detection: Detection { bbox, ..detection },
                patch: expand_margin(&bbox, config.margin, frame.frame),
            }
        })
        .collect())
}

/// Keeps the single most confident plate inside a vehicle patch and maps it
/// back to frame coordinates. The threshold comes from `config`.
pub fn lp_stage(backend: &dyn Backend, frame: &ImageRef, vehicle_patch: &BBox, config: &StageConfig) -> Result<Detection, DetectError> {
    let image = frame.with_patch(*vehicle_patch);
    let single = StageConfig {
        select_policy: SelectPolicy::SingleBest,
        ..config.clone()
    };
    let best = detect(backend, Task::Plate, &image, &single)?
        .into_iter()
        .next()
        .ok_or(DetectError::NoPlate)?;
    let d = best.to_parent(vehicle_patch);
    Ok(Detection {
        bbox: d.bbox.clip(frame.frame),
        ..d
    })
}

/// Validation detections of one frame with their ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationFrame {
    pub predictions: Vec<Detection>,
    pub ground_truth: Vec<BBox>,
}

/// Threshold grid step.
pub const THRESHOLD_STEP: f64 = 0.005;

/// Finds the largest grid threshold at which every validation object is
/// still detected (IoU >= 0.5) and returns half of it for deployment.
pub fn calibrate_threshold(frames: &[ValidationFrame]) -> Result<f64, CalibrationError> {
    let total: usize = frames.iter().map(|f| f.ground_truth.len()).sum();
    if total == 0 {
        return Err(CalibrationError::Empty);
    }
    let steps = (1.0 / THRESHOLD_STEP).round() as u32;
    let mut missed_at_lowest = total;
    for k in (1..=steps).rev() {
        let t = k as f64 / steps as f64;
        let missed: usize = frames
            .iter()
            .map(|f| {
                let kept: Vec<Detection> = f.predictions.iter().filter(|d| d.confidence >= t).copied().collect();
                match_detections(&kept, &f.ground_truth, IOU_CORRECT).false_negatives
            })
            .sum();
        if missed == 0 {
            return Ok(t / 2.0);
        }
        missed_at_lowest = missed;
    }
    Err(CalibrationError::NoThreshold {
        missed: missed_at_lowest,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarginPolicy {
    /// Deploy twice the validation margin.
    Double,
    /// Deploy the validation margin as is.
    Keep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginGrid {
    pub step: f64,
    pub max: f64,
}

impl Default for MarginGrid {
    fn default() -> Self {
        Self { step: 0.01, max: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginCalibration {
    /// Smallest grid margin that contains every inner box.
    pub required: f64,
    pub deployed: f64,
}

/// One predicted outer box with the ground-truth boxes that must fit inside it.
#[derive(Debug, Clone, PartialEq)]
pub struct Containment {
    pub outer: BBox,
    pub inner: Vec<BBox>,
}

pub fn calibrate_margin(
    pairs: &[Containment],
    frame: FrameDims,
    grid: MarginGrid,
    policy: MarginPolicy,
) -> Result<MarginCalibration, CalibrationError> {
    if pairs.iter().all(|p| p.inner.is_empty()) {
        return Err(CalibrationError::Empty);
    }
    let per_unit = (1.0 / grid.step).round();
    let last = (grid.max * per_unit).round() as u32;
    for k in 0..=last {
        let m = k as f64 / per_unit;
        let ok = pairs.iter().all(|p| {
            let grown = expand_margin(&p.outer, m, frame);
            p.inner.iter().all(|b| grown.contains(&b.clip(frame), 1e-6))
        });
        if ok {
            let deployed = match policy {
                MarginPolicy::Double => 2.0 * m,
                MarginPolicy::Keep => m,
            };
            return Ok(MarginCalibration { required: m, deployed });
        }
    }
    Err(CalibrationError::NoMargin { max: grid.max })
}
