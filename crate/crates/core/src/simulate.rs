//! Deterministic simulated backend driven by annotations instead of pixels.
//!
//! Every call derives its own RNG from `(seed, task, source, patch)`, so the
//! output of a call never depends on which calls came before it or on which
//! worker thread made it.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::digit_seed_letter;
use crate::dataset::FrameAnnotation;
use crate::detect::{Backend, BackendError, Detection, ImageRef, Task};
use crate::geometry::{iou, BBox, FrameDims};
use crate::recognize::CharDomain;

/// Fraction of a ground-truth box that must fall inside the queried patch
/// for the simulated detector to report it.
const MIN_VISIBLE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    pub miss_rate: f64,
    /// Expected number of spurious detections per query.
    pub false_positive_rate: f64,
    /// Maximum offset in pixels applied independently to each edge.
    pub jitter: f64,
    /// True detections draw confidence uniformly from `[true_floor, true_ceil]`.
    pub true_floor: f64,
    pub true_ceil: f64,
    /// False positives draw confidence uniformly from `[fp_low, fp_high]`.
    pub fp_low: f64,
    pub fp_high: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            miss_rate: 0.0,
            false_positive_rate: 0.0,
            jitter: 0.0,
            true_floor: 1.0,
            true_ceil: 1.0,
            fp_low: 0.0,
            fp_high: 0.3,
        }
    }
}

impl NoiseModel {
    pub fn check(&self) -> Result<(), String> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(format!("{name} = {v} outside [0, 1]"))
            }
        };
        unit("miss_rate", self.miss_rate)?;
        unit("true_floor", self.true_floor)?;
        unit("true_ceil", self.true_ceil)?;
        unit("fp_low", self.fp_low)?;
        unit("fp_high", self.fp_high)?;
        if self.true_floor > self.true_ceil || self.fp_low > self.fp_high {
            return Err("confidence ranges must have low <= high".into());
        }
        if !(self.false_positive_rate >= 0.0) || !(self.jitter >= 0.0) {
            return Err("false_positive_rate and jitter must be >= 0".into());
        }
        Ok(())
    }
}

/// Error model of the simulated character classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierNoise {
    /// Probability of replacing the true label with a uniformly drawn other label.
    pub error_rate: f64,
    pub true_floor: f64,
    pub true_ceil: f64,
    /// Fault injection: `(from, to, probability)` rows.
    pub confusions: Vec<(char, char, f64)>,
}

impl Default for ClassifierNoise {
    fn default() -> Self {
        Self {
            error_rate: 0.0,
            true_floor: 1.0,
            true_ceil: 1.0,
            confusions: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SimNoise {
    pub vehicle: NoiseModel,
    pub plate: NoiseModel,
    pub characters: NoiseModel,
    pub classifier: ClassifierNoise,
}

impl SimNoise {
    /// Same detection noise on every stage.
    pub fn uniform(model: NoiseModel) -> Self {
        Self {
            vehicle: model.clone(),
            plate: model.clone(),
            characters: model,
            classifier: ClassifierNoise::default(),
        }
    }

    fn for_task(&self, task: Task) -> &NoiseModel {
        match task {
            Task::Vehicle => &self.vehicle,
            Task::Plate => &self.plate,
            Task::Characters => &self.characters,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenePlate {
    pub bbox: BBox,
    pub chars: Vec<(BBox, char)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneVehicle {
    pub class_id: usize,
    pub bbox: BBox,
    pub plate: Option<ScenePlate>,
}

/// Ground truth of one image as seen by the simulated backend.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub frame: FrameDims,
    pub vehicles: Vec<SceneVehicle>,
}

impl Scene {
    pub fn from_annotation(ann: &FrameAnnotation, frame: FrameDims) -> Self {
        let text = ann.plate.text.chars();
        Scene {
            frame,
            vehicles: vec![SceneVehicle {
                class_id: ann.vehicle.vtype.class_id(),
                bbox: ann.vehicle.bbox,
                plate: Some(ScenePlate {
                    bbox: ann.plate.bbox,
                    chars: ann.chars.iter().copied().zip(text).collect(),
                }),
            }],
        }
    }

    fn truths(&self, task: Task) -> Vec<(usize, BBox)> {
        match task {
            Task::Vehicle => self.vehicles.iter().map(|v| (v.class_id, v.bbox)).collect(),
            Task::Plate => self
                .vehicles
                .iter()
                .filter_map(|v| v.plate.as_ref())
                .map(|p| (0, p.bbox))
                .collect(),
            Task::Characters => self
                .vehicles
                .iter()
                .filter_map(|v| v.plate.as_ref())
                .flat_map(|p| p.chars.iter().map(|(b, _)| (0, *b)))
                .collect(),
        }
    }

    fn chars(&self) -> impl Iterator<Item = &(BBox, char)> {
        self.vehicles
            .iter()
            .filter_map(|v| v.plate.as_ref())
            .flat_map(|p| p.chars.iter())
    }
}

#[derive(Debug, Clone, Default)]
pub struct SimulatedBackend {
    pub seed: u64,
    pub noise: SimNoise,
    scenes: HashMap<String, Scene>,
}

fn rng_for(seed: u64, tag: &str, source: &str, patch: &BBox) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(tag.as_bytes());
    h.update([0u8]);
    h.update(source.as_bytes());
    for v in [patch.x, patch.y, patch.w, patch.h] {
        h.update(v.to_bits().to_le_bytes());
    }
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest[..32]);
    ChaCha8Rng::from_seed(key)
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

impl SimulatedBackend {
    pub fn new(seed: u64, noise: SimNoise) -> Self {
        Self {
            seed,
            noise,
            scenes: HashMap::new(),
        }
    }

    pub fn insert(&mut self, source: impl Into<String>, scene: Scene) {
        self.scenes.insert(source.into(), scene);
    }

    pub fn scene(&self, source: &str) -> Result<&Scene, BackendError> {
        self.scenes
            .get(source)
            .ok_or_else(|| BackendError::Unavailable(format!("no image '{source}'")))
    }

    fn jittered(rng: &mut ChaCha8Rng, b: &BBox, jitter: f64) -> BBox {
        let mut e = [0.0; 4];
        for v in e.iter_mut() {
            *v = uniform(rng, -jitter, jitter);
        }
        if jitter == 0.0 {
            return *b;
        }
        let x0 = b.x + e[0];
        let y0 = b.y + e[1];
        let x1 = (b.right() + e[2]).max(x0 + 1.0);
        let y1 = (b.bottom() + e[3]).max(y0 + 1.0);
        BBox {
            x: x0,
            y: y0,
            w: x1 - x0,
            h: y1 - y0,
        }
    }
}

impl Backend for SimulatedBackend {
    fn detect(&self, task: Task, image: &ImageRef) -> Result<Vec<Detection>, BackendError> {
        let scene = self.scene(&image.source)?;
        let noise = self.noise.for_task(task);
        let mut rng = rng_for(self.seed, task.tag(), &image.source, &image.patch);
        let patch = image.patch;
        let mut out = Vec::new();

        for (class_id, truth) in scene.truths(task) {
            let miss = rng.random::<f64>() < noise.miss_rate;
            let bbox = Self::jittered(&mut rng, &truth, noise.jitter);
            let confidence = uniform(&mut rng, noise.true_floor, noise.true_ceil);
            if miss {
                continue;
            }
            let Some(visible) = bbox.clip_to(&patch) else {
                continue;
            };
            if visible.area() < MIN_VISIBLE * bbox.area() {
                continue;
            }
            out.push(Detection {
                class_id,
                confidence,
                bbox: visible.to_local(&patch),
            });
        }

        if noise.false_positive_rate > 0.0 {
            let n = Poisson::new(noise.false_positive_rate)
                .map(|p| p.sample(&mut rng) as usize)
                .unwrap_or(0);
            let classes = match task {
                Task::Vehicle => 2,
                _ => 1,
            };
            for _ in 0..n {
                let w = uniform(&mut rng, 0.1, 0.4) * patch.w;
                let h = uniform(&mut rng, 0.1, 0.4) * patch.h;
                let x = uniform(&mut rng, 0.0, patch.w - w);
                let y = uniform(&mut rng, 0.0, patch.h - h);
                let confidence = uniform(&mut rng, noise.fp_low, noise.fp_high);
                let class_id = rng.random_range(0..classes);
                out.push(Detection {
                    class_id,
                    confidence,
                    bbox: BBox { x, y, w, h },
                });
            }
        }
        Ok(out)
    }

    fn classify(&self, image: &ImageRef, domain: CharDomain) -> Result<Vec<(char, f64)>, BackendError> {
        let scene = self.scene(&image.source)?;
        let noise = &self.noise.classifier;
        let mut rng = rng_for(self.seed, "classify", &image.source, &image.patch);
        let labels = domain.labels();

        // The glyph under the patch, if any.
        let truth = scene
            .chars()
            .map(|(b, c)| (iou(b, &image.patch), *c))
            .filter(|(v, _)| *v > 0.1)
            .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)))
            .map(|(_, c)| c);
        let seen = truth.and_then(|c| {
            if domain.contains(c) {
                Some(c)
            } else if domain == CharDomain::Letters {
                digit_seed_letter(c)
            } else {
                None
            }
        });

        let pick_other = |rng: &mut ChaCha8Rng, not: Option<char>| loop {
            let c = labels[rng.random_range(0..labels.len())] as char;
            if Some(c) != not || labels.len() == 1 {
                break c;
            }
        };

        let r_err = rng.random::<f64>();
        let r_conf = uniform(&mut rng, noise.true_floor, noise.true_ceil);
        let mut label = match seen {
            Some(c) if r_err < noise.error_rate => pick_other(&mut rng, Some(c)),
            Some(c) => c,
            None => pick_other(&mut rng, None),
        };
        let confidence = if seen.is_some() { r_conf } else { uniform(&mut rng, 0.05, 0.5) };
        if let Some(c) = seen {
            let r = rng.random::<f64>();
            let mut acc = 0.0;
            for (from, to, p) in &noise.confusions {
                if *from == c && domain.contains(*to) {
                    acc += p;
                    if r < acc {
                        label = *to;
                        break;
                    }
                }
            }
        }

        Ok(labels
            .iter()
            .map(|&l| {
                let l = l as char;
                let s = if l == label {
                    confidence
                } else {
                    rng.random::<f64>() * 0.5 * confidence
                };
                (l, s)
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::{detect, lp_stage, vehicle_stage, SelectPolicy, StageConfig};

    fn bb(x: f64, y: f64, w: f64, h: f64) -> BBox {
        BBox::new(x, y, w, h).unwrap()
    }

    fn two_cars() -> Scene {
        let plate = |x: f64| ScenePlate {
            bbox: bb(x + 100.0, 400.0, 120.0, 40.0),
            chars: (0..7)
                .map(|i| (bb(x + 105.0 + i as f64 * 16.0, 405.0, 12.0, 30.0), "ABC1234".as_bytes()[i] as char))
                .collect(),
        };
        Scene {
            frame: FrameDims::default(),
            vehicles: vec![
                SceneVehicle {
                    class_id: 0,
                    bbox: bb(100.0, 200.0, 300.0, 260.0),
                    plate: Some(plate(100.0)),
                },
                SceneVehicle {
                    class_id: 1,
                    bbox: bb(900.0, 200.0, 300.0, 260.0),
                    plate: Some(plate(900.0)),
                },
            ],
        }
    }

    fn stage(threshold: f64) -> StageConfig {
        StageConfig {
            arch: "fast-yolo-2class".into(),
            confidence_threshold: threshold,
            margin: 0.1,
            select_policy: SelectPolicy::AllAboveThreshold,
        }
    }

    fn backend(noise: SimNoise) -> SimulatedBackend {
        let mut b = SimulatedBackend::new(7, noise);
        b.insert("img", two_cars());
        b.insert(
            "empty",
            Scene {
                frame: FrameDims::default(),
                vehicles: vec![],
            },
        );
        b
    }

    #[test]
    fn noise_free_passthrough() {
        let b = backend(SimNoise::default());
        let frame = ImageRef::full_frame("img", FrameDims::default());
        let hits = vehicle_stage(&b, &frame, &stage(0.125)).unwrap();
        assert_eq!(hits.len(), 2);
        assert!(hits.iter().all(|h| h.detection.confidence == 1.0));
        let classes: Vec<usize> = hits.iter().map(|h| h.detection.class_id).collect();
        assert_eq!(classes, vec![0, 1]);
        assert_eq!(hits[0].detection.bbox, two_cars().vehicles[0].bbox);
        assert_eq!(hits[0].patch, bb(70.0, 174.0, 360.0, 312.0));

        let plate = lp_stage(&b, &frame, &hits[1].patch, &stage(0.0)).unwrap();
        assert!((iou(&plate.bbox, &two_cars().vehicles[1].plate.as_ref().unwrap().bbox) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_frame_is_negative() {
        let b = backend(SimNoise::default());
        let frame = ImageRef::full_frame("empty", FrameDims::default());
        assert!(vehicle_stage(&b, &frame, &stage(0.125)).unwrap().is_empty());
    }

    #[test]
    fn unknown_image_is_unavailable_not_empty() {
        let b = backend(SimNoise::default());
        let frame = ImageRef::full_frame("nope", FrameDims::default());
        assert!(matches!(b.detect(Task::Vehicle, &frame), Err(BackendError::Unavailable(_))));
    }

    #[test]
    fn full_miss_rate_returns_nothing() {
        let b = backend(SimNoise::uniform(NoiseModel {
            miss_rate: 1.0,
            ..NoiseModel::default()
        }));
        let frame = ImageRef::full_frame("img", FrameDims::default());
        assert!(b.detect(Task::Vehicle, &frame).unwrap().is_empty());
    }

    #[test]
    fn jitter_is_deterministic() {
        let noise = SimNoise::uniform(NoiseModel {
            jitter: 2.0,
            true_floor: 0.4,
            false_positive_rate: 1.5,
            ..NoiseModel::default()
        });
        let frame = ImageRef::full_frame("img", FrameDims::default());
        let a = backend(noise.clone()).detect(Task::Vehicle, &frame).unwrap();
        let b = backend(noise).detect(Task::Vehicle, &frame).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().any(|d| d.bbox != two_cars().vehicles[0].bbox));
    }

    #[test]
    fn false_positive_can_outrank_plate() {
        let mut noise = SimNoise::default();
        noise.plate = NoiseModel {
            true_floor: 0.4,
            true_ceil: 0.4,
            false_positive_rate: 6.0,
            fp_low: 0.8,
            fp_high: 0.8,
            ..NoiseModel::default()
        };
        let b = backend(noise);
        let frame = ImageRef::full_frame("img", FrameDims::default());
        let patch = two_cars().vehicles[0].bbox;
        let all = detect(&b, Task::Plate, &frame.with_patch(patch), &stage(0.0)).unwrap();
        assert!(all.len() > 1, "poisson draw produced no false positive");
        let best = lp_stage(&b, &frame, &patch, &stage(0.0)).unwrap();
        assert_eq!(best.confidence, 0.8);
    }

    #[test]
    fn classifier_respects_domain() {
        let b = backend(SimNoise::default());
        let frame = ImageRef::full_frame("img", FrameDims::default());
        let truth = two_cars().vehicles[0].plate.clone().unwrap().chars;
        // slot 4 holds '1'
        let patch = frame.with_patch(truth[3].0);
        let digits = b.classify(&patch, CharDomain::Digits).unwrap();
        let best = digits.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
        assert_eq!(*best, ('1', 1.0));
        let letters = b.classify(&patch, CharDomain::Letters).unwrap();
        assert!(letters.iter().all(|(c, _)| c.is_ascii_uppercase()));
        let best = letters.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
        assert_eq!(best.0, 'I');
    }

    #[test]
    fn confusion_injection() {
        let mut noise = SimNoise::default();
        noise.classifier.confusions = vec![('2', '7', 1.0)];
        let b = backend(noise);
        let frame = ImageRef::full_frame("img", FrameDims::default());
        let truth = two_cars().vehicles[0].plate.clone().unwrap().chars;
        let scores = b.classify(&frame.with_patch(truth[4].0), CharDomain::Digits).unwrap();
        let best = scores.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
        assert_eq!(best.0, '7');
    }
}
