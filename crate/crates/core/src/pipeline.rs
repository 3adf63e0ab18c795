//! Frame-level cascade, parallel runs over a dataset split, offline
//! evaluation of the per-frame records, and calibration on validation data.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::charseg::{order_characters, resolve_overlaps_at, CharCandidate, VehicleType};
use crate::config::{Clock, ConfigError, PipelineConfig};
use crate::dataset::{Dataset, DatasetError, Split, Track, SPLIT_DIR};
use crate::detect::{
    calibrate_margin, calibrate_threshold, detect, lp_stage, vehicle_stage, Backend, BackendError, CalibrationError,
    Containment, DetectError, Detection, ImageRef, SelectPolicy, StageConfig, Task, ValidationFrame, IOU_CORRECT,
};
use crate::eval::{
    match_detections, recognition_rates, timing_harness, EvalReport, FrameOutcome, StageCounts, StageMetrics,
    StageTime, TrackTruth,
};
use crate::geometry::{enlarge_to_aspect, expand_margin, BBox};
use crate::recognize::{read_plate, LpString, PLATE_LEN};
use crate::simulate::{Scene, SimulatedBackend};
use crate::temporal::{majority_vote, TrackPredictions, TrackReading};

pub const STAGE_VEHICLE: &str = "vehicle";
pub const STAGE_PLATE: &str = "plate";
pub const STAGE_SEGMENTATION: &str = "segmentation";
pub const STAGE_RECOGNITION: &str = "recognition";
pub const STAGES: [&str; 4] = [STAGE_VEHICLE, STAGE_PLATE, STAGE_SEGMENTATION, STAGE_RECOGNITION];

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("calibration: {0}")]
    Calibration(#[from] CalibrationError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Records(String),
}

fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> PipelineError {
    let context = context.into();
    move |source| PipelineError::Io { context, source }
}

/// Counts and time of one stage in one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageLog {
    pub stage: String,
    #[serde(flatten)]
    pub counts: StageCounts,
    #[serde(flatten)]
    pub time: StageTime,
}

/// Everything the evaluation needs to know about one processed frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub track: String,
    pub frame: usize,
    pub truth: LpString,
    pub vehicle_detected: bool,
    pub reading: Option<LpString>,
    pub confidences: Option<[f64; PLATE_LEN]>,
    /// Why the matched vehicle produced no reading.
    pub failure: Option<String>,
    pub stages: Vec<StageLog>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedRecord {
    pub track: String,
    pub truth: LpString,
    pub fused: Option<LpString>,
    /// Frames that contributed a reading to the vote.
    pub votes: usize,
    pub frames: usize,
}

/// Stage timer driven by the configured clock.
struct Timer {
    clock: Clock,
}

impl Timer {
    fn time<T>(&self, cost: impl Fn(&crate::config::StageCosts) -> f64, inputs: u64, f: impl FnOnce() -> T) -> (T, StageTime) {
        match self.clock {
            Clock::Wall => {
                let start = Instant::now();
                let out = f();
                let total_ms = start.elapsed().as_secs_f64() * 1000.0;
                (out, StageTime { total_ms, inputs })
            }
            Clock::Fixed(costs) => {
                let out = f();
                (
                    out,
                    StageTime {
                        total_ms: cost(&costs) * inputs as f64,
                        inputs,
                    },
                )
            }
        }
    }
}

/// Result of running the plate, segmentation and recognition stages on one vehicle.
struct VehicleResult {
    plate: Option<Detection>,
    segments: Vec<BBox>,
    reading: Result<crate::recognize::PlateReading, String>,
}

/// Runs the cascade on the vehicles of one frame.
pub struct Cascade<'a> {
    pub backend: &'a dyn Backend,
    pub config: &'a PipelineConfig,
    /// Whether the vehicle detector separates cars (0) from motorcycles (1).
    pub two_class_vehicles: bool,
}

impl<'a> Cascade<'a> {
    pub fn new(backend: &'a dyn Backend, config: &'a PipelineConfig) -> Result<Self, PipelineError> {
        config.check()?;
        let arch = config.resolve_arch(&config.vehicle.arch)?;
        Ok(Self {
            backend,
            config,
            two_class_vehicles: arch.classes == 2,
        })
    }

    fn vtype(&self, d: &Detection) -> VehicleType {
        if self.two_class_vehicles {
            VehicleType::from_class_id(d.class_id).unwrap_or(VehicleType::Car)
        } else {
            VehicleType::Car
        }
    }

    /// Region handed to the character detector for a plate detection.
    pub fn plate_region(&self, plate: &BBox) -> BBox {
        let frame = self.config.frame;
        let grown = expand_margin(plate, self.config.plate.margin, frame);
        enlarge_to_aspect(&grown, self.config.plate_aspect, frame)
    }

    fn run_vehicle(
        &self,
        frame_ref: &ImageRef,
        hit: &crate::detect::VehicleHit,
        timer: &Timer,
        times: &mut [StageTime; 4],
    ) -> Result<VehicleResult, BackendError> {
        let cfg = self.config;
        let (plate, t) = timer.time(|c| c.plate_ms, 1, || lp_stage(self.backend, frame_ref, &hit.patch, &cfg.plate));
        times[1].add(t);
        let plate = match plate {
            Ok(p) => p,
            Err(DetectError::NoPlate) => {
                return Ok(VehicleResult {
                    plate: None,
                    segments: Vec::new(),
                    reading: Err("no plate".into()),
                })
            }
            Err(DetectError::Backend(e)) => return Err(e),
        };

        let region = self.plate_region(&plate.bbox);
        let image = frame_ref.with_patch(region);
        let (found, t) = timer.time(|c| c.segmentation_ms, 1, || detect(self.backend, Task::Characters, &image, &cfg.characters));
        times[2].add(t);
        let cands: Vec<CharCandidate> = found?
            .into_iter()
            .map(|d| CharCandidate {
                bbox: d.bbox.to_parent(&region).clip(cfg.frame),
                confidence: d.confidence,
            })
            .collect();

        let vtype = self.vtype(&hit.detection);
        let ordered = resolve_overlaps_at(&cands, cfg.merge_iou.for_type(vtype)).and_then(|c| order_characters(&c, vtype));
        let slots = match ordered {
            Ok(s) => s,
            Err(e) => {
                return Ok(VehicleResult {
                    plate: Some(plate),
                    segments: cands.iter().map(|c| c.bbox).collect(),
                    reading: Err(e.to_string()),
                })
            }
        };
        let boxes = slots.map(|c| c.bbox);
        let (reading, t) = timer.time(|c| c.recognition_ms, PLATE_LEN as u64, || {
            read_plate(self.backend, frame_ref, &boxes, &cfg.letters, &cfg.digits)
        });
        times[3].add(t);
        Ok(VehicleResult {
            plate: Some(plate),
            segments: boxes.to_vec(),
            reading: Ok(reading?),
        })
    }

    /// Processes frame `index` of `track`. Every detected vehicle goes
    /// through the cascade; the frame's reading is the one obtained from the
    /// vehicle matched to the annotated vehicle.
    pub fn process_frame(&self, track: &Track, index: usize) -> Result<FrameRecord, BackendError> {
        let ann = &track.frames[index];
        let cfg = self.config;
        let timer = Timer { clock: cfg.clock };
        let frame_ref = ImageRef::full_frame(track.frame_source(index), cfg.frame);
        let mut times = [StageTime::default(); 4];

        let (hits, t) = timer.time(|c| c.vehicle_ms, 1, || vehicle_stage(self.backend, &frame_ref, &cfg.vehicle));
        times[0].add(t);
        let hits = hits?;
        let vehicle_dets: Vec<Detection> = hits.iter().map(|h| h.detection).collect();
        let vmatch = match_detections(&vehicle_dets, &[ann.vehicle.bbox], IOU_CORRECT);
        let matched = vmatch.pairs.first().map(|p| p.0);

        let mut plates = Vec::new();
        let mut segments = Vec::new();
        let mut chosen: Option<Result<crate::recognize::PlateReading, String>> = None;
        for (i, hit) in hits.iter().enumerate() {
            let r = self.run_vehicle(&frame_ref, hit, &timer, &mut times)?;
            plates.extend(r.plate);
            segments.extend(r.segments);
            if Some(i) == matched {
                chosen = Some(r.reading);
            }
        }

        let plate_counts = StageCounts::from_match(&match_detections(&plates, &[ann.plate.bbox], IOU_CORRECT));
        let seg_dets: Vec<Detection> = segments
            .iter()
            .map(|b| Detection {
                class_id: 0,
                confidence: 1.0,
                bbox: *b,
            })
            .collect();
        let seg_counts = StageCounts::from_match(&match_detections(&seg_dets, &ann.chars, IOU_CORRECT));

        let (reading, failure) = match chosen {
            Some(Ok(r)) => (Some(r), None),
            Some(Err(e)) => (None, Some(e)),
            None if hits.is_empty() => (None, Some("no vehicle".into())),
            None => (None, Some("annotated vehicle not detected".into())),
        };
        let rec_counts = match &reading {
            Some(r) => {
                let ok = r.text.matching_slots(&ann.plate.text) as u64;
                StageCounts {
                    tp: ok,
                    fp: PLATE_LEN as u64 - ok,
                    fn_: PLATE_LEN as u64 - ok,
                }
            }
            None => StageCounts {
                tp: 0,
                fp: 0,
                fn_: PLATE_LEN as u64,
            },
        };
        let counts = [StageCounts::from_match(&vmatch), plate_counts, seg_counts, rec_counts];
        Ok(FrameRecord {
            track: track.vehicle_id.clone(),
            frame: index,
            truth: ann.plate.text,
            vehicle_detected: !hits.is_empty(),
            reading: reading.map(|r| r.text),
            confidences: reading.map(|r| r.confidences),
            failure,
            stages: STAGES
                .iter()
                .zip(counts)
                .zip(times)
                .map(|((s, counts), time)| StageLog {
                    stage: s.to_string(),
                    counts,
                    time,
                })
                .collect(),
        })
    }
}

/// Simulated backend holding a scene for every frame of `tracks`.
pub fn simulated_backend(config: &PipelineConfig, tracks: &[&Track]) -> SimulatedBackend {
    let mut backend = SimulatedBackend::new(config.seed, config.backend.noise.clone());
    for t in tracks {
        for (i, ann) in t.frames.iter().enumerate() {
            backend.insert(t.frame_source(i), Scene::from_annotation(ann, config.frame));
        }
    }
    backend
}

/// Track ids of the configured split (`all` takes every track).
pub fn select_tracks<'d>(config: &PipelineConfig, dataset: &'d Dataset, split: &str) -> Result<Vec<&'d Track>, PipelineError> {
    if split == "all" {
        return Ok(dataset.tracks.iter().collect());
    }
    let ids = Split::read_part(&config.dataset.join(SPLIT_DIR), split)?;
    ids.iter()
        .map(|id| {
            dataset
                .track(id)
                .ok_or_else(|| DatasetError::Invalid(format!("split '{split}' names unknown track '{id}'")).into())
        })
        .collect()
}

pub fn load_dataset(config: &PipelineConfig) -> Result<Dataset, PipelineError> {
    if !config.dataset.is_dir() {
        return Err(ConfigError::Invalid(format!("dataset path '{}' does not exist", config.dataset.display())).into());
    }
    Ok(Dataset::load(&config.dataset)?)
}

fn pool(workers: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("thread pool")
}

/// Processes every frame of `tracks` on `config.workers` threads. Records
/// come back in (track, frame) order whatever the worker count.
pub fn process_tracks(config: &PipelineConfig, backend: &dyn Backend, tracks: &[&Track]) -> Result<Vec<FrameRecord>, PipelineError> {
    let cascade = Cascade::new(backend, config)?;
    let jobs: Vec<(&Track, usize)> = tracks.iter().flat_map(|t| (0..t.frames.len()).map(move |i| (*t, i))).collect();
    let records = pool(config.workers).install(|| {
        jobs.par_iter()
            .map(|(t, i)| cascade.process_frame(t, *i))
            .collect::<Result<Vec<_>, _>>()
    })?;
    Ok(records)
}

/// Fuses readings per track and computes the full report. Depends only on
/// the records, so it can be re-run from a saved `frames.jsonl`.
pub fn evaluate(records: &[FrameRecord]) -> (EvalReport, Vec<FusedRecord>) {
    let mut per_track: BTreeMap<&str, Vec<&FrameRecord>> = BTreeMap::new();
    for r in records {
        per_track.entry(&r.track).or_default().push(r);
    }

    let mut fused = Vec::with_capacity(per_track.len());
    let mut fused_map = BTreeMap::new();
    let mut truth = BTreeMap::new();
    for (id, frames) in &per_track {
        let readings: Vec<TrackReading> = frames
            .iter()
            .filter_map(|f| {
                Some(TrackReading {
                    frame: f.frame,
                    text: f.reading?,
                    confidences: f.confidences.unwrap_or([0.0; PLATE_LEN]),
                })
            })
            .collect();
        let votes = readings.len();
        let result = majority_vote(&TrackPredictions {
            vehicle_id: id.to_string(),
            readings,
        })
        .ok();
        let plate = frames[0].truth;
        fused.push(FusedRecord {
            track: id.to_string(),
            truth: plate,
            fused: result,
            votes,
            frames: frames.len(),
        });
        fused_map.insert(id.to_string(), result);
        truth.insert(
            id.to_string(),
            TrackTruth {
                plate,
                frames: frames.len() as u64,
            },
        );
    }

    let outcomes: Vec<FrameOutcome> = records
        .iter()
        .map(|r| FrameOutcome {
            track: r.track.clone(),
            vehicle_detected: r.vehicle_detected,
            reading: r.reading,
        })
        .collect();
    let recognition = recognition_rates(&outcomes, &fused_map, &truth);

    let mut counts = [StageCounts::default(); 4];
    let mut times = [StageTime::default(); 4];
    for r in records {
        for log in &r.stages {
            if let Some(k) = STAGES.iter().position(|s| *s == log.stage) {
                counts[k].add(log.counts);
                times[k].add(log.time);
            }
        }
    }
    let timing = timing_harness(&[
        (STAGE_VEHICLE, times[0], 1),
        (STAGE_PLATE, times[1], 1),
        (STAGE_SEGMENTATION, times[2], 1),
        (STAGE_RECOGNITION, times[3], PLATE_LEN as u32),
    ]);
    let stages = STAGES
        .iter()
        .zip(counts)
        .map(|(s, c)| StageMetrics::new(s, c, timing.row(s)))
        .collect();
    (
        EvalReport {
            stages,
            timing,
            recognition,
        },
        fused,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub records: Vec<FrameRecord>,
    pub fused: Vec<FusedRecord>,
    pub report: EvalReport,
}

impl RunOutput {
    pub fn frames_jsonl(&self) -> String {
        jsonl(&self.records)
    }

    /// One line per frame per stage.
    pub fn stages_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            for log in &r.stages {
                let v = serde_json::json!({"track": r.track, "frame": r.frame, "log": log});
                let _ = writeln!(s, "{v}");
            }
        }
        s
    }

    pub fn fused_jsonl(&self) -> String {
        jsonl(&self.fused)
    }

    /// Writes frames.jsonl, stages.jsonl, fused.jsonl, report.txt and report.jsonl.
    pub fn write(&self, dir: &Path) -> Result<(), PipelineError> {
        fs::create_dir_all(dir).map_err(io(dir.display().to_string()))?;
        for (name, body) in [
            ("frames.jsonl", self.frames_jsonl()),
            ("stages.jsonl", self.stages_jsonl()),
            ("fused.jsonl", self.fused_jsonl()),
            ("report.txt", self.report.to_table()),
            ("report.jsonl", self.report.to_jsonl()),
        ] {
            let path = dir.join(name);
            fs::write(&path, body).map_err(io(path.display().to_string()))?;
        }
        Ok(())
    }
}

fn jsonl<T: Serialize>(items: &[T]) -> String {
    let mut s = String::new();
    for it in items {
        let _ = writeln!(s, "{}", serde_json::to_string(it).expect("records serialize"));
    }
    s
}

pub fn read_records(path: &Path) -> Result<Vec<FrameRecord>, PipelineError> {
    let text = fs::read_to_string(path).map_err(io(path.display().to_string()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| PipelineError::Records(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

/// Runs the pipeline on `tracks` with the simulated backend.
pub fn run_tracks(config: &PipelineConfig, tracks: &[&Track]) -> Result<RunOutput, PipelineError> {
    let backend = simulated_backend(config, tracks);
    let records = process_tracks(config, &backend, tracks)?;
    let (report, fused) = evaluate(&records);
    Ok(RunOutput { records, fused, report })
}

/// Loads the configured dataset and runs the configured split.
pub fn run(config: &PipelineConfig) -> Result<RunOutput, PipelineError> {
    config.check()?;
    let dataset = load_dataset(config)?;
    let tracks = select_tracks(config, &dataset, &config.split)?;
    run_tracks(config, &tracks)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    pub vehicle_threshold: f64,
    pub vehicle_margin_required: f64,
    pub vehicle_margin: f64,
    pub plate_margin_required: f64,
    pub plate_margin: f64,
    pub frames: usize,
}

/// Calibrates the vehicle threshold and the vehicle and plate margins on
/// `tracks` and returns the summary together with the updated config.
pub fn calibrate_tracks(config: &PipelineConfig, tracks: &[&Track]) -> Result<(CalibrationSummary, PipelineConfig), PipelineError> {
    config.check()?;
    let backend = simulated_backend(config, tracks);
    let frame = config.frame;
    let jobs: Vec<(&Track, usize)> = tracks.iter().flat_map(|t| (0..t.frames.len()).map(move |i| (*t, i))).collect();
    let raw_vehicle = StageConfig {
        confidence_threshold: 0.0,
        margin: 0.0,
        select_policy: SelectPolicy::AllAboveThreshold,
        ..config.vehicle.clone()
    };

    // vehicle detections of every frame, all confidences
    let vehicle_frames: Vec<ValidationFrame> = pool(config.workers).install(|| {
        jobs.par_iter()
            .map(|(t, i)| {
                let image = ImageRef::full_frame(t.frame_source(*i), frame);
                let hits = vehicle_stage(&backend, &image, &raw_vehicle)?;
                Ok(ValidationFrame {
                    predictions: hits.into_iter().map(|h| h.detection).collect(),
                    ground_truth: vec![t.frames[*i].vehicle.bbox],
                })
            })
            .collect::<Result<Vec<_>, BackendError>>()
    })?;
    let vehicle_threshold = calibrate_threshold(&vehicle_frames)?;

    let kept = |f: &ValidationFrame| -> Option<BBox> {
        let preds: Vec<Detection> = f.predictions.iter().filter(|d| d.confidence >= vehicle_threshold).copied().collect();
        let m = match_detections(&preds, &f.ground_truth, IOU_CORRECT);
        m.pairs.first().map(|p| preds[p.0].bbox)
    };
    let vehicle_pairs: Vec<Containment> = vehicle_frames
        .iter()
        .zip(&jobs)
        .filter_map(|(f, (t, i))| {
            kept(f).map(|outer| Containment {
                outer,
                inner: vec![t.frames[*i].plate.bbox],
            })
        })
        .collect();
    let grid = config.calibration.margin_grid;
    let vm = calibrate_margin(&vehicle_pairs, frame, grid, config.calibration.vehicle_margin_policy)?;

    // plates found inside the deployed vehicle patches
    let mut plate_pairs = Vec::new();
    for (f, (t, i)) in vehicle_frames.iter().zip(&jobs) {
        let Some(vbox) = kept(f) else { continue };
        let image = ImageRef::full_frame(t.frame_source(*i), frame);
        let patch = expand_margin(&vbox, vm.deployed, frame);
        match lp_stage(&backend, &image, &patch, &config.plate) {
            Ok(d) => {
                let ann = &t.frames[*i];
                if match_detections(&[d], &[ann.plate.bbox], IOU_CORRECT).true_positives == 1 {
                    plate_pairs.push(Containment {
                        outer: d.bbox,
                        inner: ann.chars.to_vec(),
                    });
                }
            }
            Err(DetectError::NoPlate) => {}
            Err(DetectError::Backend(e)) => return Err(e.into()),
        }
    }
    let pm = calibrate_margin(&plate_pairs, frame, grid, config.calibration.plate_margin_policy)?;

    let mut out = config.clone();
    out.vehicle.confidence_threshold = vehicle_threshold;
    out.vehicle.margin = vm.deployed;
    out.plate.margin = pm.deployed;
    Ok((
        CalibrationSummary {
            vehicle_threshold,
            vehicle_margin_required: vm.required,
            vehicle_margin: vm.deployed,
            plate_margin_required: pm.required,
            plate_margin: pm.deployed,
            frames: jobs.len(),
        },
        out,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, SynthOptions};
    use crate::simulate::NoiseModel;

    fn tracks(n: usize, frames: usize) -> Vec<Track> {
        let opts = SynthOptions {
            frames_per_track: frames,
            ..SynthOptions::default()
        };
        generate_synthetic(7, n, &opts).unwrap()
    }

    #[test]
    fn noise_free_run_is_perfect() {
        let ts = tracks(10, 3);
        let refs: Vec<&Track> = ts.iter().collect();
        let out = run_tracks(&PipelineConfig::default(), &refs).unwrap();
        for s in &out.report.stages {
            assert_eq!((s.recall, s.precision), (1.0, 1.0), "{}", s.stage);
        }
        let r = &out.report.recognition;
        assert_eq!(r.frames_all_correct.rate, 1.0);
        assert_eq!(r.vehicles_all_correct_redundant.rate, 1.0);
        assert_eq!(r.frame_weighted_redundant.rate, 1.0);
    }

    #[test]
    fn offline_evaluation_matches() {
        let ts = tracks(4, 2);
        let refs: Vec<&Track> = ts.iter().collect();
        let mut cfg = PipelineConfig::default();
        cfg.backend.noise = crate::simulate::SimNoise::uniform(NoiseModel {
            miss_rate: 0.2,
            ..NoiseModel::default()
        });
        let out = run_tracks(&cfg, &refs).unwrap();
        let parsed: Vec<FrameRecord> = out
            .frames_jsonl()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(parsed, out.records);
        assert_eq!(evaluate(&parsed).0, out.report);
    }

    #[test]
    fn empty_run_has_empty_timing() {
        let (report, fused) = evaluate(&[]);
        assert!(fused.is_empty());
        assert!(report.timing.end_to_end.is_none());
        assert_eq!(report.recognition.frames_total, 0);
    }

    #[test]
    fn noise_free_calibration() {
        let ts = tracks(6, 2);
        let refs: Vec<&Track> = ts.iter().collect();
        let (s, cfg) = calibrate_tracks(&PipelineConfig::default(), &refs).unwrap();
        // every true vehicle comes back at confidence 1
        assert_eq!(s.vehicle_threshold, 0.5);
        assert_eq!(s.vehicle_margin_required, 0.0);
        assert_eq!(s.plate_margin_required, 0.0);
        assert_eq!(cfg.vehicle.confidence_threshold, 0.5);
    }
}
