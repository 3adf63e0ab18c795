//! Python bindings for the plate recognition pipeline.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use alpr_core::augment;
use alpr_core::charseg::{self, CharCandidate, VehicleType};
use alpr_core::config::PipelineConfig;
use alpr_core::dataset::{self, Dataset, SplitFractions, SynthOptions, SPLIT_DIR};
use alpr_core::detect::Detection;
use alpr_core::eval;
use alpr_core::geometry::{self, FrameDims};
use alpr_core::netspec::{self, ArchSpec};
use alpr_core::pipeline;
use alpr_core::recognize::{LpString, PLATE_LEN};
use alpr_core::temporal::{self, TrackPredictions, TrackReading};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn frame_dims(frame: (u32, u32)) -> PyResult<FrameDims> {
    FrameDims::new(frame.0, frame.1).map_err(value_err)
}

/// Axis-aligned box in pixels: top-left corner plus width and height.
#[pyclass(name = "BBox", module = "alpr", from_py_object)]
#[derive(Clone, Copy)]
struct PyBBox(geometry::BBox);

#[pymethods]
impl PyBBox {
    #[new]
    fn new(x: f64, y: f64, w: f64, h: f64) -> PyResult<Self> {
        geometry::BBox::new(x, y, w, h).map(PyBBox).map_err(value_err)
    }

    #[getter]
    fn x(&self) -> f64 {
        self.0.x
    }

    #[getter]
    fn y(&self) -> f64 {
        self.0.y
    }

    #[getter]
    fn w(&self) -> f64 {
        self.0.w
    }

    #[getter]
    fn h(&self) -> f64 {
        self.0.h
    }

    fn area(&self) -> f64 {
        self.0.area()
    }

    fn center(&self) -> (f64, f64) {
        self.0.center()
    }

    fn iou(&self, other: &PyBBox) -> f64 {
        geometry::iou(&self.0, &other.0)
    }

    fn contains(&self, inner: &PyBBox, tol: f64) -> bool {
        self.0.contains(&inner.0, tol)
    }

    fn as_tuple(&self) -> (f64, f64, f64, f64) {
        (self.0.x, self.0.y, self.0.w, self.0.h)
    }

    fn __eq__(&self, other: &PyBBox) -> bool {
        self.0 == other.0
    }

    fn __repr__(&self) -> String {
        format!("BBox({}, {}, {}, {})", self.0.x, self.0.y, self.0.w, self.0.h)
    }
}

#[pyfunction]
fn iou(a: PyBBox, b: PyBBox) -> f64 {
    geometry::iou(&a.0, &b.0)
}

/// Grows each side by `margin` times the box size, clipped to `frame`.
#[pyfunction]
#[pyo3(signature = (bbox, margin, frame = (1920, 1080)))]
fn expand_margin(bbox: PyBBox, margin: f64, frame: (u32, u32)) -> PyResult<PyBBox> {
    Ok(PyBBox(geometry::expand_margin(&bbox.0, margin, frame_dims(frame)?)))
}

#[pyfunction]
#[pyo3(signature = (bbox, aspect, frame = (1920, 1080)))]
fn enlarge_to_aspect(bbox: PyBBox, aspect: f64, frame: (u32, u32)) -> PyResult<PyBBox> {
    Ok(PyBBox(geometry::enlarge_to_aspect(&bbox.0, aspect, frame_dims(frame)?)))
}

#[pyfunction]
#[pyo3(signature = (bbox, pad, frame = (1920, 1080)))]
fn pad_pixels(bbox: PyBBox, pad: f64, frame: (u32, u32)) -> PyResult<PyBBox> {
    Ok(PyBBox(geometry::pad_pixels(&bbox.0, pad, frame_dims(frame)?)))
}

/// Detection head filters for `classes` and `anchors`.
#[pyfunction]
#[pyo3(signature = (classes, anchors = netspec::DEFAULT_ANCHORS))]
fn required_filters(classes: u32, anchors: u32) -> PyResult<u32> {
    netspec::required_filters(classes, anchors).map_err(value_err)
}

/// A built-in architecture name or descriptor text.
fn arch(spec: &str) -> PyResult<ArchSpec> {
    if spec.contains('\n') {
        netspec::parse_descriptor(spec).map_err(value_err)
    } else {
        netspec::builtin(spec).map_err(value_err)
    }
}

#[pyfunction]
fn builtin_archs() -> Vec<String> {
    netspec::builtin_archs().into_iter().map(|a| a.name).collect()
}

/// Rows of `(index, kind, input, output)` with shapes as `(w, h, c)`.
#[pyfunction]
fn infer_shapes(spec: &str) -> PyResult<Vec<(usize, String, (u32, u32, u32), (u32, u32, u32))>> {
    let rows = netspec::infer_shapes(&arch(spec)?).map_err(value_err)?;
    let t = |s: netspec::TensorShape| (s.width, s.height, s.channels);
    Ok(rows
        .into_iter()
        .map(|r| (r.index, r.layer.kind().to_string(), t(r.input), t(r.output)))
        .collect())
}

#[pyfunction]
fn shape_table(spec: &str) -> PyResult<String> {
    netspec::shape_table(&arch(spec)?).map_err(value_err)
}

/// Violations found in the architecture; empty when it is consistent.
#[pyfunction]
fn validate(spec: &str) -> PyResult<Vec<String>> {
    Ok(netspec::validate(&arch(spec)?)
        .violations
        .iter()
        .map(|v| v.to_string())
        .collect())
}

/// `(direction, resulting label)` pairs with direction `V`, `H` or `VH`.
#[pyfunction]
fn flip_variants(label: char) -> Vec<(&'static str, char)> {
    augment::flip_variants(label)
        .into_iter()
        .map(|(d, c)| (d.tag(), c))
        .collect()
}

#[pyfunction]
fn digit_seed_letters() -> Vec<(char, char)> {
    augment::digit_seed_letters().to_vec()
}

/// Fuses plate readings of one vehicle. Confidences default to 1 per slot.
#[pyfunction]
#[pyo3(signature = (readings, confidences = None))]
fn majority_vote(readings: Vec<String>, confidences: Option<Vec<[f64; PLATE_LEN]>>) -> PyResult<String> {
    if let Some(c) = &confidences {
        if c.len() != readings.len() {
            return Err(value_err(format!("{} readings but {} confidence rows", readings.len(), c.len())));
        }
    }
    let readings = readings
        .iter()
        .enumerate()
        .map(|(frame, text)| {
            Ok(TrackReading {
                frame,
                text: text.parse::<LpString>().map_err(value_err)?,
                confidences: confidences.as_ref().map_or([1.0; PLATE_LEN], |c| c[frame]),
            })
        })
        .collect::<PyResult<Vec<_>>>()?;
    let track = TrackPredictions {
        vehicle_id: "track".into(),
        readings,
    };
    temporal::majority_vote(&track).map(|p| p.to_string()).map_err(value_err)
}

/// Reduces `(bbox, confidence)` candidates to seven characters.
#[pyfunction]
#[pyo3(signature = (candidates, vehicle_type = "car"))]
fn resolve_overlaps(candidates: Vec<(PyBBox, f64)>, vehicle_type: &str) -> PyResult<Vec<(PyBBox, f64)>> {
    let vtype: VehicleType = vehicle_type.parse().map_err(value_err)?;
    let cands: Vec<CharCandidate> = candidates
        .into_iter()
        .map(|(b, confidence)| CharCandidate { bbox: b.0, confidence })
        .collect();
    let out = charseg::resolve_overlaps(&cands, vtype).map_err(value_err)?;
    Ok(out.into_iter().map(|c| (PyBBox(c.bbox), c.confidence)).collect())
}

/// Greedy matching of `(bbox, confidence)` predictions to ground truth.
#[pyfunction]
#[pyo3(signature = (predictions, ground_truth, iou_min = 0.5))]
fn match_detections<'py>(
    py: Python<'py>,
    predictions: Vec<(PyBBox, f64)>,
    ground_truth: Vec<PyBBox>,
    iou_min: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let preds: Vec<Detection> = predictions
        .into_iter()
        .map(|(b, confidence)| Detection {
            class_id: 0,
            confidence,
            bbox: b.0,
        })
        .collect();
    let gts: Vec<geometry::BBox> = ground_truth.into_iter().map(|b| b.0).collect();
    let m = eval::match_detections(&preds, &gts, iou_min);
    let d = PyDict::new(py);
    d.set_item("true_positives", m.true_positives)?;
    d.set_item("false_positives", m.false_positives)?;
    d.set_item("false_negatives", m.false_negatives)?;
    d.set_item("pairs", m.pairs)?;
    Ok(d)
}

/// Log-normalized occupancy grid, rows top to bottom.
#[pyfunction]
#[pyo3(signature = (boxes, frame = (1920, 1080), bins = 32))]
fn heatmap(boxes: Vec<PyBBox>, frame: (u32, u32), bins: usize) -> PyResult<Vec<Vec<f64>>> {
    let boxes: Vec<geometry::BBox> = boxes.into_iter().map(|b| b.0).collect();
    Ok(eval::heatmap(&boxes, frame_dims(frame)?, bins))
}

/// Writes a synthetic dataset (and its train/test/validation split) under
/// `root`. Returns the split sizes.
#[pyfunction]
#[pyo3(signature = (root, tracks = 150, seed = 0, frames = 30))]
fn synth(py: Python<'_>, root: PathBuf, tracks: usize, seed: u64, frames: usize) -> PyResult<(usize, usize, usize)> {
    py.detach(|| {
        let opts = SynthOptions {
            frames_per_track: frames,
            ..SynthOptions::default()
        };
        let ds = Dataset {
            tracks: dataset::generate_synthetic(seed, tracks, &opts).map_err(value_err)?,
        };
        ds.write(&root).map_err(runtime_err)?;
        let split = dataset::split_dataset(&ds.tracks, SplitFractions::default(), seed).map_err(value_err)?;
        split.write(&root.join(SPLIT_DIR)).map_err(runtime_err)?;
        Ok((split.train.len(), split.test.len(), split.validation.len()))
    })
}

/// Runs the pipeline with the simulated backend and returns the report as
/// a dict. Output files are written when `out` is given.
#[pyfunction]
#[pyo3(signature = (dataset, split = "test", seed = 0, workers = 1, miss_rate = 0.0, config = None, out = None))]
#[allow(clippy::too_many_arguments)]
fn run<'py>(
    py: Python<'py>,
    dataset: PathBuf,
    split: &str,
    seed: u64,
    workers: usize,
    miss_rate: f64,
    config: Option<PathBuf>,
    out: Option<PathBuf>,
) -> PyResult<Bound<'py, PyAny>> {
    let mut cfg = match config {
        Some(path) => PipelineConfig::load(&path).map_err(value_err)?,
        None => PipelineConfig::default(),
    };
    cfg.dataset = dataset;
    cfg.split = split.to_string();
    cfg.seed = seed;
    cfg.workers = workers;
    if miss_rate > 0.0 {
        for n in [&mut cfg.backend.noise.vehicle, &mut cfg.backend.noise.plate, &mut cfg.backend.noise.characters] {
            n.miss_rate = miss_rate;
        }
    }
    let report = py.detach(|| {
        let output = pipeline::run(&cfg).map_err(runtime_err)?;
        if let Some(dir) = &out {
            output.write(dir).map_err(runtime_err)?;
        }
        serde_json::to_string(&output.report).map_err(runtime_err)
    })?;
    py.import("json")?.call_method1("loads", (report,))
}

#[pymodule]
fn alpr(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBBox>()?;
    m.add("PLATE_LEN", PLATE_LEN)?;
    m.add_function(wrap_pyfunction!(iou, m)?)?;
    m.add_function(wrap_pyfunction!(expand_margin, m)?)?;
    m.add_function(wrap_pyfunction!(enlarge_to_aspect, m)?)?;
    m.add_function(wrap_pyfunction!(pad_pixels, m)?)?;
    m.add_function(wrap_pyfunction!(required_filters, m)?)?;
    m.add_function(wrap_pyfunction!(builtin_archs, m)?)?;
    m.add_function(wrap_pyfunction!(infer_shapes, m)?)?;
    m.add_function(wrap_pyfunction!(shape_table, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add_function(wrap_pyfunction!(flip_variants, m)?)?;
    m.add_function(wrap_pyfunction!(digit_seed_letters, m)?)?;
    m.add_function(wrap_pyfunction!(majority_vote, m)?)?;
    m.add_function(wrap_pyfunction!(resolve_overlaps, m)?)?;
    m.add_function(wrap_pyfunction!(match_detections, m)?)?;
    m.add_function(wrap_pyfunction!(heatmap, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
