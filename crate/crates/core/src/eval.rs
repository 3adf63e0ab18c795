//! Evaluation: detection matching, stage metrics, recognition rates, timing,
//! heat maps and the letter histogram.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detect::{rank, Detection};
use crate::geometry::{iou, BBox, FrameDims};
use crate::recognize::{LpString, PLATE_LEN};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MatchResult {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    /// (prediction index, ground-truth index, IoU) of every match.
    pub pairs: Vec<(usize, usize, f64)>,
}

/// Greedy one-to-one matching. Predictions are visited by descending
/// confidence and each takes the unmatched ground truth with the highest IoU
/// (lowest index on ties) if that IoU reaches `iou_min`.
pub fn match_detections(preds: &[Detection], gts: &[BBox], iou_min: f64) -> MatchResult {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| rank(&preds[a], &preds[b]).then(a.cmp(&b)));
    let mut taken = vec![false; gts.len()];
    let mut pairs = Vec::new();
    for p in order {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let v = iou(&preds[p].bbox, gt);
            if v >= iou_min && best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        if let Some((g, v)) = best {
            taken[g] = true;
            pairs.push((p, g, v));
        }
    }
    let tp = pairs.len();
    MatchResult {
        true_positives: tp,
        false_positives: preds.len() - tp,
        false_negatives: gts.len() - tp,
        pairs,
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Detection counts of one stage, summed over frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StageCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl StageCounts {
    pub fn from_match(m: &MatchResult) -> Self {
        Self {
            tp: m.true_positives as u64,
            fp: m.false_positives as u64,
            fn_: m.false_negatives as u64,
        }
    }

    pub fn add(&mut self, other: StageCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    pub fn ground_truth(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn predictions(&self) -> u64 {
        self.tp + self.fp
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageMetrics {
    pub stage: String,
    pub recall: f64,
    pub precision: f64,
    pub true_positives: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
    /// Mean time per frame spent in the stage (per character ×7 for recognition).
    pub mean_ms: f64,
    pub fps: f64,
}

impl StageMetrics {
    pub fn new(stage: &str, counts: StageCounts, timing: Option<&TimingRow>) -> Self {
        let mean_ms = timing.map_or(0.0, |t| t.ms);
        Self {
            stage: stage.to_string(),
            recall: counts.recall(),
            precision: counts.precision(),
            true_positives: counts.tp,
            false_positives: counts.fp,
            false_negatives: counts.fn_,
            mean_ms,
            fps: fps(mean_ms),
        }
    }
}

fn fps(ms: f64) -> f64 {
    if ms > 0.0 {
        1000.0 / ms
    } else {
        0.0
    }
}

// --- timing --------------------------------------------------------------------

/// Accumulated time of one stage: total milliseconds over `inputs` calls.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageTime {
    pub total_ms: f64,
    pub inputs: u64,
}

impl StageTime {
    pub fn add(&mut self, other: StageTime) {
        self.total_ms += other.total_ms;
        self.inputs += other.inputs;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub stage: String,
    /// Mean time per input.
    pub per_input_ms: f64,
    /// How many times the stage runs per frame.
    pub multiplier: u32,
    /// per_input_ms × multiplier.
    pub ms: f64,
    pub fps: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TimingReport {
    pub rows: Vec<TimingRow>,
    pub end_to_end: Option<TimingRow>,
}

impl TimingReport {
    pub fn row(&self, stage: &str) -> Option<&TimingRow> {
        self.rows.iter().find(|r| r.stage == stage)
    }
}

/// Builds the timing table. Each entry is (stage, accumulated time, runs per
/// frame); character recognition runs once per character, so it is listed
/// with multiplier 7. The end-to-end row sums the per-frame costs. Stages
/// that never ran are left out; with nothing timed the report is empty.
pub fn timing_harness(stages: &[(&str, StageTime, u32)]) -> TimingReport {
    let rows: Vec<TimingRow> = stages
        .iter()
        .filter(|(_, t, _)| t.inputs > 0)
        .map(|(name, t, mult)| {
            let per_input_ms = t.total_ms / t.inputs as f64;
            let ms = per_input_ms * *mult as f64;
            TimingRow {
                stage: name.to_string(),
                per_input_ms,
                multiplier: *mult,
                ms,
                fps: fps(ms),
            }
        })
        .collect();
    if rows.is_empty() {
        return TimingReport::default();
    }
    let total: f64 = rows.iter().map(|r| r.ms).sum();
    TimingReport {
        end_to_end: Some(TimingRow {
            stage: "end-to-end".into(),
            per_input_ms: total,
            multiplier: 1,
            ms: total,
            fps: fps(total),
        }),
        rows,
    }
}

// --- recognition ------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Ratio {
    pub hits: u64,
    pub total: u64,
    pub rate: f64,
}

impl Ratio {
    pub fn new(hits: u64, total: u64) -> Self {
        Self {
            hits,
            total,
            rate: ratio(hits, total),
        }
    }
}

/// Outcome of one frame as seen by the recognition metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameOutcome {
    pub track: String,
    pub vehicle_detected: bool,
    pub reading: Option<LpString>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackTruth {
    pub plate: LpString,
    pub frames: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RecognitionReport {
    pub frames_total: u64,
    /// Frames in which no vehicle was found (negative results).
    pub frames_negative: u64,
    /// Frames with a vehicle whose pipeline produced no plate reading.
    pub frames_unread: u64,
    pub frames_all_correct: Ratio,
    pub frames_geq6: Ratio,
    pub letters_all_correct: Ratio,
    pub digits_all_correct: Ratio,
    /// Per-character accuracy over the frames with a vehicle.
    pub char_accuracy: Ratio,
    pub vehicles_all_correct_redundant: Ratio,
    pub vehicles_geq6_redundant: Ratio,
    pub frame_weighted_redundant: Ratio,
}

/// Frame rates use the frames in which a vehicle was detected; a frame
/// without a reading counts as wrong. Track rates use every track in
/// `truth`, a missing fused reading counting as wrong. The frame-weighted
/// rate weights each track by its frame count.
pub fn recognition_rates(
    frames: &[FrameOutcome],
    fused: &BTreeMap<String, Option<LpString>>,
    truth: &BTreeMap<String, TrackTruth>,
) -> RecognitionReport {
    let mut r = RecognitionReport {
        frames_total: frames.len() as u64,
        ..Default::default()
    };
    let (mut seen, mut all, mut geq6, mut letters, mut digits, mut chars) = (0u64, 0u64, 0u64, 0u64, 0u64, 0u64);
    for f in frames {
        if !f.vehicle_detected {
            r.frames_negative += 1;
            continue;
        }
        seen += 1;
        let Some(reading) = f.reading else {
            r.frames_unread += 1;
            continue;
        };
        let Some(gt) = truth.get(&f.track) else { continue };
        let hits = reading.matching_slots(&gt.plate);
        chars += hits as u64;
        all += u64::from(hits == PLATE_LEN);
        geq6 += u64::from(hits >= PLATE_LEN - 1);
        letters += u64::from(reading.letters() == gt.plate.letters());
        digits += u64::from(reading.digits() == gt.plate.digits());
    }
    r.frames_all_correct = Ratio::new(all, seen);
    r.frames_geq6 = Ratio::new(geq6, seen);
    r.letters_all_correct = Ratio::new(letters, seen);
    r.digits_all_correct = Ratio::new(digits, seen);
    r.char_accuracy = Ratio::new(chars, seen * PLATE_LEN as u64);

    let (mut v_all, mut v_geq6, mut w_hit, mut w_total) = (0u64, 0u64, 0u64, 0u64);
    for (id, gt) in truth {
        w_total += gt.frames;
        let Some(Some(reading)) = fused.get(id) else { continue };
        let hits = reading.matching_slots(&gt.plate);
        if hits == PLATE_LEN {
            v_all += 1;
            w_hit += gt.frames;
        }
        v_geq6 += u64::from(hits >= PLATE_LEN - 1);
    }
    let n = truth.len() as u64;
    r.vehicles_all_correct_redundant = Ratio::new(v_all, n);
    r.vehicles_geq6_redundant = Ratio::new(v_geq6, n);
    r.frame_weighted_redundant = Ratio::new(w_hit, w_total);
    r
}

// --- summaries --------------------------------------------------------------------

/// Counts how often each box overlaps each cell of a `bins`×`bins` grid over
/// the frame and log-normalizes: log(1 + c) / log(1 + max). A box counts for
/// every cell it overlaps with positive area. Rows run top to bottom.
pub fn heatmap(boxes: &[BBox], frame: FrameDims, bins: usize) -> Vec<Vec<f64>> {
    let bins = bins.max(1);
    let cw = frame.width as f64 / bins as f64;
    let ch = frame.height as f64 / bins as f64;
    let mut counts = vec![vec![0u64; bins]; bins];
    for b in boxes {
        let Some(b) = b.clip_to(&frame.bounds()) else { continue };
        if b.area() <= 0.0 {
            continue;
        }
        let c0 = ((b.x / cw).floor() as usize).min(bins - 1);
        let r0 = ((b.y / ch).floor() as usize).min(bins - 1);
        for (r, row) in counts.iter_mut().enumerate().skip(r0) {
            let top = r as f64 * ch;
            if top >= b.bottom() {
                break;
            }
            for (c, cell) in row.iter_mut().enumerate().skip(c0) {
                let left = c as f64 * cw;
                if left >= b.right() {
                    break;
                }
                let cell_box = BBox {
                    x: left,
                    y: top,
                    w: cw,
                    h: ch,
                };
                if cell_box.intersection_area(&b) > 0.0 {
                    *cell += 1;
                }
            }
        }
    }
    let max = counts.iter().flatten().copied().max().unwrap_or(0);
    if max == 0 {
        return vec![vec![0.0; bins]; bins];
    }
    let denom = (max as f64).ln_1p();
    counts
        .into_iter()
        .map(|row| row.into_iter().map(|c| (c as f64).ln_1p() / denom).collect())
        .collect()
}

pub fn heatmap_text(grid: &[Vec<f64>]) -> String {
    let mut s = String::new();
    for row in grid {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.3}")).collect();
        let _ = writeln!(s, "{}", cells.join(" "));
    }
    s
}

/// Writes the grid as a grayscale PNG, `scale` pixels per cell.
pub fn write_heatmap_png(grid: &[Vec<f64>], scale: u32, path: &Path) -> Result<(), image::ImageError> {
    let rows = grid.len() as u32;
    let cols = grid.first().map_or(0, |r| r.len()) as u32;
    let scale = scale.max(1);
    let img = image::GrayImage::from_fn(cols * scale, rows * scale, |x, y| {
        let v = grid[(y / scale) as usize][(x / scale) as usize];
        image::Luma([(v.clamp(0.0, 1.0) * 255.0).round() as u8])
    });
    img.save(path)
}

/// Letter counts A..Z over the letter slots of `plates`.
pub fn letter_histogram(plates: &[LpString]) -> [u64; 26] {
    let mut h = [0u64; 26];
    for p in plates {
        for b in p.letters().bytes() {
            h[(b - b'A') as usize] += 1;
        }
    }
    h
}

// --- reports ------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub stages: Vec<StageMetrics>,
    pub timing: TimingReport,
    pub recognition: RecognitionReport,
}

fn pct(v: f64) -> String {
    format!("{:.2}%", v * 100.0)
}

impl EvalReport {
    pub fn stage(&self, name: &str) -> Option<&StageMetrics> {
        self.stages.iter().find(|s| s.stage == name)
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<14} {:>9} {:>9} {:>7} {:>7} {:>7} {:>10} {:>8}",
            "stage", "recall", "precision", "tp", "fp", "fn", "ms", "fps"
        );
        for m in &self.stages {
            let _ = writeln!(
                s,
                "{:<14} {:>9} {:>9} {:>7} {:>7} {:>7} {:>10.4} {:>8.1}",
                m.stage,
                pct(m.recall),
                pct(m.precision),
                m.true_positives,
                m.false_positives,
                m.false_negatives,
                m.mean_ms,
                m.fps
            );
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<14} {:>10} {:>5} {:>10} {:>8}", "timing", "ms/input", "x", "ms/frame", "fps");
        for r in self.timing.rows.iter().chain(self.timing.end_to_end.as_ref()) {
            let _ = writeln!(
                s,
                "{:<14} {:>10.4} {:>5} {:>10.4} {:>8.1}",
                r.stage, r.per_input_ms, r.multiplier, r.ms, r.fps
            );
        }
        let r = &self.recognition;
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "frames: {} total, {} negative (no vehicle), {} without reading",
            r.frames_total, r.frames_negative, r.frames_unread
        );
        let rows: [(&str, &Ratio); 8] = [
            ("frames all correct", &r.frames_all_correct),
            ("frames >= 6 chars", &r.frames_geq6),
            ("letters all correct", &r.letters_all_correct),
            ("digits all correct", &r.digits_all_correct),
            ("per-char accuracy", &r.char_accuracy),
            ("vehicles all correct", &r.vehicles_all_correct_redundant),
            ("vehicles >= 6 chars", &r.vehicles_geq6_redundant),
            ("frame-weighted", &r.frame_weighted_redundant),
        ];
        for (name, v) in rows {
            let _ = writeln!(s, "{:<22} {:>9} ({}/{})", name, pct(v.rate), v.hits, v.total);
        }
        s
    }

    /// One JSON record per line: stage rows, timing rows, then the recognition summary.
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for m in &self.stages {
            let v = serde_json::json!({"kind": "stage", "metrics": m});
            let _ = writeln!(s, "{v}");
        }
        for r in self.timing.rows.iter().chain(self.timing.end_to_end.as_ref()) {
            let v = serde_json::json!({"kind": "timing", "row": r});
            let _ = writeln!(s, "{v}");
        }
        let v = serde_json::json!({"kind": "recognition", "report": self.recognition});
        let _ = writeln!(s, "{v}");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn det(conf: f64, x: f64, y: f64, w: f64, h: f64) -> Detection {
        Detection {
            class_id: 0,
            confidence: conf,
            bbox: BBox::new(x, y, w, h).unwrap(),
        }
    }

    #[test]
    fn matching_examples() {
        let gt = [BBox::new(0.0, 0.0, 10.0, 10.0).unwrap()];
        // IoU 0.6: overlap 75 / union 125
        let m = match_detections(&[det(0.9, 0.0, 0.0, 10.0, 7.5)], &gt, 0.5);
        assert_eq!((m.true_positives, m.false_positives, m.false_negatives), (1, 0, 0));
        // IoU 0.4
        let m = match_detections(&[det(0.9, 0.0, 0.0, 10.0, 4.0)], &gt, 0.5);
        assert_eq!((m.true_positives, m.false_positives, m.false_negatives), (0, 1, 1));
        let m = match_detections(&[det(0.9, 0.0, 0.0, 10.0, 10.0), det(0.8, 0.0, 0.0, 10.0, 9.0)], &gt, 0.5);
        assert_eq!((m.true_positives, m.false_positives, m.false_negatives), (1, 1, 0));
        assert_eq!(m.pairs[0].0, 0);
    }

    #[test]
    fn higher_confidence_claims_first() {
        let gt = [BBox::new(0.0, 0.0, 10.0, 10.0).unwrap()];
        let m = match_detections(&[det(0.2, 0.0, 0.0, 10.0, 10.0), det(0.8, 0.0, 0.0, 10.0, 6.0)], &gt, 0.5);
        assert_eq!(m.pairs, vec![(1, 0, 0.6)]);
    }

    #[test]
    fn timing_mirrors_table_structure() {
        let t = |ms: f64| StageTime { total_ms: ms * 10.0, inputs: 10 };
        let r = timing_harness(&[
            ("vehicle", t(4.0), 1),
            ("plate", t(4.0), 1),
            ("segmentation", t(1.6), 1),
            ("recognition", t(1.6), 7),
        ]);
        let e = r.end_to_end.unwrap();
        assert_relative_eq!(e.ms, 20.8, epsilon = 1e-9);
        assert_eq!(e.fps.round(), 48.0);
        assert_relative_eq!(r.rows[3].ms, 11.2, epsilon = 1e-9);
        assert_eq!(timing_harness(&[("vehicle", StageTime::default(), 1)]), TimingReport::default());
    }

    fn plate(s: &str) -> LpString {
        s.parse().unwrap()
    }

    #[test]
    fn vehicle_and_frame_weighted_rates() {
        let mut truth = BTreeMap::new();
        let mut fused = BTreeMap::new();
        for i in 0..40 {
            let id = format!("t{i:02}");
            truth.insert(id.clone(), TrackTruth { plate: plate("ABC-1234"), frames: 30 });
            let text = if i < 37 { "ABC-1234" } else { "ABC-1235" };
            fused.insert(id, Some(plate(text)));
        }
        let r = recognition_rates(&[], &fused, &truth);
        assert_relative_eq!(r.vehicles_all_correct_redundant.rate, 0.925, epsilon = 1e-9);
        assert_relative_eq!(r.frame_weighted_redundant.rate, 0.925, epsilon = 1e-9);
        assert_relative_eq!(r.vehicles_geq6_redundant.rate, 1.0);
    }

    #[test]
    fn frame_rates_skip_negatives() {
        let truth = BTreeMap::from([("a".to_string(), TrackTruth { plate: plate("ABC-1234"), frames: 4 })]);
        let outcome = |detected: bool, reading: Option<&str>| FrameOutcome {
            track: "a".into(),
            vehicle_detected: detected,
            reading: reading.map(plate),
        };
        let frames = vec![
            outcome(true, Some("ABC-1234")),
            outcome(true, Some("ABD-1234")),
            outcome(true, None),
            outcome(false, None),
        ];
        let r = recognition_rates(&frames, &BTreeMap::new(), &truth);
        assert_eq!(r.frames_all_correct, Ratio::new(1, 3));
        assert_eq!(r.frames_geq6, Ratio::new(2, 3));
        assert_eq!(r.letters_all_correct, Ratio::new(1, 3));
        assert_eq!(r.digits_all_correct, Ratio::new(2, 3));
        assert_eq!(r.char_accuracy, Ratio::new(13, 21));
        assert_eq!((r.frames_negative, r.frames_unread), (1, 1));
        assert_eq!(r.vehicles_all_correct_redundant, Ratio::new(0, 1));
    }

    #[test]
    fn heatmap_examples() {
        let f = FrameDims::new(100, 100).unwrap();
        assert!(heatmap(&[], f, 4).iter().flatten().all(|v| *v == 0.0));
        let one = heatmap(&[BBox::new(25.0, 50.0, 25.0, 25.0).unwrap()], f, 4);
        for (r, row) in one.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                assert_eq!(*v, if (r, c) == (2, 1) { 1.0 } else { 0.0 });
            }
        }
        let two = heatmap(
            &[BBox::new(0.0, 0.0, 25.0, 25.0).unwrap(), BBox::new(75.0, 75.0, 25.0, 25.0).unwrap()],
            f,
            4,
        );
        assert_eq!((two[0][0], two[3][3]), (1.0, 1.0));
    }

    #[test]
    fn letter_counts() {
        let h = letter_histogram(&[plate("AAA-0001"), plate("BBB-0002")]);
        assert_eq!((h[0], h[1]), (3, 3));
        assert_eq!(h.iter().sum::<u64>(), 6);
        assert_eq!(letter_histogram(&[]), [0; 26]);
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0.0..90.0f64, 0.0..90.0f64, 1.0..40.0f64, 1.0..40.0f64).prop_map(|(x, y, w, h)| BBox { x, y, w, h })
    }

    proptest! {
        #[test]
        fn match_counts_consistent(
            preds in prop::collection::vec((arb_box(), 0.0..1.0f64), 0..12),
            gts in prop::collection::vec(arb_box(), 0..12),
        ) {
            let preds: Vec<Detection> = preds
                .into_iter()
                .map(|(bbox, confidence)| Detection { class_id: 0, confidence, bbox })
                .collect();
            let m = match_detections(&preds, &gts, 0.5);
            prop_assert_eq!(m.true_positives + m.false_negatives, gts.len());
            prop_assert_eq!(m.true_positives + m.false_positives, preds.len());
        }

        #[test]
        fn heatmap_bounded_under_duplication(boxes in prop::collection::vec(arb_box(), 0..20), bins in 1usize..9) {
            let f = FrameDims::new(128, 128).unwrap();
            let a: Vec<f64> = heatmap(&boxes, f, bins).into_iter().flatten().collect();
            prop_assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
            let doubled: Vec<BBox> = boxes.iter().chain(boxes.iter()).copied().collect();
            let b: Vec<f64> = heatmap(&doubled, f, bins).into_iter().flatten().collect();
            // log scaling keeps the support, the peak cells and the ordering
            for i in 0..a.len() {
                prop_assert_eq!(a[i] == 0.0, b[i] == 0.0);
                prop_assert_eq!(a[i] == 1.0, b[i] == 1.0);
                for j in 0..a.len() {
                    prop_assert_eq!(a[i] < a[j], b[i] < b[j]);
                }
            }
        }
    }
}
