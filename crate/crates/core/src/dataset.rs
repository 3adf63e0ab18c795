//! Annotation model, on-disk dataset layout, the stratified split and the
//! synthetic track generator.
//!
//! Layout of a dataset root:
//!
//! ```text
//! manifest.txt              <track-id> <directory> <plate-color>
//! <directory>/frame_000.txt one annotation file per frame
//! splits/{train,test,validation}.txt   one track id per line
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::charseg::VehicleType;
use crate::geometry::{BBox, FrameDims};
use crate::recognize::{LpString, PLATE_LEN};

pub const FRAMES_PER_TRACK: usize = 30;
pub const MANIFEST: &str = "manifest.txt";
pub const SPLIT_DIR: &str = "splits";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{file}:{line}: {reason}")]
    Parse { file: String, line: usize, reason: String },
    #[error("{0}")]
    Invalid(String),
    #[error("split: {0}")]
    Split(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlateColor {
    Gray,
    Red,
}

impl FromStr for PlateColor {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gray" => Ok(PlateColor::Gray),
            "red" => Ok(PlateColor::Red),
            other => Err(format!("unknown plate color '{other}'")),
        }
    }
}

impl std::fmt::Display for PlateColor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PlateColor::Gray => "gray",
            PlateColor::Red => "red",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleInfo {
    pub vtype: VehicleType,
    pub make: String,
    pub model: String,
    pub year: String,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateInfo {
    pub text: LpString,
    pub bbox: BBox,
}

/// Ground truth of a single frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameAnnotation {
    pub camera: String,
    pub vehicle: VehicleInfo,
    pub plate: PlateInfo,
    /// Character boxes in frame coordinates, in plate slot order.
    pub chars: [BBox; PLATE_LEN],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub vehicle_id: String,
    pub color: PlateColor,
    pub frames: Vec<FrameAnnotation>,
}

impl Track {
    pub fn plate_text(&self) -> Option<LpString> {
        self.frames.first().map(|f| f.plate.text)
    }

    pub fn vtype(&self) -> Option<VehicleType> {
        self.frames.first().map(|f| f.vehicle.vtype)
    }

    pub fn camera(&self) -> Option<&str> {
        self.frames.first().map(|f| f.camera.as_str())
    }

    pub fn mean_plate_height(&self) -> f64 {
        if self.frames.is_empty() {
            return 0.0;
        }
        self.frames.iter().map(|f| f.plate.bbox.h).sum::<f64>() / self.frames.len() as f64
    }

    /// Identifier handed to backends for frame `index`.
    pub fn frame_source(&self, index: usize) -> String {
        format!("{}/frame_{index:03}", self.vehicle_id)
    }

    pub fn check(&self) -> Result<(), DatasetError> {
        let Some(first) = self.frames.first() else {
            return Err(DatasetError::Invalid(format!("track {} has no frames", self.vehicle_id)));
        };
        for (i, f) in self.frames.iter().enumerate() {
            if f.plate.text != first.plate.text || f.vehicle.vtype != first.vehicle.vtype {
                return Err(DatasetError::Invalid(format!(
                    "track {} frame {i}: plate text or vehicle type differs from frame 0",
                    self.vehicle_id
                )));
            }
        }
        Ok(())
    }
}

/// On-disk annotation syntax revisions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AnnotationFormat {
    /// Keyed lines: `camera:`, `type:`, `make:`, `model:`, `year:`,
    /// `position_vehicle:`, `plate:`, `position_plate:`, `char 1:` .. `char 7:`.
    #[default]
    V1,
}

fn fmt_box(b: &BBox) -> String {
    format!("{} {} {} {}", b.x, b.y, b.w, b.h)
}

pub fn write_annotation(ann: &FrameAnnotation) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "camera: {}", ann.camera);
    let _ = writeln!(s, "type: {}", ann.vehicle.vtype);
    let _ = writeln!(s, "make: {}", ann.vehicle.make);
    let _ = writeln!(s, "model: {}", ann.vehicle.model);
    let _ = writeln!(s, "year: {}", ann.vehicle.year);
    let _ = writeln!(s, "position_vehicle: {}", fmt_box(&ann.vehicle.bbox));
    let _ = writeln!(s, "plate: {}", ann.plate.text);
    let _ = writeln!(s, "position_plate: {}", fmt_box(&ann.plate.bbox));
    for (i, c) in ann.chars.iter().enumerate() {
        let _ = writeln!(s, "char {}: {}", i + 1, fmt_box(c));
    }
    s
}

pub fn parse_annotation(text: &str) -> Result<FrameAnnotation, DatasetError> {
    parse_annotation_as(text, AnnotationFormat::V1, "<annotation>")
}

pub fn parse_annotation_as(text: &str, format: AnnotationFormat, file: &str) -> Result<FrameAnnotation, DatasetError> {
    match format {
        AnnotationFormat::V1 => parse_v1(text, file),
    }
}

fn parse_v1(text: &str, file: &str) -> Result<FrameAnnotation, DatasetError> {
    let err = |line: usize, reason: String| DatasetError::Parse {
        file: file.to_string(),
        line,
        reason,
    };
    let mut fields: BTreeMap<String, (usize, String)> = BTreeMap::new();
    let mut last_line = 0;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        last_line = i + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once(':')
            .ok_or_else(|| err(i + 1, format!("expected 'key: value', got '{line}'")))?;
        let key = key.trim().to_string();
        if fields.insert(key.clone(), (i + 1, value.trim().to_string())).is_some() {
            return Err(err(i + 1, format!("duplicate key '{key}'")));
        }
    }

    let end = last_line.max(1);
    let take = |fields: &mut BTreeMap<String, (usize, String)>, key: &str| {
        fields
            .remove(key)
            .ok_or_else(|| err(end, format!("missing key '{key}'")))
    };
    let parse_box = |(line, v): (usize, String)| -> Result<BBox, DatasetError> {
        let nums: Vec<f64> = v
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| err(line, format!("malformed box '{v}'")))?;
        match nums.as_slice() {
            [x, y, w, h] => BBox::new(*x, *y, *w, *h).map_err(|e| err(line, format!("malformed box '{v}': {e}"))),
            _ => Err(err(line, format!("malformed box '{v}': expected 4 numbers"))),
        }
    };

    let camera = take(&mut fields, "camera")?.1;
    let (tline, tval) = take(&mut fields, "type")?;
    let vtype = tval.parse::<VehicleType>().map_err(|e| err(tline, e))?;
    let make = take(&mut fields, "make")?.1;
    let model = take(&mut fields, "model")?.1;
    let year = take(&mut fields, "year")?.1;
    let vbox = parse_box(take(&mut fields, "position_vehicle")?)?;
    let (pline, pval) = take(&mut fields, "plate")?;
    let text = pval.parse::<LpString>().map_err(|e| err(pline, e.to_string()))?;
    let pbox = parse_box(take(&mut fields, "position_plate")?)?;

    let mut chars = Vec::with_capacity(PLATE_LEN);
    for i in 1..=PLATE_LEN {
        let key = format!("char {i}");
        let entry = fields
            .remove(&key)
            .ok_or_else(|| err(end, format!("missing character slot {i} ('{key}')")))?;
        chars.push(parse_box(entry)?);
    }
    if let Some((key, (line, _))) = fields.into_iter().next() {
        return Err(err(line, format!("unknown key '{key}'")));
    }

    Ok(FrameAnnotation {
        camera,
        vehicle: VehicleInfo {
            vtype,
            make,
            model,
            year,
            bbox: vbox,
        },
        plate: PlateInfo { text, bbox: pbox },
        chars: chars.try_into().expect("seven slots"),
    })
}

/// Geometric invariants of an annotation within its frame.
pub fn check_annotation(ann: &FrameAnnotation, frame: FrameDims) -> Result<(), String> {
    if !ann.plate.bbox.inside(frame) {
        return Err(format!("plate box {} outside frame {frame}", ann.plate.bbox));
    }
    for (i, c) in ann.chars.iter().enumerate() {
        if !ann.plate.bbox.contains(c, 1e-9) {
            return Err(format!("char {} box {} outside plate {}", i + 1, c, ann.plate.bbox));
        }
    }
    Ok(())
}

// --- dataset tree ------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub tracks: Vec<Track>,
}

impl Dataset {
    pub fn track(&self, id: &str) -> Option<&Track> {
        self.tracks.iter().find(|t| t.vehicle_id == id)
    }

    pub fn load(root: &Path) -> Result<Self, DatasetError> {
        let manifest_path = root.join(MANIFEST);
        let text = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
        let file = manifest_path.display().to_string();
        let mut tracks = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let perr = |reason: String| DatasetError::Parse {
                file: file.clone(),
                line: i + 1,
                reason,
            };
            let toks: Vec<&str> = line.split_whitespace().collect();
            let [id, dir, color] = toks.as_slice() else {
                return Err(perr(format!("expected '<track-id> <dir> <color>', got '{line}'")));
            };
            let color = color.parse::<PlateColor>().map_err(perr)?;
            let track_dir = root.join(dir);
            let mut files: Vec<PathBuf> = fs::read_dir(&track_dir)
                .map_err(io_err(&track_dir))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "txt"))
                .collect();
            files.sort();
            let mut frames = Vec::with_capacity(files.len());
            for f in &files {
                let body = fs::read_to_string(f).map_err(io_err(f))?;
                frames.push(parse_annotation_as(&body, AnnotationFormat::V1, &f.display().to_string())?);
            }
            let track = Track {
                vehicle_id: id.to_string(),
                color,
                frames,
            };
            track.check()?;
            tracks.push(track);
        }
        Ok(Dataset { tracks })
    }

    pub fn write(&self, root: &Path) -> Result<(), DatasetError> {
        fs::create_dir_all(root).map_err(io_err(root))?;
        let mut manifest = String::new();
        for t in &self.tracks {
            let _ = writeln!(manifest, "{} {} {}", t.vehicle_id, t.vehicle_id, t.color);
            let dir = root.join(&t.vehicle_id);
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
            for (i, f) in t.frames.iter().enumerate() {
                let path = dir.join(format!("frame_{i:03}.txt"));
                fs::write(&path, write_annotation(f)).map_err(io_err(&path))?;
            }
        }
        let path = root.join(MANIFEST);
        fs::write(&path, manifest).map_err(io_err(&path))
    }
}

// --- split -------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub test: f64,
    pub validation: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.4,
            test: 0.4,
            validation: 0.2,
        }
    }
}

impl SplitFractions {
    fn as_array(&self) -> [f64; 3] {
        [self.train, self.test, self.validation]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub validation: Vec<String>,
}

pub const SPLIT_NAMES: [&str; 3] = ["train", "test", "validation"];

impl Split {
    pub fn part(&self, name: &str) -> Option<&[String]> {
        match name {
            "train" => Some(&self.train),
            "test" => Some(&self.test),
            "validation" => Some(&self.validation),
            _ => None,
        }
    }

    fn parts_mut(&mut self) -> [&mut Vec<String>; 3] {
        [&mut self.train, &mut self.test, &mut self.validation]
    }

    pub fn write(&self, dir: &Path) -> Result<(), DatasetError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        for name in SPLIT_NAMES {
            let path = dir.join(format!("{name}.txt"));
            let body: String = self.part(name).unwrap_or(&[]).iter().map(|id| format!("{id}\n")).collect();
            fs::write(&path, body).map_err(io_err(&path))?;
        }
        Ok(())
    }

    /// Reads one split list (`train`, `test` or `validation`) from `dir`.
    pub fn read_part(dir: &Path, name: &str) -> Result<Vec<String>, DatasetError> {
        let path = dir.join(format!("{name}.txt"));
        let body = fs::read_to_string(&path).map_err(io_err(&path))?;
        Ok(body
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect())
    }
}

/// Stratum of a track: camera, vehicle type, plate color, plate-height quartile.
pub type Stratum = (String, VehicleType, PlateColor, usize);

/// Plate-height quartile of each track, ranked over the whole corpus.
pub fn height_quartiles(tracks: &[Track]) -> BTreeMap<String, usize> {
    let mut order: Vec<(f64, &str)> = tracks
        .iter()
        .map(|t| (t.mean_plate_height(), t.vehicle_id.as_str()))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(b.1)));
    let n = order.len().max(1);
    order
        .into_iter()
        .enumerate()
        .map(|(rank, (_, id))| (id.to_string(), rank * 4 / n))
        .collect()
}

/// Largest-remainder apportionment of `n` over `fractions`.
fn apportion(n: usize, fractions: &[f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts = [0usize; 3];
    for (c, e) in counts.iter_mut().zip(&exact) {
        *c = (e + 1e-9).floor() as usize;
    }
    let mut rest = n - counts.iter().sum::<usize>();
    let mut by_frac: Vec<usize> = (0..3).collect();
    by_frac.sort_by(|&a, &b| {
        let fa = exact[a] - counts[a] as f64;
        let fb = exact[b] - counts[b] as f64;
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &k in by_frac.iter().cycle() {
        if rest == 0 {
            break;
        }
        counts[k] += 1;
        rest -= 1;
    }
    counts
}

/// Splits tracks into train/test/validation. Whole tracks are assigned, the
/// overall sizes follow largest-remainder rounding, and each stratum's count
/// per split is the floor or ceiling of its proportional share.
pub fn split_dataset(tracks: &[Track], fractions: SplitFractions, seed: u64) -> Result<Split, DatasetError> {
    let f = fractions.as_array();
    if f.iter().any(|v| !(0.0..=1.0).contains(v)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(DatasetError::Split(format!("fractions {f:?} must be in [0, 1] and sum to 1")));
    }
    let ids: BTreeSet<&str> = tracks.iter().map(|t| t.vehicle_id.as_str()).collect();
    if ids.len() != tracks.len() {
        return Err(DatasetError::Split("duplicate track ids".into()));
    }

    let quartiles = height_quartiles(tracks);
    let mut strata: BTreeMap<Stratum, Vec<String>> = BTreeMap::new();
    for t in tracks {
        let key = (
            t.camera().unwrap_or("").to_string(),
            t.vtype().unwrap_or(VehicleType::Car),
            t.color,
            quartiles[&t.vehicle_id],
        );
        strata.entry(key).or_default().push(t.vehicle_id.clone());
    }

    let targets = apportion(tracks.len(), &f);
    let mut quotas: BTreeMap<&Stratum, [usize; 3]> = BTreeMap::new();
    let mut capacity = targets;
    let mut leftovers: Vec<(&Stratum, usize, [f64; 3])> = Vec::new();
    for (key, members) in &strata {
        let n = members.len();
        let mut q = [0usize; 3];
        let mut frac = [0.0; 3];
        for k in 0..3 {
            let exact = n as f64 * f[k];
            q[k] = (exact + 1e-9).floor() as usize;
            frac[k] = exact - q[k] as f64;
            capacity[k] = capacity[k]
                .checked_sub(q[k])
                .ok_or_else(|| DatasetError::Split("stratum floors exceed split target".into()))?;
        }
        leftovers.push((key, n - q.iter().sum::<usize>(), frac));
        quotas.insert(key, q);
    }

    // Hand out the remaining units, at most one per split per stratum,
    // largest leftovers first, each to the splits with the most room.
    leftovers.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    for (key, extra, frac) in leftovers {
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&a, &b| {
            capacity[b]
                .cmp(&capacity[a])
                .then(frac[b].total_cmp(&frac[a]))
                .then(a.cmp(&b))
        });
        for &k in order.iter().take(extra) {
            if capacity[k] == 0 {
                return Err(DatasetError::Split(format!(
                    "stratum {key:?} cannot be balanced across splits"
                )));
            }
            capacity[k] -= 1;
            quotas.get_mut(key).expect("present")[k] += 1;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = Split::default();
    for (key, members) in &strata {
        let mut members = members.clone();
        members.sort();
        members.shuffle(&mut rng);
        let q = quotas[key];
        let mut it = members.into_iter();
        for (k, part) in split.parts_mut().into_iter().enumerate() {
            part.extend(it.by_ref().take(q[k]));
        }
    }
    for part in split.parts_mut() {
        part.sort();
    }
    Ok(split)
}

// --- synthetic generator -----------------------------------------------------

/// Proportions of car/gray, car/red and motorcycle/gray tracks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthMix {
    pub car_gray: f64,
    pub car_red: f64,
    pub moto_gray: f64,
}

impl Default for SynthMix {
    fn default() -> Self {
        Self {
            car_gray: 0.6,
            car_red: 0.2,
            moto_gray: 0.2,
        }
    }
}

impl FromStr for SynthMix {
    type Err = String;

    /// `car_gray,car_red,moto_gray`, e.g. `0.6,0.2,0.2`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let v: Vec<f64> = s
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| format!("bad mix '{s}'"))?;
        match v.as_slice() {
            [a, b, c] => Ok(Self {
                car_gray: *a,
                car_red: *b,
                moto_gray: *c,
            }),
            _ => Err(format!("mix needs three proportions, got '{s}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthOptions {
    pub frame: FrameDims,
    pub frames_per_track: usize,
    pub mix: SynthMix,
    /// How far (as a fraction of plate height) a motorcycle plate may hang
    /// below its vehicle box.
    pub protrusion: f64,
    pub cameras: usize,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            frame: FrameDims::default(),
            frames_per_track: FRAMES_PER_TRACK,
            mix: SynthMix::default(),
            protrusion: 0.0,
            cameras: 3,
        }
    }
}

/// Index range of the letter triples AAA..=BEZ.
const FIRST_TRIPLE: u32 = 0;
const LAST_TRIPLE: u32 = 26 * 26 + 4 * 26 + 25;

fn random_plate(rng: &mut ChaCha8Rng) -> LpString {
    let t = rng.random_range(FIRST_TRIPLE..=LAST_TRIPLE);
    let letters = [t / 676, (t / 26) % 26, t % 26].map(|v| (b'A' + v as u8) as char);
    let n = rng.random_range(1..=9999u32);
    let digits: Vec<char> = format!("{n:04}").chars().collect();
    LpString::from_chars([
        letters[0], letters[1], letters[2], digits[0], digits[1], digits[2], digits[3],
    ])
    .expect("generated within layout")
}

const CAR_MODELS: &[(&str, &str)] = &[
    ("Fiat", "Uno"),
    ("Volkswagen", "Gol"),
    ("Chevrolet", "Onix"),
    ("Renault", "Sandero"),
    ("Ford", "Ka"),
];
const MOTO_MODELS: &[(&str, &str)] = &[("Honda", "CG-160"), ("Yamaha", "Factor"), ("Honda", "Biz")];

fn round_box(x: f64, y: f64, w: f64, h: f64) -> BBox {
    let x0 = x.round();
    let y0 = y.round();
    BBox {
        x: x0,
        y: y0,
        w: (x + w).round() - x0,
        h: (y + h).round() - y0,
    }
}

/// Vehicle, plate and character boxes of a track's first frame.
fn layout(rng: &mut ChaCha8Rng, vtype: VehicleType, opts: &SynthOptions) -> (BBox, BBox, [BBox; PLATE_LEN]) {
    let fw = opts.frame.width as f64;
    let fh = opts.frame.height as f64;
    let (vw, vh, pw, ph) = match vtype {
        VehicleType::Car => {
            let vw = rng.random_range(400.0..800.0f64).min(fw * 0.8);
            let vh = (vw * rng.random_range(0.7..0.9)).min(fh * 0.8);
            let pw = vw * rng.random_range(0.25..0.32);
            (vw, vh, pw, pw / 3.0)
        }
        VehicleType::Motorcycle => {
            let vw = rng.random_range(220.0..350.0f64).min(fw * 0.5);
            let vh = (vw * rng.random_range(1.3..1.7)).min(fh * 0.8);
            let pw = vw * rng.random_range(0.35..0.45);
            (vw, vh, pw, pw / 1.17)
        }
    };
    let vehicle = round_box(0.0, 0.0, vw, vh);
    let px = (vw - pw) / 2.0 + rng.random_range(-0.08..0.08) * vw;
    let py = match vtype {
        VehicleType::Car => vh * rng.random_range(0.6..0.72),
        VehicleType::Motorcycle => {
            let lowest = vh - ph + opts.protrusion * ph;
            (vh * 0.55).min(lowest) + rng.random_range(0.0..1.0) * (lowest - (vh * 0.55).min(lowest))
        }
    };
    let plate = round_box(px, py, pw, ph);

    let mut chars = Vec::with_capacity(PLATE_LEN);
    let (x0, y0, w, h) = (plate.x, plate.y, plate.w, plate.h);
    match vtype {
        VehicleType::Car => {
            // 7 glyphs, 6 gaps of 0.25 glyph, one extra half-glyph gap after the letters
            let inner = w * 0.9;
            let cw = inner / 9.0;
            let ch = h * 0.7;
            let cy = y0 + h * 0.15;
            let mut cx = x0 + w * 0.05;
            for i in 0..PLATE_LEN {
                chars.push(round_box(cx, cy, cw, ch));
                cx += cw * 1.25 + if i == 2 { cw * 0.5 } else { 0.0 };
            }
        }
        VehicleType::Motorcycle => {
            let top_cw = w * 0.75 / 3.6;
            let top_x = x0 + (w - top_cw * 3.6 + top_cw * 0.3) / 2.0;
            for i in 0..3 {
                chars.push(round_box(top_x + i as f64 * top_cw * 1.3, y0 + h * 0.1, top_cw, h * 0.33));
            }
            let bot_cw = w * 0.9 / 4.75;
            let bot_x = x0 + w * 0.05;
            for i in 0..4 {
                chars.push(round_box(bot_x + i as f64 * bot_cw * 1.25, y0 + h * 0.52, bot_cw, h * 0.4));
            }
        }
    }
    (vehicle, plate, chars.try_into().expect("seven glyphs"))
}

/// Generates `n_tracks` synthetic tracks with rigid per-frame motion.
pub fn generate_synthetic(seed: u64, n_tracks: usize, opts: &SynthOptions) -> Result<Vec<Track>, DatasetError> {
    let m = opts.mix;
    let mix = [m.car_gray, m.car_red, m.moto_gray];
    if mix.iter().any(|v| *v < 0.0) || (mix.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(DatasetError::Invalid(format!("mix {mix:?} must be non-negative and sum to 1")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let counts = apportion(n_tracks, &mix);
    let mut kinds: Vec<(VehicleType, PlateColor)> = Vec::with_capacity(n_tracks);
    for (k, (vt, color)) in [
        (VehicleType::Car, PlateColor::Gray),
        (VehicleType::Car, PlateColor::Red),
        (VehicleType::Motorcycle, PlateColor::Gray),
    ]
    .into_iter()
    .enumerate()
    {
        kinds.extend(std::iter::repeat_n((vt, color), counts[k]));
    }
    kinds.shuffle(&mut rng);

    let fw = opts.frame.width as f64;
    let fh = opts.frame.height as f64;
    let steps = opts.frames_per_track.max(1);
    let mut tracks = Vec::with_capacity(n_tracks);
    for (i, (vtype, color)) in kinds.into_iter().enumerate() {
        let text = random_plate(&mut rng);
        let camera = format!("cam{}", rng.random_range(1..=opts.cameras.max(1)));
        let models = match vtype {
            VehicleType::Car => CAR_MODELS,
            VehicleType::Motorcycle => MOTO_MODELS,
        };
        let (make, model) = models[rng.random_range(0..models.len())];
        let year = rng.random_range(2005..=2018).to_string();
        let (vehicle, plate, chars) = layout(&mut rng, vtype, opts);

        // The vehicle and its plate move together; keep their union inside the frame.
        let hull = vehicle.union_rect(&plate);
        let max_x = (fw - hull.right()).max(0.0);
        let max_y = (fh - hull.bottom()).max(0.0);
        let sx = rng.random_range(0.0..=max_x).round();
        let sy = rng.random_range(0.0..=max_y).round();
        let ex = (sx + rng.random_range(-150.0..=150.0f64)).clamp(0.0, max_x).round();
        let ey = (sy + rng.random_range(-60.0..=60.0f64)).clamp(0.0, max_y).round();

        let frames = (0..steps)
            .map(|t| {
                let a = if steps == 1 { 0.0 } else { t as f64 / (steps - 1) as f64 };
                let dx = (sx + (ex - sx) * a).round();
                let dy = (sy + (ey - sy) * a).round();
                FrameAnnotation {
                    camera: camera.clone(),
                    vehicle: VehicleInfo {
                        vtype,
                        make: make.to_string(),
                        model: model.to_string(),
                        year: year.clone(),
                        bbox: vehicle.translate(dx, dy),
                    },
                    plate: PlateInfo {
                        text,
                        bbox: plate.translate(dx, dy),
                    },
                    chars: chars.map(|c| c.translate(dx, dy)),
                }
            })
            .collect();
        tracks.push(Track {
            vehicle_id: format!("track{:04}", i + 1),
            color,
            frames,
        });
    }
    Ok(tracks)
}
