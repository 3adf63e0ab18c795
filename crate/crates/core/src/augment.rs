//! Training-set augmentation: negative images and label-preserving flips.
//!
//! Augmented samples are emitted as manifest entries (source + transform +
//! label); [`materialize`] applies a transform to real pixels when they exist.

use std::fmt;
use std::str::FromStr;

use image::DynamicImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FlipDirection {
    /// Upside down (mirror about the horizontal axis).
    Vertical,
    /// Left-right mirror.
    Horizontal,
    /// Both, i.e. a 180 degree rotation.
    Both,
}

impl FlipDirection {
    pub const ALL: [FlipDirection; 3] = [FlipDirection::Vertical, FlipDirection::Horizontal, FlipDirection::Both];

    pub fn tag(self) -> &'static str {
        match self {
            FlipDirection::Vertical => "V",
            FlipDirection::Horizontal => "H",
            FlipDirection::Both => "VH",
        }
    }
}

/// Flip table. `6` and `9` swap labels under a double flip.
const VERTICAL: &str = "0138BCDEHIKOX";
const HORIZONTAL: &str = "018AHIMOTUVWXY";
const BOTH: &[(char, char)] = &[
    ('0', '0'),
    ('1', '1'),
    ('6', '9'),
    ('8', '8'),
    ('9', '6'),
    ('H', 'H'),
    ('I', 'I'),
    ('N', 'N'),
    ('O', 'O'),
    ('S', 'S'),
    ('X', 'X'),
    ('Z', 'Z'),
];

/// Labels that stay readable after flipping in each direction, with the
/// resulting label.
pub fn flip_variants(label: char) -> Vec<(FlipDirection, char)> {
    let mut out = Vec::new();
    if VERTICAL.contains(label) {
        out.push((FlipDirection::Vertical, label));
    }
    if HORIZONTAL.contains(label) {
        out.push((FlipDirection::Horizontal, label));
    }
    if let Some(&(_, to)) = BOTH.iter().find(|(from, _)| *from == label) {
        out.push((FlipDirection::Both, to));
    }
    out
}

/// Labels listed for each flip direction.
pub fn flip_row(direction: FlipDirection) -> Vec<char> {
    match direction {
        FlipDirection::Vertical => VERTICAL.chars().collect(),
        FlipDirection::Horizontal => HORIZONTAL.chars().collect(),
        FlipDirection::Both => BOTH.iter().map(|(c, _)| *c).collect(),
    }
}

/// Digits that double as training examples for look-alike letters.
pub fn digit_seed_letters() -> [(char, char); 2] {
    [('0', 'O'), ('1', 'I')]
}

pub fn digit_seed_letter(digit: char) -> Option<char> {
    digit_seed_letters()
        .into_iter()
        .find(|(d, _)| *d == digit)
        .map(|(_, l)| l)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Transform {
    pub negative: bool,
    pub flip: Option<FlipDirection>,
}

impl Transform {
    pub const ORIGINAL: Transform = Transform {
        negative: false,
        flip: None,
    };
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.negative, self.flip) {
            (false, None) => f.write_str("orig"),
            (true, None) => f.write_str("neg"),
            (false, Some(d)) => write!(f, "flip{}", d.tag()),
            (true, Some(d)) => write!(f, "neg+flip{}", d.tag()),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ManifestError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

impl FromStr for Transform {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (negative, rest) = match s {
            "orig" => return Ok(Transform::ORIGINAL),
            "neg" => {
                return Ok(Transform {
                    negative: true,
                    flip: None,
                })
            }
            _ => match s.strip_prefix("neg+") {
                Some(r) => (true, r),
                None => (false, s),
            },
        };
        let flip = match rest {
            "flipV" => FlipDirection::Vertical,
            "flipH" => FlipDirection::Horizontal,
            "flipVH" => FlipDirection::Both,
            _ => return Err(format!("unknown transform '{s}'")),
        };
        Ok(Transform {
            negative,
            flip: Some(flip),
        })
    }
}

/// One labelled training sample. `source` identifies the original patch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub source: String,
    pub transform: Transform,
    pub label: char,
}

impl fmt::Display for ManifestEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.source, self.transform, self.label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AugmentOptions {
    pub negatives: bool,
    pub flips: bool,
    /// Also emit `0`/`1` samples relabelled as `O`/`I`.
    pub seed_letters: bool,
}

/// Keeps every original and appends the augmented variants after it.
pub fn expand_training_set(samples: &[ManifestEntry], options: AugmentOptions) -> Vec<ManifestEntry> {
    let mut out = Vec::with_capacity(samples.len() * 2);
    for s in samples {
        let mut variants = vec![(s.transform, s.label)];
        if options.flips && s.transform.flip.is_none() {
            variants.extend(flip_variants(s.label).into_iter().map(|(d, to)| {
                (
                    Transform {
                        negative: s.transform.negative,
                        flip: Some(d),
                    },
                    to,
                )
            }));
        }
        if options.seed_letters {
            if let Some(letter) = digit_seed_letter(s.label) {
                variants.push((s.transform, letter));
            }
        }
        if options.negatives && !s.transform.negative {
            let negs: Vec<(Transform, char)> = variants
                .iter()
                .map(|(t, l)| {
                    (
                        Transform {
                            negative: true,
                            flip: t.flip,
                        },
                        *l,
                    )
                })
                .collect();
            variants.extend(negs);
        }
        out.extend(variants.into_iter().map(|(transform, label)| ManifestEntry {
            source: s.source.clone(),
            transform,
            label,
        }));
    }
    out
}

/// Reads `<source-id> <label>` or `<source-id> <transform> <label>` lines.
pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>, ManifestError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |reason: String| ManifestError::Parse { line: i + 1, reason };
        let toks: Vec<&str> = line.split_whitespace().collect();
        let (source, transform, label) = match toks.as_slice() {
            [s, l] => (*s, Transform::ORIGINAL, *l),
            [s, t, l] => (*s, t.parse().map_err(err)?, *l),
            _ => return Err(err(format!("expected 2 or 3 fields, got {}", toks.len()))),
        };
        let mut chars = label.chars();
        let label = match (chars.next(), chars.next()) {
            (Some(c), None) if c.is_ascii_uppercase() || c.is_ascii_digit() => c,
            _ => return Err(err(format!("label '{label}' is not a single character"))),
        };
        out.push(ManifestEntry {
            source: source.to_string(),
            transform,
            label,
        });
    }
    Ok(out)
}

pub fn write_manifest(entries: &[ManifestEntry]) -> String {
    entries.iter().map(|e| format!("{e}\n")).collect()
}

/// Per-pixel inversion `v -> max - v` on every channel except alpha.
pub fn negative(img: &DynamicImage) -> DynamicImage {
    let mut out = img.clone();
    out.invert();
    out
}

pub fn materialize(img: &DynamicImage, transform: Transform) -> DynamicImage {
    let flipped = match transform.flip {
        None => img.clone(),
        Some(FlipDirection::Vertical) => img.flipv(),
        Some(FlipDirection::Horizontal) => img.fliph(),
        Some(FlipDirection::Both) => img.rotate180(),
    };
    if transform.negative {
        negative(&flipped)
    } else {
        flipped
    }
}
