//! Character classification per plate slot and plate-string assembly.
//!
//! Slot domains come from the plate layout: the first three positions of a
//! Brazilian plate are letters and the last four are digits, so each slot
//! is classified by a network that can only emit labels of its domain.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::{Backend, BackendError, ImageRef};
use crate::geometry::{pad_pixels, BBox};
use crate::netspec::{self, TensorShape};

pub const PLATE_LEN: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CharDomain {
    Letters,
    Digits,
}

impl CharDomain {
    pub fn labels(self) -> &'static [u8] {
        match self {
            CharDomain::Letters => b"ABCDEFGHIJKLMNOPQRSTUVWXYZ",
            CharDomain::Digits => b"0123456789",
        }
    }

    pub fn len(self) -> usize {
        self.labels().len()
    }

    pub fn contains(self, c: char) -> bool {
        match self {
            CharDomain::Letters => c.is_ascii_uppercase(),
            CharDomain::Digits => c.is_ascii_digit(),
        }
    }

    pub fn index_of(self, c: char) -> Option<usize> {
        self.labels().iter().position(|&l| l as char == c)
    }
}

/// Positional domain assignment for a fixed plate layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlateLayout {
    pub slots: [CharDomain; PLATE_LEN],
}

impl PlateLayout {
    /// Three letters followed by four digits.
    pub const fn brazilian() -> Self {
        use CharDomain::*;
        Self {
            slots: [Letters, Letters, Letters, Digits, Digits, Digits, Digits],
        }
    }
}

impl Default for PlateLayout {
    fn default() -> Self {
        Self::brazilian()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PlateError {
    #[error("plate text '{0}' does not match the LLL-DDDD layout")]
    Layout(String),
}

/// A plate reading in LLL-DDDD form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LpString([u8; PLATE_LEN]);

impl LpString {
    pub fn from_chars(chars: [char; PLATE_LEN]) -> Result<Self, PlateError> {
        let layout = PlateLayout::brazilian();
        let ok = chars
            .iter()
            .zip(layout.slots.iter())
            .all(|(c, d)| d.contains(*c));
        if !ok {
            return Err(PlateError::Layout(chars.iter().collect()));
        }
        let mut bytes = [0u8; PLATE_LEN];
        for (b, c) in bytes.iter_mut().zip(chars) {
            *b = c as u8;
        }
        Ok(Self(bytes))
    }

    pub fn chars(&self) -> [char; PLATE_LEN] {
        self.0.map(|b| b as char)
    }

    pub fn slot(&self, i: usize) -> char {
        self.0[i] as char
    }

    pub fn letters(&self) -> &str {
        std::str::from_utf8(&self.0[..3]).expect("ascii")
    }

    pub fn digits(&self) -> &str {
        std::str::from_utf8(&self.0[3..]).expect("ascii")
    }

    /// Number of positions where the two readings agree.
    pub fn matching_slots(&self, other: &LpString) -> usize {
        self.0.iter().zip(other.0.iter()).filter(|(a, b)| a == b).count()
    }
}

impl FromStr for LpString {
    type Err = PlateError;

    /// Accepts `ABC-1234` or `ABC1234`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let compact: Vec<char> = match s.split_once('-') {
            Some((l, d)) if l.len() == 3 => l.chars().chain(d.chars()).collect(),
            Some(_) => return Err(PlateError::Layout(s.to_string())),
            None => s.chars().collect(),
        };
        let chars: [char; PLATE_LEN] = compact
            .try_into()
            .map_err(|_| PlateError::Layout(s.to_string()))?;
        Self::from_chars(chars).map_err(|_| PlateError::Layout(s.to_string()))
    }
}

impl fmt::Display for LpString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.letters(), self.digits())
    }
}

impl Serialize for LpString {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LpString {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharClassifierConfig {
    pub domain: CharDomain,
    pub arch: String,
    /// Pixels added on every side of the segmented character before classification.
    pub padding: f64,
    pub input_size: TensorShape,
}

impl CharClassifierConfig {
    pub fn letters(padding: f64) -> Self {
        Self {
            domain: CharDomain::Letters,
            arch: netspec::CR_NET_LETTERS.into(),
            padding,
            input_size: TensorShape::new(270, 80, 3),
        }
    }

    pub fn digits(padding: f64) -> Self {
        Self {
            domain: CharDomain::Digits,
            arch: netspec::CR_NET_DIGITS.into(),
            padding,
            input_size: TensorShape::new(42, 26, 3),
        }
    }

    /// Checks padding and that the arch head matches the domain size.
    pub fn check(&self, arch: &netspec::ArchSpec) -> Result<(), String> {
        if !(self.padding >= 0.0) {
            return Err(format!("padding must be >= 0, got {}", self.padding));
        }
        let expected = netspec::required_filters(self.domain.len() as u32, arch.anchors)
            .map_err(|e| e.to_string())?;
        match arch.head_filters() {
            Some(f) if f == expected => Ok(()),
            other => Err(format!(
                "arch '{}' head has {:?} filters, {:?} domain needs {}",
                arch.name, other, self.domain, expected
            )),
        }
    }
}

/// Argmax over the configured domain. Never abstains: labels outside the
/// domain are ignored and score ties go to the earliest label.
pub fn classify_slot(
    backend: &dyn Backend,
    patch: &ImageRef,
    config: &CharClassifierConfig,
) -> Result<(char, f64), BackendError> {
    let scores = backend.classify(patch, config.domain)?;
    let mut best: Option<(char, f64)> = None;
    for (label, score) in scores {
        if !config.domain.contains(label) {
            continue;
        }
        best = match best {
            Some((bl, bs)) if bs > score || (bs == score && bl <= label) => Some((bl, bs)),
            _ => Some((label, score)),
        };
    }
    best.ok_or_else(|| BackendError::Failed(format!("no {:?} scores for {}", config.domain, patch.source)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateReading {
    pub text: LpString,
    pub confidences: [f64; PLATE_LEN],
}

/// Classifies the 7 ordered character boxes (frame coordinates) of one plate.
pub fn read_plate(
    backend: &dyn Backend,
    frame_ref: &ImageRef,
    slots: &[BBox; PLATE_LEN],
    letters: &CharClassifierConfig,
    digits: &CharClassifierConfig,
) -> Result<PlateReading, BackendError> {
    let layout = PlateLayout::brazilian();
    let mut chars = ['?'; PLATE_LEN];
    let mut confidences = [0.0; PLATE_LEN];
    for (i, (bbox, domain)) in slots.iter().zip(layout.slots.iter()).enumerate() {
        let config = match domain {
            CharDomain::Letters => letters,
            CharDomain::Digits => digits,
        };
        let patch = frame_ref.with_patch(pad_pixels(bbox, config.padding, frame_ref.frame));
        let (label, conf) = classify_slot(backend, &patch, config)?;
        chars[i] = label;
        confidences[i] = conf;
    }
    let text = LpString::from_chars(chars).map_err(|e| BackendError::Failed(e.to_string()))?;
    Ok(PlateReading { text, confidences })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_displays() {
        let p: LpString = "ABC-1234".parse().unwrap();
        assert_eq!(p.to_string(), "ABC-1234");
        assert_eq!("ABC1234".parse::<LpString>().unwrap(), p);
        assert_eq!(p.letters(), "ABC");
        assert_eq!(p.digits(), "1234");
    }

    #[test]
    fn rejects_bad_layouts() {
        for bad in ["AB1-2345", "ABCD-123", "abc-1234", "ABC-12345", "", "ABC_1234"] {
            assert!(bad.parse::<LpString>().is_err(), "{bad}");
        }
    }

    #[test]
    fn domains() {
        assert_eq!(CharDomain::Letters.len(), 26);
        assert_eq!(CharDomain::Digits.len(), 10);
        assert!(!CharDomain::Letters.contains('7'));
        assert!(!CharDomain::Digits.contains('B'));
    }

    #[test]
    fn classifier_configs_match_heads() {
        let l = CharClassifierConfig::letters(2.0);
        l.check(&netspec::builtin(&l.arch).unwrap()).unwrap();
        let d = CharClassifierConfig::digits(1.0);
        d.check(&netspec::builtin(&d.arch).unwrap()).unwrap();
        assert!(l.check(&netspec::builtin(&d.arch).unwrap()).is_err());
    }

    #[test]
    fn matching_slots_counts_positions() {
        let a: LpString = "ABC-1234".parse().unwrap();
        let b: LpString = "ABD-1235".parse().unwrap();
        assert_eq!(a.matching_slots(&b), 5);
    }
}
