//! Post-processing of character segmentation output: reduce the candidates to
//! exactly seven and order them into plate slots.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{iou, BBox};
use crate::recognize::PLATE_LEN;

/// Overlap at which two car characters are merged.
pub const CAR_MERGE_IOU: f64 = 0.25;
/// Motorcycle plates tilt more, so their characters merge only at a higher overlap.
pub const MOTORCYCLE_MERGE_IOU: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VehicleType {
    Car,
    Motorcycle,
}

impl VehicleType {
    pub fn class_id(self) -> usize {
        match self {
            VehicleType::Car => 0,
            VehicleType::Motorcycle => 1,
        }
    }

    pub fn from_class_id(id: usize) -> Option<Self> {
        match id {
            0 => Some(VehicleType::Car),
            1 => Some(VehicleType::Motorcycle),
            _ => None,
        }
    }

    pub fn merge_threshold(self) -> f64 {
        match self {
            VehicleType::Car => CAR_MERGE_IOU,
            VehicleType::Motorcycle => MOTORCYCLE_MERGE_IOU,
        }
    }
}

impl fmt::Display for VehicleType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VehicleType::Car => "car",
            VehicleType::Motorcycle => "motorcycle",
        })
    }
}

impl FromStr for VehicleType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "car" => Ok(VehicleType::Car),
            "motorcycle" => Ok(VehicleType::Motorcycle),
            other => Err(format!("unknown vehicle type '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CharCandidate {
    pub bbox: BBox,
    pub confidence: f64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SegmentationError {
    #[error("under-segmentation: {found} characters found, {PLATE_LEN} required")]
    TooFew { found: usize },
    #[error("expected exactly {PLATE_LEN} characters, got {0}")]
    WrongCount(usize),
}

/// Total order on candidates used for every tie-break, so results do not
/// depend on input order.
fn key_cmp(a: &CharCandidate, b: &CharCandidate) -> Ordering {
    a.bbox
        .x
        .total_cmp(&b.bbox.x)
        .then(a.bbox.y.total_cmp(&b.bbox.y))
        .then(a.bbox.w.total_cmp(&b.bbox.w))
        .then(a.bbox.h.total_cmp(&b.bbox.h))
        .then(a.confidence.total_cmp(&b.confidence))
}

/// Reduces `cands` to exactly seven characters.
///
/// While more than seven remain, the most overlapping pair at or above the
/// vehicle type's IoU threshold is replaced by its union (keeping the higher
/// confidence); when no pair overlaps that much the least confident
/// candidate is dropped. Input with exactly seven candidates is returned
/// as is. The result is sorted by position.
pub fn resolve_overlaps(cands: &[CharCandidate], vtype: VehicleType) -> Result<Vec<CharCandidate>, SegmentationError> {
    resolve_overlaps_at(cands, vtype.merge_threshold())
}

/// [`resolve_overlaps`] with an explicit merge threshold.
pub fn resolve_overlaps_at(cands: &[CharCandidate], threshold: f64) -> Result<Vec<CharCandidate>, SegmentationError> {
    if cands.len() < PLATE_LEN {
        return Err(SegmentationError::TooFew { found: cands.len() });
    }
    let mut cur: Vec<CharCandidate> = cands.to_vec();
    cur.sort_by(key_cmp);

    while cur.len() > PLATE_LEN {
        // Candidates are sorted, so the first pair found at a given IoU is canonical.
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..cur.len() {
            for j in i + 1..cur.len() {
                let v = iou(&cur[i].bbox, &cur[j].bbox);
                if v >= threshold && best.is_none_or(|(_, _, b)| v > b) {
                    best = Some((i, j, v));
                }
            }
        }
        match best {
            Some((i, j, _)) => {
                let merged = CharCandidate {
                    bbox: cur[i].bbox.union_rect(&cur[j].bbox),
                    confidence: cur[i].confidence.max(cur[j].confidence),
                };
                cur.remove(j);
                cur.remove(i);
                let at = cur.partition_point(|c| key_cmp(c, &merged) == Ordering::Less);
                cur.insert(at, merged);
            }
            None => {
                let worst = cur
                    .iter()
                    .enumerate()
                    .min_by(|(_, a), (_, b)| a.confidence.total_cmp(&b.confidence).then(key_cmp(b, a)))
                    .map(|(i, _)| i)
                    .expect("non-empty");
                cur.remove(worst);
            }
        }
    }
    Ok(cur)
}

fn by_center_x(a: &CharCandidate, b: &CharCandidate) -> Ordering {
    a.bbox.center().0.total_cmp(&b.bbox.center().0).then(key_cmp(a, b))
}

fn by_center_y(a: &CharCandidate, b: &CharCandidate) -> Ordering {
    a.bbox.center().1.total_cmp(&b.bbox.center().1).then(key_cmp(a, b))
}

/// Orders seven characters into plate slots: left to right for cars; for
/// motorcycles the top three (letters) then the bottom four (digits), each
/// row left to right.
pub fn order_characters(chars: &[CharCandidate], vtype: VehicleType) -> Result<[CharCandidate; PLATE_LEN], SegmentationError> {
    if chars.len() != PLATE_LEN {
        return Err(SegmentationError::WrongCount(chars.len()));
    }
    let mut v = chars.to_vec();
    match vtype {
        VehicleType::Car => v.sort_by(by_center_x),
        VehicleType::Motorcycle => {
            v.sort_by(by_center_y);
            v[..3].sort_by(by_center_x);
            v[3..].sort_by(by_center_x);
        }
    }
    Ok(v.try_into().expect("length checked"))
}
