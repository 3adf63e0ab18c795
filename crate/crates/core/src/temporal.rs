//! Fusion of per-frame plate readings of one vehicle by per-slot majority vote.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::recognize::{LpString, PLATE_LEN};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VoteError {
    #[error("track '{0}' has no readings to vote on")]
    EmptyTrack(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackReading {
    pub frame: usize,
    pub text: LpString,
    pub confidences: [f64; PLATE_LEN],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackPredictions {
    pub vehicle_id: String,
    pub readings: Vec<TrackReading>,
}

/// Most frequent character per slot. Ties go to the character with the
/// larger summed confidence, then to the smaller character.
pub fn majority_vote(track: &TrackPredictions) -> Result<LpString, VoteError> {
    if track.readings.is_empty() {
        return Err(VoteError::EmptyTrack(track.vehicle_id.clone()));
    }
    let mut fused = ['?'; PLATE_LEN];
    for (slot, out) in fused.iter_mut().enumerate() {
        let mut votes: BTreeMap<char, Vec<f64>> = BTreeMap::new();
        for r in &track.readings {
            votes.entry(r.text.slot(slot)).or_default().push(r.confidences[slot]);
        }
        let mut best: Option<(char, usize, f64)> = None;
        for (c, mut confs) in votes {
            // summing in sorted order keeps the total independent of reading order
            confs.sort_by(f64::total_cmp);
            let sum: f64 = confs.iter().sum();
            let n = confs.len();
            // BTreeMap iterates in ascending char order, so strict comparisons keep the smallest char on full ties
            if best.is_none_or(|(_, bn, bs)| n > bn || (n == bn && sum > bs)) {
                best = Some((c, n, sum));
            }
        }
        *out = best.expect("non-empty").0;
    }
    // every slot voted within its own domain, so the layout holds
    Ok(LpString::from_chars(fused).expect("votes stay within slot domains"))
}
