//! Cascaded license plate recognition: vehicle detection, plate detection,
//! character segmentation, character recognition and temporal voting, with
//! a deterministic simulated backend and the evaluation protocol.

pub mod augment;
pub mod charseg;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod detect;
pub mod eval;
pub mod geometry;
pub mod netspec;
pub mod pipeline;
pub mod recognize;
pub mod simulate;
pub mod temporal;

pub use charseg::{CharCandidate, VehicleType};
pub use detect::{Backend, Detection, ImageRef, StageConfig, Task};
pub use geometry::{iou, BBox, FrameDims};
pub use recognize::{LpString, PLATE_LEN};
