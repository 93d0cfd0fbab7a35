//! Bounding-box regression losses of the IOU family (IOU, GIOU, DIOU, CIOU,
//! EIOU), SmoothL1 and FocalL1, the Focal-EIOU reweightings, and a
//! deterministic gradient-descent simulator for comparing their convergence.

pub mod cli;
pub mod error;
pub mod focal;
pub mod geometry;
pub mod gradcheck;
pub mod losses;
pub mod objective;
pub mod report;
pub mod sim;
pub mod stats;

pub use error::{Error, Result};
pub use geometry::Box;
pub use losses::{Grad4, LossEval, LossKind};
pub use objective::Objective;
