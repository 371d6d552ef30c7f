//! Geometric analysis of anchor-based region proposals.
//!
//! The crate answers "how well can a grid of anchors cover these objects?"
//! without any trained network: closed-form IoU bounds for scale mismatch and
//! grid stride, anchor-set synthesis, perfect-classifier coverage (ABO/MABO,
//! recall), per-level NMS, and a partitioning scheme that turns multi-object
//! annotations into single-object, size-controlled variants.

pub mod anchors;
pub mod coverage;
pub mod dataset;
pub mod error;
pub mod geometry;
pub mod io;
pub mod proposals;
pub mod synthetic;

pub use anchors::{AnchorGrid, AnchorSet, AnchorSpec, FeatureLevel, LevelMap, LevelName, Scheme};
pub use coverage::{CoverageReport, GridMode, GridOptions, SweepCurve, SweepMode};
pub use dataset::{Dataset, GroundtruthObject, ImageAnnotation};
pub use error::{Error, Result};
pub use geometry::{BBox, IouThreshold, Stride};
pub use proposals::{ProposalSet, ScoredBox};
