//! Guided multi-view stereo: plane-sweep depth estimation steered by
//! sparse depth hints.
//!
//! The pipeline builds variance cost volumes over fronto-parallel depth
//! hypotheses, optionally reshapes them with a flipped-Gaussian modulation
//! around sparse depth measurements, and regresses per-view depth maps that
//! can be fused into point clouds. Hints can come from the reference view
//! alone or be aggregated from every viewpoint, with an occlusion filter
//! that discards measurements the reference cannot see.

pub mod camera;
pub mod cli;
pub mod dataset;
pub mod fusion;
pub mod grid;
pub mod guidance;
pub mod hints;
pub mod inference;
pub mod rng;
pub mod sweep;
pub mod synth;

pub use camera::{Camera, Extrinsics, Intrinsics, View, ViewSet};
pub use guidance::{GuidanceParams, SparseDepthMap};
pub use hints::{FilterParams, HintPointSet};
pub use inference::{DepthMap, PipelineConfig, StageConfig};
pub use sweep::{CostVolume, DepthHypotheses, FeatureMap};
