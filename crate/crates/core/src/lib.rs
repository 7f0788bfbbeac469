//! Volumetric toolkit for airway tree segmentation: CT preprocessing,
//! probability-map ensembling, centerline topology, topological refinement of
//! binary airway masks, tree-aware evaluation metrics and a synthetic airway
//! tree generator used as a ground-truth oracle.

// Negated comparisons reject NaN parameters along with out-of-range ones;
// per-axis loops index several parallel arrays.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod geometry;
pub mod fusion;
pub mod metrics;
pub mod postprocess;
pub mod preprocess;
pub mod synth;
pub mod topology;
pub mod volume;

pub use error::{Error, Result};
pub use fusion::{ensemble_max, threshold, FusionParams};
pub use metrics::{evaluate_case, ConfusionCounts, MetricParams, MetricsReport, MetricsRow};
pub use postprocess::{refine, ReconnectParams, RefineReport};
pub use preprocess::PreprocessParams;
pub use synth::{SynthTreeSpec, SynthTreeTruth};
pub use topology::{CenterlineGraph, RadiusField, Skeleton};
pub use volume::{read_mask, read_nifti, write_nifti, Affine, BoundingBox, Index3, IntensityUnit, Mask, Volume, VoxelGrid};
