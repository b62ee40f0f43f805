//! Occlusion-guided object detection toolkit.
//!
//! The crate provides the numeric machinery around an occlusion-aware detector:
//!
//! 1. [`geometry`] – axis-aligned box arithmetic (IoU, exact covered area, coordinate remapping).
//! 2. [`occlusion_map`] – occlusion truth-map generation, Gaussian blur, instance occlusion scoring.
//! 3. [`netmath`] – framework-free forward math (PixelShuffle, CSP mixing, decoupled head paths)
//!    and the occlusion-weighted training losses.
//! 4. [`region_select`] – occlusion sub-region selection (window thresholding, k-means, correction).
//! 5. [`tpp`] – two-phase coarse/fine detection with NMS merge, crop augmentation,
//!    a synthetic scene generator and an oracle detector.
//! 6. [`eval`] – AP/AR metrics, occlusion-binned recall, dataset statistics.
//! 7. [`io`] – annotation ingestion, configuration and on-disk formats.

pub mod error;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod netmath;
pub mod occlusion_map;
pub mod region_select;
pub mod tpp;

pub use error::{Error, Result};
pub use geometry::{Annotation, BBox, Detection};
pub use occlusion_map::{MapParams, OcclusionMap, TruthStyle};
