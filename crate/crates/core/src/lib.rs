//! Dense correspondence between near-isometric shapes by iterative
//! refinement over trusted anchor pairs.
//!
//! The building blocks are mesh and point-cloud geometry ([`geometry`]),
//! Laplace–Beltrami bases ([`spectral`]), graph geodesics ([`geodesics`]),
//! local mapping distortion and anchor selection ([`lmd`]), functional maps
//! ([`fmap`]) and per-point descriptors ([`descriptors`]). [`dir`] runs the
//! refinement loop, [`eval`] scores maps against ground truth and
//! [`experiments`] studies how corrupted correspondences bias alignment.

mod error;
mod linalg;

pub mod descriptors;
pub mod dir;
pub mod eval;
pub mod experiments;
pub mod fmap;
pub mod geodesics;
pub mod geometry;
pub mod lmd;
pub mod nn;
pub mod spectral;

pub use dir::{dir_gds, dir_spectral, run_pipeline, DirConfig, DirOutcome, Init, IterationTrace, Mode};
pub use error::{Error, Result};
pub use eval::{geodesic_error, ErrorCurve};
pub use fmap::FunctionalMap;
pub use geometry::{PointCloud, Surface, TriangleMesh};
pub use lmd::{AnchorSet, Correspondence, LmdField};
pub use spectral::SpectralEmbedding;
