//! Geometry engine for star-convex polyhedron instance detection in 3D.
//!
//! Pipeline stages, each in its own module:
//!
//! 1. [`volumes`]: dense ZYX label / scalar / distance volumes on disk.
//! 2. [`rays`]: Fibonacci and equidistant unit-ray systems with anisotropy.
//! 3. [`polyhedron`]: per-shape geometry, membership, rasterization and the
//!    intersection primitives used for suppression.
//! 4. [`encode`]: object probability and radial distance targets, and shape
//!    reconstruction from them.
//! 5. [`losses`]: reference loss functions.
//! 6. [`nms`]: candidate extraction and bounds-cascade suppression.
//! 7. [`matching`]: IoU matching and accuracy.
//! 8. [`synth`]: deterministic synthetic scenes.
//! 9. [`pipeline`]: rendering, fidelity tables and the suppression benchmark.

mod cones;
pub mod edt;
pub mod encode;
pub mod error;
pub mod hull;
pub mod losses;
pub mod matching;
pub mod nms;
pub mod pipeline;
pub mod polyhedron;
pub mod polyset;
pub mod polytope;
pub mod rays;
pub mod synth;
pub mod volumes;

pub use error::{Error, Result};

/// Written into every JSON artifact.
pub const FORMAT_VERSION: &str = env!("CARGO_PKG_VERSION");
