//! Geometry kernels for the neural progressive mesh codec.
//!
//! Everything here is plain double-precision geometry: the half-edge mesh,
//! OBJ I/O, closest-point queries, the level-of-detail hierarchy builder,
//! classical subdivision baselines and the reconstruction metrics.

pub mod baselines;
pub mod bvh;
pub mod error;
pub mod features;
pub mod lod;
pub mod mesh;
pub mod metrics;
pub mod obj;
pub mod sample;
pub mod shapes;

pub use bvh::BvhIndex;
pub use error::{MeshError, Result};
pub use mesh::{FaceGeometry, HalfEdgeMesh, SurfacePoint, Similarity, ValidationReport};

/// 3D vector type used throughout the crate.
pub type Vec3 = nalgebra::Vector3<f64>;
