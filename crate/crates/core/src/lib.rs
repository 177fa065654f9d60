//! Neural progressive meshes: a subdivision network that refines a coarse
//! mesh with transmitted per-face features, its training loop, the
//! progressive bitstream and the evaluation harness.

pub mod bench;
pub mod codec;
pub mod error;
pub mod gradcheck;
pub mod net;
pub mod report;
pub mod train;

pub use error::{CoreError, ErrorKind, Result};
pub use net::{FeatureSet, Model, Topology, TransmissionMask};
