//! The subdivision network.

pub mod model;
pub mod ops;
pub mod topology;

pub use model::{
    decoder_forward, encoder_forward, init_params, FeatureSet, Mode, Model, StatsLog, TransmissionMask, LEARNED_WIDTH,
    MESH_WIDTH,
};
pub use topology::{LevelTopology, Topology};
