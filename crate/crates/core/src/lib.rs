//! Radar place recognition: an FMCW signal simulator, range-azimuth heatmaps,
//! rotating-platform heatmap mosaicking, a convolutional place encoder trained
//! with a triplet margin loss, and an exact nearest-neighbour place database.

pub mod concat;
pub mod encoder;
pub mod eval;
pub mod error;
pub mod heatmap;
pub mod io;
pub mod placedb;
pub mod radar;

pub use concat::{
    concat_fixed_step, concat_relative_pose, detect_cycles, estimate_offset, sign_chain, CycleSegment,
    PoseOffset,
};
pub use encoder::{
    backward, encode, mine_triplets, train, triplet_loss, Descriptor, EncoderArch, EncoderWeights,
    TrainConfig, TripletBatch,
};
pub use error::{Error, Result};
pub use heatmap::{generate_heatmap, Heatmap};
pub use placedb::{max_f1, recall_at_n, PlaceDb, PlaceRecord, QueryResult};
pub use radar::{simulate_if_cube, simulate_platform_sweep, IfCube, PlatformConfig, RadarConfig, Scatterer};
