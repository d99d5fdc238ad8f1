//! Quad-hash peak fingerprinting baseline: four-peak constellations hashed in a frame that
//! normalizes away time and frequency scaling.

mod db;
mod quad;

pub use db::{MatchConfig, QuadDB, QuadEntry, TrackMatch, QUAD_MAGIC};
pub use quad::{
    build_quads, grid_peaks_from_clouds, quad_hash, GridPeak, Quad, QuadConfig, QuadHash, QuadMode,
};
