//! Fingerprint database, inner-product search and segment-sequence matching.

mod db;
pub mod dbfile;
mod ivfpq;
mod kmeans;
mod matching;

pub use db::{dot, rank_hits, FingerprintDB, Hit, SegmentMeta, TrackEntry, DB_NORM_TOLERANCE};
pub use dbfile::{read_db, write_db};
pub use ivfpq::{IvfPqConfig, IvfPqIndex};
pub use kmeans::{kmeans, nearest, squared_l2};
pub use matching::{
    best_per_track, identify, search_segments, sequence_match, Backend, Candidate, MatchResult,
    DEFAULT_CANDIDATES,
};
