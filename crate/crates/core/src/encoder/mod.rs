//! Point-set encoder: two multi-scale set-abstraction stages and a global stage mapping a
//! peak cloud to a unit-norm fingerprint.

mod config;
mod geometry;
mod model;

pub use config::{BranchSpec, DistanceSpace, LayerSpec, StageSpec};
pub use geometry::{query_ball_group, sample_anchors, squared_distance, CloudPlan};
pub use model::{
    bind, collect_grads, forward, msg_concat, Encoder, Fingerprint, Layer, LayerVars, Mode,
    ModelParams,
};
