//! Dense tensors with reverse-mode differentiation, the Adam optimizer and checkpoint files.

mod adam;
pub mod checkpoint;
mod graph;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{read_checkpoint, write_checkpoint, NamedTensor};
pub use graph::{BatchStats, Gradients, Graph, Var};
pub use tensor::{Real, Tensor};
