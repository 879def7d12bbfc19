//! Dense NCHW tensors, a tape-based reverse-mode autodiff, Adam, and the
//! checkpoint container.

mod adam;
mod checkpoint;
mod graph;
pub(crate) mod ops;
mod params;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, MAGIC as CHECKPOINT_MAGIC, VERSION as CHECKPOINT_VERSION};
pub use graph::{Gradients, Graph, NodeId};
pub use ops::GROUP_NORM_EPS;
pub use params::{kaiming_uniform, param_count, ParamStore};
pub use tensor::Tensor;
