//! Small hand-differentiated layer toolkit.

mod checkpoint;
mod gru;
mod layers;
mod optim;
mod tensor;

pub use checkpoint::Checkpoint;
pub use gru::{GruCache, GruCell};
pub use layers::{sigmoid, tanh_backward_seq, tanh_seq, Conv1d, Dense, Module, Sequence, TransposeConv1d, WeightMatrix};
pub use optim::{prune_update, Adam, AdamConfig, PruningSchedule};
pub use tensor::{Parameter, Tensor};
