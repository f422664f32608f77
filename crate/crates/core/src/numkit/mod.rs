//! Dense tensors, a reverse-mode tape, MLP layers and Adam.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod mlp;
pub mod params;
pub mod tape;
pub mod tensor;

pub use adam::AdamState;
pub use checkpoint::Checkpoint;
pub use gradcheck::grad_check;
pub use mlp::{Activation, BatchNorm, Linear, Mlp};
pub use params::{ParamId, ParamStore};
pub use tape::{stable_sigmoid, ColumnStats, Grads, Tape, Var};
pub use tensor::{RowMix, Tensor};
