//! Small reverse-mode autodiff engine with the layers, optimizer and
//! checkpoint format needed by the spectral models.

pub mod ckpt;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use ckpt::{load_ckpt, save_ckpt};
pub use error::{NnError, Result};
pub use layers::{CrossBlock, EncoderBlock, LayerNorm, Linear, MultiHeadAttention};
pub use optim::{Adam, AdamConfig, LrSchedule};
pub use params::{Param, ParamStore};
pub use tape::{Axis, Gradients, Mode, Tape, Var};
pub use tensor::Tensor;
