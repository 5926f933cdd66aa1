//! Building blocks for adversarially trained privacy-preserving encoders:
//! tensors and kernels, a reverse-mode tape, models, training, attack
//! evaluation, baselines and dataset I/O.

// `!(x > 0.0)` style checks are meant to reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adam;
pub mod attack;
pub mod baselines;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod ops;
pub mod par;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use adam::AdamState;
pub use error::{PanError, Result};
pub use model::{Layer, LayerKind, Model};
pub use tape::{GradientRecord, Tape, Var};
pub use tensor::Tensor;
