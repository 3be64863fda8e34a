//! Minimal reverse-mode differentiation over dense `f64` vectors and
//! matrices. No broadcasting: every primitive checks exact shapes.

mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport, RELATIVE_FLOOR};
pub use params::{Gradients, ParamId, ParameterStore, StoreWire, TensorWire, STORE_FORMAT_VERSION};
pub use tape::{sigmoid, softmax, Tape, Var};
pub use tensor::Tensor;
