//! Dense `f64` tensors with a reverse-mode tape.

mod gradcheck;
mod optim;
mod params;
mod tape;
mod value;

pub use gradcheck::grad_check;
pub use optim::{clip_grad_norm, AdamW};
pub use params::{xavier, Bound, ParamId, ParamStore};
pub use tape::{Graph, Var, LAYER_NORM_EPS};
pub use value::Tensor;

pub(crate) use tape::butterfly_kernel;
