//! Dense `f64` tensors with reverse-mode automatic differentiation.

pub mod attention;
pub mod container;
pub mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use attention::{AllKeys, AttnSegment, CausalKeys, KeySelector};
pub use container::{load_container, read_container, save_container, write_container};
pub use params::{Binder, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
