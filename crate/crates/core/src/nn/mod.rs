//! Dense tensors, reverse-mode autograd and the layers the model is built from.

pub(crate) mod graph;
pub mod gradcheck;
pub mod layers;
pub mod optim;
mod params;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use gradcheck::{gradcheck, GradcheckReport, TensorCheck};
pub use optim::{Adam, AdamConfig};
pub use params::{Bindings, ParamSet};
pub use tensor::{Real, Tensor, View, ViewMut};
