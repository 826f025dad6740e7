//! Dense tensors, a reverse-mode tape, momentum SGD and a finite-difference
//! gradient checker.

mod gradcheck;
mod graph;
pub mod ops;
mod optim;
mod params;
mod tensor;

pub use gradcheck::{check_graph_fn, finite_diff_check, DEFAULT_FD_EPS};
pub use graph::{CustomBackward, Gradients, Graph, Var};
pub use optim::{clip_global_norm, cosine_lr, Sgd};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;
