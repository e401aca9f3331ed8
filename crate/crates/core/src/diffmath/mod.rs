//! Reverse-mode differentiation, optimizers and gradient checking.

mod gradcheck;
mod graph;
mod optim;
mod params;

pub use gradcheck::finite_diff_check;
pub use graph::{CustomOp, Graph, Var};
pub(crate) use graph::sigmoid;
pub use optim::{adam_step, AdamConfig, OptimizerKind, OptimizerState};
pub use params::{Gradients, ParamEntry, ParamGroup, ParamId, ParamStore, Session};
