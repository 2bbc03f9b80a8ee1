//! Minimal double-precision neural net substrate: tensors, a reverse-mode
//! tape, gated recurrent cells, optimizers and finite-difference checking.

pub mod gradcheck;
pub mod graph;
pub mod lstm;
pub mod optim;
pub mod params;
pub mod tensor;

pub use gradcheck::{finite_diff_check, sample_coords, GradCheckReport};
pub use graph::{Graph, NodeId};
pub use lstm::{BiLstmEncoder, LstmCell};
pub use optim::{clip_global_norm, Optimizer, OptimizerKind};
pub use params::{xavier, ParamGrads, ParamSet};
pub use tensor::{log_sum_exp, lse2, Tensor};
