//! Dense tensors, tape-based reverse-mode differentiation, layers,
//! optimizers, the learning-rate schedule and checkpoint I/O.

pub mod checkpoint;
mod conv;
pub mod gradcheck;
pub mod graph;
pub mod history;
pub mod layers;
mod linalg;
pub mod optim;
pub mod params;
pub mod schedule;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use conv::conv_out_len;
pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{BatchStats, Gradients, Graph, NodeId};
pub use history::{EpochRecord, History};
pub use layers::{Mode, RunningStats};
pub use optim::{adam_step, sgd_step, OptimizerKind, OptimizerState};
pub use params::{ParamId, ParamStore};
pub use schedule::LrSchedule;
pub use tensor::{argmax, Tensor};
