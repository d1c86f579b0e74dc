//! Arrays, reverse-mode differentiation, optimizer and schedule.

mod array;
pub mod gradcheck;
pub mod graph;
pub mod ops;
pub mod optim;
mod params;
pub mod rng;
pub mod schedule;

pub use array::NdArray;
pub use gradcheck::{grad_check, grad_check_store, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use optim::{AdamWConfig, AdamWState};
pub use params::{ParamEntry, ParamId, ParamStore};
pub use schedule::WarmupLinearSchedule;
