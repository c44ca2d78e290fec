//! Deep graph convolutional networks trained with hand-written backward
//! passes, per-layer energy instrumentation, and four patches that ease
//! training of deep stacks: topology rescaling, scaled initialization,
//! weight/energy normalization and skip connections.

pub mod backprop;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod exec;
pub mod graph_ops;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod optim;

pub use error::{Error, Result};
pub use exec::Execution;
