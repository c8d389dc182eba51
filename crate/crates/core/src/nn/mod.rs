//! Layers, parameter storage, optimizers and checkpoints on top of the
//! autodiff graph.

pub mod checkpoint;
pub mod layers;
pub mod optim;
pub mod params;

pub use layers::{BatchNorm, Conv2d, Linear};
pub use optim::{Adam, LrSchedule, Sgd};
pub use params::{apply_batch_stats, Mode, ParamGrads, ParamId, ParamKind, ParamStore, Session};
