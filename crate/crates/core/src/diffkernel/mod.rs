//! Dense `f64` tensors, a reverse-mode tape, AdamW, finite-difference
//! gradient checking and the checkpoint format.

mod checkpoint;
mod gradcheck;
mod optim;
mod tape;
mod tensor;

pub use checkpoint::{load_into, read_checkpoint, save_checkpoint, ArrayEntry, CheckpointManifest, CHECKPOINT_FORMAT};
pub use gradcheck::{grad_check, relative_error, GradCheckOptions, GradCheckReport, ParamCheck};
pub use optim::{AdamW, AdamWConfig};
pub use tape::{Tape, Var};
pub use tensor::{ParamId, ParamStore, Parameter, Tensor};
