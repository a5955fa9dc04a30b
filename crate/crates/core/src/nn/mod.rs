//! Minimal differentiable function approximators: a reverse-mode tape over
//! dense matrices, dense / attention / layer-norm layers, AdamW and a
//! finite-difference checker.

mod checkpoint;
mod gradcheck;
mod layers;
mod mat;
mod optim;
mod params;
mod tape;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT};
pub use gradcheck::{finite_diff_check, relative_error, GradCheckOptions, GradCheckReport};
pub use layers::{activate, attention, backward, dense, embedding, forward, layer_norm, ForwardCache};
pub use mat::Mat;
pub use optim::{AdamW, AdamWConfig, Schedule};
pub use params::{Activation, Gradients, LayerId, LayerKind, LayerSpec, Manifest, ParameterSet};
pub use tape::{clipped_surrogate_slope, clipped_surrogate_value, Backward, Tape, Var};
