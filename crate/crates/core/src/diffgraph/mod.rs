//! Differentiable computation core: a matrix-level reverse-mode tape, dense
//! networks built on it, Adam, and finite-difference gradient checks.
//!
//! Everything is `f64`. Supported primitives are affine maps, relu, gelu,
//! sigmoid, clamp, log, exp, square, sums/means and elementwise arithmetic.

mod adam;
mod gradcheck;
mod graph;
pub mod losses;
mod mlp;
mod train;

pub use adam::{AdamConfig, AdamState, StepSchedule};
pub use gradcheck::{check_gradients, GradCheck, RELATIVE_FLOOR};
pub use graph::{gelu, sigmoid, value_and_grad, Gradients, Graph, Var};
pub use mlp::{column, rows_to_array, Activation, Mlp, MlpCheckpoint, PROB_CLAMP};
pub use train::{minibatch_train, minibatch_train_observed, TrainConfig};
