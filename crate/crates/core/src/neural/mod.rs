//! Small dense networks with hand-written gradients: the Gaussian policy,
//! value functions, and Adam for value regression.

mod mlp;
mod policy;
mod snapshot;
mod value;

pub use mlp::{ForwardCache, Mlp};
pub use policy::{
    diag_gaussian_kl, entropy, gaussian_log_density, kl_diag_gaussian, kl_grad, kl_to_reference,
    GaussianPolicy, INITIAL_LOG_STD, MEAN_OUTPUT_SCALE,
};
pub use snapshot::{read_snapshot, write_snapshot, SnapshotHeader};
pub use value::{adam_fit, adam_fit_minibatch, Adam, ValueFunction, VALUE_ITERATIONS, VALUE_LEARNING_RATE};
