//! Dense networks, reverse-mode gradients, Adam and seeded randomness.
//!
//! All arithmetic is `f64`.

mod adam;
pub(crate) mod blob;
mod mlp;
mod rng;

pub use adam::Adam;
pub use blob::{PARAMS_MAGIC, PARAMS_VERSION};
pub use mlp::{Activation, Dense, MlpParams, Tape};
pub use rng::Rng;
