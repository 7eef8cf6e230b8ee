//! Dense matrices, fixed-topology MLPs with hand-written backprop, Adam and
//! a seeded random stream.

mod adam;
mod matrix;
mod mlp;
mod rng;

pub use adam::{adam_step, AdamState};
pub use matrix::Matrix;
pub use mlp::{Activation, AffineLayer, Mlp, MlpCache, MlpGrads, ParamRef};
pub use rng::{gaussian_sample, SeededRng};
