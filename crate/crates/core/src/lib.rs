//! Cross- and distribution-aligned variational autoencoders for generalized
//! zero- and few-shot learning.
//!
//! One VAE is trained per modality (image features plus one or more kinds of
//! class side information). Their latent spaces are tied together by
//! cross-reconstruction and by a closed-form 2-Wasserstein distance between
//! the per-sample diagonal Gaussians. After training, seen-class image
//! features and unseen-class side information are encoded into the shared
//! latent space, where a linear softmax classifier is fitted and evaluated
//! with per-class seen/unseen accuracies and their harmonic mean.
//!
//! The crate is organised bottom-up:
//!
//! - [`numerics`]: dense matrices, MLPs with manual backprop, Adam, seeded RNG
//! - [`vae`]: per-modality encoder/decoder, KL and L1 terms
//! - [`alignment`]: cross-alignment, distribution alignment, loss schedules
//! - [`trainer`]: batch pairing and the training loop
//! - [`latent`]: latent training/evaluation sets for the classifier
//! - [`classifier`]: softmax classifier and the GZSL/GFSL protocol
//! - [`data`]: dataset model, `.gzc` container, synthetic generator
//! - [`checkpoint`]: binary parameter checkpoints

pub mod alignment;
pub mod checkpoint;
pub mod classifier;
pub mod data;
pub mod error;
pub mod latent;
pub mod numerics;
pub mod trainer;
pub mod vae;

mod binio;

pub use error::{Error, Result};
