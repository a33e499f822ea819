//! Scalable recollection module for continual learning.
//!
//! Experiences are compressed by a categorical-latent autoencoder into
//! k-bit codes, kept in a bounded index buffer, and decoded back into
//! approximate "recollections" that are replayed to stabilise both the
//! autoencoder itself and a predictive model.
//!
//! Layout:
//! - numeric substrate: [`tensor`], [`autodiff`], [`params`], [`layers`], [`gradcheck`]
//! - the recollection module: [`vae`], [`buffer`]
//! - continual learners: [`replay`], [`gem`]
//! - analysis: [`budget`], [`sampling`], [`distill`]
//! - data and orchestration: [`data`], [`experiment`]

pub mod autodiff;
pub mod budget;
pub mod buffer;
pub mod classifier;
mod codec;
pub mod data;
pub mod distill;
pub mod error;
pub mod experiment;
pub mod gem;
pub mod gradcheck;
pub mod layers;
mod linalg;
pub mod params;
pub mod replay;
pub mod sampling;
pub mod tensor;
pub mod vae;

pub use error::{Error, Result};
pub use linalg::ConvGeometry;
pub use tensor::{Real, Tensor};
