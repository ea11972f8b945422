//! Undersampled MRI reconstruction with a GAN whose discriminator judges
//! images at several levels at once: a realness score, a distribution over
//! outcomes, and a per-pixel map. Runs at desk scale on synthetic phantoms.

mod error;
pub mod mrisim;

pub use error::{Error, Result};
pub mod generator;
pub mod discriminator;
mod nn;
pub mod objectives;
pub mod theory;
pub mod metrics;
pub mod trainlab;
