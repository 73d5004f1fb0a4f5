//! Utility-preserving face obscuration.
//!
//! This crate generates synthetic faces conditioned only on non-identifying
//! utility (age, gender, skin tone and 7 facial landmarks), swaps them onto
//! original images with gradient-domain blending, and evaluates obscuration
//! strength against classical baselines (Gaussian blurring, pixelation,
//! k-same averaging) under two attacker threat models.

pub mod augment;
pub mod baselines;
pub mod checkpoint;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod nn;
pub mod swap;
pub mod train;
pub mod types;

pub use error::{Error, Result};
