//! Intensity-correlation analysis and decoy-state key-rate bounds for
//! pulsed QKD sources.

pub mod denoise;
pub mod error;
pub mod keyrate;
pub mod kv;
pub mod lp;
pub mod photon;
pub mod quadrature;
pub mod security;
pub mod setting;
pub mod stats;
pub mod tables;
pub mod trace;

pub use error::{Error, Result};
pub use setting::{PatternKey, Setting, SettingProbabilities};
