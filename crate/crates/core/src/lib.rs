//! Measurement-based feedback steering of two atomic ensembles toward a
//! maximally entangled Dicke state.

pub mod config;
pub mod engine;
pub mod error;
pub mod local;
pub mod metrics;
pub mod output;
pub mod protocol;
pub mod spin;
pub mod state;
pub mod stats;
pub mod verify;

pub use error::{Error, Result};

pub type C64 = nalgebra::Complex<f64>;
