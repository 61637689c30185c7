pub mod averaging;
pub mod config;
pub mod ensemble;
pub mod error;
pub mod jump_model;
pub mod metrics;
pub mod probe;
pub mod quadrature;
pub mod rng;
pub mod simulate;
pub mod switching;
pub mod verify;

pub use error::{Error, Result};
