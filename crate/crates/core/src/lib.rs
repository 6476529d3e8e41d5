pub mod acceptance;
pub mod band;
pub mod compensated;
pub mod config;
pub mod error;
pub mod fem;
pub mod format;
pub mod quadrature;

pub use config::{BeamConfig, Segment};
pub use error::{Error, Result};
pub use fem::{SystemMatrices, StateVector};
pub mod reference;
pub mod resolvent;
pub mod semianalytic;
pub mod spectrum;
pub mod timestepper;
