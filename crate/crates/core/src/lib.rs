//! Robust stability margins from mean-square stability of discrete-time
//! linear systems with multiplicative noise, and maximally robust LQR design.

pub mod error;
pub mod bisect;
pub mod cli;
pub mod design;
pub mod gare;
pub mod instances;
pub mod margins;
pub mod matops;
pub mod model;
pub mod stability;
pub mod verify;

pub use error::{Error, Result};
