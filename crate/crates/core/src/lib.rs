//! Ergodic sum-rate optimization for a two-user downlink aided by an
//! intelligent reflecting surface, under NOMA, TDMA and FDMA.

pub mod ao;
pub mod channel;
pub mod error;
pub mod irs;
pub mod phase;
pub mod power;

pub use error::{CoreError, Result};
