//! Phase reduction and synchronization certificates for noisy, weakly
//! coupled oscillator networks.

pub mod analysis;
pub mod cli;
pub mod cycle;
pub mod dynamics;
pub mod error;
pub mod interp;
pub mod linalg;
pub mod phasefn;
pub mod phasered;
pub mod prc;
pub mod sdesim;
pub mod synccert;

pub use error::{Error, Result};
