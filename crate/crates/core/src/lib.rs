//! Link-level simulation of OTFS-based uplink multiple access (OTFS-MA).
//!
//! Users share one `N x M` delay-Doppler grid. Each user's symbols are
//! placed on a disjoint set of delay-Doppler resource blocks, pass through
//! that user's doubly-dispersive channel, and are detected jointly (or per
//! user, for the interleaved allocation) at the base station.
//!
//! The crate is organized bottom-up:
//!
//! - [`transforms`]: grid geometry and the ISFFT/SFFT pair.
//! - [`channel`]: tap draws and exact effective channel matrices.
//! - [`allocation`]: the three resource-block allocation schemes.
//! - [`model`]: sparse matrices and the `y = Hx + v` system model.
//! - [`detect`]: brute-force ML and message-passing detection.
//! - [`baselines`]: OFDMA and SC-FDMA over the same channels.
//! - [`estimation`]: impulse-pilot multiuser channel estimation.
//! - [`harness`]: Monte Carlo sweeps, config files and CSV output.

pub mod allocation;
pub mod baselines;
pub mod channel;
pub mod detect;
mod error;
pub mod estimation;
pub mod harness;
pub mod model;
pub mod rng;
pub mod transforms;

pub use error::{Error, Result};

/// Complex sample type used throughout.
pub type C64 = num_complex::Complex64;
