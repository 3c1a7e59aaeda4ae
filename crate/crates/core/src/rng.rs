//! Deterministic random streams.
//!
//! Every Monte Carlo trial owns a generator derived from
//! `(master_seed, stream, trial)`, so results never depend on how trials are
//! scheduled across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::C64;

pub type SimRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator for trial `trial` of stream `stream` (an SNR point, a curve...).
pub fn trial_rng(master_seed: u64, stream: u64, trial: u64) -> SimRng {
    let seed = splitmix64(splitmix64(splitmix64(master_seed) ^ stream) ^ trial);
    SimRng::seed_from_u64(seed)
}

/// Circularly-symmetric complex Gaussian sample with variance `var`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, var: f64) -> C64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(s * re, s * im)
}

/// Adds CN(0, `var`) noise to every sample. A zero variance is a no-op and
/// consumes no randomness.
pub fn add_awgn<R: Rng + ?Sized>(samples: &mut [C64], var: f64, rng: &mut R) {
    if var <= 0.0 {
        return;
    }
    for s in samples.iter_mut() {
        *s += complex_gaussian(rng, var);
    }
}
