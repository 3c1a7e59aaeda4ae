//! Oracles and sweep helpers shared by the acceptance targets.
#![allow(dead_code)]

use std::f64::consts::PI;

use otfs_ma::allocation::Scheme;
use otfs_ma::channel::UserChannel;
use otfs_ma::harness::config::StoppingConfig;
use otfs_ma::harness::figures::interleaving_for;
use otfs_ma::harness::{snr_at_ber, ResultRecord, RunOptions};
use otfs_ma::transforms::{DDFrame, GridSpec, TFFrame};
use otfs_ma::C64;

pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    pub fn new(pass: bool, detail: String) -> Self {
        Self { pass, detail }
    }
}

pub fn quiet() -> RunOptions {
    RunOptions {
        threads: None,
        quiet: true,
    }
}

pub fn stopping(min_frames: u64, max_frames: u64, target_errors: u64) -> StoppingConfig {
    StoppingConfig {
        min_frames,
        max_frames,
        target_errors,
    }
}

pub fn fixed_frames(frames: u64) -> StoppingConfig {
    stopping(frames, frames, u64::MAX)
}

pub fn interleaved(num_users: usize) -> Scheme {
    let (g1, g2) = interleaving_for(num_users);
    Scheme::Interleaved { g1, g2 }
}

/// SNR where a BER sweep crosses `target`.
pub fn required_snr(records: &[ResultRecord], target: f64) -> Option<f64> {
    let curve: Vec<(f64, f64)> = records
        .iter()
        .filter_map(|r| Some((r.snr_db?, r.ber?)))
        .collect();
    snr_at_ber(&curve, target)
}

pub fn ber_at(records: &[ResultRecord], snr: f64) -> f64 {
    records
        .iter()
        .find(|r| r.snr_db == Some(snr))
        .and_then(|r| r.ber)
        .expect("swept SNR")
}

/// Doppler spreading weight written exactly as the closed form
/// `(e^{-j2pi(-q-b)} - 1) / (N e^{-j2pi(-q-b)/N} - N)`, with its limit 1
/// when `q + b` is a multiple of `N`.
fn spread_weight(q: usize, b: f64, n: usize) -> C64 {
    let z = q as f64 + b;
    let r = z.rem_euclid(n as f64);
    if r < 1e-12 || n as f64 - r < 1e-12 {
        return C64::new(1.0, 0.0);
    }
    let num = C64::from_polar(1.0, 2.0 * PI * z) - 1.0;
    let den = C64::from_polar(n as f64, 2.0 * PI * z / n as f64) - n as f64;
    num / den
}

/// Noiseless `y[k,l]` as the literal sum over users, paths and Doppler
/// offsets of `c(q,b) h e^{-j2pi tau nu} x[(k-beta+q)_N, (l-alpha)_M]`,
/// with `tau` and `nu` in physical units. Inputs and output are flat
/// `k + N l` vectors.
pub fn literal_channel(channels: &[UserChannel], grid: &GridSpec, xs: &[Vec<C64>]) -> Vec<C64> {
    let (n, m) = (grid.doppler_bins(), grid.delay_bins());
    let df = grid.delta_f();
    let t = 1.0 / df;
    let mut y = vec![C64::new(0.0, 0.0); n * m];
    for (ch, x) in channels.iter().zip(xs) {
        for tap in &ch.taps {
            let tau = tap.delay_index as f64 / (m as f64 * df);
            let nu = (tap.doppler_index as f64 + tap.fractional_doppler) / (n as f64 * t);
            let g = tap.gain * C64::from_polar(1.0, -2.0 * PI * tau * nu);
            for k in 0..n {
                for l in 0..m {
                    let l_in = (l as i64 - tap.delay_index as i64).rem_euclid(m as i64) as usize;
                    for q in 0..n {
                        let k_in = (k as i64 - tap.doppler_index + q as i64).rem_euclid(n as i64) as usize;
                        y[k + n * l] += spread_weight(q, tap.fractional_doppler, n) * g * x[k_in + n * l_in];
                    }
                }
            }
        }
    }
    y
}

/// Max deviation of `tf` from the literal double sum
/// `X[n,m] = 1/sqrt(MN) sum_k sum_l x[k,l] e^{j2pi(nk/N - ml/M)}`.
pub fn literal_isfft_err(x: &DDFrame, tf: &TFFrame) -> f64 {
    let (nn, mm) = (x.grid().doppler_bins(), x.grid().delay_bins());
    let s = x.symbols();
    let scale = 1.0 / ((nn * mm) as f64).sqrt();
    let mut worst = 0.0f64;
    for n in 0..nn {
        for m in 0..mm {
            let mut acc = C64::new(0.0, 0.0);
            for k in 0..nn {
                for l in 0..mm {
                    let phase = 2.0 * PI * ((n * k) as f64 / nn as f64 - (m * l) as f64 / mm as f64);
                    acc += s[[k, l]] * C64::from_polar(1.0, phase);
                }
            }
            worst = worst.max((acc * scale - tf.samples()[[n, m]]).norm());
        }
    }
    worst
}
