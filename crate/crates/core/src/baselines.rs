//! CP-OFDMA and SC-FDMA uplink transceivers over the same doubly-dispersive
//! channels, with effective linear models for the shared detectors.
//!
//! A frame is `N` OFDM symbols of `M` subcarriers, each preceded by a cyclic
//! prefix. User `u` owns `M/K_u` subcarriers. SC-FDMA spreads each block
//! with a unitary DFT before mapping. All DFTs are unitary.
//!
//! Received frames are reduced to the *detection vector*: CP removed, DFT
//! across subcarriers, de-mapped per user and (for SC-FDMA) de-spread. It is
//! ordered like the stacked payload: user, then OFDM symbol, then slot.

use std::sync::Arc;

use rand::Rng;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::channel::UserChannel;
use crate::error::{config, invalid};
use crate::model::{SparseMatrix, SystemModel};
use crate::rng::add_awgn;
use crate::transforms::{cis, GridSpec};
use crate::{Result, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precoding {
    /// Plain OFDMA.
    None,
    /// DFT-spread OFDMA (SC-FDMA).
    Dft,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubcarrierMapping {
    /// User `u` owns subcarriers `[u B, (u+1) B)`, `B = M/K_u`.
    #[default]
    Localized,
    /// User `u` owns subcarriers `u + K_u j`.
    Interleaved,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McFrameSpec {
    grid: GridSpec,
    num_users: usize,
    cp_len: usize,
    mapping: SubcarrierMapping,
    precoding: Precoding,
}

impl McFrameSpec {
    pub fn new(
        grid: GridSpec,
        num_users: usize,
        cp_len: usize,
        mapping: SubcarrierMapping,
        precoding: Precoding,
    ) -> Result<Self> {
        let m = grid.delay_bins();
        if num_users == 0 || !m.is_multiple_of(num_users) {
            return Err(config(format!("K_u={num_users} must divide M={m}")));
        }
        Ok(Self {
            grid,
            num_users,
            cp_len,
            mapping,
            precoding,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn cp_len(&self) -> usize {
        self.cp_len
    }

    pub fn precoding(&self) -> Precoding {
        self.precoding
    }

    pub fn mapping(&self) -> SubcarrierMapping {
        self.mapping
    }

    /// Subcarriers per user.
    pub fn block_len(&self) -> usize {
        self.grid.delay_bins() / self.num_users
    }

    /// Samples per OFDM symbol including the prefix.
    pub fn symbol_len(&self) -> usize {
        self.grid.delay_bins() + self.cp_len
    }

    pub fn frame_len(&self) -> usize {
        self.grid.doppler_bins() * self.symbol_len()
    }

    pub fn symbols_per_user(&self) -> usize {
        self.grid.doppler_bins() * self.block_len()
    }

    /// Subcarrier of slot `j` of `user`.
    pub fn subcarrier(&self, user: usize, j: usize) -> usize {
        match self.mapping {
            SubcarrierMapping::Localized => user * self.block_len() + j,
            SubcarrierMapping::Interleaved => user + self.num_users * j,
        }
    }

    fn check_channels(&self, channels: &[UserChannel]) -> Result<()> {
        if channels.len() != self.num_users {
            return Err(invalid(format!("{} channels for {} users", channels.len(), self.num_users)));
        }
        for ch in channels {
            ch.check(&self.grid)?;
        }
        Ok(())
    }
}

/// Unitary DFTs of the two lengths a frame needs.
struct Dfts {
    m_fwd: Arc<dyn Fft<f64>>,
    m_inv: Arc<dyn Fft<f64>>,
    b_fwd: Arc<dyn Fft<f64>>,
    b_inv: Arc<dyn Fft<f64>>,
}

impl Dfts {
    fn new(spec: &McFrameSpec) -> Self {
        let mut planner = FftPlanner::new();
        let (m, b) = (spec.grid.delay_bins(), spec.block_len());
        Self {
            m_fwd: planner.plan_fft_forward(m),
            m_inv: planner.plan_fft_inverse(m),
            b_fwd: planner.plan_fft_forward(b),
            b_inv: planner.plan_fft_inverse(b),
        }
    }

    fn run(fft: &Arc<dyn Fft<f64>>, buf: &mut [C64]) {
        fft.process(buf);
        let s = 1.0 / (buf.len() as f64).sqrt();
        buf.iter_mut().for_each(|v| *v *= s);
    }
}

/// One OFDM symbol (with prefix) carrying `block` for `user`.
fn modulate_symbol(spec: &McFrameSpec, dfts: &Dfts, user: usize, block: &[C64], out: &mut [C64]) {
    let mut spread = block.to_vec();
    if spec.precoding == Precoding::Dft {
        Dfts::run(&dfts.b_fwd, &mut spread);
    }
    let m = spec.grid.delay_bins();
    let mut freq = vec![C64::new(0.0, 0.0); m];
    for (j, v) in spread.into_iter().enumerate() {
        freq[spec.subcarrier(user, j)] = v;
    }
    Dfts::run(&dfts.m_inv, &mut freq);
    let cp = spec.cp_len;
    for t in 0..cp {
        out[t] = freq[(m - cp % m + t) % m];
    }
    out[cp..cp + m].copy_from_slice(&freq);
}

/// Per-user transmit streams of `N (M + cp)` samples each.
pub fn mc_modulate(spec: &McFrameSpec, payloads: &[Vec<C64>]) -> Result<Vec<Vec<C64>>> {
    if payloads.len() != spec.num_users {
        return Err(invalid(format!("{} payloads for {} users", payloads.len(), spec.num_users)));
    }
    let dfts = Dfts::new(spec);
    let (b, l) = (spec.block_len(), spec.symbol_len());
    payloads
        .iter()
        .enumerate()
        .map(|(u, p)| {
            if p.len() != spec.symbols_per_user() {
                return Err(invalid(format!(
                    "payload of user {u} has {} symbols, expected {}",
                    p.len(),
                    spec.symbols_per_user()
                )));
            }
            let mut stream = vec![C64::new(0.0, 0.0); spec.frame_len()];
            for n in 0..spec.grid.doppler_bins() {
                modulate_symbol(spec, &dfts, u, &p[n * b..(n + 1) * b], &mut stream[n * l..(n + 1) * l]);
            }
            Ok(stream)
        })
        .collect()
}

/// Adds `channel` applied to `x` into `out`; `x[0]` is sample `t0` of the
/// frame. Delays are linear: samples before `x[0]` count as zero.
fn accumulate_channel(channel: &UserChannel, grid: &GridSpec, x: &[C64], t0: usize, out: &mut [C64]) {
    let scale = 1.0 / grid.len() as f64;
    for tap in &channel.taps {
        let a = tap.delay_index;
        let nu = tap.normalized_doppler() * scale;
        for t in a..x.len() {
            out[t] += tap.gain * x[t - a] * cis(nu * (t0 + t - a) as f64);
        }
    }
}

/// Sum of every user's stream through its own channel, plus CN(0, `noise_var`)
/// noise on each sample. The sample period is `1/(M delta_f)`.
pub fn mc_apply_channel<R: Rng + ?Sized>(
    spec: &McFrameSpec,
    streams: &[Vec<C64>],
    channels: &[UserChannel],
    noise_var: f64,
    rng: &mut R,
) -> Result<Vec<C64>> {
    spec.check_channels(channels)?;
    if streams.len() != channels.len() || streams.iter().any(|s| s.len() != spec.frame_len()) {
        return Err(invalid("streams do not match the frame layout"));
    }
    let mut y = vec![C64::new(0.0, 0.0); spec.frame_len()];
    for (x, ch) in streams.iter().zip(channels) {
        accumulate_channel(ch, &spec.grid, x, 0, &mut y);
    }
    add_awgn(&mut y, noise_var, rng);
    Ok(y)
}

/// Detection vector of one OFDM symbol: `out[v B + j]` for user `v`, slot `j`.
fn receive_symbol(spec: &McFrameSpec, dfts: &Dfts, samples: &[C64], out: &mut [C64]) {
    let m = spec.grid.delay_bins();
    let b = spec.block_len();
    let mut freq = samples[spec.cp_len..spec.cp_len + m].to_vec();
    Dfts::run(&dfts.m_fwd, &mut freq);
    for v in 0..spec.num_users {
        let block = &mut out[v * b..(v + 1) * b];
        for (j, slot) in block.iter_mut().enumerate() {
            *slot = freq[spec.subcarrier(v, j)];
        }
        if spec.precoding == Precoding::Dft {
            Dfts::run(&dfts.b_inv, block);
        }
    }
}

/// CP removal, DFT, de-mapping and de-spreading of a received frame.
pub fn mc_receive(spec: &McFrameSpec, rx: &[C64]) -> Result<Vec<C64>> {
    if rx.len() != spec.frame_len() {
        return Err(invalid(format!("received {} samples, frame has {}", rx.len(), spec.frame_len())));
    }
    let dfts = Dfts::new(spec);
    let (n_sym, b, l) = (spec.grid.doppler_bins(), spec.block_len(), spec.symbol_len());
    let per_user = spec.symbols_per_user();
    let mut out = vec![C64::new(0.0, 0.0); rx.len() - n_sym * spec.cp_len];
    let mut sym = vec![C64::new(0.0, 0.0); spec.grid.delay_bins()];
    for n in 0..n_sym {
        receive_symbol(spec, &dfts, &rx[n * l..(n + 1) * l], &mut sym);
        for v in 0..spec.num_users {
            out[v * per_user + n * b..v * per_user + (n + 1) * b].copy_from_slice(&sym[v * b..(v + 1) * b]);
        }
    }
    Ok(out)
}

/// Effective matrix from stacked payloads to the detection vector, built by
/// probing each payload slot. A prefix at least as long as every delay keeps
/// OFDM symbols separate, so each probe only needs its own symbol. Entries
/// below `rel_threshold` times their column maximum are dropped.
pub fn mc_effective_model(spec: &McFrameSpec, channels: &[UserChannel], rel_threshold: f64) -> Result<SystemModel> {
    spec.check_channels(channels)?;
    let max_delay = channels.iter().map(UserChannel::max_delay_index).max().unwrap_or(0);
    if spec.cp_len < max_delay {
        return Err(config(format!(
            "cyclic prefix of {} samples is shorter than the largest delay {max_delay}",
            spec.cp_len
        )));
    }
    let dfts = Dfts::new(spec);
    let (n_sym, b, l, m) = (spec.grid.doppler_bins(), spec.block_len(), spec.symbol_len(), spec.grid.delay_bins());
    let per_user = spec.symbols_per_user();
    let d = n_sym * m;
    let mut cols = vec![Vec::new(); d];
    let mut col_user = vec![0; d];
    let mut unit = vec![C64::new(0.0, 0.0); b];
    let mut tx = vec![C64::new(0.0, 0.0); l];
    let mut rx = vec![C64::new(0.0, 0.0); l];
    let mut response = vec![C64::new(0.0, 0.0); m];
    for (u, ch) in channels.iter().enumerate() {
        for n in 0..n_sym {
            for j in 0..b {
                unit.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
                unit[j] = C64::new(1.0, 0.0);
                modulate_symbol(spec, &dfts, u, &unit, &mut tx);
                rx.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
                accumulate_channel(ch, &spec.grid, &tx, n * l, &mut rx);
                receive_symbol(spec, &dfts, &rx, &mut response);
                let max = response.iter().fold(0.0f64, |a, v| a.max(v.norm()));
                let col = u * per_user + n * b + j;
                col_user[col] = u;
                cols[col] = response
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| v.norm() > 0.0 && v.norm() >= rel_threshold * max)
                    .map(|(i, &v)| ((i / b) * per_user + n * b + i % b, v))
                    .collect();
            }
        }
    }
    SystemModel::new(SparseMatrix::from_column_entries(d, cols), col_user)
}
