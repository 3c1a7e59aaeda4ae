//! Canned BER and NMSE experiments, selectable by name.
//!
//! `fig4`..`fig6` use a 4x4 grid with ML detection; `fig7`..`fig10` use the
//! 16x64 grid with message passing. The `reduced` flag swaps the large grid
//! for 8x32, where the ten path delays merge pairwise onto five delay bins.

use super::config::{
    BaselineConfig, EstimationConfig, ExperimentConfig, GridConfig, StoppingConfig, Waveform, CONFIG_VERSION,
};
use super::record::ResultRecord;
use super::sim::{run_ber_sweep, run_mse_sweep, RunOptions};
use crate::allocation::Scheme;
use crate::channel::ChannelProfile;
use crate::detect::{Detector, Modulation, MpConfig, ML_MAX_BITS};
use crate::error::config;
use crate::Result;

pub const FIGURE_NAMES: [&str; 7] = ["fig4", "fig5", "fig6", "fig7", "fig8", "fig9", "fig10"];

/// Path delays of the ten-tap channel, in microseconds.
pub const TEN_TAP_DELAYS_US: [f64; 10] = [0.0, 1.04, 2.08, 3.12, 4.16, 5.2, 6.25, 7.29, 8.33, 9.37];

const DELTA_F: f64 = 15e3;
const CARRIER: f64 = 4e9;
const NU_MAX: f64 = 1000.0;
const DEFAULT_SEED: u64 = 20_240_601;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    Ber,
    Mse,
}

#[derive(Debug, Clone)]
pub struct Figure {
    pub name: String,
    pub curves: Vec<(SweepKind, ExperimentConfig)>,
}

impl Figure {
    /// Caps frames per point (and NMSE trials) on every curve.
    pub fn with_max_frames(mut self, max_frames: u64) -> Self {
        for (_, c) in &mut self.curves {
            c.stopping.max_frames = max_frames;
            c.stopping.min_frames = c.stopping.min_frames.min(max_frames);
            if let Some(e) = &mut c.estimation {
                e.trials = e.trials.min(max_frames);
            }
        }
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        for (_, c) in &mut self.curves {
            c.master_seed = seed;
        }
        self
    }

    pub fn run(&self, opts: &RunOptions) -> Result<Vec<ResultRecord>> {
        let mut out = Vec::new();
        for (kind, cfg) in &self.curves {
            out.extend(match kind {
                SweepKind::Ber => run_ber_sweep(cfg, opts)?,
                SweepKind::Mse => run_mse_sweep(cfg, opts)?,
            });
        }
        Ok(out)
    }
}

/// `(g1, g2)` for `K_u` interleaved users: the smallest divisor `g1` of
/// `K_u` with `g1^2 >= K_u`, so 2 -> (2,1), 4 -> (2,2), 8 -> (4,2).
pub fn interleaving_for(num_users: usize) -> (usize, usize) {
    let g1 = (1..=num_users)
        .find(|&d| num_users.is_multiple_of(d) && d * d >= num_users)
        .unwrap_or(1);
    (g1, num_users / g1)
}

fn interleaved(num_users: usize) -> Scheme {
    let (g1, g2) = interleaving_for(num_users);
    Scheme::Interleaved { g1, g2 }
}

fn db_range(start: i32, stop: i32, step: usize) -> Vec<f64> {
    (start..=stop).step_by(step).map(f64::from).collect()
}

/// M=N=4, BPSK, four taps on consecutive delay bins, ML detection.
pub fn small_ml_config(waveform: Waveform, scheme: Scheme, num_users: usize) -> ExperimentConfig {
    ExperimentConfig {
        config_version: CONFIG_VERSION,
        num_users,
        waveform,
        modulation: Modulation::Bpsk,
        snr_db: db_range(0, 30, 3),
        master_seed: DEFAULT_SEED,
        mp_support_threshold: 1e-3,
        ml_max_bits: ML_MAX_BITS,
        grid: GridConfig {
            n: 4,
            m: 4,
            delta_f_hz: DELTA_F,
            carrier_freq_hz: CARRIER,
        },
        scheme,
        channel: ChannelProfile {
            delays_s: (0..4).map(|i| i as f64 / (4.0 * DELTA_F)).collect(),
            pdp_decay_s: None,
            nu_max_hz: NU_MAX,
        },
        detector: Detector::Ml,
        stopping: StoppingConfig {
            min_frames: 200,
            max_frames: 20_000,
            target_errors: 100,
        },
        baseline: BaselineConfig::default(),
        estimation: None,
    }
}

/// 16x64 (or 8x32 when `reduced`) grid, BPSK, ten-tap channel, MP detection.
pub fn large_mp_config(waveform: Waveform, scheme: Scheme, num_users: usize, reduced: bool) -> ExperimentConfig {
    let (n, m) = if reduced { (8, 32) } else { (16, 64) };
    ExperimentConfig {
        config_version: CONFIG_VERSION,
        num_users,
        waveform,
        modulation: Modulation::Bpsk,
        snr_db: db_range(0, 20, 2),
        master_seed: DEFAULT_SEED,
        mp_support_threshold: 1e-3,
        ml_max_bits: ML_MAX_BITS,
        grid: GridConfig {
            n,
            m,
            delta_f_hz: DELTA_F,
            carrier_freq_hz: CARRIER,
        },
        scheme,
        channel: ChannelProfile {
            delays_s: TEN_TAP_DELAYS_US.iter().map(|d| d * 1e-6).collect(),
            pdp_decay_s: None,
            nu_max_hz: NU_MAX,
        },
        detector: Detector::Mp(MpConfig::default()),
        stopping: StoppingConfig {
            min_frames: 20,
            max_frames: 2_000,
            target_errors: 200,
        },
        baseline: BaselineConfig::default(),
        estimation: None,
    }
}

/// Scheme 1, K_u=4, ten-tap channel, pilot window sized to the channel.
pub fn estimation_config(reduced: bool, pilot_snr_db: Vec<f64>, with_ber: bool) -> ExperimentConfig {
    let mut cfg = large_mp_config(Waveform::Otfs, Scheme::DelayAxis, 4, reduced);
    let alpha_max = cfg.max_delay_index().unwrap_or(0);
    cfg.estimation = Some(EstimationConfig {
        alpha_max,
        pilot_snr_db,
        trials: 500,
        threshold: None,
        with_ber,
    });
    cfg
}

/// Builds a canned figure by name.
pub fn figure(name: &str, reduced: bool) -> Result<Figure> {
    let ber = |c: ExperimentConfig| (SweepKind::Ber, c);
    let curves = match name {
        "fig4" => vec![
            ber(small_ml_config(Waveform::Otfs, Scheme::DelayAxis, 2)),
            ber(small_ml_config(Waveform::Otfs, Scheme::DopplerAxis, 2)),
            ber(small_ml_config(Waveform::Otfs, interleaved(2), 2)),
        ],
        "fig5" => {
            // Schemes 1 and 2 need K_u to divide M = N = 4.
            let mut v = Vec::new();
            for k in [2, 4] {
                v.push(ber(small_ml_config(Waveform::Otfs, Scheme::DelayAxis, k)));
                v.push(ber(small_ml_config(Waveform::Otfs, Scheme::DopplerAxis, k)));
            }
            for k in [2, 4, 8] {
                v.push(ber(small_ml_config(Waveform::Otfs, interleaved(k), k)));
            }
            v
        }
        "fig6" => [Waveform::Otfs, Waveform::ScFdma, Waveform::Ofdma]
            .into_iter()
            .map(|w| ber(small_ml_config(w, Scheme::DelayAxis, 2)))
            .collect(),
        "fig7" => {
            let mut v = Vec::new();
            for k in [4, 8] {
                v.push(ber(large_mp_config(Waveform::Otfs, Scheme::DelayAxis, k, reduced)));
                v.push(ber(large_mp_config(Waveform::Otfs, interleaved(k), k, reduced)));
            }
            v
        }
        "fig8" => [Waveform::Otfs, Waveform::ScFdma, Waveform::Ofdma]
            .into_iter()
            .map(|w| ber(large_mp_config(w, Scheme::DelayAxis, 8, reduced)))
            .collect(),
        "fig9" => vec![(SweepKind::Mse, estimation_config(reduced, db_range(20, 50, 2), false))],
        "fig10" => {
            let est = estimation_config(reduced, vec![30.0, 40.0, 50.0], true);
            let mut perfect = est.clone();
            perfect.estimation = None;
            vec![(SweepKind::Mse, est), ber(perfect)]
        }
        other => {
            return Err(config(format!(
                "unknown figure {other:?}; expected one of {}",
                FIGURE_NAMES.join(", ")
            )))
        }
    };
    Ok(Figure {
        name: name.to_string(),
        curves,
    })
}
