//! Experiment configuration files.
//!
//! A config is a TOML document. Every field is listed in
//! [`ExperimentConfig`]; optional sections fall back to their `Default`.
//!
//! ```toml
//! config_version = 1
//! num_users = 2
//! waveform = "otfs"
//! modulation = "bpsk"
//! snr_db = [0.0, 5.0, 10.0]
//! master_seed = 1
//!
//! [grid]
//! n = 4
//! m = 4
//!
//! [scheme]
//! kind = "delay_axis"
//!
//! [channel]
//! delays_s = [0.0, 1.6667e-5]
//! nu_max_hz = 1000.0
//!
//! [detector]
//! kind = "ml"
//! ```

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::allocation::Scheme;
use crate::baselines::{Precoding, SubcarrierMapping};
use crate::channel::ChannelProfile;
use crate::detect::{Detector, Modulation, ML_MAX_BITS};
use crate::estimation::place_pilots;
use crate::transforms::GridSpec;
use crate::{Error, Result};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Waveform {
    Otfs,
    Ofdma,
    ScFdma,
}

impl Waveform {
    pub fn label(&self) -> &'static str {
        match self {
            Waveform::Otfs => "otfs-ma",
            Waveform::Ofdma => "ofdma",
            Waveform::ScFdma => "sc-fdma",
        }
    }

    pub fn precoding(&self) -> Option<Precoding> {
        match self {
            Waveform::Otfs => None,
            Waveform::Ofdma => Some(Precoding::None),
            Waveform::ScFdma => Some(Precoding::Dft),
        }
    }
}

impl fmt::Display for Waveform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

fn default_delta_f() -> f64 {
    15e3
}

fn default_carrier() -> f64 {
    4e9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Doppler bins (time slots).
    pub n: usize,
    /// Delay bins (subcarriers).
    pub m: usize,
    #[serde(default = "default_delta_f")]
    pub delta_f_hz: f64,
    #[serde(default = "default_carrier")]
    pub carrier_freq_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StoppingConfig {
    pub min_frames: u64,
    pub max_frames: u64,
    /// A point stops once this many bit errors are seen (after `min_frames`).
    pub target_errors: u64,
}

impl Default for StoppingConfig {
    fn default() -> Self {
        Self {
            min_frames: 100,
            max_frames: 10_000,
            target_errors: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    /// Cyclic prefix in samples; defaults to the largest delay index.
    pub cp_len: Option<usize>,
    pub mapping: SubcarrierMapping,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            cp_len: None,
            mapping: SubcarrierMapping::Localized,
        }
    }
}

fn default_trials() -> u64 {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimationConfig {
    /// Assumed maximum delay index; sizes the pilot guard.
    pub alpha_max: usize,
    pub pilot_snr_db: Vec<f64>,
    /// Channel draws per pilot SNR in an NMSE sweep.
    #[serde(default = "default_trials")]
    pub trials: u64,
    /// Zero estimate entries below this fraction of the largest one.
    #[serde(default)]
    pub threshold: Option<f64>,
    /// Also run a BER sweep per pilot SNR with detection on the estimate.
    #[serde(default)]
    pub with_ber: bool,
}

fn default_support_threshold() -> f64 {
    1e-3
}

fn default_ml_bits() -> usize {
    ML_MAX_BITS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub config_version: u32,
    pub num_users: usize,
    pub waveform: Waveform,
    pub modulation: Modulation,
    pub snr_db: Vec<f64>,
    pub master_seed: u64,
    /// Entries below this fraction of their column maximum are dropped from
    /// models handed to the MP detector. Zero keeps everything.
    #[serde(default = "default_support_threshold")]
    pub mp_support_threshold: f64,
    #[serde(default = "default_ml_bits")]
    pub ml_max_bits: usize,
    pub grid: GridConfig,
    pub scheme: Scheme,
    pub channel: ChannelProfile,
    pub detector: Detector,
    #[serde(default)]
    pub stopping: StoppingConfig,
    #[serde(default)]
    pub baseline: BaselineConfig,
    #[serde(default)]
    pub estimation: Option<EstimationConfig>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn grid_spec(&self) -> Result<GridSpec> {
        GridSpec::new(self.grid.n, self.grid.m, self.grid.delta_f_hz, self.grid.carrier_freq_hz)
    }

    /// First 16 hex digits of the SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        let text = self.to_toml().expect("config always serializes");
        hex::encode(Sha256::digest(text.as_bytes()))[..16].to_string()
    }

    /// Largest delay index of the quantized channel profile.
    pub fn max_delay_index(&self) -> Option<usize> {
        let grid = self.grid_spec().ok()?;
        let taps = self.channel.quantized_taps(&grid).ok()?;
        taps.iter().map(|&(a, _)| a).max()
    }

    pub fn cp_len(&self) -> usize {
        self.baseline.cp_len.unwrap_or_else(|| self.max_delay_index().unwrap_or(0))
    }

    /// Every violated constraint, in a stable order.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.config_version != CONFIG_VERSION {
            out.push(format!(
                "config_version {} is not supported (expected {CONFIG_VERSION})",
                self.config_version
            ));
        }
        let grid = match self.grid_spec() {
            Ok(g) => Some(g),
            Err(e) => {
                out.push(e.to_string());
                None
            }
        };
        if self.num_users == 0 {
            out.push("num_users must be at least 1".to_string());
        }
        if let Some(g) = &grid {
            match self.waveform {
                Waveform::Otfs => out.extend(self.scheme.problems(g, self.num_users)),
                _ => {
                    if self.num_users > 0 && g.delay_bins() % self.num_users != 0 {
                        out.push(format!(
                            "{} requires K_u to divide M, but K_u={} and M={}",
                            self.waveform,
                            self.num_users,
                            g.delay_bins()
                        ));
                    }
                    if let (Some(cp), Some(max)) = (self.baseline.cp_len, self.max_delay_index()) {
                        if cp < max {
                            out.push(format!("cyclic prefix {cp} is shorter than the largest delay index {max}"));
                        }
                    }
                }
            }
            out.extend(self.channel.problems(g));
        }
        if let Detector::Mp(mp) = &self.detector {
            out.extend(mp.problems());
        }
        if !(0.0..1.0).contains(&self.mp_support_threshold) {
            out.push(format!(
                "mp_support_threshold must lie in [0, 1), got {}",
                self.mp_support_threshold
            ));
        }
        if self.snr_db.iter().any(|s| s.is_nan()) {
            out.push("snr_db contains NaN".to_string());
        }
        if self.snr_db.is_empty() && self.estimation.is_none() {
            out.push("snr_db must list at least one point".to_string());
        }
        let stop = &self.stopping;
        if stop.max_frames == 0 {
            out.push("stopping.max_frames must be at least 1".to_string());
        }
        if stop.min_frames > stop.max_frames {
            out.push(format!(
                "stopping.min_frames {} exceeds stopping.max_frames {}",
                stop.min_frames, stop.max_frames
            ));
        }
        if let Some(est) = &self.estimation {
            if self.waveform != Waveform::Otfs || matches!(self.scheme, Scheme::Interleaved { .. }) {
                out.push("channel estimation needs the otfs waveform with a delay_axis or doppler_axis scheme".to_string());
            } else if let Some(g) = &grid {
                if self.num_users > 0 && self.scheme.problems(g, self.num_users).is_empty() {
                    if let Err(e) = place_pilots(self.scheme, g, self.num_users, est.alpha_max) {
                        out.push(e.to_string());
                    }
                }
            }
            if let Some(max) = self.max_delay_index() {
                if est.alpha_max < max {
                    out.push(format!(
                        "estimation.alpha_max {} is below the channel's largest delay index {max}",
                        est.alpha_max
                    ));
                }
            }
            if est.pilot_snr_db.is_empty() {
                out.push("estimation.pilot_snr_db must list at least one point".to_string());
            }
            if est.pilot_snr_db.iter().any(|s| s.is_nan()) {
                out.push("estimation.pilot_snr_db contains NaN".to_string());
            }
            if est.trials == 0 {
                out.push("estimation.trials must be at least 1".to_string());
            }
            if est.with_ber && self.snr_db.is_empty() {
                out.push("estimation.with_ber needs data snr_db points".to_string());
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }

    /// Label of the allocation column in result files.
    pub fn scheme_label(&self) -> String {
        match self.waveform {
            Waveform::Otfs => self.scheme.label().to_string(),
            _ => match self.baseline.mapping {
                SubcarrierMapping::Localized => "localized".to_string(),
                SubcarrierMapping::Interleaved => "interleaved".to_string(),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::MpConfig;

    const SAMPLE: &str = r#"
config_version = 1
num_users = 2
waveform = "otfs"
modulation = "bpsk"
snr_db = [0.0, 10.0, inf]
master_seed = 7

[grid]
n = 4
m = 4

[scheme]
kind = "interleaved"
g1 = 2
g2 = 1

[channel]
delays_s = [0.0, 1.6666666666666667e-5]
nu_max_hz = 1000.0

[detector]
kind = "mp"
damping = 0.5
"#;

    #[test]
    fn parses_sample_document() {
        let cfg = ExperimentConfig::from_toml_str(SAMPLE).unwrap();
        assert_eq!(cfg.scheme, Scheme::Interleaved { g1: 2, g2: 1 });
        assert_eq!(cfg.grid.delta_f_hz, 15e3);
        assert!(cfg.snr_db[2].is_infinite());
        assert_eq!(
            cfg.detector,
            Detector::Mp(MpConfig {
                damping: 0.5,
                ..MpConfig::default()
            })
        );
        assert_eq!(cfg.stopping, StoppingConfig::default());
        assert_eq!(cfg.max_delay_index(), Some(1));
        cfg.validate().unwrap();
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = ExperimentConfig::from_toml_str(SAMPLE).unwrap();
        let again = ExperimentConfig::from_toml_str(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.hash(), again.hash());
        assert_eq!(cfg.hash().len(), 16);
    }

    #[test]
    fn hash_tracks_content() {
        let cfg = ExperimentConfig::from_toml_str(SAMPLE).unwrap();
        let mut other = cfg.clone();
        other.master_seed += 1;
        assert_ne!(cfg.hash(), other.hash());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = SAMPLE.replace("master_seed = 7", "master_seed = 7\nsnr = 3");
        assert!(matches!(ExperimentConfig::from_toml_str(&text), Err(Error::Parse(_))));
    }

    #[test]
    fn validation_reports_every_violation() {
        let text = SAMPLE
            .replace("num_users = 2", "num_users = 3")
            .replace("kind = \"interleaved\"\ng1 = 2\ng2 = 1", "kind = \"delay_axis\"")
            .replace("nu_max_hz = 1000.0", "nu_max_hz = 20000.0")
            .replace("damping = 0.5", "damping = 1.5")
            .replace("config_version = 1", "config_version = 9");
        let cfg = ExperimentConfig::from_toml_str(&text).unwrap();
        match cfg.validate() {
            Err(Error::Validation(problems)) => {
                assert_eq!(problems.len(), 4, "{problems:#?}");
                assert!(problems.iter().any(|p| p.contains("divide M")));
                assert!(problems.iter().any(|p| p.contains("maximum Doppler")));
                assert!(problems.iter().any(|p| p.contains("damping")));
                assert!(problems.iter().any(|p| p.contains("config_version")));
            }
            other => panic!("expected validation failure, got {other:?}"),
        }
    }

    #[test]
    fn estimation_feasibility_is_checked() {
        let mut cfg = ExperimentConfig::from_toml_str(SAMPLE).unwrap();
        cfg.scheme = Scheme::DelayAxis;
        cfg.estimation = Some(EstimationConfig {
            alpha_max: 2,
            pilot_snr_db: vec![30.0],
            trials: 10,
            threshold: None,
            with_ber: false,
        });
        assert!(cfg.validate().is_err());
        cfg.estimation.as_mut().unwrap().alpha_max = 1;
        cfg.validate().unwrap();
        cfg.estimation.as_mut().unwrap().alpha_max = 0;
        let problems = cfg.problems();
        assert!(problems.iter().any(|p| p.contains("alpha_max")), "{problems:?}");
    }

    #[test]
    fn baselines_need_divisible_grid() {
        let mut cfg = ExperimentConfig::from_toml_str(SAMPLE).unwrap();
        cfg.waveform = Waveform::ScFdma;
        cfg.num_users = 3;
        assert!(cfg.problems().iter().any(|p| p.contains("divide M")));
        cfg.num_users = 2;
        cfg.baseline.cp_len = Some(0);
        assert!(cfg.problems().iter().any(|p| p.contains("cyclic prefix")));
        cfg.baseline.cp_len = None;
        assert_eq!(cfg.cp_len(), 1);
        assert_eq!(cfg.scheme_label(), "localized");
    }
}
