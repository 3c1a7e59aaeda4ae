//! Experiment engine: TOML configs, seeded Monte Carlo sweeps and CSV output.

pub mod config;
pub mod figures;
pub mod record;
pub mod sim;

pub use config::{ExperimentConfig, Waveform};
pub use figures::{figure, Figure, SweepKind, FIGURE_NAMES};
pub use record::{snr_at_ber, to_csv_string, write_csv, ResultRecord, CSV_COLUMNS};
pub use sim::{noise_var, run_ber_sweep, run_mse_sweep, waveform_variants, RunOptions};
