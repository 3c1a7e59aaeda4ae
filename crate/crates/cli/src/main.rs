use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use otfs_ma::harness::{
    figure, run_ber_sweep, run_mse_sweep, waveform_variants, write_csv, ExperimentConfig, ResultRecord, RunOptions,
    FIGURE_NAMES,
};
use otfs_ma::Result;

#[derive(Debug, Parser)]
#[command(name = "otfs-ma", version, about = "OTFS uplink multiple access link simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// BER against data SNR with perfect channel knowledge.
    Ber(RunArgs),
    /// Channel-estimation NMSE against pilot SNR.
    Mse(RunArgs),
    /// OTFS-MA, SC-FDMA and OFDMA on the same channel configuration.
    Compare(RunArgs),
    /// Check a config file without simulating.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a canned figure experiment.
    Figures {
        #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(FIGURE_NAMES))]
        name: String,
        /// Use the 8x32 grid instead of 16x64 for the large figures.
        #[arg(long)]
        reduced: bool,
        #[command(flatten)]
        common: CommonArgs,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: OTFS_MA_THREADS, then all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Caps frames per SNR point and trials per pilot SNR.
    #[arg(long)]
    max_frames: Option<u64>,
    #[arg(long)]
    quiet: bool,
}

impl CommonArgs {
    fn options(&self) -> RunOptions {
        RunOptions {
            threads: self.threads,
            quiet: self.quiet,
        }
    }

    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(seed) = self.seed {
            cfg.master_seed = seed;
        }
        if let Some(max) = self.max_frames {
            cfg.stopping.max_frames = max;
            cfg.stopping.min_frames = cfg.stopping.min_frames.min(max);
            if let Some(e) = &mut cfg.estimation {
                e.trials = e.trials.min(max);
            }
        }
    }
}

fn load(path: &Path, common: &CommonArgs) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    common.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn emit(records: &[ResultRecord], out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path)?);
            write_csv(records, &mut w)?;
            w.flush()?;
        }
        None => write_csv(records, io::stdout().lock())?,
    }
    Ok(())
}

fn run(cli: Cli) -> Result<Vec<ResultRecord>> {
    let (records, out) = match cli.command {
        Command::Validate { config } => {
            ExperimentConfig::load(&config)?.validate()?;
            println!("{}: ok", config.display());
            return Ok(Vec::new());
        }
        Command::Ber(a) => (run_ber_sweep(&load(&a.config, &a.common)?, &a.common.options())?, a.common.out),
        Command::Mse(a) => (run_mse_sweep(&load(&a.config, &a.common)?, &a.common.options())?, a.common.out),
        Command::Compare(a) => {
            let cfg = load(&a.config, &a.common)?;
            let mut records = Vec::new();
            for variant in waveform_variants(&cfg) {
                records.extend(run_ber_sweep(&variant, &a.common.options())?);
            }
            (records, a.common.out)
        }
        Command::Figures { name, reduced, common } => {
            let mut fig = figure(&name, reduced)?;
            if let Some(max) = common.max_frames {
                fig = fig.with_max_frames(max);
            }
            if let Some(seed) = common.seed {
                fig = fig.with_seed(seed);
            }
            (fig.run(&common.options())?, common.out)
        }
    };
    emit(&records, out.as_deref())?;
    Ok(records)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(records) => {
            let failed: Vec<&ResultRecord> = records.iter().filter(|r| r.failure.is_some()).collect();
            if failed.is_empty() {
                return ExitCode::SUCCESS;
            }
            for r in failed {
                eprintln!(
                    "error: {} {} K_u={} point failed: {}",
                    r.waveform,
                    r.scheme,
                    r.num_users,
                    r.failure.as_deref().unwrap_or_default()
                );
            }
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
