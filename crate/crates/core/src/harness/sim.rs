//! Monte Carlo sweeps.
//!
//! Trial `t` of sweep point `p` draws everything (channels, payload, noise)
//! from its own generator `trial_rng(master_seed, p, t)`. Frames run in
//! parallel batches but are folded into the tally strictly in trial order,
//! and the stopping rule is checked after every frame, so the result of a
//! point never depends on the number of threads.

use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use rayon::ThreadPool;

use super::config::{ExperimentConfig, Waveform};
use super::record::ResultRecord;
use crate::allocation::{composite_model, make_plan, AllocationPlan, Scheme};
use crate::baselines::{mc_effective_model, McFrameSpec};
use crate::channel::{build_system_matrix, draw_channel, UserChannel};
use crate::detect::{ml_detect_with_limit, mp_detect, Alphabet, Detector};
use crate::error::config;
use crate::estimation::{estimate, nmse, place_pilots, rebuild_model, receive_pilots, true_estimate, PilotPlan};
use crate::model::SystemModel;
use crate::rng::{add_awgn, trial_rng, SimRng};
use crate::transforms::GridSpec;
use crate::{Result, C64};

/// Environment variable read when no explicit thread count is given.
pub const THREADS_ENV: &str = "OTFS_MA_THREADS";

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub threads: Option<usize>,
    pub quiet: bool,
}

impl RunOptions {
    /// Explicit count, else [`THREADS_ENV`], else every available core.
    pub fn thread_count(&self) -> Result<usize> {
        if let Some(n) = self.threads {
            return if n == 0 { Err(config("thread count must be positive")) } else { Ok(n) };
        }
        match std::env::var(THREADS_ENV) {
            Ok(v) => match v.trim().parse::<usize>() {
                Ok(n) if n > 0 => Ok(n),
                _ => Err(config(format!("{THREADS_ENV}={v:?} is not a positive integer"))),
            },
            Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
        }
    }

    fn pool(&self) -> Result<ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.thread_count()?)
            .build()
            .map_err(|e| config(format!("cannot start worker pool: {e}")))
    }
}

/// `sigma^2 = 10^(-snr/10)`; an infinite SNR is noiseless.
pub fn noise_var(snr_db: f64) -> f64 {
    if snr_db == f64::INFINITY {
        0.0
    } else {
        10f64.powf(-snr_db / 10.0)
    }
}

#[derive(Debug, Clone)]
struct FrameOutcome {
    errors: Vec<u64>,
    bits_per_user: u64,
    nmse: Option<f64>,
}

enum Link {
    Joint(AllocationPlan),
    Interleaved(AllocationPlan),
    Multicarrier(McFrameSpec),
}

struct Simulator<'a> {
    cfg: &'a ExperimentConfig,
    grid: GridSpec,
    alphabet: Alphabet,
    link: Link,
    pilots: Option<PilotPlan>,
    symbols_per_user: usize,
}

impl<'a> Simulator<'a> {
    fn new(cfg: &'a ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let grid = cfg.grid_spec()?;
        let k = cfg.num_users;
        let (link, symbols_per_user) = match cfg.waveform.precoding() {
            None => {
                let plan = make_plan(cfg.scheme, &grid, k)?;
                let spu = plan.symbols_per_user();
                match cfg.scheme {
                    Scheme::Interleaved { .. } => (Link::Interleaved(plan), spu),
                    _ => (Link::Joint(plan), spu),
                }
            }
            Some(precoding) => {
                let spec = McFrameSpec::new(grid, k, cfg.cp_len(), cfg.baseline.mapping, precoding)?;
                let spu = spec.symbols_per_user();
                (Link::Multicarrier(spec), spu)
            }
        };
        let pilots = match &cfg.estimation {
            Some(est) => Some(place_pilots(cfg.scheme, &grid, k, est.alpha_max)?),
            None => None,
        };
        Ok(Self {
            cfg,
            grid,
            alphabet: Alphabet::new(cfg.modulation),
            link,
            pilots,
            symbols_per_user,
        })
    }

    fn draw_channels(&self, rng: &mut SimRng) -> Result<Vec<UserChannel>> {
        (0..self.cfg.num_users)
            .map(|u| draw_channel(&self.cfg.channel, &self.grid, u, rng))
            .collect()
    }

    fn detect(&self, model: &SystemModel, y: &[C64], noise_var: f64) -> Result<Vec<usize>> {
        match &self.cfg.detector {
            Detector::Ml => ml_detect_with_limit(model, y, &self.alphabet, self.cfg.ml_max_bits),
            Detector::Mp(mp) => {
                let thr = self.cfg.mp_support_threshold;
                if thr > 0.0 {
                    Ok(mp_detect(&model.pruned(thr), y, noise_var, &self.alphabet, mp)?.decisions)
                } else {
                    Ok(mp_detect(model, y, noise_var, &self.alphabet, mp)?.decisions)
                }
            }
        }
    }

    /// Pilot frame through `channels`; returns the estimates and their NMSE.
    fn pilot_round(
        &self,
        channels: &[UserChannel],
        pilot_noise: f64,
        rng: &mut SimRng,
    ) -> Result<(Vec<crate::estimation::ChannelEstimate>, f64)> {
        let plan = self.pilots.as_ref().ok_or_else(|| config("no pilot plan configured"))?;
        let rx = receive_pilots(plan, channels, pilot_noise, rng)?;
        let mut est = estimate(&rx, plan)?;
        if let Some(t) = self.cfg.estimation.as_ref().and_then(|e| e.threshold) {
            est.iter_mut().for_each(|e| e.threshold(t));
        }
        let truth = channels
            .iter()
            .enumerate()
            .map(|(u, c)| true_estimate(c, u, plan))
            .collect::<Result<Vec<_>>>()?;
        let err = nmse(&est, &truth)?;
        Ok((est, err))
    }

    /// One data frame. With `pilot_noise`, a pilot frame over the same
    /// channels comes first and detection uses the estimated channel.
    fn frame(&self, rng: &mut SimRng, noise_var: f64, pilot_noise: Option<f64>) -> Result<FrameOutcome> {
        let k = self.cfg.num_users;
        let q = self.alphabet.len();
        let channels = self.draw_channels(rng)?;
        let sent: Vec<Vec<usize>> = (0..k)
            .map(|_| (0..self.symbols_per_user).map(|_| rng.random_range(0..q)).collect())
            .collect();
        let points = |idx: &[usize]| -> Vec<C64> { idx.iter().map(|&i| self.alphabet.point(i)).collect() };
        let mut nmse_value = None;

        let detected: Vec<Vec<usize>> = match &self.link {
            Link::Joint(plan) => {
                let truth = composite_model(plan, &build_system_matrix(&channels, &self.grid)?)?;
                let receiver = match pilot_noise {
                    Some(pn) => {
                        let (est, err) = self.pilot_round(&channels, pn, rng)?;
                        nmse_value = Some(err);
                        Some(composite_model(plan, &rebuild_model(&est, &self.grid))?)
                    }
                    None => None,
                };
                let x: Vec<C64> = sent.iter().flat_map(|s| points(s)).collect();
                let mut y = truth.apply(&x);
                add_awgn(&mut y, noise_var, rng);
                let all = self.detect(receiver.as_ref().unwrap_or(&truth), &y, noise_var)?;
                all.chunks(self.symbols_per_user).map(<[usize]>::to_vec).collect()
            }
            Link::Interleaved(plan) => {
                // Each reduced observation carries noise of variance sigma^2 / K_u.
                let models = plan.scheme3_models(&channels, 0.0)?;
                let nv = noise_var / k as f64;
                let mut out = Vec::with_capacity(k);
                for (model, s) in models.iter().zip(&sent) {
                    let mut y = model.apply(&points(s));
                    add_awgn(&mut y, nv, rng);
                    out.push(self.detect(model, &y, nv)?);
                }
                out
            }
            Link::Multicarrier(spec) => {
                let model = mc_effective_model(spec, &channels, 0.0)?;
                let x: Vec<C64> = sent.iter().flat_map(|s| points(s)).collect();
                let mut y = model.apply(&x);
                add_awgn(&mut y, noise_var, rng);
                let all = self.detect(&model, &y, noise_var)?;
                all.chunks(self.symbols_per_user).map(<[usize]>::to_vec).collect()
            }
        };

        let errors = sent
            .iter()
            .zip(&detected)
            .map(|(s, d)| self.alphabet.count_bit_errors(s, d))
            .collect();
        Ok(FrameOutcome {
            errors,
            bits_per_user: (self.symbols_per_user * self.alphabet.bits_per_symbol() as usize) as u64,
            nmse: nmse_value,
        })
    }

    fn nmse_trial(&self, rng: &mut SimRng, pilot_noise: f64) -> Result<FrameOutcome> {
        let channels = self.draw_channels(rng)?;
        let (_, err) = self.pilot_round(&channels, pilot_noise, rng)?;
        Ok(FrameOutcome {
            errors: vec![0; self.cfg.num_users],
            bits_per_user: 0,
            nmse: Some(err),
        })
    }

    fn record(&self, snr_db: Option<f64>, pilot_snr_db: Option<f64>, hash: &str) -> ResultRecord {
        ResultRecord {
            waveform: self.cfg.waveform.label().to_string(),
            scheme: self.cfg.scheme_label(),
            num_users: self.cfg.num_users,
            n: self.grid.doppler_bins(),
            m: self.grid.delay_bins(),
            snr_db,
            pilot_snr_db,
            frames: 0,
            bit_errors: 0,
            total_bits: 0,
            per_user_bit_errors: vec![0; self.cfg.num_users],
            ber: None,
            ber_std_err: None,
            nmse: None,
            nmse_half_width: None,
            seed: self.cfg.master_seed,
            config_hash: hash.to_string(),
            wall_time_s: 0.0,
            failure: None,
        }
    }
}

/// Running sums over the frames accepted so far.
#[derive(Debug, Default)]
struct Tally {
    frames: u64,
    errors: Vec<u64>,
    total_bits: u64,
    frame_ber_sum: f64,
    frame_ber_sq: f64,
    nmse_sum: f64,
    nmse_sq: f64,
    nmse_count: u64,
}

impl Tally {
    fn add(&mut self, o: &FrameOutcome) {
        if self.errors.is_empty() {
            self.errors = vec![0; o.errors.len()];
        }
        let frame_errors: u64 = o.errors.iter().sum();
        let frame_bits = o.bits_per_user * o.errors.len() as u64;
        self.frames += 1;
        self.errors.iter_mut().zip(&o.errors).for_each(|(a, b)| *a += b);
        self.total_bits += frame_bits;
        if frame_bits > 0 {
            let f = frame_errors as f64 / frame_bits as f64;
            self.frame_ber_sum += f;
            self.frame_ber_sq += f * f;
        }
        if let Some(v) = o.nmse {
            self.nmse_sum += v;
            self.nmse_sq += v * v;
            self.nmse_count += 1;
        }
    }

    fn bit_errors(&self) -> u64 {
        self.errors.iter().sum()
    }

    fn fill(&self, rec: &mut ResultRecord) {
        rec.frames = self.frames;
        rec.per_user_bit_errors = self.errors.clone();
        rec.bit_errors = self.bit_errors();
        rec.total_bits = self.total_bits;
        if self.total_bits > 0 {
            rec.ber = Some(rec.bit_errors as f64 / self.total_bits as f64);
            rec.ber_std_err = Some(std_err(self.frame_ber_sum, self.frame_ber_sq, self.frames));
        }
        if self.nmse_count > 0 {
            rec.nmse = Some(self.nmse_sum / self.nmse_count as f64);
            rec.nmse_half_width = Some(1.96 * std_err(self.nmse_sum, self.nmse_sq, self.nmse_count));
        }
    }
}

/// Standard error of a mean from its sum and sum of squares.
fn std_err(sum: f64, sq: f64, n: u64) -> f64 {
    if n < 2 {
        return f64::NAN;
    }
    let n = n as f64;
    let mean = sum / n;
    let var = ((sq - n * mean * mean) / (n - 1.0)).max(0.0);
    (var / n).sqrt()
}

struct Stop {
    min_frames: u64,
    max_frames: u64,
    target_errors: Option<u64>,
}

fn run_point<F>(pool: &ThreadPool, stop: &Stop, frame: F) -> Result<Tally>
where
    F: Fn(u64) -> Result<FrameOutcome> + Sync,
{
    let batch = 4 * pool.current_num_threads() as u64;
    let mut tally = Tally::default();
    let mut next = 0;
    while next < stop.max_frames {
        let end = (next + batch).min(stop.max_frames);
        let outcomes: Vec<Result<FrameOutcome>> = pool.install(|| (next..end).into_par_iter().map(&frame).collect());
        for outcome in outcomes {
            tally.add(&outcome?);
            let enough_errors = stop.target_errors.is_some_and(|t| tally.bit_errors() >= t);
            if tally.frames >= stop.min_frames && enough_errors {
                return Ok(tally);
            }
        }
        next = end;
    }
    Ok(tally)
}

fn finish(
    mut rec: ResultRecord,
    outcome: Result<Tally>,
    started: Instant,
    opts: &RunOptions,
) -> ResultRecord {
    match outcome {
        Ok(t) => t.fill(&mut rec),
        Err(e) => rec.failure = Some(e.to_string()),
    }
    rec.wall_time_s = started.elapsed().as_secs_f64();
    if !opts.quiet {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x}"));
        match &rec.failure {
            Some(f) => eprintln!(
                "{} {} K_u={} snr={} pilot={}: FAILED: {f}",
                rec.waveform,
                rec.scheme,
                rec.num_users,
                fmt(rec.snr_db),
                fmt(rec.pilot_snr_db)
            ),
            None => eprintln!(
                "{} {} K_u={} snr={} pilot={}: frames={} ber={} nmse={} ({:.1}s)",
                rec.waveform,
                rec.scheme,
                rec.num_users,
                fmt(rec.snr_db),
                fmt(rec.pilot_snr_db),
                rec.frames,
                fmt(rec.ber),
                fmt(rec.nmse),
                rec.wall_time_s
            ),
        }
    }
    rec
}

/// BER against data SNR with perfect channel knowledge at the receiver.
/// A point whose frames fail (for instance an ML search above the guard)
/// is recorded with `failure` set and the sweep moves on.
pub fn run_ber_sweep(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Vec<ResultRecord>> {
    let sim = Simulator::new(cfg)?;
    let pool = opts.pool()?;
    let hash = cfg.hash();
    let stop = Stop {
        min_frames: cfg.stopping.min_frames,
        max_frames: cfg.stopping.max_frames,
        target_errors: Some(cfg.stopping.target_errors),
    };
    let mut records = Vec::with_capacity(cfg.snr_db.len());
    for (i, &snr) in cfg.snr_db.iter().enumerate() {
        let started = Instant::now();
        let nv = noise_var(snr);
        let outcome = run_point(&pool, &stop, |t| {
            sim.frame(&mut trial_rng(cfg.master_seed, i as u64, t), nv, None)
        });
        records.push(finish(sim.record(Some(snr), None, &hash), outcome, started, opts));
    }
    Ok(records)
}

/// Estimation NMSE against pilot SNR, `estimation.trials` channel draws per
/// point. With `estimation.with_ber`, also BER against data SNR for every
/// pilot SNR, detecting with the channel estimated from a preceding pilot
/// frame over the same realization.
pub fn run_mse_sweep(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Vec<ResultRecord>> {
    let est = cfg
        .estimation
        .as_ref()
        .ok_or_else(|| config("an estimation sweep needs an [estimation] section"))?;
    let sim = Simulator::new(cfg)?;
    let pool = opts.pool()?;
    let hash = cfg.hash();
    let mut records = Vec::new();
    let trials = Stop {
        min_frames: est.trials,
        max_frames: est.trials,
        target_errors: None,
    };
    for (p, &pilot_snr) in est.pilot_snr_db.iter().enumerate() {
        let started = Instant::now();
        let pn = noise_var(pilot_snr);
        let stream = (1u64 << 40) | p as u64;
        let outcome = run_point(&pool, &trials, |t| {
            sim.nmse_trial(&mut trial_rng(cfg.master_seed, stream, t), pn)
        });
        records.push(finish(sim.record(None, Some(pilot_snr), &hash), outcome, started, opts));
    }
    if est.with_ber {
        let stop = Stop {
            min_frames: cfg.stopping.min_frames,
            max_frames: cfg.stopping.max_frames,
            target_errors: Some(cfg.stopping.target_errors),
        };
        for &pilot_snr in &est.pilot_snr_db {
            let pn = noise_var(pilot_snr);
            for (i, &snr) in cfg.snr_db.iter().enumerate() {
                let started = Instant::now();
                let nv = noise_var(snr);
                // Same streams as the perfect-CSI sweep: identical channels,
                // payloads and pilots across pilot SNRs.
                let outcome = run_point(&pool, &stop, |t| {
                    sim.frame(&mut trial_rng(cfg.master_seed, i as u64, t), nv, Some(pn))
                });
                records.push(finish(sim.record(Some(snr), Some(pilot_snr), &hash), outcome, started, opts));
            }
        }
    }
    Ok(records)
}

/// The config itself plus OTFS-MA, OFDMA and SC-FDMA variants sharing its
/// channel, grid and detector. OTFS-MA keeps the configured scheme when it
/// is one, otherwise uses the delay-axis allocation.
pub fn waveform_variants(cfg: &ExperimentConfig) -> Vec<ExperimentConfig> {
    [Waveform::Otfs, Waveform::ScFdma, Waveform::Ofdma]
        .into_iter()
        .map(|w| {
            let mut c = cfg.clone();
            c.waveform = w;
            if w == Waveform::Otfs && cfg.waveform != Waveform::Otfs {
                c.scheme = Scheme::DelayAxis;
            }
            c.estimation = None;
            c
        })
        .collect()
}
