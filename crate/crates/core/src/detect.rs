//! Symbol alphabets and joint detectors for `y = Hx + v`.
//!
//! Detectors return one alphabet index per column of the model.

use std::f64::consts::FRAC_1_SQRT_2;

use serde::{Deserialize, Serialize};

use crate::error::invalid;
use crate::model::SystemModel;
use crate::{Error, Result, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modulation {
    Bpsk,
    Qpsk,
    Qam16,
}

/// Unit-energy constellation with Gray bit labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Alphabet {
    modulation: Modulation,
    points: Vec<C64>,
    labels: Vec<u32>,
    bits: u32,
}

fn gray_level(b_hi: u32, b_lo: u32) -> f64 {
    // 00 -> -3, 01 -> -1, 11 -> +1, 10 -> +3
    match (b_hi, b_lo) {
        (0, 0) => -3.0,
        (0, 1) => -1.0,
        (1, 1) => 1.0,
        _ => 3.0,
    }
}

impl Alphabet {
    pub fn new(modulation: Modulation) -> Self {
        let (bits, point): (u32, Box<dyn Fn(u32) -> C64>) = match modulation {
            // bit 0 -> +1
            Modulation::Bpsk => (1, Box::new(|b| C64::new(1.0 - 2.0 * b as f64, 0.0))),
            Modulation::Qpsk => (
                2,
                Box::new(|b| {
                    let re = 1.0 - 2.0 * ((b >> 1) & 1) as f64;
                    let im = 1.0 - 2.0 * (b & 1) as f64;
                    C64::new(re, im) * FRAC_1_SQRT_2
                }),
            ),
            Modulation::Qam16 => (
                4,
                Box::new(|b| {
                    let s = 1.0 / 10f64.sqrt();
                    let re = gray_level((b >> 3) & 1, (b >> 2) & 1);
                    let im = gray_level((b >> 1) & 1, b & 1);
                    C64::new(re, im) * s
                }),
            ),
        };
        let labels: Vec<u32> = (0..1u32 << bits).collect();
        let points = labels.iter().map(|&b| point(b)).collect();
        Self {
            modulation,
            points,
            labels,
            bits,
        }
    }

    pub fn bpsk() -> Self {
        Self::new(Modulation::Bpsk)
    }

    pub fn qpsk() -> Self {
        Self::new(Modulation::Qpsk)
    }

    pub fn modulation(&self) -> Modulation {
        self.modulation
    }

    pub fn points(&self) -> &[C64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bits_per_symbol(&self) -> u32 {
        self.bits
    }

    pub fn point(&self, idx: usize) -> C64 {
        self.points[idx]
    }

    /// Bit label of symbol `idx`, most significant bit first.
    pub fn label(&self, idx: usize) -> u32 {
        self.labels[idx]
    }

    /// Symbol indices for a bit stream; its length must be a multiple of
    /// the bits per symbol.
    pub fn map_bits(&self, bits: &[u8]) -> Result<Vec<usize>> {
        let b = self.bits as usize;
        if !bits.len().is_multiple_of(b) {
            return Err(invalid(format!("{} bits do not fill {b}-bit symbols", bits.len())));
        }
        Ok(bits
            .chunks(b)
            .map(|chunk| {
                let label = chunk.iter().fold(0u32, |acc, &bit| (acc << 1) | u32::from(bit & 1));
                self.labels.iter().position(|&l| l == label).expect("every label present")
            })
            .collect())
    }

    /// Index of the nearest point.
    pub fn slice(&self, z: C64) -> usize {
        let mut best = 0;
        for (i, p) in self.points.iter().enumerate() {
            if (z - p).norm_sqr() < (z - self.points[best]).norm_sqr() {
                best = i;
            }
        }
        best
    }

    /// Number of differing bits between two symbols.
    pub fn bit_errors(&self, a: usize, b: usize) -> u32 {
        (self.labels[a] ^ self.labels[b]).count_ones()
    }

    /// Bit errors summed over two index sequences.
    pub fn count_bit_errors(&self, sent: &[usize], detected: &[usize]) -> u64 {
        sent.iter()
            .zip(detected)
            .map(|(&a, &b)| u64::from(self.bit_errors(a, b)))
            .sum()
    }
}

/// Exhaustive searches above this many bits are refused.
pub const ML_MAX_BITS: usize = 20;

/// Iterations between full recomputations of the running residual.
const RESYNC_PERIOD: usize = 4096;

fn residual(model: &SystemModel, y: &[C64], x: &[C64]) -> Vec<C64> {
    let hx = model.apply(x);
    y.iter().zip(hx).map(|(a, b)| a - b).collect()
}

fn check_observation(model: &SystemModel, y: &[C64]) -> Result<()> {
    if y.len() != model.n_rows() {
        return Err(invalid(format!(
            "observation has {} entries, model has {} rows",
            y.len(),
            model.n_rows()
        )));
    }
    Ok(())
}

/// Exhaustive maximum-likelihood detection, `argmin ||y - Hx||^2` over
/// `A^d`, refusing searches above [`ML_MAX_BITS`].
pub fn ml_detect(model: &SystemModel, y: &[C64], alphabet: &Alphabet) -> Result<Vec<usize>> {
    ml_detect_with_limit(model, y, alphabet, ML_MAX_BITS)
}

/// [`ml_detect`] with an explicit search-space limit in bits.
///
/// Candidates are visited in reflected Gray order so each step changes one
/// symbol and updates the residual in place. Exact ties go to the
/// lexicographically smallest index vector.
pub fn ml_detect_with_limit(model: &SystemModel, y: &[C64], alphabet: &Alphabet, max_bits: usize) -> Result<Vec<usize>> {
    check_observation(model, y)?;
    let d = model.n_cols();
    let q = alphabet.len();
    let bits = d * alphabet.bits_per_symbol() as usize;
    if bits > max_bits {
        return Err(Error::SearchSpace { bits, max_bits });
    }
    if d == 0 {
        return Ok(Vec::new());
    }
    let pts = alphabet.points();

    let mut digits = vec![0usize; d];
    let mut x = vec![pts[0]; d];
    let mut r = residual(model, y, &x);
    let mut metric: f64 = r.iter().map(|v| v.norm_sqr()).sum();
    let mut best = digits.clone();
    let mut best_metric = metric;

    // Loopless reflected mixed-radix Gray enumeration.
    let mut focus: Vec<usize> = (0..=d).collect();
    let mut dir = vec![1isize; d];
    let mut step = 0usize;
    loop {
        let j = focus[0];
        focus[0] = 0;
        if j == d {
            break;
        }
        let new = (digits[j] as isize + dir[j]) as usize;
        let delta = pts[new] - pts[digits[j]];
        digits[j] = new;
        x[j] = pts[new];
        for &(s, h) in model.col_support(j) {
            let before = r[s].norm_sqr();
            r[s] -= h * delta;
            metric += r[s].norm_sqr() - before;
        }
        if new == 0 || new == q - 1 {
            dir[j] = -dir[j];
            focus[j] = focus[j + 1];
            focus[j + 1] = j + 1;
        }
        step += 1;
        if step.is_multiple_of(RESYNC_PERIOD) {
            r = residual(model, y, &x);
            metric = r.iter().map(|v| v.norm_sqr()).sum();
        }
        if metric < best_metric || (metric == best_metric && digits < best) {
            best_metric = metric;
            best.copy_from_slice(&digits);
        }
    }
    Ok(best)
}

/// Message-passing parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MpConfig {
    /// Weight of the fresh message in the damped update.
    pub damping: f64,
    pub max_iterations: usize,
    /// Stop once no message moves by more than this.
    pub tolerance: f64,
}

impl Default for MpConfig {
    fn default() -> Self {
        Self {
            damping: 0.7,
            max_iterations: 30,
            tolerance: 1e-3,
        }
    }
}

impl MpConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            out.push(format!("MP damping must lie in (0, 1], got {}", self.damping));
        }
        if self.max_iterations == 0 {
            out.push("MP max_iterations must be at least 1".to_string());
        }
        if !(self.tolerance >= 0.0) {
            out.push(format!("MP tolerance must be non-negative, got {}", self.tolerance));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct MpOutput {
    pub decisions: Vec<usize>,
    /// Final symbol posteriors, one per column.
    pub pmfs: Vec<Vec<f64>>,
    pub iterations: usize,
    pub converged: bool,
}

/// Smallest noise variance used by the Gaussian approximation.
pub const MP_NOISE_FLOOR: f64 = 1e-12;

/// Gaussian-approximation message passing over the factor graph of `H`.
///
/// Observation nodes treat interference as Gaussian with leave-one-out
/// mean and variance; variable nodes combine the resulting likelihoods in
/// the log domain. Messages are damped as
/// `p = damping * fresh + (1 - damping) * old`.
pub fn mp_detect(
    model: &SystemModel,
    y: &[C64],
    noise_var: f64,
    alphabet: &Alphabet,
    cfg: &MpConfig,
) -> Result<MpOutput> {
    check_observation(model, y)?;
    let problems = cfg.problems();
    if !problems.is_empty() {
        return Err(invalid(problems.join("; ")));
    }
    if !(noise_var >= 0.0) {
        return Err(invalid(format!("noise variance must be non-negative, got {noise_var}")));
    }
    let noise_var = noise_var.max(MP_NOISE_FLOOR);
    let pts = alphabet.points();
    let q = pts.len();
    let d = model.n_cols();

    // Edges numbered column by column.
    let mut edge_start = Vec::with_capacity(d + 1);
    edge_start.push(0);
    for r in 0..d {
        edge_start.push(edge_start[r] + model.col_support(r).len());
    }
    let n_edges = edge_start[d];
    let mut row_edges: Vec<Vec<(usize, usize, C64)>> = vec![Vec::new(); model.n_rows()];
    for r in 0..d {
        for (i, &(s, h)) in model.col_support(r).iter().enumerate() {
            row_edges[s].push((r, edge_start[r] + i, h));
        }
    }

    let mut pmf = vec![1.0 / q as f64; n_edges * q];
    let mut mu = vec![C64::new(0.0, 0.0); n_edges];
    let mut var = vec![0.0; n_edges];
    let mut loglik = vec![0.0; n_edges * q];

    let observe = |pmf: &[f64], mu: &mut [C64], var: &mut [f64]| {
        for (s, edges) in row_edges.iter().enumerate() {
            let mut mean_e = Vec::with_capacity(edges.len());
            let mut total_mean = C64::new(0.0, 0.0);
            let mut total_var = 0.0;
            for &(_, e, h) in edges {
                let p = &pmf[e * q..(e + 1) * q];
                let m: C64 = p.iter().zip(pts).map(|(w, a)| a * *w).sum();
                let second: f64 = p.iter().zip(pts).map(|(w, a)| w * a.norm_sqr()).sum();
                let hm = h * m;
                let v = h.norm_sqr() * (second - m.norm_sqr()).max(0.0);
                total_mean += hm;
                total_var += v;
                mean_e.push((hm, v));
            }
            for (&(_, e, _), &(hm, v)) in edges.iter().zip(&mean_e) {
                mu[e] = y[s] - (total_mean - hm);
                var[e] = (total_var - v).max(0.0) + noise_var;
            }
        }
    };

    let fill_loglik = |mu: &[C64], var: &[f64], loglik: &mut [f64]| {
        for r in 0..d {
            for (i, &(_, h)) in model.col_support(r).iter().enumerate() {
                let e = edge_start[r] + i;
                for (j, a) in pts.iter().enumerate() {
                    loglik[e * q + j] = -(mu[e] - h * a).norm_sqr() / var[e];
                }
            }
        }
    };

    let normalize_log = |logp: &mut [f64]| {
        let max = logp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in logp.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        logp.iter_mut().for_each(|v| *v /= sum);
    };

    let mut iterations = 0;
    let mut converged = false;
    let mut total = vec![0.0; q];
    let mut fresh = vec![0.0; q];
    while iterations < cfg.max_iterations {
        iterations += 1;
        observe(&pmf, &mut mu, &mut var);
        fill_loglik(&mu, &var, &mut loglik);
        let mut max_change = 0.0f64;
        for r in 0..d {
            let (lo, hi) = (edge_start[r], edge_start[r + 1]);
            total.iter_mut().for_each(|t| *t = 0.0);
            for e in lo..hi {
                total.iter_mut().zip(&loglik[e * q..(e + 1) * q]).for_each(|(t, l)| *t += l);
            }
            for e in lo..hi {
                for j in 0..q {
                    fresh[j] = total[j] - loglik[e * q + j];
                }
                normalize_log(&mut fresh);
                for j in 0..q {
                    let old = pmf[e * q + j];
                    let new = cfg.damping * fresh[j] + (1.0 - cfg.damping) * old;
                    max_change = max_change.max((new - old).abs());
                    pmf[e * q + j] = new;
                }
            }
        }
        if max_change < cfg.tolerance {
            converged = true;
            break;
        }
    }

    observe(&pmf, &mut mu, &mut var);
    fill_loglik(&mu, &var, &mut loglik);
    let mut pmfs = Vec::with_capacity(d);
    let mut decisions = Vec::with_capacity(d);
    for r in 0..d {
        let mut post = vec![0.0; q];
        for e in edge_start[r]..edge_start[r + 1] {
            post.iter_mut().zip(&loglik[e * q..(e + 1) * q]).for_each(|(t, l)| *t += l);
        }
        normalize_log(&mut post);
        let mut best = 0;
        for j in 1..q {
            if post[j] > post[best] {
                best = j;
            }
        }
        decisions.push(best);
        pmfs.push(post);
    }
    Ok(MpOutput {
        decisions,
        pmfs,
        iterations,
        converged,
    })
}

/// Detector choice for simulations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Detector {
    Ml,
    Mp(MpConfig),
}

impl Detector {
    pub fn detect(&self, model: &SystemModel, y: &[C64], noise_var: f64, alphabet: &Alphabet) -> Result<Vec<usize>> {
        match self {
            Detector::Ml => ml_detect(model, y, alphabet),
            Detector::Mp(cfg) => Ok(mp_detect(model, y, noise_var, alphabet, cfg)?.decisions),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Detector::Ml => "ml",
            Detector::Mp(_) => "mp",
        }
    }
}

/// Runs `detector` separately on each user's reduced model. Interleaved
/// allocations see `noise_var / (g1 g2)` on their reduced observations,
/// and the caller passes that scaled value.
pub fn detect_per_user(
    models: &[SystemModel],
    observations: &[Vec<C64>],
    noise_var: f64,
    alphabet: &Alphabet,
    detector: &Detector,
) -> Result<Vec<Vec<usize>>> {
    if models.len() != observations.len() {
        return Err(invalid(format!(
            "{} models for {} observations",
            models.len(),
            observations.len()
        )));
    }
    models
        .iter()
        .zip(observations)
        .map(|(model, y)| detector.detect(model, y, noise_var, alphabet))
        .collect()
}
