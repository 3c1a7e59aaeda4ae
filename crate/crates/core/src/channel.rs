//! Doubly-dispersive user channels in the delay-Doppler domain.
//!
//! A channel is a short list of paths, each with a complex gain, an integer
//! delay index `alpha` (delay `alpha / (M delta_f)`) and a Doppler shift
//! `(beta + b) / (N T)` split into an integer part `beta` and a fractional
//! part `b` in `(-1/2, 1/2]`. Fractional Doppler leaks every path across all
//! `N` Doppler bins through a Dirichlet kernel.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::config;
use crate::model::SparseMatrix;
use crate::rng::complex_gaussian;
use crate::transforms::{check_interleaving, cis, DDFrame, GridSpec};
use crate::{Result, C64};

/// Below this, a fractional Doppler is treated as exactly zero.
const INTEGER_DOPPLER_EPS: f64 = 1e-12;

/// One propagation path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelTap {
    pub gain: C64,
    /// Delay in units of `1/(M delta_f)`.
    pub delay_index: usize,
    /// Integer Doppler in units of `1/(N T)`.
    pub doppler_index: i64,
    /// Fractional Doppler in `(-1/2, 1/2]`.
    pub fractional_doppler: f64,
}

impl ChannelTap {
    /// Path with integer delay and integer Doppler.
    pub fn integer(gain: C64, delay_index: usize, doppler_index: i64) -> Self {
        Self {
            gain,
            delay_index,
            doppler_index,
            fractional_doppler: 0.0,
        }
    }

    /// Quantizes a physical path onto the grid. Delays round to the nearest
    /// delay bin; the Doppler `nu * N * T` splits into `beta + b`.
    pub fn from_physical(gain: C64, delay_s: f64, doppler_hz: f64, grid: &GridSpec) -> Result<Self> {
        let m = grid.delay_bins();
        let alpha = (delay_s / grid.delay_resolution()).round();
        if !(0.0..m as f64).contains(&alpha) {
            return Err(config(format!(
                "path delay {delay_s:e} s maps to delay index {alpha}, outside 0..{}",
                m - 1
            )));
        }
        let (beta, b) = split_doppler(doppler_hz / grid.doppler_resolution());
        Ok(Self {
            gain,
            delay_index: alpha as usize,
            doppler_index: beta,
            fractional_doppler: b,
        })
    }

    /// Doppler in units of `1/(N T)`, i.e. `beta + b`.
    pub fn normalized_doppler(&self) -> f64 {
        self.doppler_index as f64 + self.fractional_doppler
    }

    pub fn delay_s(&self, grid: &GridSpec) -> f64 {
        self.delay_index as f64 * grid.delay_resolution()
    }

    pub fn doppler_hz(&self, grid: &GridSpec) -> f64 {
        self.normalized_doppler() * grid.doppler_resolution()
    }

    /// `h * exp(-j2pi tau nu)`; `tau nu = alpha (beta + b) / (MN)` since `T delta_f = 1`.
    fn phased_gain(&self, grid: &GridSpec) -> C64 {
        let tau_nu = self.delay_index as f64 * self.normalized_doppler() / grid.len() as f64;
        self.gain * cis(-tau_nu)
    }

    fn check(&self, grid: &GridSpec) -> Result<()> {
        if self.delay_index >= grid.delay_bins() {
            return Err(config(format!(
                "delay index {} outside grid with M={}",
                self.delay_index,
                grid.delay_bins()
            )));
        }
        if !(self.fractional_doppler > -0.5 && self.fractional_doppler <= 0.5) {
            return Err(config(format!(
                "fractional Doppler {} outside (-1/2, 1/2]",
                self.fractional_doppler
            )));
        }
        Ok(())
    }
}

/// Splits a Doppler in grid units into `(beta, b)` with `b` in `(-1/2, 1/2]`.
pub fn split_doppler(x: f64) -> (i64, f64) {
    let mut beta = x.round();
    let mut b = x - beta;
    if b <= -0.5 {
        b += 1.0;
        beta -= 1.0;
    }
    (beta as i64, b)
}

/// All paths between one user and the base station.
#[derive(Debug, Clone, PartialEq)]
pub struct UserChannel {
    pub user_id: usize,
    pub taps: Vec<ChannelTap>,
}

impl UserChannel {
    /// Single unit path with no delay or Doppler.
    pub fn identity(user_id: usize) -> Self {
        Self {
            user_id,
            taps: vec![ChannelTap::integer(C64::new(1.0, 0.0), 0, 0)],
        }
    }

    pub fn max_delay_index(&self) -> usize {
        self.taps.iter().map(|t| t.delay_index).max().unwrap_or(0)
    }

    pub fn check(&self, grid: &GridSpec) -> Result<()> {
        self.taps.iter().try_for_each(|t| t.check(grid))
    }
}

/// Statistical description of a user channel: exponential power-delay
/// profile and Jakes Doppler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelProfile {
    /// Path delays in seconds; the first is zero, the rest nondecreasing.
    pub delays_s: Vec<f64>,
    /// Decay constant of the power-delay profile in seconds. Defaults to the
    /// largest path delay.
    #[serde(default)]
    pub pdp_decay_s: Option<f64>,
    /// Maximum Doppler shift in Hz.
    pub nu_max_hz: f64,
}

impl ChannelProfile {
    pub fn tap_count(&self) -> usize {
        self.delays_s.len()
    }

    /// Collects every violated constraint.
    pub fn problems(&self, grid: &GridSpec) -> Vec<String> {
        let mut out = Vec::new();
        match self.delays_s.first() {
            None => out.push("channel profile has no paths".to_string()),
            Some(&d) if d != 0.0 => out.push(format!("first path delay must be 0, got {d}")),
            _ => {}
        }
        if self.delays_s.windows(2).any(|w| w[1] < w[0]) {
            out.push("path delays must be nondecreasing".to_string());
        }
        if let Some(&max) = self.delays_s.last() {
            let alpha = (max / grid.delay_resolution()).round();
            if alpha >= grid.delay_bins() as f64 {
                out.push(format!(
                    "largest path delay {max:e} s maps to delay index {alpha} >= M={}",
                    grid.delay_bins()
                ));
            }
        }
        if !(self.nu_max_hz >= 0.0 && self.nu_max_hz < grid.delta_f()) {
            out.push(format!(
                "maximum Doppler {} Hz must be in [0, delta_f = {} Hz)",
                self.nu_max_hz,
                grid.delta_f()
            ));
        }
        if let Some(d) = self.pdp_decay_s {
            if !(d > 0.0) {
                out.push(format!("power-delay decay constant must be positive, got {d}"));
            }
        }
        out
    }

    pub fn check(&self, grid: &GridSpec) -> Result<()> {
        let problems = self.problems(grid);
        if problems.is_empty() {
            Ok(())
        } else {
            Err(config(problems.join("; ")))
        }
    }

    /// Normalized path powers `p_i ~ exp(-tau_i / tau_p)`, summing to one.
    pub fn tap_powers(&self) -> Vec<f64> {
        let tau_p = self
            .pdp_decay_s
            .unwrap_or_else(|| self.delays_s.iter().copied().fold(0.0, f64::max));
        let raw: Vec<f64> = self
            .delays_s
            .iter()
            .map(|&d| if tau_p > 0.0 { (-d / tau_p).exp() } else { 1.0 })
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|p| p / total).collect()
    }

    /// Paths quantized onto the delay grid as `(delay_index, power)`. Paths
    /// landing on the same delay bin are merged into one with the summed
    /// power.
    pub fn quantized_taps(&self, grid: &GridSpec) -> Result<Vec<(usize, f64)>> {
        self.check(grid)?;
        let mut out: Vec<(usize, f64)> = Vec::new();
        for (&d, p) in self.delays_s.iter().zip(self.tap_powers()) {
            let alpha = (d / grid.delay_resolution()).round() as usize;
            match out.last_mut() {
                Some(last) if last.0 == alpha => last.1 += p,
                _ => out.push((alpha, p)),
            }
        }
        Ok(out)
    }
}

/// Draws one channel realization: independent CN(0, p_i) gains and Jakes
/// Dopplers `nu_max cos(theta)` with `theta` uniform on `[-pi, pi]`.
pub fn draw_channel<R: Rng + ?Sized>(
    profile: &ChannelProfile,
    grid: &GridSpec,
    user_id: usize,
    rng: &mut R,
) -> Result<UserChannel> {
    let quantized = profile.quantized_taps(grid)?;
    let mut taps = Vec::with_capacity(quantized.len());
    for (alpha, power) in quantized {
        let gain = complex_gaussian(rng, power);
        let theta = rng.random_range(-PI..PI);
        let nu = profile.nu_max_hz * theta.cos();
        let (beta, b) = split_doppler(nu / grid.doppler_resolution());
        taps.push(ChannelTap {
            gain,
            delay_index: alpha,
            doppler_index: beta,
            fractional_doppler: b,
        });
    }
    Ok(UserChannel { user_id, taps })
}

/// Doppler spreading coefficient for offset `q` and fractional Doppler `b`:
/// `(e^{j2pi(q+b)} - 1) / (N e^{j2pi(q+b)/N} - N)`, i.e. the normalized
/// geometric sum `(1/N) sum_n e^{j2pi n (q+b)/N}`. At integer Doppler it
/// collapses to `delta(q mod N)`.
pub fn dirichlet_coeff(q: usize, b: f64, n: usize) -> C64 {
    if b.abs() < INTEGER_DOPPLER_EPS {
        return if q.is_multiple_of(n) {
            C64::new(1.0, 0.0)
        } else {
            C64::new(0.0, 0.0)
        };
    }
    let x = q as f64 + b;
    let den = n as f64 * (PI * x / n as f64).sin();
    if den.abs() < 1e-12 {
        return C64::new(1.0, 0.0);
    }
    // sin(pi (q + b)) = (-1)^q sin(pi b), exact for integer q.
    let sign = if q.is_multiple_of(2) { 1.0 } else { -1.0 };
    let mag = sign * (PI * b).sin() / den;
    C64::from_polar(1.0, PI * x * (n as f64 - 1.0) / n as f64) * mag
}

/// Per-user effective matrices `H_u` with `y = sum_u H_u x_u` over the flat
/// `k + N l` vectorization.
pub fn build_system_matrix(channels: &[UserChannel], grid: &GridSpec) -> Result<Vec<SparseMatrix>> {
    channels.iter().map(|ch| build_user_matrix(ch, grid)).collect()
}

fn build_user_matrix(channel: &UserChannel, grid: &GridSpec) -> Result<SparseMatrix> {
    channel.check(grid)?;
    let (n, m) = (grid.doppler_bins(), grid.delay_bins());
    let mut cols: Vec<Vec<(usize, C64)>> = vec![Vec::new(); grid.len()];
    for tap in &channel.taps {
        let g = tap.phased_gain(grid);
        let spread: Vec<(usize, C64)> = (0..n)
            .map(|q| (q, dirichlet_coeff(q, tap.fractional_doppler, n) * g))
            .filter(|(_, v)| *v != C64::new(0.0, 0.0))
            .collect();
        for l_in in 0..m {
            let l_out = (l_in + tap.delay_index) % m;
            for k_in in 0..n {
                let col = &mut cols[grid.flat_index(k_in, l_in)];
                for &(q, v) in &spread {
                    // Input k_in = k - beta + q feeds output k.
                    let k_out = (k_in as i64 + tap.doppler_index - q as i64).rem_euclid(n as i64) as usize;
                    col.push((grid.flat_index(k_out, l_out), v));
                }
            }
        }
    }
    Ok(SparseMatrix::from_column_entries(grid.len(), cols))
}

/// Literal evaluation of the delay-Doppler input-output relation, summed
/// over users (noiseless).
pub fn apply_channel_direct(channels: &[UserChannel], grid: &GridSpec, frames: &[DDFrame]) -> Result<DDFrame> {
    if channels.len() != frames.len() {
        return Err(crate::error::invalid(format!(
            "{} channels for {} frames",
            channels.len(),
            frames.len()
        )));
    }
    let (n, m) = (grid.doppler_bins(), grid.delay_bins());
    let mut out = DDFrame::zeros(*grid);
    for (ch, frame) in channels.iter().zip(frames) {
        ch.check(grid)?;
        if frame.grid().doppler_bins() != n || frame.grid().delay_bins() != m {
            return Err(crate::error::invalid("frame does not match grid"));
        }
        let x = frame.symbols();
        let y = out.symbols_mut();
        for k in 0..n {
            for l in 0..m {
                let mut acc = C64::new(0.0, 0.0);
                for tap in &ch.taps {
                    let g = tap.phased_gain(grid);
                    let l_in = (l as i64 - tap.delay_index as i64).rem_euclid(m as i64) as usize;
                    for q in 0..n {
                        let k_in = (k as i64 - tap.doppler_index + q as i64).rem_euclid(n as i64) as usize;
                        acc += dirichlet_coeff(q, tap.fractional_doppler, n) * g * x[[k_in, l_in]];
                    }
                }
                y[[k, l]] += acc;
            }
        }
    }
    Ok(out)
}

/// Sampled delay-Doppler kernel `K[dk, dl]` of one user, so that
/// `y[k,l] = sum x[k', l'] K[(k-k')_N, (l-l')_M]`. The scaled kernel
/// `MN * K` is the channel read out by an impulse pilot.
pub fn delay_doppler_kernel(channel: &UserChannel, grid: &GridSpec) -> Result<Array2<C64>> {
    channel.check(grid)?;
    let (n, m) = (grid.doppler_bins(), grid.delay_bins());
    let mut kernel = Array2::zeros((n, m));
    for tap in &channel.taps {
        let g = tap.phased_gain(grid);
        for q in 0..n {
            let dk = (tap.doppler_index - q as i64).rem_euclid(n as i64) as usize;
            kernel[[dk, tap.delay_index]] += dirichlet_coeff(q, tap.fractional_doppler, n) * g;
        }
    }
    Ok(kernel)
}

/// Reduced `(MN/K_u) x (MN/K_u)` matrix of one user under the interleaved
/// allocation, mapping the user's symbols `x~[p,q]` (flat `p + (N/g2) q`)
/// to the output of [`crate::transforms::restricted_sfft`] over its region.
///
/// The kernel is `h^[r,s] = sum_i h_i phase_i F_i[s] G_i[r]` with
/// `F_i[s] = (1/M) sum_{m<M/g1} e^{-j2pi m ((u mod g1)/M - s/(M/g1) + tau_i delta_f)}`,
/// `G_i[r] = (1/N) sum_{n<N/g2} e^{j2pi n (floor(u/g1)/N - r/(N/g2) + nu_i T)}`,
/// followed by a circular 2D convolution modulo `(N/g2, M/g1)`.
pub fn build_scheme3_matrix(
    channel: &UserChannel,
    grid: &GridSpec,
    g1: usize,
    g2: usize,
    user: usize,
) -> Result<Array2<C64>> {
    check_interleaving(grid, g1, g2, user)?;
    channel.check(grid)?;
    let (n, m) = (grid.doppler_bins(), grid.delay_bins());
    let (n_red, m_red) = (n / g2, m / g1);
    // Comb offsets in delay-Doppler and block indices in time-frequency.
    let (k0, l0) = (user / g1, user % g1);
    let (n0, m0) = (user % g2, user / g2);

    let mut hhat: Array2<C64> = Array2::zeros((n_red, m_red));
    for tap in &channel.taps {
        let tau_df = tap.delay_index as f64 / m as f64;
        let nu_t = tap.normalized_doppler() / n as f64;
        let phase = tap.gain
            * cis(-(tau_df * nu_t + tau_df * (m_red * m0) as f64 - nu_t * (n_red * n0) as f64));
        let f: Vec<C64> = (0..m_red)
            .map(|s| {
                let rate = l0 as f64 / m as f64 - s as f64 / m_red as f64 + tau_df;
                (0..m_red).map(|mm| cis(-(mm as f64) * rate)).sum::<C64>() / m as f64
            })
            .collect();
        let g: Vec<C64> = (0..n_red)
            .map(|r| {
                let rate = k0 as f64 / n as f64 - r as f64 / n_red as f64 + nu_t;
                (0..n_red).map(|nn| cis(nn as f64 * rate)).sum::<C64>() / n as f64
            })
            .collect();
        for r in 0..n_red {
            for s in 0..m_red {
                hhat[[r, s]] += phase * f[s] * g[r];
            }
        }
    }
    // Constant phase from the comb offset seen from the user's TF block; it
    // vanishes when g1 = g2.
    let offset = cis((n0 * k0) as f64 / g2 as f64 - (m0 * l0) as f64 / g1 as f64);
    hhat.mapv_inplace(|v| v * offset);

    let dim = n_red * m_red;
    Ok(Array2::from_shape_fn((dim, dim), |(row, col)| {
        let (ko, lo) = (row % n_red, row / n_red);
        let (ki, li) = (col % n_red, col / n_red);
        hhat[[(ko + n_red - ki) % n_red, (lo + m_red - li) % m_red]]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::trial_rng;

    fn grid(n: usize, m: usize) -> GridSpec {
        GridSpec::new(n, m, 15e3, 4e9).unwrap()
    }

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    // Literal ratio as written in the input-output relation.
    fn dirichlet_ratio(q: usize, b: f64, n: usize) -> C64 {
        let x = q as f64 + b;
        (cis(x) - 1.0) / (cis(x / n as f64) * n as f64 - n as f64)
    }

    fn dirichlet_geometric(q: usize, b: f64, n: usize) -> C64 {
        (0..n).map(|i| cis(i as f64 * (q as f64 + b) / n as f64)).sum::<C64>() / n as f64
    }

    #[test]
    fn dirichlet_integer_limits() {
        assert_eq!(dirichlet_coeff(0, 0.0, 8), c(1.0, 0.0));
        assert_eq!(dirichlet_coeff(3, 0.0, 8), c(0.0, 0.0));
    }

    #[test]
    fn dirichlet_matches_ratio_and_geometric_sum() {
        let expect = dirichlet_geometric(1, 0.3, 4);
        assert!((dirichlet_coeff(1, 0.3, 4) - expect).norm() < 1e-14);
        for &n in &[4usize, 8, 16] {
            for &b in &[-0.49, -0.2, 1e-6, 0.17, 0.5] {
                for q in 0..n {
                    let v = dirichlet_coeff(q, b, n);
                    // The literal ratio cancels badly as b -> 0.
                    let tol = if b.abs() < 1e-3 { 1e-8 } else { 1e-10 };
                    assert!((v - dirichlet_ratio(q, b, n)).norm() < tol, "q={q} b={b}");
                    assert!((v - dirichlet_geometric(q, b, n)).norm() < 1e-12, "q={q} b={b}");
                }
            }
        }
    }

    #[test]
    fn dirichlet_energy_is_one() {
        let mut rng = trial_rng(11, 0, 0);
        for _ in 0..100 {
            let b: f64 = 0.5 - rng.random::<f64>();
            for &n in &[4usize, 8, 16] {
                let e: f64 = (0..n).map(|q| dirichlet_coeff(q, b, n).norm_sqr()).sum();
                assert!((e - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn doppler_split_keeps_fraction_in_range() {
        assert_eq!(split_doppler(0.0), (0, 0.0));
        assert_eq!(split_doppler(2.25), (2, 0.25));
        let (beta, b) = split_doppler(0.5);
        assert_eq!((beta, b), (0, 0.5));
        let (beta, b) = split_doppler(-0.5);
        assert_eq!((beta, b), (-1, 0.5));
        let (beta, b) = split_doppler(-1.3);
        assert_eq!(beta, -1);
        assert!((b + 0.3).abs() < 1e-12);
    }

    #[test]
    fn profile_delays_round_to_grid() {
        let g = GridSpec::new(16, 64, 15e3, 4e9).unwrap();
        let delays = [0.0, 1.04, 2.08, 3.12, 4.16, 5.2, 6.25, 7.29, 8.33, 9.37];
        let p = ChannelProfile {
            delays_s: delays.iter().map(|d| d * 1e-6).collect(),
            pdp_decay_s: None,
            nu_max_hz: 1e3,
        };
        let q = p.quantized_taps(&g).unwrap();
        let alphas: Vec<usize> = q.iter().map(|t| t.0).collect();
        assert_eq!(alphas, (0..10).collect::<Vec<_>>());
        let total: f64 = q.iter().map(|t| t.1).sum();
        assert!((total - 1.0).abs() < 1e-12);
        // Powers decay with delay.
        assert!(q.windows(2).all(|w| w[1].1 < w[0].1));
    }

    #[test]
    fn colliding_delays_merge_powers() {
        let g = grid(8, 32);
        let res = g.delay_resolution();
        let p = ChannelProfile {
            delays_s: vec![0.0, 0.2 * res, 1.0 * res, 1.1 * res],
            pdp_decay_s: Some(res),
            nu_max_hz: 0.0,
        };
        let powers = p.tap_powers();
        let q = p.quantized_taps(&g).unwrap();
        assert_eq!(q.len(), 2);
        assert!((q[0].1 - (powers[0] + powers[1])).abs() < 1e-15);
        assert!((q[1].1 - (powers[2] + powers[3])).abs() < 1e-15);
    }

    #[test]
    fn profile_validation_reports_each_problem() {
        let g = grid(4, 4);
        let p = ChannelProfile {
            delays_s: vec![1e-6, 0.0, 1.0],
            pdp_decay_s: Some(-1.0),
            nu_max_hz: 20e3,
        };
        assert_eq!(p.problems(&g).len(), 5);
        assert!(draw_channel(&p, &g, 0, &mut trial_rng(0, 0, 0)).is_err());
    }

    #[test]
    fn static_single_path_draw() {
        let g = grid(4, 4);
        let p = ChannelProfile {
            delays_s: vec![0.0],
            pdp_decay_s: None,
            nu_max_hz: 0.0,
        };
        let mut rng = trial_rng(3, 0, 0);
        let mut power = 0.0;
        let draws = 20_000;
        for _ in 0..draws {
            let ch = draw_channel(&p, &g, 0, &mut rng).unwrap();
            assert_eq!(ch.taps.len(), 1);
            let t = ch.taps[0];
            assert_eq!((t.delay_index, t.doppler_index), (0, 0));
            assert_eq!(t.fractional_doppler, 0.0);
            power += t.gain.norm_sqr();
        }
        assert!((power / draws as f64 - 1.0).abs() < 0.03);
    }

    #[test]
    fn drawn_dopplers_respect_max_shift() {
        let g = grid(16, 64);
        let p = ChannelProfile {
            delays_s: vec![0.0, 2e-6, 5e-6],
            pdp_decay_s: None,
            nu_max_hz: 1e3,
        };
        let bound = 1e3 * 16.0 / 15e3;
        let mut rng = trial_rng(4, 0, 0);
        for _ in 0..2000 {
            for t in draw_channel(&p, &g, 0, &mut rng).unwrap().taps {
                assert!(t.normalized_doppler().abs() <= bound + 1e-12);
                assert!(t.fractional_doppler > -0.5 && t.fractional_doppler <= 0.5);
            }
        }
    }

    #[test]
    fn unit_channel_power_on_average() {
        let g = grid(16, 64);
        let p = ChannelProfile {
            delays_s: (0..10).map(|i| i as f64 * 1.04e-6).collect(),
            pdp_decay_s: None,
            nu_max_hz: 1e3,
        };
        let mut rng = trial_rng(5, 0, 0);
        let draws = 10_000;
        let total: f64 = (0..draws)
            .map(|_| draw_channel(&p, &g, 0, &mut rng).unwrap().taps.iter().map(|t| t.gain.norm_sqr()).sum::<f64>())
            .sum();
        assert!((total / draws as f64 - 1.0).abs() < 0.02);
    }

    #[test]
    fn identity_channel_gives_identity_matrix() {
        let g = grid(4, 4);
        let h = build_system_matrix(&[UserChannel::identity(0)], &g).unwrap();
        let dense = h[0].to_dense();
        for ((r, c_), v) in dense.indexed_iter() {
            let expect = if r == c_ { 1.0 } else { 0.0 };
            assert_eq!(*v, c(expect, 0.0));
        }
    }

    #[test]
    fn pure_delay_is_cyclic_shift() {
        let g = grid(2, 2);
        let ch = UserChannel {
            user_id: 0,
            taps: vec![ChannelTap::integer(c(1.0, 0.0), 1, 0)],
        };
        let h = build_system_matrix(&[ch], &g).unwrap()[0].to_dense();
        // Input (k, l) lands on (k, l+1 mod 2).
        for k in 0..2 {
            for l in 0..2 {
                let out = g.flat_index(k, (l + 1) % 2);
                assert_eq!(h[[out, g.flat_index(k, l)]], c(1.0, 0.0));
            }
        }
        assert_eq!(h.iter().filter(|v| v.norm() > 0.0).count(), 4);
    }

    #[test]
    fn out_of_grid_taps_are_rejected() {
        let g = grid(4, 4);
        let ch = UserChannel {
            user_id: 0,
            taps: vec![ChannelTap::integer(c(1.0, 0.0), 4, 0)],
        };
        assert!(build_system_matrix(&[ch], &g).is_err());
    }

    #[test]
    fn kernel_matches_matrix_columns() {
        let g = grid(4, 8);
        let ch = UserChannel {
            user_id: 0,
            taps: vec![
                ChannelTap { gain: c(0.6, 0.2), delay_index: 1, doppler_index: 1, fractional_doppler: 0.3 },
                ChannelTap { gain: c(-0.1, 0.5), delay_index: 3, doppler_index: -1, fractional_doppler: -0.2 },
            ],
        };
        let h = build_system_matrix(std::slice::from_ref(&ch), &g).unwrap()[0].to_dense();
        let kern = delay_doppler_kernel(&ch, &g).unwrap();
        for r in 0..g.len() {
            for col in 0..g.len() {
                let (k, l) = g.unflatten(r);
                let (ki, li) = g.unflatten(col);
                let v = kern[[(k + 4 - ki) % 4, (l + 8 - li) % 8]];
                assert!((h[[r, col]] - v).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn scheme3_without_interleaving_is_full_model() {
        let g = grid(4, 4);
        let ch = UserChannel {
            user_id: 0,
            taps: vec![
                ChannelTap { gain: c(0.8, -0.1), delay_index: 0, doppler_index: 0, fractional_doppler: 0.21 },
                ChannelTap { gain: c(0.2, 0.4), delay_index: 2, doppler_index: 1, fractional_doppler: -0.4 },
            ],
        };
        let full = build_system_matrix(std::slice::from_ref(&ch), &g).unwrap()[0].to_dense();
        let red = build_scheme3_matrix(&ch, &g, 1, 1, 0).unwrap();
        let err = full.iter().zip(&red).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn scheme3_static_channel_column_energy() {
        // Parseval on the kernels: each column carries (1/(g1 g2))^2.
        let g = grid(8, 8);
        let ch = UserChannel::identity(0);
        for u in 0..4 {
            let h = build_scheme3_matrix(&ch, &g, 2, 2, u).unwrap();
            for col in h.columns() {
                let e: f64 = col.iter().map(|v| v.norm_sqr()).sum();
                assert!((e - 1.0 / 16.0).abs() < 1e-12, "user {u}: {e}");
            }
        }
        // Zero Doppler offset keeps the kernel a single peak.
        let h0 = build_scheme3_matrix(&ch, &g, 2, 2, 0).unwrap();
        assert!((h0[[0, 0]] - c(0.25, 0.0)).norm() < 1e-12);
    }
}
