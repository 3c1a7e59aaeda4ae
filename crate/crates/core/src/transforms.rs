//! Delay-Doppler grid geometry and the ISFFT/SFFT transform pair.
//!
//! Delay-Doppler frames are indexed `[k][l]` (Doppler, delay) and
//! time-frequency frames `[n][m]` (time, subcarrier). A frame vectorizes
//! with element `(k, l)` at flat index `k + N*l`.
//!
//! Both transforms carry a `1/sqrt(MN)` factor, so they form a unitary pair.

use std::f64::consts::PI;

use ndarray::{Array2, Axis};
use rustfft::{FftDirection, FftPlanner};

use crate::error::{config, invalid};
use crate::{Result, C64};

/// Geometry and timing of an `N x M` delay-Doppler grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    n: usize,
    m: usize,
    delta_f: f64,
    symbol_duration: f64,
    carrier_freq_hz: f64,
}

impl GridSpec {
    /// `n` Doppler bins, `m` delay bins, subcarrier spacing `delta_f` (Hz).
    /// The symbol duration is `1/delta_f`.
    pub fn new(n: usize, m: usize, delta_f: f64, carrier_freq_hz: f64) -> Result<Self> {
        Self::with_symbol_duration(n, m, delta_f, 1.0 / delta_f, carrier_freq_hz)
    }

    pub fn with_symbol_duration(
        n: usize,
        m: usize,
        delta_f: f64,
        symbol_duration: f64,
        carrier_freq_hz: f64,
    ) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(config(format!("grid must be non-empty, got N={n}, M={m}")));
        }
        if !(delta_f > 0.0 && delta_f.is_finite()) {
            return Err(config(format!("subcarrier spacing must be positive, got {delta_f}")));
        }
        if (symbol_duration * delta_f - 1.0).abs() > 1e-12 {
            return Err(config(format!(
                "symbol duration {symbol_duration} s and spacing {delta_f} Hz violate T*delta_f = 1"
            )));
        }
        Ok(Self {
            n,
            m,
            delta_f,
            symbol_duration,
            carrier_freq_hz,
        })
    }

    /// Number of Doppler bins `N` (also the number of time slots).
    pub fn doppler_bins(&self) -> usize {
        self.n
    }

    /// Number of delay bins `M` (also the number of subcarriers).
    pub fn delay_bins(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.n * self.m
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn delta_f(&self) -> f64 {
        self.delta_f
    }

    pub fn symbol_duration(&self) -> f64 {
        self.symbol_duration
    }

    pub fn carrier_freq_hz(&self) -> f64 {
        self.carrier_freq_hz
    }

    /// Doppler step `1/(N T)` in Hz.
    pub fn doppler_resolution(&self) -> f64 {
        1.0 / (self.n as f64 * self.symbol_duration)
    }

    /// Delay step `1/(M delta_f)` in seconds; also the sample period.
    pub fn delay_resolution(&self) -> f64 {
        1.0 / (self.m as f64 * self.delta_f)
    }

    pub fn flat_index(&self, k: usize, l: usize) -> usize {
        k + self.n * l
    }

    pub fn unflatten(&self, idx: usize) -> (usize, usize) {
        (idx % self.n, idx / self.n)
    }

    /// A grid with the same timing but different dimensions.
    pub fn resized(&self, n: usize, m: usize) -> Result<Self> {
        Self::with_symbol_duration(n, m, self.delta_f, self.symbol_duration, self.carrier_freq_hz)
    }
}

fn check_dims(grid: &GridSpec, data: &Array2<C64>) -> Result<()> {
    if data.dim() != (grid.n, grid.m) {
        return Err(invalid(format!(
            "frame is {:?} but grid is {}x{}",
            data.dim(),
            grid.n,
            grid.m
        )));
    }
    Ok(())
}

fn flatten(grid: &GridSpec, data: &Array2<C64>) -> Vec<C64> {
    let mut out = Vec::with_capacity(grid.len());
    for l in 0..grid.m {
        for k in 0..grid.n {
            out.push(data[[k, l]]);
        }
    }
    out
}

fn unflatten(grid: &GridSpec, flat: &[C64]) -> Result<Array2<C64>> {
    if flat.len() != grid.len() {
        return Err(invalid(format!(
            "vector of length {} does not fit a {}x{} grid",
            flat.len(),
            grid.n,
            grid.m
        )));
    }
    Ok(Array2::from_shape_fn((grid.n, grid.m), |(k, l)| flat[k + grid.n * l]))
}

/// Symbols on the delay-Doppler grid, indexed `[k][l]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DDFrame {
    grid: GridSpec,
    symbols: Array2<C64>,
}

impl DDFrame {
    pub fn new(grid: GridSpec, symbols: Array2<C64>) -> Result<Self> {
        check_dims(&grid, &symbols)?;
        Ok(Self { grid, symbols })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            grid,
            symbols: Array2::zeros((grid.n, grid.m)),
        }
    }

    /// Frame from a vector in `k + N*l` order.
    pub fn from_vec(grid: GridSpec, flat: &[C64]) -> Result<Self> {
        Ok(Self {
            grid,
            symbols: unflatten(&grid, flat)?,
        })
    }

    pub fn to_vec(&self) -> Vec<C64> {
        flatten(&self.grid, &self.symbols)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn symbols(&self) -> &Array2<C64> {
        &self.symbols
    }

    pub fn symbols_mut(&mut self) -> &mut Array2<C64> {
        &mut self.symbols
    }

    pub fn energy(&self) -> f64 {
        self.symbols.iter().map(|v| v.norm_sqr()).sum()
    }
}

/// Samples on the time-frequency grid, indexed `[n][m]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TFFrame {
    grid: GridSpec,
    samples: Array2<C64>,
}

impl TFFrame {
    pub fn new(grid: GridSpec, samples: Array2<C64>) -> Result<Self> {
        check_dims(&grid, &samples)?;
        Ok(Self { grid, samples })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            grid,
            samples: Array2::zeros((grid.n, grid.m)),
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn samples(&self) -> &Array2<C64> {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut Array2<C64> {
        &mut self.samples
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|v| v.norm_sqr()).sum()
    }
}

/// Runs an unnormalized DFT over every lane along `axis`.
fn transform_axis(data: &mut Array2<C64>, axis: Axis, direction: FftDirection) {
    let len = data.len_of(axis);
    if len <= 1 {
        return;
    }
    let fft = FftPlanner::new().plan_fft(len, direction);
    let mut buf = vec![C64::new(0.0, 0.0); len];
    for mut lane in data.lanes_mut(axis) {
        buf.iter_mut().zip(lane.iter()).for_each(|(b, v)| *b = *v);
        fft.process(&mut buf);
        lane.iter_mut().zip(&buf).for_each(|(v, b)| *v = *b);
    }
}

/// Inverse symplectic finite Fourier transform:
/// `X[n,m] = 1/sqrt(MN) sum_k sum_l x[k,l] exp(j2pi(nk/N - ml/M))`.
pub fn isfft(frame: &DDFrame) -> Result<TFFrame> {
    check_dims(&frame.grid, &frame.symbols)?;
    let mut data = frame.symbols.clone();
    transform_axis(&mut data, Axis(0), FftDirection::Inverse);
    transform_axis(&mut data, Axis(1), FftDirection::Forward);
    let scale = 1.0 / (frame.grid.len() as f64).sqrt();
    data.mapv_inplace(|v| v * scale);
    TFFrame::new(frame.grid, data)
}

/// Symplectic finite Fourier transform:
/// `y[k,l] = 1/sqrt(MN) sum_n sum_m Y[n,m] exp(-j2pi(nk/N - ml/M))`.
pub fn sfft(frame: &TFFrame) -> Result<DDFrame> {
    check_dims(&frame.grid, &frame.samples)?;
    let mut data = frame.samples.clone();
    transform_axis(&mut data, Axis(0), FftDirection::Forward);
    transform_axis(&mut data, Axis(1), FftDirection::Inverse);
    let scale = 1.0 / (frame.grid.len() as f64).sqrt();
    data.mapv_inplace(|v| v * scale);
    DDFrame::new(frame.grid, data)
}

/// Block of the time-frequency plane owned by one user of the interleaved
/// allocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TfRegion {
    pub n_start: usize,
    pub n_len: usize,
    pub m_start: usize,
    pub m_len: usize,
}

impl TfRegion {
    pub fn contains(&self, n: usize, m: usize) -> bool {
        (self.n_start..self.n_start + self.n_len).contains(&n)
            && (self.m_start..self.m_start + self.m_len).contains(&m)
    }
}

/// Checks `M = k1*g1`, `N = k2*g2` and `user < g1*g2`.
pub fn check_interleaving(grid: &GridSpec, g1: usize, g2: usize, user: usize) -> Result<()> {
    if g1 == 0 || g2 == 0 {
        return Err(config("interleaving factors g1, g2 must be positive"));
    }
    if !grid.m.is_multiple_of(g1) {
        return Err(config(format!("g1={g1} does not divide M={}", grid.m)));
    }
    if !grid.n.is_multiple_of(g2) {
        return Err(config(format!("g2={g2} does not divide N={}", grid.n)));
    }
    if user >= g1 * g2 {
        return Err(config(format!("user {user} out of range for K_u = g1*g2 = {}", g1 * g2)));
    }
    Ok(())
}

/// Time-frequency region of `user`: `N/g2` time slots starting at
/// `(N/g2)(u mod g2)` and `M/g1` subcarriers starting at `(M/g1)floor(u/g2)`.
pub fn tf_region(grid: &GridSpec, user: usize, g1: usize, g2: usize) -> Result<TfRegion> {
    check_interleaving(grid, g1, g2, user)?;
    let n_len = grid.n / g2;
    let m_len = grid.m / g1;
    Ok(TfRegion {
        n_start: n_len * (user % g2),
        n_len,
        m_start: m_len * (user / g2),
        m_len,
    })
}

/// Zeroes every sample outside `region`.
pub fn restrict_to_region(frame: &TFFrame, region: &TfRegion) -> TFFrame {
    let mut out = frame.clone();
    for ((n, m), v) in out.samples.indexed_iter_mut() {
        if !region.contains(n, m) {
            *v = C64::new(0.0, 0.0);
        }
    }
    out
}

/// SFFT over one user's time-frequency region only. Returns the
/// `(N/g2) x (M/g1)` delay-Doppler frame
/// `y_u[k',l'] = 1/sqrt(MN) sum_n sum_m Y_u[n,m] exp(-j2pi(nk'/(N/g2) - ml'/(M/g1)))`.
pub fn restricted_sfft(frame: &TFFrame, user: usize, g1: usize, g2: usize) -> Result<DDFrame> {
    check_dims(&frame.grid, &frame.samples)?;
    let region = tf_region(&frame.grid, user, g1, g2)?;
    let mut data = frame
        .samples
        .slice(ndarray::s![
            region.n_start..region.n_start + region.n_len,
            region.m_start..region.m_start + region.m_len
        ])
        .to_owned();
    transform_axis(&mut data, Axis(0), FftDirection::Forward);
    transform_axis(&mut data, Axis(1), FftDirection::Inverse);
    let scale = 1.0 / (frame.grid.len() as f64).sqrt();
    data.mapv_inplace(|v| v * scale);
    DDFrame::new(frame.grid.resized(region.n_len, region.m_len)?, data)
}

/// `exp(j * 2pi * cycles)`.
pub(crate) fn cis(cycles: f64) -> C64 {
    C64::from_polar(1.0, 2.0 * PI * cycles)
}
