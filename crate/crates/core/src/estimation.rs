//! Impulse-pilot channel estimation for the delay-axis and Doppler-axis
//! allocations.
//!
//! Every user sends a pilot frame holding a single unit impulse; the frame
//! is otherwise empty. The received frame is the sum of every user's
//! delay-Doppler kernel shifted to its pilot, so as long as the pilots are
//! more than `alpha_max` delay bins apart each user's kernel can be read
//! directly out of a window of `alpha_max + 1` delay columns.
//!
//! Estimates are stored scaled by `MN` (the channel "h~" convention).

use ndarray::Array2;
use rand::Rng;

use crate::allocation::Scheme;
use crate::channel::{delay_doppler_kernel, UserChannel};
use crate::error::{config, invalid};
use crate::model::SparseMatrix;
use crate::rng::add_awgn;
use crate::transforms::{DDFrame, GridSpec};
use crate::{Error, Result, C64};

/// Pilot positions `(k, l)` of every user.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotPlan {
    grid: GridSpec,
    scheme: Scheme,
    alpha_max: usize,
    positions: Vec<(usize, usize)>,
}

/// Places one impulse per user.
///
/// Delay-axis: `(0, u M/K_u)`, which needs `M/K_u > alpha_max`.
/// Doppler-axis: `(u N/K_u, u (alpha_max + 1))`, which needs
/// `M >= K_u (alpha_max + 1)` so the windows do not wrap into each other.
pub fn place_pilots(scheme: Scheme, grid: &GridSpec, num_users: usize, alpha_max: usize) -> Result<PilotPlan> {
    let problems = scheme.problems(grid, num_users);
    if !problems.is_empty() {
        return Err(config(problems.join("; ")));
    }
    let (n, m) = (grid.doppler_bins(), grid.delay_bins());
    let positions = match scheme {
        Scheme::DelayAxis => {
            let spacing = m / num_users;
            if spacing <= alpha_max {
                return Err(config(format!(
                    "pilot spacing M/K_u = {spacing} must exceed alpha_max = {alpha_max}"
                )));
            }
            (0..num_users).map(|u| (0, u * spacing)).collect()
        }
        Scheme::DopplerAxis => {
            if m < num_users * (alpha_max + 1) {
                return Err(config(format!(
                    "M = {m} must be at least K_u (alpha_max + 1) = {}",
                    num_users * (alpha_max + 1)
                )));
            }
            (0..num_users).map(|u| (u * (n / num_users), u * (alpha_max + 1))).collect()
        }
        Scheme::Interleaved { .. } => {
            return Err(config("pilot estimation supports the delay-axis and Doppler-axis allocations only"));
        }
    };
    Ok(PilotPlan {
        grid: *grid,
        scheme,
        alpha_max,
        positions,
    })
}

impl PilotPlan {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn alpha_max(&self) -> usize {
        self.alpha_max
    }

    pub fn num_users(&self) -> usize {
        self.positions.len()
    }

    pub fn position(&self, user: usize) -> (usize, usize) {
        self.positions[user]
    }

    pub fn positions(&self) -> &[(usize, usize)] {
        &self.positions
    }

    pub fn pilot_frame(&self, user: usize) -> DDFrame {
        let mut frame = DDFrame::zeros(self.grid);
        frame.symbols_mut()[self.positions[user]] = C64::new(1.0, 0.0);
        frame
    }

    pub fn pilot_frames(&self) -> Vec<DDFrame> {
        (0..self.num_users()).map(|u| self.pilot_frame(u)).collect()
    }

    /// Readout bin for offset `(dk, dl)` of `user`'s window.
    fn bin(&self, user: usize, dk: usize, dl: usize) -> (usize, usize) {
        let (kp, lp) = self.positions[user];
        let (n, m) = (self.grid.doppler_bins(), self.grid.delay_bins());
        ((kp + dk) % n, (lp + dl) % m)
    }
}

/// Estimated `MN`-scaled kernel of one user, `N x (alpha_max + 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEstimate {
    pub user: usize,
    pub h: Array2<C64>,
    pub pilot_snr_db: Option<f64>,
}

impl ChannelEstimate {
    /// Zeroes entries below `rel` times the largest magnitude.
    pub fn threshold(&mut self, rel: f64) {
        let max = self.h.iter().fold(0.0f64, |a, v| a.max(v.norm()));
        self.h.mapv_inplace(|v| if v.norm() < rel * max { C64::new(0.0, 0.0) } else { v });
    }

    /// Unscaled kernel over the full `N x M` grid.
    pub fn kernel(&self, grid: &GridSpec) -> Array2<C64> {
        let (n, m) = (grid.doppler_bins(), grid.delay_bins());
        let scale = 1.0 / grid.len() as f64;
        let mut k = Array2::zeros((n, m));
        for ((dk, dl), v) in self.h.indexed_iter() {
            if dl < m {
                k[[dk, dl]] = v * scale;
            }
        }
        k
    }

    pub fn energy(&self) -> f64 {
        self.h.iter().map(|v| v.norm_sqr()).sum()
    }
}

/// Received pilot frame: every user's pilot through its own channel plus
/// CN(0, `noise_var`) noise per bin.
pub fn receive_pilots<R: Rng + ?Sized>(
    plan: &PilotPlan,
    channels: &[UserChannel],
    noise_var: f64,
    rng: &mut R,
) -> Result<DDFrame> {
    if channels.len() != plan.num_users() {
        return Err(invalid(format!("{} channels for {} pilots", channels.len(), plan.num_users())));
    }
    let g = plan.grid;
    let (n, m) = (g.doppler_bins(), g.delay_bins());
    let mut y = Array2::zeros((n, m));
    for (u, ch) in channels.iter().enumerate() {
        let kernel = delay_doppler_kernel(ch, &g)?;
        let (kp, lp) = plan.positions[u];
        for ((dk, dl), v) in kernel.indexed_iter() {
            y[[(kp + dk) % n, (lp + dl) % m]] += *v;
        }
    }
    let mut flat: Vec<C64> = y.iter().copied().collect();
    add_awgn(&mut flat, noise_var, rng);
    DDFrame::new(g, Array2::from_shape_vec((n, m), flat).expect("shape preserved"))
}

/// Reads every user's window out of a received pilot frame:
/// `h~[dk, dl] = MN y[k_p + dk, l_p + dl]`.
pub fn estimate(received: &DDFrame, plan: &PilotPlan) -> Result<Vec<ChannelEstimate>> {
    let g = received.grid();
    if g.doppler_bins() != plan.grid.doppler_bins() || g.delay_bins() != plan.grid.delay_bins() {
        return Err(invalid("received frame does not match the pilot plan"));
    }
    let scale = plan.grid.len() as f64;
    let y = received.symbols();
    Ok((0..plan.num_users())
        .map(|u| ChannelEstimate {
            user: u,
            h: Array2::from_shape_fn((plan.grid.doppler_bins(), plan.alpha_max + 1), |(dk, dl)| {
                y[plan.bin(u, dk, dl)] * scale
            }),
            pilot_snr_db: None,
        })
        .collect())
}

/// The estimate a noiseless, interference-free readout would return.
pub fn true_estimate(channel: &UserChannel, user: usize, plan: &PilotPlan) -> Result<ChannelEstimate> {
    let kernel = delay_doppler_kernel(channel, &plan.grid)?;
    let scale = plan.grid.len() as f64;
    let m = plan.grid.delay_bins();
    Ok(ChannelEstimate {
        user,
        h: Array2::from_shape_fn((plan.grid.doppler_bins(), plan.alpha_max + 1), |(dk, dl)| {
            if dl < m {
                kernel[[dk, dl]] * scale
            } else {
                C64::new(0.0, 0.0)
            }
        }),
        pilot_snr_db: None,
    })
}

/// Per-user matrices rebuilt from the estimates as 2D circular convolutions:
/// `H[k + N l, k' + N l'] = h~[(k - k')_N, (l - l')_M] / (MN)`.
pub fn rebuild_model(estimates: &[ChannelEstimate], grid: &GridSpec) -> Vec<SparseMatrix> {
    let (n, m) = (grid.doppler_bins(), grid.delay_bins());
    estimates
        .iter()
        .map(|est| {
            let kernel = est.kernel(grid);
            let taps: Vec<((usize, usize), C64)> = kernel
                .indexed_iter()
                .filter(|(_, v)| **v != C64::new(0.0, 0.0))
                .map(|(idx, v)| (idx, *v))
                .collect();
            let cols = (0..grid.len())
                .map(|col| {
                    let (k_in, l_in) = grid.unflatten(col);
                    taps.iter()
                        .map(|&((dk, dl), v)| (grid.flat_index((k_in + dk) % n, (l_in + dl) % m), v))
                        .collect()
                })
                .collect();
            SparseMatrix::from_column_entries(grid.len(), cols)
        })
        .collect()
}

/// Normalized squared error `sum |h_est - h|^2 / sum |h|^2`, averaged over
/// users.
pub fn nmse(estimates: &[ChannelEstimate], truth: &[ChannelEstimate]) -> Result<f64> {
    if estimates.len() != truth.len() || estimates.is_empty() {
        return Err(invalid(format!("{} estimates for {} true channels", estimates.len(), truth.len())));
    }
    let mut total = 0.0;
    for (est, tru) in estimates.iter().zip(truth) {
        if est.h.dim() != tru.h.dim() {
            return Err(invalid(format!("estimate of user {} has a different support", est.user)));
        }
        let energy = tru.energy();
        if energy == 0.0 {
            return Err(Error::Undefined(format!("true channel of user {} has zero energy", tru.user)));
        }
        let err: f64 = est.h.iter().zip(&tru.h).map(|(a, b)| (a - b).norm_sqr()).sum();
        total += err / energy;
    }
    Ok(total / estimates.len() as f64)
}
