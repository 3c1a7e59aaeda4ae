//! Delay-Doppler resource-block allocation.
//!
//! - [`Scheme::DelayAxis`]: user `u` owns delay columns
//!   `[u M/K, (u+1) M/K)` across all Doppler rows.
//! - [`Scheme::DopplerAxis`]: user `u` owns Doppler rows
//!   `[u N/K, (u+1) N/K)` across all delay columns.
//! - [`Scheme::Interleaved`]: user `u` owns the comb
//!   `k = floor(u/g1) + g2 p`, `l = (u mod g1) + g1 q`, which confines its
//!   time-frequency signal to one block of the plane.
//!
//! Within a mask, payload symbols fill bins in ascending `k + N l` order.

use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::channel::{build_scheme3_matrix, UserChannel};
use crate::error::{config, invalid};
use crate::model::{SparseMatrix, SystemModel};
use crate::transforms::{isfft, restrict_to_region, tf_region, DDFrame, GridSpec, TFFrame};
use crate::{Result, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scheme {
    /// Users multiplexed along the delay axis.
    DelayAxis,
    /// Users multiplexed along the Doppler axis.
    DopplerAxis,
    /// Periodic interleaving with `K_u = g1 g2`.
    Interleaved { g1: usize, g2: usize },
}

impl Scheme {
    /// Short label used in CSV output.
    pub fn label(&self) -> &'static str {
        match self {
            Scheme::DelayAxis => "scheme1",
            Scheme::DopplerAxis => "scheme2",
            Scheme::Interleaved { .. } => "scheme3",
        }
    }

    /// Every divisibility constraint the scheme places on the grid.
    pub fn problems(&self, grid: &GridSpec, num_users: usize) -> Vec<String> {
        let (n, m) = (grid.doppler_bins(), grid.delay_bins());
        let mut out = Vec::new();
        if num_users == 0 {
            out.push("K_u must be at least 1".to_string());
            return out;
        }
        match *self {
            Scheme::DelayAxis => {
                if m % num_users != 0 {
                    out.push(format!("scheme 1 requires K_u to divide M, but K_u={num_users} and M={m}"));
                }
            }
            Scheme::DopplerAxis => {
                if n % num_users != 0 {
                    out.push(format!("scheme 2 requires K_u to divide N, but K_u={num_users} and N={n}"));
                }
            }
            Scheme::Interleaved { g1, g2 } => {
                if g1 == 0 || g2 == 0 {
                    out.push("scheme 3 requires positive g1 and g2".to_string());
                    return out;
                }
                if g1 * g2 != num_users {
                    out.push(format!("scheme 3 requires K_u = g1*g2, but K_u={num_users}, g1={g1}, g2={g2}"));
                }
                if m % g1 != 0 {
                    out.push(format!("scheme 3 requires g1 to divide M, but g1={g1} and M={m}"));
                }
                if n % g2 != 0 {
                    out.push(format!("scheme 3 requires g2 to divide N, but g2={g2} and N={n}"));
                }
            }
        }
        out
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::Interleaved { g1, g2 } => write!(f, "scheme3(g1={g1},g2={g2})"),
            other => f.write_str(other.label()),
        }
    }
}

/// Per-user masks over the grid.
#[derive(Debug, Clone)]
pub struct AllocationPlan {
    scheme: Scheme,
    grid: GridSpec,
    masks: Vec<Array2<bool>>,
    bins: Vec<Vec<usize>>,
}

/// Builds the allocation for `num_users` users.
pub fn make_plan(scheme: Scheme, grid: &GridSpec, num_users: usize) -> Result<AllocationPlan> {
    let problems = scheme.problems(grid, num_users);
    if !problems.is_empty() {
        return Err(config(problems.join("; ")));
    }
    let (n, m) = (grid.doppler_bins(), grid.delay_bins());
    let owner = |k: usize, l: usize| -> usize {
        match scheme {
            Scheme::DelayAxis => l / (m / num_users),
            Scheme::DopplerAxis => k / (n / num_users),
            // Invert k = floor(u/g1) + g2 p, l = (u mod g1) + g1 q.
            Scheme::Interleaved { g1, g2 } => (k % g2) * g1 + l % g1,
        }
    };
    let mut masks = vec![Array2::from_elem((n, m), false); num_users];
    let mut bins = vec![Vec::with_capacity(grid.len() / num_users); num_users];
    for idx in 0..grid.len() {
        let (k, l) = grid.unflatten(idx);
        let u = owner(k, l);
        masks[u][[k, l]] = true;
        bins[u].push(idx);
    }
    Ok(AllocationPlan {
        scheme,
        grid: *grid,
        masks,
        bins,
    })
}

impl AllocationPlan {
    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn num_users(&self) -> usize {
        self.masks.len()
    }

    pub fn symbols_per_user(&self) -> usize {
        self.grid.len() / self.num_users()
    }

    pub fn mask(&self, user: usize) -> &Array2<bool> {
        &self.masks[user]
    }

    /// Flat indices owned by `user`, ascending.
    pub fn bins(&self, user: usize) -> &[usize] {
        &self.bins[user]
    }

    fn check_user(&self, user: usize) -> Result<()> {
        if user >= self.num_users() {
            return Err(invalid(format!("user {user} out of range for K_u={}", self.num_users())));
        }
        Ok(())
    }

    /// Places `payload` on the user's bins; zeros elsewhere.
    pub fn pack(&self, user: usize, payload: &[C64]) -> Result<DDFrame> {
        self.check_user(user)?;
        if payload.len() != self.symbols_per_user() {
            return Err(invalid(format!(
                "payload has {} symbols, user {user} owns {} bins",
                payload.len(),
                self.symbols_per_user()
            )));
        }
        let mut frame = DDFrame::zeros(self.grid);
        let data = frame.symbols_mut();
        for (&idx, &s) in self.bins[user].iter().zip(payload) {
            data[self.grid.unflatten(idx)] = s;
        }
        Ok(frame)
    }

    /// Reads the user's bins back out of a frame.
    pub fn unpack(&self, user: usize, frame: &DDFrame) -> Result<Vec<C64>> {
        self.check_user(user)?;
        if frame.grid().doppler_bins() != self.grid.doppler_bins() || frame.grid().delay_bins() != self.grid.delay_bins() {
            return Err(invalid("frame does not match the plan's grid"));
        }
        Ok(self.bins[user]
            .iter()
            .map(|&idx| frame.symbols()[self.grid.unflatten(idx)])
            .collect())
    }

    fn interleaving(&self) -> Result<(usize, usize)> {
        match self.scheme {
            Scheme::Interleaved { g1, g2 } => Ok((g1, g2)),
            other => Err(invalid(format!("{other} is not an interleaved allocation"))),
        }
    }

    /// Transmit-side time-frequency signal of one user under the interleaved
    /// allocation: the ISFFT of its comb, kept only on its own block.
    pub fn scheme3_transmit(&self, user: usize, payload: &[C64]) -> Result<TFFrame> {
        let (g1, g2) = self.interleaving()?;
        let tf = isfft(&self.pack(user, payload)?)?;
        Ok(restrict_to_region(&tf, &tf_region(&self.grid, user, g1, g2)?))
    }

    /// Per-user reduced models for the interleaved allocation. Each model
    /// maps the user's payload (in [`AllocationPlan::bins`] order) to the
    /// restricted SFFT of its block.
    pub fn scheme3_models(&self, channels: &[UserChannel], rel_threshold: f64) -> Result<Vec<SystemModel>> {
        let (g1, g2) = self.interleaving()?;
        if channels.len() != self.num_users() {
            return Err(invalid(format!("{} channels for {} users", channels.len(), self.num_users())));
        }
        channels
            .iter()
            .enumerate()
            .map(|(u, ch)| {
                let h = build_scheme3_matrix(ch, &self.grid, g1, g2, u)?;
                let sparse = SparseMatrix::from_dense(&h, rel_threshold);
                SystemModel::new(sparse, vec![u; h.ncols()])
            })
            .collect()
    }
}

/// Joint model `y = Hx + v` where `x` stacks every user's payload (user
/// after user) and `H = [H_1 ... H_K]` restricted to the occupied bins.
pub fn composite_model(plan: &AllocationPlan, matrices: &[SparseMatrix]) -> Result<SystemModel> {
    if matrices.len() != plan.num_users() {
        return Err(invalid(format!(
            "{} channel matrices for {} users",
            matrices.len(),
            plan.num_users()
        )));
    }
    let n_rows = plan.grid.len();
    let mut cols = Vec::with_capacity(n_rows);
    let mut col_user = Vec::with_capacity(n_rows);
    for (u, h) in matrices.iter().enumerate() {
        if h.n_rows() != n_rows || h.n_cols() != n_rows {
            return Err(invalid(format!("matrix of user {u} does not match the grid")));
        }
        for &idx in plan.bins(u) {
            cols.push(h.column(idx).to_vec());
            col_user.push(u);
        }
    }
    SystemModel::new(SparseMatrix::from_column_entries(n_rows, cols), col_user)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{apply_channel_direct, build_system_matrix, ChannelTap};
    use crate::rng::{complex_gaussian, trial_rng};
    use crate::transforms::{restricted_sfft, sfft};
    use proptest::prelude::*;
    use rand::Rng;

    fn grid(n: usize, m: usize) -> GridSpec {
        GridSpec::new(n, m, 15e3, 4e9).unwrap()
    }

    fn random_payload(len: usize, seed: u64) -> Vec<C64> {
        let mut rng = trial_rng(seed, 1, 0);
        (0..len).map(|_| complex_gaussian(&mut rng, 1.0)).collect()
    }

    fn random_channel(g: &GridSpec, taps: usize, seed: u64) -> UserChannel {
        let mut rng = trial_rng(seed, 2, 0);
        UserChannel {
            user_id: 0,
            taps: (0..taps)
                .map(|_| ChannelTap {
                    gain: complex_gaussian(&mut rng, 1.0 / taps as f64),
                    delay_index: rng.random_range(0..g.delay_bins()),
                    doppler_index: rng.random_range(-1..=1),
                    fractional_doppler: 0.5 - rng.random::<f64>(),
                })
                .collect(),
        }
    }

    #[test]
    fn delay_axis_matches_figure_layout() {
        let plan = make_plan(Scheme::DelayAxis, &grid(8, 8), 4).unwrap();
        for u in 0..4 {
            for ((_, l), &owned) in plan.mask(u).indexed_iter() {
                assert_eq!(owned, l == 2 * u || l == 2 * u + 1);
            }
        }
    }

    #[test]
    fn interleaved_user0_owns_even_even() {
        let plan = make_plan(Scheme::Interleaved { g1: 2, g2: 2 }, &grid(8, 8), 4).unwrap();
        for ((k, l), &owned) in plan.mask(0).indexed_iter() {
            assert_eq!(owned, k % 2 == 0 && l % 2 == 0);
        }
        // User 1: k = 0 + 2p, l = 1 + 2q.
        assert!(plan.mask(1)[[0, 1]]);
        // User 2: k = 1 + 2p, l = 0 + 2q.
        assert!(plan.mask(2)[[1, 0]]);
    }

    #[test]
    fn interleaved_comb_follows_formula_for_unequal_factors() {
        let (g1, g2) = (4, 2);
        let plan = make_plan(Scheme::Interleaved { g1, g2 }, &grid(8, 8), 8).unwrap();
        for u in 0..8 {
            for ((k, l), &owned) in plan.mask(u).indexed_iter() {
                let expect = k % g2 == u / g1 && l % g1 == u % g1;
                assert_eq!(owned, expect, "u={u} ({k},{l})");
            }
        }
    }

    #[test]
    fn doppler_axis_single_user_covers_grid() {
        let plan = make_plan(Scheme::DopplerAxis, &grid(4, 4), 1).unwrap();
        assert!(plan.mask(0).iter().all(|&b| b));
    }

    #[test]
    fn divisibility_errors_name_the_constraint() {
        let err = make_plan(Scheme::DelayAxis, &grid(4, 4), 3).unwrap_err().to_string();
        assert!(err.contains("divide M"), "{err}");
        let err = make_plan(Scheme::DopplerAxis, &grid(4, 4), 3).unwrap_err().to_string();
        assert!(err.contains("divide N"), "{err}");
        let err = make_plan(Scheme::Interleaved { g1: 2, g2: 2 }, &grid(4, 4), 2).unwrap_err().to_string();
        assert!(err.contains("g1*g2"), "{err}");
        assert!(make_plan(Scheme::Interleaved { g1: 3, g2: 1 }, &grid(4, 4), 3).is_err());
    }

    #[test]
    fn masks_partition_grid() {
        let g = grid(8, 8);
        let schemes = [
            (Scheme::DelayAxis, 4),
            (Scheme::DopplerAxis, 2),
            (Scheme::Interleaved { g1: 2, g2: 4 }, 8),
            (Scheme::Interleaved { g1: 1, g2: 1 }, 1),
        ];
        for (scheme, k) in schemes {
            let plan = make_plan(scheme, &g, k).unwrap();
            let mut count = Array2::<usize>::zeros((8, 8));
            for u in 0..k {
                count += &plan.mask(u).mapv(usize::from);
                assert_eq!(plan.bins(u).len(), 64 / k);
            }
            assert!(count.iter().all(|&c| c == 1), "{scheme}");
        }
    }

    #[test]
    fn pack_places_symbols_in_owned_columns() {
        let plan = make_plan(Scheme::DelayAxis, &grid(4, 4), 2).unwrap();
        let payload: Vec<C64> = (0..8).map(|i| C64::new(if i % 2 == 0 { 1.0 } else { -1.0 }, 0.0)).collect();
        let frame = plan.pack(1, &payload).unwrap();
        for ((_, l), v) in frame.symbols().indexed_iter() {
            assert_eq!(v.norm() > 0.0, l >= 2);
        }
        let zero = plan.pack(0, &[C64::new(0.0, 0.0); 8]).unwrap();
        assert_eq!(zero.energy(), 0.0);
        assert!(plan.pack(0, &payload[..7]).is_err());
        assert!(plan.pack(2, &payload).is_err());
    }

    #[test]
    fn identity_channels_make_permutation() {
        let g = grid(4, 4);
        let plan = make_plan(Scheme::DelayAxis, &g, 2).unwrap();
        let chans = vec![UserChannel::identity(0), UserChannel::identity(1)];
        let model = composite_model(&plan, &build_system_matrix(&chans, &g).unwrap()).unwrap();
        let dense = model.to_dense();
        for row in dense.rows() {
            assert_eq!(row.iter().filter(|v| v.norm() > 0.0).count(), 1);
        }
        let x = random_payload(16, 2);
        let y = model.apply(&x);
        // Noiseless y holds every symbol once.
        let mut recovered = vec![C64::new(0.0, 0.0); 16];
        for (col, xv) in x.iter().enumerate() {
            let (row, _) = model.col_support(col)[0];
            recovered[col] = y[row];
            assert_eq!(y[row], *xv);
        }
    }

    #[test]
    fn single_user_composite_is_unrestricted() {
        let g = grid(4, 4);
        let plan = make_plan(Scheme::DopplerAxis, &g, 1).unwrap();
        let ch = random_channel(&g, 3, 1);
        let h = build_system_matrix(std::slice::from_ref(&ch), &g).unwrap();
        let model = composite_model(&plan, &h).unwrap();
        assert_eq!(model.to_dense(), h[0].to_dense());
    }

    #[test]
    fn composite_matches_direct_channel() {
        let g = grid(4, 4);
        let plan = make_plan(Scheme::DelayAxis, &g, 2).unwrap();
        for trial in 0..10 {
            let chans: Vec<UserChannel> = (0..2).map(|u| random_channel(&g, 3, 10 * trial + u)).collect();
            let model = composite_model(&plan, &build_system_matrix(&chans, &g).unwrap()).unwrap();
            let payloads: Vec<Vec<C64>> = (0..2).map(|u| random_payload(8, 100 * trial + u)).collect();
            let frames: Vec<DDFrame> = (0..2).map(|u| plan.pack(u, &payloads[u]).unwrap()).collect();
            let direct = apply_channel_direct(&chans, &g, &frames).unwrap().to_vec();
            let stacked: Vec<C64> = payloads.concat();
            let y = model.apply(&stacked);
            let err = y.iter().zip(&direct).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            assert!(err < 1e-10, "{err}");
        }
    }

    #[test]
    fn multiuser_interference_is_present() {
        let g = grid(4, 8);
        let plan = make_plan(Scheme::DelayAxis, &g, 4).unwrap();
        let chans: Vec<UserChannel> = (0..4).map(|u| random_channel(&g, 4, 50 + u)).collect();
        let model = composite_model(&plan, &build_system_matrix(&chans, &g).unwrap()).unwrap();
        let mixed = (0..model.n_rows()).any(|s| {
            let users: std::collections::BTreeSet<usize> =
                model.row_support(s).iter().map(|&(t, _)| model.col_user()[t]).collect();
            users.len() >= 2
        });
        assert!(mixed);
    }

    fn region_energy_fraction(tf: &TFFrame, user: usize, g1: usize, g2: usize) -> f64 {
        let region = tf_region(tf.grid(), user, g1, g2).unwrap();
        let inside: f64 = tf
            .samples()
            .indexed_iter()
            .filter(|((n, m), _)| region.contains(*n, *m))
            .map(|(_, v)| v.norm_sqr())
            .sum();
        inside / tf.energy()
    }

    #[test]
    fn interleaved_isfft_is_periodic_across_blocks() {
        // A comb's ISFFT repeats over all g1*g2 blocks, so one block holds
        // exactly 1/K_u of the energy before transmit windowing.
        let g = grid(8, 8);
        let plan = make_plan(Scheme::Interleaved { g1: 2, g2: 2 }, &g, 4).unwrap();
        let tf = isfft(&plan.pack(3, &random_payload(16, 7)).unwrap()).unwrap();
        assert!((region_energy_fraction(&tf, 3, 2, 2) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn scheme3_transmit_stays_in_block() {
        let g = grid(8, 8);
        for (g1, g2) in [(2, 2), (4, 2), (1, 4)] {
            let plan = make_plan(Scheme::Interleaved { g1, g2 }, &g, g1 * g2).unwrap();
            for u in 0..g1 * g2 {
                let tf = plan.scheme3_transmit(u, &random_payload(64 / (g1 * g2), u as u64)).unwrap();
                assert!(1.0 - region_energy_fraction(&tf, u, g1, g2) < 1e-9);
            }
        }
        let plan = make_plan(Scheme::DelayAxis, &g, 2).unwrap();
        assert!(plan.scheme3_transmit(0, &random_payload(32, 0)).is_err());
    }

    /// Full chain for one user: windowed transmit, the delay-Doppler channel
    /// applied to the whole frame, then the restricted SFFT of its block.
    fn scheme3_chain(plan: &AllocationPlan, chans: &[UserChannel], payloads: &[Vec<C64>], u: usize) -> Vec<C64> {
        let g = *plan.grid();
        let (g1, g2) = plan.interleaving().unwrap();
        let frames: Vec<DDFrame> = (0..plan.num_users())
            .map(|v| sfft(&plan.scheme3_transmit(v, &payloads[v]).unwrap()).unwrap())
            .collect();
        let rx = apply_channel_direct(chans, &g, &frames).unwrap();
        restricted_sfft(&isfft(&rx).unwrap(), u, g1, g2).unwrap().to_vec()
    }

    #[test]
    fn scheme3_reduced_model_matches_chain() {
        let g = grid(8, 8);
        for (g1, g2) in [(2, 2), (4, 1), (1, 2), (2, 4)] {
            let k = g1 * g2;
            let plan = make_plan(Scheme::Interleaved { g1, g2 }, &g, k).unwrap();
            let chans: Vec<UserChannel> = (0..k).map(|u| random_channel(&g, 3, 70 + u as u64)).collect();
            let payloads: Vec<Vec<C64>> = (0..k).map(|u| random_payload(64 / k, 90 + u as u64)).collect();
            let models = plan.scheme3_models(&chans, 0.0).unwrap();
            for u in 0..k {
                let y = scheme3_chain(&plan, &chans, &payloads, u);
                let expect = models[u].apply(&payloads[u]);
                let err = y.iter().zip(&expect).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
                assert!(err < 1e-8, "g1={g1} g2={g2} u={u}: {err}");
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn pack_unpack_round_trip(scheme_idx in 0usize..3, seed in any::<u64>()) {
            let g = grid(4, 8);
            let (scheme, k) = [
                (Scheme::DelayAxis, 4),
                (Scheme::DopplerAxis, 2),
                (Scheme::Interleaved { g1: 2, g2: 2 }, 4),
            ][scheme_idx];
            let plan = make_plan(scheme, &g, k).unwrap();
            for u in 0..k {
                let payload = random_payload(32 / k, seed ^ u as u64);
                let frame = plan.pack(u, &payload).unwrap();
                prop_assert_eq!(plan.unpack(u, &frame).unwrap(), payload);
            }
        }
    }
}
