//! Q-Wiener increments in eigenbasis coordinates.
//!
//! A [`NoisePath`] stores unscaled Brownian increments `dβ_k` for every mode on
//! a fine grid. Coarse scheme increments are obtained by summing fine blocks
//! and multiplying by `√q_k`, so one path serves every coarse step size and
//! every covariance spectrum. Block sums use an aligned dyadic tree, which
//! makes nested aggregation (fine → R1 → R2) bit-identical to direct
//! aggregation (fine → R2) whenever the ratios are powers of two.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Result};
use crate::spectral::{CovarianceSpectrum, ModeSet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    t_final: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(t_final: f64, steps: usize) -> Result<Self> {
        if !(t_final > 0.0 && t_final.is_finite()) {
            return invalid(format!("final time must be positive, got {t_final}"));
        }
        if steps == 0 {
            return invalid("time grid needs at least one step");
        }
        Ok(TimeGrid { t_final, steps })
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.t_final / self.steps as f64
    }

    /// `t_m`; exact at both endpoints.
    pub fn time(&self, m: usize) -> f64 {
        self.t_final * m as f64 / self.steps as f64
    }

    /// Grid with `ratio` times as many steps.
    pub fn refined(&self, ratio: usize) -> Result<TimeGrid> {
        TimeGrid::new(self.t_final, self.steps * ratio)
    }
}

/// Deterministic random source for one Monte Carlo sample.
///
/// The `(base_seed, sample_index)` pair keys a ChaCha8 generator; mode `k`
/// draws from ChaCha stream `k`, so draws are mode-major, step-minor and each
/// mode's sequence can be produced independently.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub base_seed: u64,
    pub sample_index: u64,
}

impl RngStream {
    pub fn new(base_seed: u64, sample_index: u64) -> Self {
        RngStream {
            base_seed,
            sample_index,
        }
    }

    pub fn mode_rng(&self, mode: usize) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.base_seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.sample_index.to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(mode as u64);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoisePath {
    grid: TimeGrid,
    modes: usize,
    /// Mode-major: entry `k * steps + m` is `dβ_k` over fine step `m`.
    increments: Vec<f64>,
}

pub fn sample_path(modes: &ModeSet, fine_grid: TimeGrid, rng: RngStream) -> NoisePath {
    let steps = fine_grid.steps();
    let sd = fine_grid.dt().sqrt();
    let mut increments = Vec::with_capacity(modes.len() * steps);
    for k in 0..modes.len() {
        let mut r = rng.mode_rng(k);
        increments.extend((0..steps).map(|_| {
            let z: f64 = StandardNormal.sample(&mut r);
            z * sd
        }));
    }
    NoisePath {
        grid: fine_grid,
        modes: modes.len(),
        increments,
    }
}

impl NoisePath {
    /// Path from explicit unscaled increments, laid out mode-major.
    pub fn from_increments(grid: TimeGrid, modes: usize, increments: Vec<f64>) -> Result<Self> {
        if increments.len() != modes * grid.steps() {
            return invalid(format!(
                "expected {} increments, got {}",
                modes * grid.steps(),
                increments.len()
            ));
        }
        if increments.iter().any(|x| !x.is_finite()) {
            return invalid("non-finite Brownian increment");
        }
        Ok(NoisePath {
            grid,
            modes,
            increments,
        })
    }

    pub fn zero(grid: TimeGrid, modes: usize) -> Self {
        NoisePath {
            grid,
            modes,
            increments: vec![0.0; modes * grid.steps()],
        }
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    /// All fine increments of mode `k`.
    pub fn mode_increments(&self, k: usize) -> &[f64] {
        let n = self.grid.steps();
        &self.increments[k * n..(k + 1) * n]
    }

    fn check_ratio(&self, ratio: usize) -> Result<()> {
        if ratio == 0 || !self.grid.steps().is_multiple_of(ratio) {
            return invalid(format!(
                "coarsening ratio {ratio} does not divide {} fine steps",
                self.grid.steps()
            ));
        }
        Ok(())
    }

    /// Unscaled block sums `Σ dβ_k` over coarse step `m` of width `ratio`.
    pub fn coarse_sums(&self, m: usize, ratio: usize) -> Result<Vec<f64>> {
        self.check_ratio(ratio)?;
        if ratio * (m + 1) > self.grid.steps() {
            return invalid(format!("coarse step {m} lies beyond the fine grid"));
        }
        Ok((0..self.modes)
            .map(|k| dyadic_sum(&self.mode_increments(k)[m * ratio..(m + 1) * ratio]))
            .collect())
    }

    /// Path on the grid with `steps / ratio` steps, carrying block sums.
    pub fn coarsen(&self, ratio: usize) -> Result<NoisePath> {
        self.check_ratio(ratio)?;
        let coarse = self.grid.steps() / ratio;
        let increments = (0..self.modes)
            .flat_map(|k| {
                self.mode_increments(k)
                    .chunks_exact(ratio)
                    .map(dyadic_sum)
                    .collect::<Vec<_>>()
            })
            .collect();
        Ok(NoisePath {
            grid: TimeGrid::new(self.grid.t_final(), coarse)?,
            modes: self.modes,
            increments,
        })
    }
}

/// `ΔW_m` in eigen-coordinates: `√q_k` times the fine increments inside coarse step `m`.
pub fn coarse_increment(
    path: &NoisePath,
    cov: &CovarianceSpectrum,
    m: usize,
    ratio: usize,
) -> Result<Vec<f64>> {
    if cov.len() != path.modes() {
        return invalid(format!(
            "covariance has {} modes, path has {}",
            cov.len(),
            path.modes()
        ));
    }
    let mut sums = path.coarse_sums(m, ratio)?;
    for (s, q) in sums.iter_mut().zip(cov.q()) {
        *s *= q.sqrt();
    }
    Ok(sums)
}

/// Sum with a binary tree whose left subtrees cover power-of-two blocks.
pub(crate) fn dyadic_sum(x: &[f64]) -> f64 {
    match x.len() {
        0 => 0.0,
        1 => x[0],
        2 => x[0] + x[1],
        n => {
            let split = if n.is_power_of_two() {
                n / 2
            } else {
                1 << (usize::BITS - 1 - n.leading_zeros())
            };
            dyadic_sum(&x[..split]) + dyadic_sum(&x[split..])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::build_covariance;

    fn modes(n: usize) -> ModeSet {
        ModeSet::truncated(n).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(TimeGrid::new(0.0, 4).is_err());
        assert!(TimeGrid::new(1.0, 0).is_err());
        let g = TimeGrid::new(1.0, 3).unwrap();
        assert_eq!(g.time(3), 1.0);
        assert!((g.dt() * 3.0 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn same_seed_same_path() {
        let g = TimeGrid::new(1.0, 64).unwrap();
        let a = sample_path(&modes(2), g, RngStream::new(42, 3));
        let b = sample_path(&modes(2), g, RngStream::new(42, 3));
        assert_eq!(a, b);
        let c = sample_path(&modes(2), g, RngStream::new(42, 4));
        assert_ne!(a, c);
        let d = sample_path(&modes(2), g, RngStream::new(43, 3));
        assert_ne!(a, d);
    }

    #[test]
    fn mode_streams_are_prefix_stable() {
        // adding modes must not change the draws of existing modes
        let g = TimeGrid::new(1.0, 16).unwrap();
        let small = sample_path(&modes(1), g, RngStream::new(1, 0));
        let large = sample_path(&modes(3), g, RngStream::new(1, 0));
        for k in 0..small.modes() {
            assert_eq!(small.mode_increments(k), large.mode_increments(k));
        }
    }

    #[test]
    fn increment_variance_within_band() {
        let m = ModeSet::from_pairs(vec![(1, 0), (2, 3)]).unwrap();
        let g = TimeGrid::new(1.0, 100_000).unwrap();
        let p = sample_path(&m, g, RngStream::new(9, 0));
        for k in 0..m.len() {
            let x = p.mode_increments(k);
            let var = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
            let ratio = var / g.dt();
            assert!((0.98..=1.02).contains(&ratio), "mode {k}: {ratio}");
        }
    }

    #[test]
    fn identity_aggregation_and_telescoping() {
        let m = modes(2);
        let cov = build_covariance(&m, 1.5, 0.001).unwrap();
        let g = TimeGrid::new(1.0, 32).unwrap();
        let p = sample_path(&m, g, RngStream::new(5, 1));
        let d = coarse_increment(&p, &cov, 7, 1).unwrap();
        for k in 0..m.len() {
            assert_eq!(d[k], cov.q()[k].sqrt() * p.mode_increments(k)[7]);
        }
        // unscaled block sums telescope exactly under dyadic aggregation
        let total = p.coarse_sums(0, 32).unwrap();
        let per_block: Vec<Vec<f64>> = (0..4).map(|m| p.coarse_sums(m, 8).unwrap()).collect();
        for k in 0..m.len() {
            let blocks: Vec<f64> = per_block.iter().map(|b| b[k]).collect();
            assert_eq!(dyadic_sum(&blocks), total[k]);
        }
        // scaled outputs agree up to the rounding of the √q multiply
        let scaled_total = coarse_increment(&p, &cov, 0, 32).unwrap();
        for k in 0..m.len() {
            let s: f64 = (0..4).map(|mm| coarse_increment(&p, &cov, mm, 8).unwrap()[k]).sum();
            assert!((s - scaled_total[k]).abs() <= 1e-14 * (1.0 + s.abs()));
        }
    }

    #[test]
    fn nested_aggregation_is_exact() {
        let m = modes(3);
        let g = TimeGrid::new(1.0, 256).unwrap();
        let p = sample_path(&m, g, RngStream::new(77, 2));
        for (r1, r2) in [(2, 8), (4, 16), (16, 256), (1, 32)] {
            let via = p.coarsen(r1).unwrap().coarsen(r2 / r1).unwrap();
            let direct = p.coarsen(r2).unwrap();
            assert_eq!(via, direct);
            for step in 0..(256 / r2) {
                assert_eq!(
                    p.coarse_sums(step, r2).unwrap(),
                    direct.coarse_sums(step, 1).unwrap()
                );
            }
        }
    }

    #[test]
    fn non_nesting_rejected() {
        let m = modes(1);
        let cov = build_covariance(&m, 2.0, 0.001).unwrap();
        let p = sample_path(&m, TimeGrid::new(1.0, 12).unwrap(), RngStream::new(0, 0));
        assert!(coarse_increment(&p, &cov, 0, 5).is_err());
        assert!(coarse_increment(&p, &cov, 3, 4).is_err());
        assert!(coarse_increment(&p, &cov, 2, 4).is_ok());
        assert!(p.coarsen(0).is_err());
    }

    #[test]
    fn coarse_variance_and_mode_independence() {
        let m = ModeSet::from_pairs(vec![(1, 0), (1, 1)]).unwrap();
        let cov = build_covariance(&m, 2.0, 0.001).unwrap();
        let g = TimeGrid::new(1.0, 8).unwrap();
        let n = 100_000;
        let (mut s0, mut s1, mut s01) = (0.0, 0.0, 0.0);
        for s in 0..n {
            let p = sample_path(&m, g, RngStream::new(2024, s));
            let d = coarse_increment(&p, &cov, 1, 4).unwrap();
            s0 += d[0] * d[0];
            s1 += d[1] * d[1];
            s01 += d[0] * d[1];
        }
        let nf = n as f64;
        let dt_c = 0.5;
        for (k, s) in [(0, s0), (1, s1)] {
            let want = cov.q()[k] * dt_c;
            assert!(((s / nf) - want).abs() <= 0.02 * want, "mode {k}");
        }
        // cross covariance: sd of the product mean is sqrt(v0 v1 / n)
        let sigma = (cov.q()[0] * cov.q()[1]).sqrt() * dt_c / nf.sqrt();
        assert!((s01 / nf).abs() <= 3.0 * sigma);
    }
}
