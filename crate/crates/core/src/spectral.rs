//! Truncated cosine eigenbasis of the Neumann Laplacian on a rectangle.
//!
//! Modes are indexed by pairs `(i, j)`; the constant mode `(0, 0)` is never
//! part of a basis built by [`build_basis`]. Every per-mode array in the crate
//! (eigenvalues, covariance weights, state coefficients, noise increments) is
//! laid out in the lexicographic order of [`ModeSet::indices`].

use std::f64::consts::PI;

use crate::error::{invalid, Result};
use crate::state::{BackendKind, NormContext};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rectangle {
    lx: f64,
    ly: f64,
}

impl Rectangle {
    pub fn new(lx: f64, ly: f64) -> Result<Self> {
        if !(lx > 0.0 && ly > 0.0 && lx.is_finite() && ly.is_finite()) {
            return invalid(format!("rectangle sides must be positive, got {lx} x {ly}"));
        }
        Ok(Rectangle { lx, ly })
    }

    pub fn unit() -> Self {
        Rectangle { lx: 1.0, ly: 1.0 }
    }

    pub fn lx(&self) -> f64 {
        self.lx
    }

    pub fn ly(&self) -> f64 {
        self.ly
    }

    pub fn area(&self) -> f64 {
        self.lx * self.ly
    }
}

/// Ordered set of mode index pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModeSet {
    max_index: usize,
    indices: Vec<(usize, usize)>,
}

impl ModeSet {
    /// All pairs `0 <= i, j <= n` except `(0, 0)`, lexicographically ordered.
    pub fn truncated(n: usize) -> Result<Self> {
        if n == 0 {
            return invalid("truncation level N must be at least 1");
        }
        let indices = (0..=n)
            .flat_map(|i| (0..=n).map(move |j| (i, j)))
            .filter(|&p| p != (0, 0))
            .collect();
        Ok(ModeSet {
            max_index: n,
            indices,
        })
    }

    /// Arbitrary set of distinct pairs; sorted lexicographically on construction.
    pub fn from_pairs(mut pairs: Vec<(usize, usize)>) -> Result<Self> {
        pairs.sort_unstable();
        if pairs.windows(2).any(|w| w[0] == w[1]) {
            return invalid("duplicate mode in mode set");
        }
        let max_index = pairs.iter().map(|&(i, j)| i.max(j)).max().unwrap_or(0);
        Ok(ModeSet {
            max_index,
            indices: pairs,
        })
    }

    pub fn max_index(&self) -> usize {
        self.max_index
    }

    pub fn indices(&self) -> &[(usize, usize)] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn position(&self, mode: (usize, usize)) -> Option<usize> {
        self.indices.binary_search(&mode).ok()
    }
}

/// One-dimensional Neumann eigenfunction on `[0, len]`.
pub fn cosine_mode(i: usize, len: f64, x: f64) -> f64 {
    if i == 0 {
        (1.0 / len).sqrt()
    } else {
        (2.0 / len).sqrt() * (i as f64 * PI * x / len).cos()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBasis {
    rect: Rectangle,
    modes: ModeSet,
    lambdas: Vec<f64>,
}

/// Neumann basis over all modes with `0 <= i, j <= n`, `(i, j) != (0, 0)`.
pub fn build_basis(rect: Rectangle, n: usize) -> Result<SpectralBasis> {
    Ok(SpectralBasis::from_modes(rect, ModeSet::truncated(n)?))
}

impl SpectralBasis {
    pub fn from_modes(rect: Rectangle, modes: ModeSet) -> Self {
        let lambdas = modes
            .indices()
            .iter()
            .map(|&(i, j)| eigenvalue(&rect, i, j))
            .collect();
        SpectralBasis {
            rect,
            modes,
            lambdas,
        }
    }

    pub fn rect(&self) -> &Rectangle {
        &self.rect
    }

    pub fn modes(&self) -> &ModeSet {
        &self.modes
    }

    /// Eigenvalues of `-Δ`, one per mode.
    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// Value of the product eigenfunction of mode `k` at `(x, y)`.
    pub fn eigenfunction(&self, k: usize, x: f64, y: f64) -> f64 {
        let (i, j) = self.modes.indices()[k];
        cosine_mode(i, self.rect.lx, x) * cosine_mode(j, self.rect.ly, y)
    }
}

/// `λ_{i,j} = (iπ/L1)² + (jπ/L2)²`.
pub fn eigenvalue(rect: &Rectangle, i: usize, j: usize) -> f64 {
    let a = i as f64 * PI / rect.lx;
    let b = j as f64 * PI / rect.ly;
    a * a + b * b
}

impl NormContext for SpectralBasis {
    fn backend(&self) -> BackendKind {
        BackendKind::Spectral
    }

    fn dofs(&self) -> usize {
        self.len()
    }

    fn norm_squared(&self, values: &[f64]) -> f64 {
        values.iter().map(|v| v * v).sum()
    }
}

/// Noise covariance weights `q_{i,j} = (i² + j²)^{-(β+δ)}`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSpectrum {
    beta: f64,
    delta: f64,
    q: Vec<f64>,
}

pub fn build_covariance(modes: &ModeSet, beta: f64, delta: f64) -> Result<CovarianceSpectrum> {
    if !(beta > 0.0 && beta.is_finite()) {
        return invalid(format!("beta must be positive, got {beta}"));
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return invalid(format!("delta must be positive, got {delta}"));
    }
    if modes.position((0, 0)).is_some() {
        return invalid("covariance weight undefined for mode (0, 0)");
    }
    let q = modes
        .indices()
        .iter()
        .map(|&(i, j)| ((i * i + j * j) as f64).powf(-(beta + delta)))
        .collect();
    Ok(CovarianceSpectrum { beta, delta, q })
}

impl CovarianceSpectrum {
    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    /// Copy with every weight multiplied by `factor` (`0` switches the noise off).
    pub fn scaled(&self, factor: f64) -> Self {
        CovarianceSpectrum {
            beta: self.beta,
            delta: self.delta,
            q: self.q.iter().map(|q| q * factor).collect(),
        }
    }
}

/// Partial sum `Σ λ^{β-1} q` over the basis modes.
///
/// Finite for every truncation; its growth in `N` indicates whether the
/// trace-class condition on `(-A(0))^{(β-1)/2} Q^{1/2}` is plausible.
pub fn trace_condition_partial_sum(basis: &SpectralBasis, cov: &CovarianceSpectrum) -> f64 {
    debug_assert_eq!(basis.len(), cov.len());
    basis
        .lambdas()
        .iter()
        .zip(cov.q())
        .map(|(&lam, &q)| lam.powf(cov.beta - 1.0) * q)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * b.abs().max(1e-300)
    }

    #[test]
    fn n1_basis_has_three_modes() {
        let b = build_basis(Rectangle::unit(), 1).unwrap();
        assert_eq!(b.modes().indices(), &[(0, 1), (1, 0), (1, 1)]);
        let k = b.modes().position((1, 0)).unwrap();
        assert!(close(b.lambdas()[k], PI * PI, 1e-15));
    }

    #[test]
    fn eigenvalue_examples() {
        let b = build_basis(Rectangle::unit(), 2).unwrap();
        let k = b.modes().position((2, 2)).unwrap();
        assert!(close(b.lambdas()[k], 8.0 * PI * PI, 1e-15));
        assert!((b.lambdas()[k] - 78.9568).abs() < 1e-4);

        let r = Rectangle::new(2.0, 1.0).unwrap();
        let b = build_basis(r, 1).unwrap();
        let k = b.modes().position((1, 0)).unwrap();
        assert!((b.lambdas()[k] - 2.4674).abs() < 1e-4);
    }

    #[test]
    fn zero_truncation_rejected() {
        assert!(matches!(
            build_basis(Rectangle::unit(), 0),
            Err(crate::Error::InvalidArgument(_))
        ));
        assert!(Rectangle::new(0.0, 1.0).is_err());
    }

    #[test]
    fn covariance_examples() {
        let modes = ModeSet::truncated(2).unwrap();
        let c = build_covariance(&modes, 2.0, 0.001).unwrap();
        assert_eq!(c.q()[modes.position((1, 0)).unwrap()], 1.0);
        // 8^{-2.001}, evaluated independently
        let q22 = c.q()[modes.position((2, 2)).unwrap()];
        assert!(close(q22, 0.015_592_542_484_360_17, 1e-12));

        let c = build_covariance(&modes, 1.5, 0.001).unwrap();
        let q11 = c.q()[modes.position((1, 1)).unwrap()];
        assert!(close(q11, 0.353_308_410_970_682_4, 1e-12));
    }

    #[test]
    fn covariance_rejects_constant_mode_and_bad_params() {
        let with_zero = ModeSet::from_pairs(vec![(0, 0), (1, 0)]).unwrap();
        assert!(build_covariance(&with_zero, 2.0, 0.001).is_err());
        let modes = ModeSet::truncated(1).unwrap();
        assert!(build_covariance(&modes, 2.0, 0.0).is_err());
        assert!(build_covariance(&modes, 0.0, 0.001).is_err());
    }

    #[test]
    fn duplicate_modes_rejected() {
        assert!(ModeSet::from_pairs(vec![(1, 0), (1, 0)]).is_err());
    }

    #[test]
    fn trace_sum_examples() {
        let r = Rectangle::unit();
        let single = |m| SpectralBasis::from_modes(r, ModeSet::from_pairs(vec![m]).unwrap());

        let b = single((1, 0));
        let c = build_covariance(b.modes(), 2.0, 0.001).unwrap();
        assert!(close(trace_condition_partial_sum(&b, &c), PI * PI, 1e-14));

        let b = single((1, 1));
        let c = build_covariance(b.modes(), 1.5, 0.001).unwrap();
        // (2π²)^{0.5} · 2^{-1.501}
        assert!(close(trace_condition_partial_sum(&b, &c), 1.569_707_911_009_489, 1e-12));

        let empty = SpectralBasis::from_modes(r, ModeSet::from_pairs(vec![]).unwrap());
        let c = build_covariance(empty.modes(), 2.0, 0.001).unwrap();
        assert_eq!(trace_condition_partial_sum(&empty, &c), 0.0);
    }

    #[test]
    fn symmetry_and_monotonicity() {
        let b = build_basis(Rectangle::unit(), 6).unwrap();
        let c = build_covariance(b.modes(), 1.5, 0.001).unwrap();
        let m = b.modes();
        for &(i, j) in m.indices() {
            let k = m.position((i, j)).unwrap();
            let kt = m.position((j, i)).unwrap();
            assert_eq!(b.lambdas()[k], b.lambdas()[kt]);
            assert_eq!(c.q()[k], c.q()[kt]);
            if let Some(kn) = m.position((i + 1, j)) {
                assert!(b.lambdas()[kn] >= b.lambdas()[k]);
                assert!(c.q()[kn] <= c.q()[k]);
            }
            assert!(b.lambdas()[k] > 0.0 && c.q()[k] > 0.0);
        }
    }

    #[test]
    fn eigenfunctions_are_orthonormal() {
        // midpoint rule is exact for products of cosines up to the grid's Nyquist index
        let r = Rectangle::new(1.0, 2.0).unwrap();
        let b = build_basis(r, 3).unwrap();
        let n = 64;
        let (hx, hy) = (r.lx() / n as f64, r.ly() / n as f64);
        for a in 0..b.len() {
            for c in 0..b.len() {
                let mut s = 0.0;
                for p in 0..n {
                    for q in 0..n {
                        let (x, y) = ((p as f64 + 0.5) * hx, (q as f64 + 0.5) * hy);
                        s += b.eigenfunction(a, x, y) * b.eigenfunction(c, x, y);
                    }
                }
                s *= hx * hy;
                let want = if a == c { 1.0 } else { 0.0 };
                assert!((s - want).abs() < 1e-12, "({a},{c}) -> {s}");
            }
        }
    }

    #[test]
    fn trace_sums_grow_with_truncation() {
        for beta in [1.5, 2.0] {
            let sums: Vec<f64> = [4, 8, 16, 32]
                .iter()
                .map(|&n| {
                    let b = build_basis(Rectangle::unit(), n).unwrap();
                    let c = build_covariance(b.modes(), beta, 0.001).unwrap();
                    trace_condition_partial_sum(&b, &c)
                })
                .collect();
            assert!(sums.windows(2).all(|w| w[1] >= w[0]));
            // relative increments shrink as N doubles
            let inc: Vec<f64> = sums.windows(2).map(|w| (w[1] - w[0]) / w[0]).collect();
            assert!(inc.windows(2).all(|w| w[1] < w[0]));
        }
    }
}
