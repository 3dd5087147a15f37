//! Self-checks behind the `validate` and `fem-check` subcommands.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::coefficient::RelaxingDiffusion;
use crate::error::{invalid, Result};
use crate::expm::{expm_action, phi1_action, OperatorHandle};
use crate::fem::{
    assemble_mass, assemble_stiffness, build_mesh, smallest_eigenpairs, CoefficientField, EigenOptions,
};
use crate::integrators::{
    ou_variance, smti_step, smti_step_exp_form, DriftFunction, OuModeParams, ProblemSpec, ReferenceSolver,
};
use crate::noise::{sample_path, RngStream, TimeGrid};
use crate::spectral::{
    build_basis, build_covariance, trace_condition_partial_sum, ModeSet, Rectangle, SpectralBasis,
};
use crate::state::{BackendKind, StateVector};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        CheckOutcome { name, passed, detail }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn random_operator(rng: &mut ChaCha8Rng, n: usize, dense: bool) -> OperatorHandle {
    if !dense {
        return OperatorHandle::Diagonal((0..n).map(|_| -rng.random_range(0.0..200.0)).collect());
    }
    // dissipative symmetric part plus a skew perturbation
    let q = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0)).qr().q();
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(n, |_, _| -rng.random_range(0.0..100.0)));
    let s = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    OperatorHandle::Dense(&q * d * q.transpose() + (&s - s.transpose()) * 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeIdentity {
    pub cases: usize,
    /// `max ‖simulation form − exponential form‖ / (1 + ‖x‖)`.
    pub max_form_gap: f64,
    /// `max ‖dt A φ1(dt A) v − (e^{dt A} − I) v‖ / ‖v‖`.
    pub max_phi1_gap: f64,
}

/// Compares both forms of one SMTI step, and the `φ1` identity, on random
/// diagonal and dense operators (alternating).
pub fn scheme_identity(cases: usize, seed: u64) -> Result<SchemeIdentity> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut form_gap, mut phi_gap) = (0.0f64, 0.0f64);
    for case in 0..cases {
        let n = rng.random_range(1..=8);
        let op = random_operator(&mut rng, n, case % 2 == 1);
        let dt = 10f64.powf(rng.random_range(-4.0..0.0));
        let mut vec = |s: f64| -> Vec<f64> { (0..n).map(|_| s * rng.random_range(-1.0..1.0)).collect() };
        let x = vec(1.0);
        let dw = vec(dt.sqrt());
        let v = vec(1.0);
        let k = rng.random_range(0.0..2.0);
        let drift = DriftFunction::linear_reaction(Arc::new(crate::coefficient::Constant(k)));
        let t = rng.random_range(0.0..1.0);

        let xs = StateVector::new(x.clone(), BackendKind::Spectral)?;
        let dws = StateVector::new(dw, BackendKind::Spectral)?;
        let a = smti_step(&op, dt, &xs, &dws, &drift, t)?;
        let b = smti_step_exp_form(&op, dt, &xs, &dws, &drift, t)?;
        let gap = norm(&a.difference(&b)?.into_values()) / (1.0 + norm(&x));
        form_gap = form_gap.max(gap);

        let phi = phi1_action(&op, dt, &v)?;
        let lhs: Vec<f64> = op.apply(&phi)?.iter().map(|y| dt * y).collect();
        let e = expm_action(&op, dt, &v)?;
        let diff: Vec<f64> = lhs.iter().zip(e.iter().zip(&v)).map(|(l, (e, v))| l - (e - v)).collect();
        phi_gap = phi_gap.max(norm(&diff) / norm(&v).max(f64::MIN_POSITIVE));
    }
    Ok(SchemeIdentity {
        cases,
        max_form_gap: form_gap,
        max_phi1_gap: phi_gap,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceDiagnostic {
    pub truncations: Vec<usize>,
    pub sums: Vec<f64>,
}

impl TraceDiagnostic {
    pub fn monotone(&self) -> bool {
        self.sums.windows(2).all(|w| w[1] >= w[0])
    }

    /// Relative growth of the last partial sum over the one before.
    pub fn final_increment(&self) -> f64 {
        let n = self.sums.len();
        if n < 2 {
            return 0.0;
        }
        (self.sums[n - 1] - self.sums[n - 2]) / self.sums[n - 2]
    }

    /// Absolute increments shrink from one truncation to the next.
    pub fn increments_shrink(&self) -> bool {
        let inc: Vec<f64> = self.sums.windows(2).map(|w| w[1] - w[0]).collect();
        inc.windows(2).all(|w| w[1] <= w[0])
    }
}

pub fn trace_diagnostic(beta: f64, delta: f64, truncations: &[usize]) -> Result<TraceDiagnostic> {
    let sums = truncations
        .iter()
        .map(|&n| {
            let basis = build_basis(Rectangle::unit(), n)?;
            let cov = build_covariance(basis.modes(), beta, delta)?;
            Ok(trace_condition_partial_sum(&basis, &cov))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TraceDiagnostic {
        truncations: truncations.to_vec(),
        sums,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseStatistics {
    pub steps: usize,
    /// Sample variance of `dβ` divided by `dt`, per mode.
    pub variance_ratio: Vec<f64>,
    pub max_cross_correlation: f64,
    /// Aggregating by 4 then 2 reproduces aggregating by 8 bit for bit.
    pub nested_exact: bool,
}

pub fn noise_statistics(steps: usize, seed: u64) -> Result<NoiseStatistics> {
    let modes = ModeSet::from_pairs(vec![(0, 1), (1, 0), (1, 1), (3, 2)])?;
    let grid = TimeGrid::new(1.0, steps)?;
    let path = sample_path(&modes, grid, RngStream::new(seed, 0));
    let dt = grid.dt();
    let variance_ratio = (0..modes.len())
        .map(|k| {
            let inc = path.mode_increments(k);
            inc.iter().map(|x| x * x).sum::<f64>() / inc.len() as f64 / dt
        })
        .collect();
    let mut max_corr = 0.0f64;
    for a in 0..modes.len() {
        for b in a + 1..modes.len() {
            let (x, y) = (path.mode_increments(a), path.mode_increments(b));
            let c = x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>() / (norm(x) * norm(y));
            max_corr = max_corr.max(c.abs());
        }
    }
    let nested_exact = if steps.is_multiple_of(8) {
        path.coarsen(4)?.coarsen(2)? == path.coarsen(8)?
    } else {
        false
    };
    Ok(NoiseStatistics {
        steps,
        variance_ratio,
        max_cross_correlation: max_corr,
        nested_exact,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuMoment {
    pub mode: (usize, usize),
    pub sample_variance: f64,
    pub exact_variance: f64,
    pub standard_error: f64,
}

impl OuMoment {
    pub fn z_score(&self) -> f64 {
        (self.sample_variance - self.exact_variance) / self.standard_error
    }
}

/// Per-mode variance of the fine-grid reference at `T = 1` from independent
/// paths, against the quadrature formula.
pub fn ou_moments(modes: &[(usize, usize)], samples: usize, fine_steps: usize, seed: u64) -> Result<Vec<OuMoment>> {
    if samples < 2 {
        return invalid("moment check needs at least 2 samples");
    }
    let set = ModeSet::from_pairs(modes.to_vec())?;
    let basis = SpectralBasis::from_modes(Rectangle::unit(), set.clone());
    let grid = TimeGrid::new(1.0, 1)?;
    let spec = ProblemSpec::reaction_diffusion(basis.clone(), 2.0, 0.001, grid)?;
    let fine = TimeGrid::new(1.0, fine_steps)?;
    let solver = ReferenceSolver::new(&spec, fine)?;
    let n = set.len();
    let (mut s2, mut s4) = (vec![0.0; n], vec![0.0; n]);
    for s in 0..samples {
        let x = solver.solve(&sample_path(&set, fine, RngStream::new(seed, s as u64)))?;
        for (k, v) in x.values().iter().enumerate() {
            s2[k] += v * v;
            s4[k] += v.powi(4);
        }
    }
    let m = samples as f64;
    set.indices()
        .iter()
        .enumerate()
        .map(|(k, &mode)| {
            let params = OuModeParams::reaction_diffusion(basis.lambdas()[k], spec.covariance().q()[k]);
            let mean2 = s2[k] / m;
            let var4 = (s4[k] / m - mean2 * mean2) * m / (m - 1.0);
            Ok(OuMoment {
                mode,
                sample_variance: mean2,
                exact_variance: ou_variance(&params, 0.0, 1.0)?,
                standard_error: (var4 / m).sqrt(),
            })
        })
        .collect()
}

/// Variance formula against a midpoint brute-force sum with `points` nodes,
/// for `λ = π²`, `q = 1` on `[0, 0.5]`. Returns `(quadrature, brute_force)`.
pub fn ou_quadrature_vs_brute_force(points: usize) -> Result<(f64, f64)> {
    let lam = std::f64::consts::PI.powi(2);
    let params = OuModeParams::reaction_diffusion(lam, 1.0);
    let quad = ou_variance(&params, 0.0, 0.5)?;
    let h = 0.5 / points as f64;
    let brute = (0..points)
        .map(|i| (-2.0 * params.b_integral((i as f64 + 0.5) * h, 0.5)).exp())
        .sum::<f64>()
        * h;
    Ok((quad, brute))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FemChecks {
    pub nx: usize,
    pub mass_sum_error: f64,
    /// `‖K 1‖∞ / max |K_kl|` at `t = 0`.
    pub kernel_residual: f64,
    pub smallest_nonzero: f64,
}

/// P1 checks on the unit square with `D(t) = (1 + e^{-t})/10`, so `D(0) = 0.2`.
pub fn fem_checks(nx: usize) -> Result<FemChecks> {
    let mesh = build_mesh(Rectangle::unit(), nx, nx)?;
    let d = RelaxingDiffusion::default();
    let coeffs = CoefficientField::isotropic(Arc::new(d), d.scale)?;
    let m = assemble_mass(&mesh)?;
    let k = assemble_stiffness(&mesh, &coeffs, 0.0)?;
    let ones = vec![1.0; mesh.nodes().len()];
    let kernel = k.mul_vec(&ones).iter().fold(0.0f64, |a, v| a.max(v.abs())) / k.max_abs();
    let pairs = smallest_eigenpairs(&k, &m, 2, &EigenOptions::default())?;
    Ok(FemChecks {
        nx,
        mass_sum_error: (m.sum() - 1.0).abs(),
        kernel_residual: kernel,
        smallest_nonzero: pairs.values[1],
    })
}

/// Log–log slope of the smallest nonzero eigenvalue error against `h`.
pub fn eigenvalue_h_slope(nxs: &[usize]) -> Result<(f64, Vec<f64>)> {
    if nxs.len() < 2 {
        return invalid("h-convergence needs at least two meshes");
    }
    let exact = 0.2 * std::f64::consts::PI.powi(2);
    let errs = nxs
        .iter()
        .map(|&nx| Ok((fem_checks(nx)?.smallest_nonzero - exact).abs()))
        .collect::<Result<Vec<f64>>>()?;
    let xs: Vec<f64> = nxs.iter().map(|&n| (1.0 / n as f64).ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    Ok((slope, errs))
}

/// Invariant suite run by `validate`.
///
/// The trace line gates on monotone partial sums with shrinking increments;
/// the relative size of the last increment is reported but not gated.
pub fn validate_suite(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();

    let id = scheme_identity(1000, seed)?;
    out.push(CheckOutcome::new(
        "scheme-identity",
        id.max_form_gap <= 1e-10 && id.max_phi1_gap <= 1e-9,
        format!(
            "cases={} form_gap={:.3e} phi1_gap={:.3e}",
            id.cases, id.max_form_gap, id.max_phi1_gap
        ),
    ));

    for beta in [1.5, 2.0] {
        let t = trace_diagnostic(beta, 0.001, &[4, 8, 16, 32])?;
        out.push(CheckOutcome::new(
            "trace-diagnostic",
            t.monotone() && t.increments_shrink(),
            format!(
                "beta={beta} sums={:?} final_increment={:.4}",
                t.sums.iter().map(|s| (s * 1e4).round() / 1e4).collect::<Vec<_>>(),
                t.final_increment()
            ),
        ));
    }

    let ns = noise_statistics(100_000, seed)?;
    let bound = 4.0 * (2.0 / ns.steps as f64).sqrt();
    let var_ok = ns.variance_ratio.iter().all(|r| (r - 1.0).abs() < bound);
    out.push(CheckOutcome::new(
        "noise-statistics",
        var_ok && ns.max_cross_correlation < 4.0 / (ns.steps as f64).sqrt() && ns.nested_exact,
        format!(
            "var/dt={:?} max_corr={:.2e} nested_exact={}",
            ns.variance_ratio.iter().map(|r| (r * 1e4).round() / 1e4).collect::<Vec<_>>(),
            ns.max_cross_correlation,
            ns.nested_exact
        ),
    ));

    let moments = ou_moments(&[(1, 0), (1, 1), (4, 4)], 10_000, 8192, seed)?;
    let worst = moments.iter().map(|m| m.z_score().abs()).fold(0.0, f64::max);
    let (quad, brute) = ou_quadrature_vs_brute_force(1_000_000)?;
    let rel = (quad - brute).abs() / brute;
    out.push(CheckOutcome::new(
        "ou-moments",
        worst <= 3.0 && rel <= 1e-6,
        format!("max_z={worst:.3} quadrature_rel_gap={rel:.2e}"),
    ));
    Ok(out)
}

/// Suite run by `fem-check`.
pub fn fem_suite(nx: usize) -> Result<Vec<CheckOutcome>> {
    let c = fem_checks(nx)?;
    let exact = 0.2 * std::f64::consts::PI.powi(2);
    let mut nxs: Vec<usize> = [8, 16, 32, 64].into_iter().filter(|&n| n <= nx.max(16)).collect();
    if nxs.len() < 2 {
        nxs = vec![8, 16];
    }
    let (slope, _) = eigenvalue_h_slope(&nxs)?;
    Ok(vec![
        CheckOutcome::new("mass-sum", c.mass_sum_error <= 1e-12, format!("nx={nx} error={:.2e}", c.mass_sum_error)),
        CheckOutcome::new(
            "neumann-kernel",
            c.kernel_residual <= 1e-12,
            format!("relative_residual={:.2e}", c.kernel_residual),
        ),
        CheckOutcome::new(
            "smallest-eigenvalue",
            (c.smallest_nonzero - exact).abs() <= 0.01 * exact,
            format!("mu={:.10} target={exact:.10}", c.smallest_nonzero),
        ),
        CheckOutcome::new(
            "eigenvalue-h-slope",
            (slope - 2.0).abs() <= 0.3,
            format!("meshes={nxs:?} slope={slope:.4}"),
        ),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_small() {
        let id = scheme_identity(50, 1).unwrap();
        assert!(id.max_form_gap <= 1e-10, "{id:?}");
        assert!(id.max_phi1_gap <= 1e-9, "{id:?}");
    }

    #[test]
    fn trace_sums_grow_slowly() {
        let t = trace_diagnostic(2.0, 0.001, &[4, 8, 16]).unwrap();
        assert!(t.monotone() && t.increments_shrink());
        assert!(t.final_increment() > 0.0);
    }

    #[test]
    fn noise_stats_small() {
        let ns = noise_statistics(4096, 3).unwrap();
        assert!(ns.nested_exact);
        assert!(ns.variance_ratio.iter().all(|r| (r - 1.0).abs() < 0.15));
    }

    #[test]
    fn ou_brute_force_close() {
        let (q, b) = ou_quadrature_vs_brute_force(100_000).unwrap();
        assert!((q - b).abs() <= 1e-6 * b);
    }

    #[test]
    fn fem_checks_coarse() {
        let c = fem_checks(8).unwrap();
        assert!(c.mass_sum_error < 1e-13);
        assert!(c.kernel_residual < 1e-13);
        let exact = 0.2 * std::f64::consts::PI.powi(2);
        // conforming elements bound eigenvalues from above
        assert!(c.smallest_nonzero > exact && c.smallest_nonzero < 1.1 * exact);
    }
}
