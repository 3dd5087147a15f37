//! Monte Carlo strong-error sweeps, rate fitting and report output.

use std::fmt::Write as _;
use std::sync::Arc;

use crate::coefficient::RelaxingDiffusion;
use crate::error::{invalid, Error, Result};
use crate::fem::{build_mesh, BoundaryCondition, CoefficientField, FemOperator};
use crate::integrators::{run_trajectory, Discretization, ProblemSpec, ReferenceSolver, Scheme};
use crate::noise::{sample_path, NoisePath, RngStream, TimeGrid};
use crate::spectral::{build_basis, Rectangle};
use crate::state::{BackendKind, StateVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Spectral,
    /// P1 elements on an `nx × nx` mesh of the unit square, Neumann boundary.
    Fem { nx: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Samples are spread over a rayon pool; `None` uses the global pool.
    /// Falls back to sequential when the `parallel` feature is off.
    Parallel { threads: Option<usize> },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialState {
    Zero,
    /// `amplitude · e_{i,j}`.
    Mode { i: usize, j: usize, amplitude: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub beta: f64,
    pub delta: f64,
    pub t_final: f64,
    /// `dt = T·2^{-k}` for `k` in `halvings.0 ..= halvings.1`.
    pub halvings: (u32, u32),
    /// Reference step is the smallest `dt` divided by this.
    pub fine_ratio: usize,
    pub modes: usize,
    pub samples: usize,
    pub base_seed: u64,
    pub scheme: Scheme,
    pub backend: Backend,
    /// Multiplies every covariance weight; `0` switches the noise off.
    pub noise_scale: f64,
    pub initial: InitialState,
    pub execution: Execution,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            beta: 2.0,
            delta: 0.001,
            t_final: 1.0,
            halvings: (4, 9),
            fine_ratio: 16,
            modes: 32,
            samples: 100,
            base_seed: 42,
            scheme: Scheme::Smti,
            backend: Backend::Spectral,
            noise_scale: 1.0,
            initial: InitialState::Zero,
            execution: Execution::Parallel { threads: None },
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) || !(self.delta > 0.0 && self.delta.is_finite()) {
            return invalid(format!("beta and delta must be positive, got {} and {}", self.beta, self.delta));
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return invalid(format!("final time must be positive, got {}", self.t_final));
        }
        let (lo, hi) = self.halvings;
        if lo > hi || hi > 24 {
            return invalid(format!("dt halvings {lo}:{hi} must satisfy lo <= hi <= 24"));
        }
        if !self.fine_ratio.is_power_of_two() {
            return invalid(format!("fine ratio must be a power of two, got {}", self.fine_ratio));
        }
        if self.samples < 2 {
            return invalid("at least 2 samples are required");
        }
        if self.modes == 0 {
            return invalid("mode truncation must be positive");
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return invalid(format!("noise scale must be nonnegative, got {}", self.noise_scale));
        }
        if let Backend::Fem { nx } = self.backend {
            if nx == 0 {
                return invalid("FEM mesh needs at least one subdivision");
            }
        }
        if let Execution::Parallel { threads: Some(0) } = self.execution {
            return invalid("thread count must be positive");
        }
        Ok(())
    }

    /// Step counts, coarsest first (so `dt` descends).
    pub fn step_counts(&self) -> Vec<usize> {
        (self.halvings.0..=self.halvings.1).map(|k| 1usize << k).collect()
    }

    pub fn dt_list(&self) -> Vec<f64> {
        self.step_counts()
            .iter()
            .map(|&m| self.t_final / m as f64)
            .collect()
    }

    pub fn fine_grid(&self) -> Result<TimeGrid> {
        let finest = *self.step_counts().last().expect("nonempty halvings");
        TimeGrid::new(self.t_final, finest * self.fine_ratio)
    }

    /// The reaction–diffusion problem this sweep integrates, on the finest scheme grid.
    pub fn problem(&self) -> Result<ProblemSpec> {
        self.validate()?;
        let basis = build_basis(Rectangle::unit(), self.modes)?;
        let finest = *self.step_counts().last().expect("nonempty halvings");
        let grid = TimeGrid::new(self.t_final, finest)?;
        let base = ProblemSpec::reaction_diffusion(basis.clone(), self.beta, self.delta, grid)?;
        let base = base.with_covariance(base.covariance().scaled(self.noise_scale))?;
        let spectral_x0 = match self.initial {
            InitialState::Zero => vec![0.0; basis.len()],
            InitialState::Mode { i, j, amplitude } => {
                let k = basis.modes().position((i, j)).ok_or_else(|| {
                    Error::InvalidArgument(format!("initial mode ({i}, {j}) is outside the truncation"))
                })?;
                let mut v = vec![0.0; basis.len()];
                v[k] = amplitude;
                v
            }
        };
        match self.backend {
            Backend::Spectral => base.with_initial_state(StateVector::new(spectral_x0, BackendKind::Spectral)?),
            Backend::Fem { nx } => {
                let mesh = build_mesh(Rectangle::unit(), nx, nx)?;
                let d = RelaxingDiffusion::default();
                let coeffs = CoefficientField::isotropic(Arc::new(d), d.scale)?;
                let op = Arc::new(FemOperator::new(mesh, coeffs, BoundaryCondition::Neumann)?);
                let x0 = op.interpolate(&basis, &spectral_x0)?;
                ProblemSpec::new(
                    Discretization::Fem { op, basis },
                    base.covariance().clone(),
                    base.drift().clone(),
                    base.diffusion().clone(),
                    x0,
                    grid,
                )
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub dt: f64,
    pub rms_error: f64,
    pub half_width_95: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    /// Sorted by `dt`, largest first.
    pub rows: Vec<ConvergenceRow>,
    pub fitted_slope: f64,
    /// Root-mean-square residual of the log–log fit.
    pub fit_residual: f64,
}

/// `(rms, half_width)` of per-sample errors; the half-width is the
/// delta-method 95% band `1.96·sd(e²) / (√n · 2·rms)`.
pub fn strong_error(errors: &[f64]) -> Result<(f64, f64)> {
    let n = errors.len();
    if n < 2 {
        return invalid(format!("strong error needs at least 2 samples, got {n}"));
    }
    if errors.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
        return invalid("per-sample errors must be finite and nonnegative");
    }
    let sq: Vec<f64> = errors.iter().map(|e| e * e).collect();
    let mean = sq.iter().sum::<f64>() / n as f64;
    let rms = mean.sqrt();
    if rms == 0.0 {
        return Ok((0.0, 0.0));
    }
    let var = sq.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let half = 1.96 * var.sqrt() / ((n as f64).sqrt() * 2.0 * rms);
    Ok((rms, half))
}

fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let res = (xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - icpt - slope * x).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    (slope, icpt, res)
}

fn log_points(rows: &[ConvergenceRow]) -> Result<(Vec<f64>, Vec<f64>)> {
    if rows.len() < 2 {
        return invalid("rate fit needs at least 2 rows");
    }
    if let Some(r) = rows.iter().find(|r| !(r.rms_error > 0.0 && r.dt > 0.0)) {
        return invalid(format!("cannot fit a rate through error {} at dt {}", r.rms_error, r.dt));
    }
    Ok(rows.iter().map(|r| (r.dt.ln(), r.rms_error.ln())).unzip())
}

/// Least-squares slope of `log(rms)` against `log(dt)`.
pub fn fit_rate(rows: &[ConvergenceRow]) -> Result<f64> {
    let (xs, ys) = log_points(rows)?;
    Ok(least_squares(&xs, &ys).0)
}

fn map_samples<T, F>(n: usize, exec: Execution, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    let results: Vec<Result<T>> = match exec {
        Execution::Sequential => (0..n).map(&f).collect(),
        #[cfg(feature = "parallel")]
        Execution::Parallel { threads } => {
            use rayon::prelude::*;
            let run = || (0..n).into_par_iter().map(&f).collect::<Vec<_>>();
            match threads {
                Some(k) => rayon::ThreadPoolBuilder::new()
                    .num_threads(k)
                    .build()
                    .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?
                    .install(run),
                None => run(),
            }
        }
        #[cfg(not(feature = "parallel"))]
        Execution::Parallel { .. } => (0..n).map(&f).collect(),
    };
    // first failure by sample index, independent of scheduling
    results.into_iter().collect()
}

fn in_sweep(sample: usize, dt: f64) -> impl Fn(Error) -> Error {
    move |e| Error::Sweep {
        sample: sample as u64,
        dt,
        source: Box::new(e),
    }
}

/// Strong errors of the scheme against the coupled fine-grid reference.
/// The result depends only on the config, never on the worker count.
pub fn run_convergence(cfg: &SweepConfig) -> Result<ConvergenceReport> {
    let spec = cfg.problem()?;
    let fine = cfg.fine_grid()?;
    let solver = ReferenceSolver::new(&spec, fine)?;
    let counts = cfg.step_counts();
    let specs: Vec<ProblemSpec> = counts
        .iter()
        .map(|&m| TimeGrid::new(cfg.t_final, m).map(|g| spec.with_grid(g)))
        .collect::<Result<_>>()?;
    let modes = spec.discretization().basis().modes();
    let silent = spec.covariance().q().iter().all(|&q| q == 0.0);

    let per_sample = |s: usize| -> Result<Vec<f64>> {
        let path = if silent {
            NoisePath::zero(fine, modes.len())
        } else {
            sample_path(modes, fine, RngStream::new(cfg.base_seed, s as u64))
        };
        let reference = solver.solve(&path).map_err(in_sweep(s, fine.dt()))?;
        let mut errs = vec![0.0; counts.len()];
        let mut current = path;
        for d in (0..counts.len()).rev() {
            let dt = cfg.t_final / counts[d] as f64;
            current = current.coarsen(current.grid().steps() / counts[d])?;
            let x = run_trajectory(&specs[d], &current, cfg.scheme, 1).map_err(in_sweep(s, dt))?;
            errs[d] = spec.discretization().l2_norm(&x.difference(&reference)?)?;
        }
        Ok(errs)
    };
    let errors = map_samples(cfg.samples, cfg.execution, per_sample)?;

    let rows = counts
        .iter()
        .enumerate()
        .map(|(d, &m)| {
            let col: Vec<f64> = errors.iter().map(|e| e[d]).collect();
            let (rms, half) = strong_error(&col)?;
            Ok(ConvergenceRow {
                dt: cfg.t_final / m as f64,
                rms_error: rms,
                half_width_95: half,
                samples: cfg.samples,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (xs, ys) = log_points(&rows)?;
    let (slope, _, residual) = least_squares(&xs, &ys);
    Ok(ConvergenceReport {
        rows,
        fitted_slope: slope,
        fit_residual: residual,
    })
}

/// Decimal rendering with `digits` significant digits and no exponent.
pub fn format_significant(x: f64, digits: usize) -> String {
    assert!(digits >= 1);
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return format!("{:.*}", digits - 1, 0.0);
    }
    let sci = format!("{:.*e}", digits - 1, x.abs());
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i64 = exp.parse().expect("integer exponent");
    let digs: String = mantissa.chars().filter(|c| c.is_ascii_digit()).collect();
    let sign = if x < 0.0 { "-" } else { "" };
    let body = if exp < 0 {
        format!("0.{}{}", "0".repeat((-exp - 1) as usize), digs)
    } else {
        let int_len = exp as usize + 1;
        if int_len >= digs.len() {
            format!("{}{}", digs, "0".repeat(int_len - digs.len()))
        } else {
            format!("{}.{}", &digs[..int_len], &digs[int_len..])
        }
    };
    format!("{sign}{body}")
}

pub const CSV_HEADER: &str = "dt,rms_error,half_width_95,samples";

impl ConvergenceReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                format_significant(r.dt, 17),
                format_significant(r.rms_error, 17),
                format_significant(r.half_width_95, 17),
                r.samples
            );
        }
        let _ = writeln!(out, "# slope={}", format_significant(self.fitted_slope, 17));
        out
    }

    /// Static log–log plot of the rows with 95% bands and the fitted line.
    pub fn to_svg(&self) -> String {
        let (w, h, pad) = (640.0, 480.0, 60.0);
        let pts: Vec<(f64, f64, f64)> = self
            .rows
            .iter()
            .filter(|r| r.rms_error > 0.0)
            .map(|r| (r.dt.log10(), r.rms_error.log10(), r.half_width_95))
            .collect();
        let mut svg = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
             <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        );
        if pts.is_empty() {
            svg.push_str("</svg>\n");
            return svg;
        }
        let lo_hi = |v: Vec<f64>| {
            let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if hi - lo < 1e-9 { (lo - 0.5, hi + 0.5) } else { (lo - 0.1 * (hi - lo), hi + 0.1 * (hi - lo)) }
        };
        let (x0, x1) = lo_hi(pts.iter().map(|p| p.0).collect());
        let (y0, y1) = lo_hi(
            pts.iter()
                .flat_map(|p| {
                    let r = 10f64.powf(p.1);
                    [(r + p.2).log10(), (r - p.2).max(r * 1e-3).log10()]
                })
                .collect(),
        );
        let sx = |x: f64| pad + (x - x0) / (x1 - x0) * (w - 2.0 * pad);
        let sy = |y: f64| h - pad - (y - y0) / (y1 - y0) * (h - 2.0 * pad);
        let _ = writeln!(
            svg,
            "<polyline fill=\"none\" stroke=\"black\" points=\"{},{} {},{} {},{}\"/>",
            pad, pad, pad, h - pad, w - pad, h - pad
        );
        for (x, y, hw) in &pts {
            let r = 10f64.powf(*y);
            let (top, bot) = ((r + hw).log10(), (r - hw).max(r * 1e-3).log10());
            let _ = writeln!(
                svg,
                "<line x1=\"{0:.2}\" y1=\"{1:.2}\" x2=\"{0:.2}\" y2=\"{2:.2}\" stroke=\"gray\"/>\n\
                 <circle cx=\"{0:.2}\" cy=\"{3:.2}\" r=\"4\" fill=\"steelblue\"/>",
                sx(*x),
                sy(top),
                sy(bot),
                sy(*y)
            );
            let _ = writeln!(
                svg,
                "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" text-anchor=\"middle\">{:.4}</text>",
                sx(*x),
                h - pad + 16.0,
                10f64.powf(*x)
            );
        }
        let (xs, ys): (Vec<f64>, Vec<f64>) = pts.iter().map(|p| (p.0, p.1)).unzip();
        if xs.len() >= 2 {
            let (slope, icpt, _) = least_squares(&xs, &ys);
            let _ = writeln!(
                svg,
                "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"firebrick\" stroke-dasharray=\"6,4\"/>",
                sx(x0),
                sy(icpt + slope * x0),
                sx(x1),
                sy(icpt + slope * x1)
            );
        }
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-size=\"14\">strong error vs dt (log-log), slope = {:.4}</text>\n</svg>",
            pad,
            pad - 20.0,
            self.fitted_slope
        );
        svg
    }
}
