//! One-step maps of the stochastic Magnus-type integrator, trajectory
//! runners, and the exact per-mode Ornstein–Uhlenbeck reference.
//!
//! The operator is frozen at the left end of every step,
//! `A_{h,m} = A_h(t_m)`, and three algebraically related updates are offered:
//!
//! * [`smti_step`]: `X + ΔW + Δt φ1(ΔtA)[A(X + ΔW) + F(t_m, X)]`
//! * [`smti_step_exp_form`]: `e^{ΔtA}X + Δt φ1(ΔtA) F(t_m, X) + e^{ΔtA} ΔW`
//! * [`smti_alt_step`]: `e^{ΔtA}[X + Δt F(t_m, X) + ΔW]`
//!
//! The first two agree exactly in exact arithmetic because
//! `Δt A φ1(ΔtA) = e^{ΔtA} − I`.

use std::fmt;
use std::sync::Arc;

use crate::coefficient::{Constant, RelaxingDiffusion, SharedCoefficient};
use crate::error::{invalid, Error, Result};
use crate::expm::{expm_action, phi1_action, OperatorHandle};
use crate::fem::FemOperator;
use crate::noise::{coarse_increment, NoisePath, TimeGrid};
use crate::quadrature::integrate;
use crate::spectral::{build_covariance, CovarianceSpectrum, SpectralBasis};
use crate::state::{l2_norm, BackendKind, StateVector};

type DriftFn = dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync;

#[derive(Clone)]
pub enum DriftKind {
    Zero,
    /// `F(t, X) = c` in every coordinate.
    Constant(f64),
    /// `F(t, X) = -k(t) X`.
    LinearReaction(SharedCoefficient),
    Custom(String),
}

impl fmt::Debug for DriftKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DriftKind::Zero => f.write_str("Zero"),
            DriftKind::Constant(c) => write!(f, "Constant({c})"),
            DriftKind::LinearReaction(k) => write!(f, "LinearReaction({k:?})"),
            DriftKind::Custom(name) => write!(f, "Custom({name})"),
        }
    }
}

/// Drift `F(t, X)` acting on coordinate vectors. Callers are responsible for
/// the Lipschitz property; nothing here checks it.
#[derive(Clone)]
pub struct DriftFunction {
    kind: DriftKind,
    eval: Arc<DriftFn>,
}

impl fmt::Debug for DriftFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DriftFunction({:?})", self.kind)
    }
}

impl DriftFunction {
    pub fn zero() -> Self {
        DriftFunction {
            kind: DriftKind::Zero,
            eval: Arc::new(|_, x| vec![0.0; x.len()]),
        }
    }

    pub fn constant(c: f64) -> Self {
        DriftFunction {
            kind: DriftKind::Constant(c),
            eval: Arc::new(move |_, x| vec![c; x.len()]),
        }
    }

    pub fn linear_reaction(k: SharedCoefficient) -> Self {
        let rate = k.clone();
        DriftFunction {
            kind: DriftKind::LinearReaction(k),
            eval: Arc::new(move |t, x| {
                let r = rate.value(t);
                x.iter().map(|v| -r * v).collect()
            }),
        }
    }

    pub fn custom(
        name: impl Into<String>,
        f: impl Fn(f64, &[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        DriftFunction {
            kind: DriftKind::Custom(name.into()),
            eval: Arc::new(f),
        }
    }

    pub fn kind(&self) -> &DriftKind {
        &self.kind
    }

    pub fn evaluate(&self, t: f64, x: &[f64]) -> Vec<f64> {
        (self.eval)(t, x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Simulation form `X + ΔW + Δt φ1(ΔtA)[A(X + ΔW) + F]`.
    Smti,
    /// Exponential form of the same scheme.
    SmtiExpForm,
    /// `e^{ΔtA}[X + Δt F + ΔW]`.
    SmtiAlt,
}

fn finite_or(v: Vec<f64>, what: &str) -> Result<Vec<f64>> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(v)
    } else {
        Err(Error::Numerical(format!("non-finite {what}")))
    }
}

fn axpy(a: f64, x: &[f64], y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(x, y)| a * x + y).collect()
}

fn step_values(
    scheme: Scheme,
    op: &OperatorHandle,
    dt: f64,
    x: &[f64],
    dw: &[f64],
    drift: &DriftFunction,
    t: f64,
) -> Result<Vec<f64>> {
    if x.len() != op.dim() || dw.len() != op.dim() {
        return invalid(format!(
            "state/increment lengths {}/{} for operator of dimension {}",
            x.len(),
            dw.len(),
            op.dim()
        ));
    }
    let f = finite_or(drift.evaluate(t, x), "drift value")?;
    if f.len() != x.len() {
        return invalid("drift returned a vector of the wrong length");
    }
    let out = match scheme {
        Scheme::Smti => {
            let w = axpy(1.0, x, dw);
            let inner = axpy(1.0, &op.apply(&w)?, &f);
            let p = phi1_action(op, dt, &inner)?;
            axpy(dt, &p, &w)
        }
        Scheme::SmtiExpForm => {
            let w = axpy(1.0, x, dw);
            let e = expm_action(op, dt, &w)?;
            let p = phi1_action(op, dt, &f)?;
            axpy(dt, &p, &e)
        }
        Scheme::SmtiAlt => {
            let w: Vec<f64> = x.iter().zip(&f).zip(dw).map(|((x, f), d)| x + dt * f + d).collect();
            expm_action(op, dt, &w)?
        }
    };
    finite_or(out, "state after step")
}

fn step_state(
    scheme: Scheme,
    op: &OperatorHandle,
    dt: f64,
    x: &StateVector,
    dw: &StateVector,
    drift: &DriftFunction,
    t: f64,
) -> Result<StateVector> {
    if x.backend() != dw.backend() {
        return invalid("state and noise increment live in different spaces");
    }
    let v = step_values(scheme, op, dt, x.values(), dw.values(), drift, t).map_err(|e| match e {
        Error::Numerical(msg) => Error::Step { step: 0, msg },
        other => other,
    })?;
    Ok(StateVector::from_raw(v, x.backend()))
}

/// One SMTI step in simulation form.
pub fn smti_step(
    op: &OperatorHandle,
    dt: f64,
    x: &StateVector,
    dw: &StateVector,
    drift: &DriftFunction,
    t_m: f64,
) -> Result<StateVector> {
    step_state(Scheme::Smti, op, dt, x, dw, drift, t_m)
}

/// One SMTI step in exponential form.
pub fn smti_step_exp_form(
    op: &OperatorHandle,
    dt: f64,
    x: &StateVector,
    dw: &StateVector,
    drift: &DriftFunction,
    t_m: f64,
) -> Result<StateVector> {
    step_state(Scheme::SmtiExpForm, op, dt, x, dw, drift, t_m)
}

/// One step of the variant that freezes the drift inside the exponential.
pub fn smti_alt_step(
    op: &OperatorHandle,
    dt: f64,
    x: &StateVector,
    dw: &StateVector,
    drift: &DriftFunction,
    t_m: f64,
) -> Result<StateVector> {
    step_state(Scheme::SmtiAlt, op, dt, x, dw, drift, t_m)
}

/// Spatial discretisation of a problem. Noise is always expanded in the
/// cosine basis; the FEM backend interpolates it onto the mesh nodes.
#[derive(Debug, Clone)]
pub enum Discretization {
    Spectral(SpectralBasis),
    Fem {
        op: Arc<FemOperator>,
        basis: SpectralBasis,
    },
}

impl Discretization {
    pub fn basis(&self) -> &SpectralBasis {
        match self {
            Discretization::Spectral(b) => b,
            Discretization::Fem { basis, .. } => basis,
        }
    }

    pub fn backend(&self) -> BackendKind {
        match self {
            Discretization::Spectral(_) => BackendKind::Spectral,
            Discretization::Fem { .. } => BackendKind::Fem,
        }
    }

    pub fn dofs(&self) -> usize {
        match self {
            Discretization::Spectral(b) => b.len(),
            Discretization::Fem { op, .. } => op.dof_count(),
        }
    }

    pub fn l2_norm(&self, v: &StateVector) -> Result<f64> {
        match self {
            Discretization::Spectral(b) => l2_norm(v, b),
            Discretization::Fem { op, .. } => l2_norm(v, op.as_ref()),
        }
    }
}

/// Everything needed to integrate `dX = [A(t)X + F(t, X)]dt + dW` on a time grid.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    disc: Discretization,
    cov: CovarianceSpectrum,
    drift: DriftFunction,
    diffusion: SharedCoefficient,
    x0: StateVector,
    grid: TimeGrid,
}

impl ProblemSpec {
    /// `diffusion` is the scalar `D(t)` of `A(t) = D(t)Δ` on the spectral
    /// backend. The FEM backend takes its operator from the `FemOperator`'s
    /// coefficient field, and uses `diffusion` only for the reference solution.
    pub fn new(
        disc: Discretization,
        cov: CovarianceSpectrum,
        drift: DriftFunction,
        diffusion: SharedCoefficient,
        x0: StateVector,
        grid: TimeGrid,
    ) -> Result<Self> {
        if cov.len() != disc.basis().len() {
            return invalid(format!(
                "covariance has {} modes, basis has {}",
                cov.len(),
                disc.basis().len()
            ));
        }
        if x0.backend() != disc.backend() || x0.len() != disc.dofs() {
            return invalid("initial state does not match the discretisation");
        }
        if !x0.is_finite() {
            return invalid("initial state is not finite");
        }
        const SPOT_CHECKS: usize = 64;
        for s in 0..=SPOT_CHECKS {
            let t = grid.t_final() * s as f64 / SPOT_CHECKS as f64;
            let d = diffusion.value(t);
            if !(d > 0.0 && d.is_finite()) {
                return invalid(format!("diffusion coefficient D({t}) = {d} is not positive"));
            }
        }
        Ok(ProblemSpec {
            disc,
            cov,
            drift,
            diffusion,
            x0,
            grid,
        })
    }

    /// `dX = [D(t)ΔX − k(t)X]dt + dW` with `D(t) = (1 + e^{-t})/10`, `k = 1`,
    /// `X(0) = 0` and `q_{i,j} = (i² + j²)^{-(β+δ)}`.
    pub fn reaction_diffusion(
        basis: SpectralBasis,
        beta: f64,
        delta: f64,
        grid: TimeGrid,
    ) -> Result<Self> {
        let cov = build_covariance(basis.modes(), beta, delta)?;
        let x0 = StateVector::zeros(basis.len(), BackendKind::Spectral);
        ProblemSpec::new(
            Discretization::Spectral(basis),
            cov,
            DriftFunction::linear_reaction(Arc::new(Constant(1.0))),
            Arc::new(RelaxingDiffusion::default()),
            x0,
            grid,
        )
    }

    pub fn discretization(&self) -> &Discretization {
        &self.disc
    }

    pub fn covariance(&self) -> &CovarianceSpectrum {
        &self.cov
    }

    pub fn drift(&self) -> &DriftFunction {
        &self.drift
    }

    pub fn diffusion(&self) -> &SharedCoefficient {
        &self.diffusion
    }

    pub fn initial_state(&self) -> &StateVector {
        &self.x0
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn with_grid(&self, grid: TimeGrid) -> Self {
        ProblemSpec {
            grid,
            ..self.clone()
        }
    }

    pub fn with_initial_state(&self, x0: StateVector) -> Result<Self> {
        ProblemSpec::new(
            self.disc.clone(),
            self.cov.clone(),
            self.drift.clone(),
            self.diffusion.clone(),
            x0,
            self.grid,
        )
    }

    pub fn with_covariance(&self, cov: CovarianceSpectrum) -> Result<Self> {
        ProblemSpec::new(
            self.disc.clone(),
            cov,
            self.drift.clone(),
            self.diffusion.clone(),
            self.x0.clone(),
            self.grid,
        )
    }

    /// `A_h(t)` in the backend's coordinates.
    pub fn operator_at(&self, t: f64) -> Result<OperatorHandle> {
        match &self.disc {
            Discretization::Spectral(b) => {
                let d = self.diffusion.value(t);
                Ok(OperatorHandle::Diagonal(b.lambdas().iter().map(|l| -d * l).collect()))
            }
            Discretization::Fem { op, .. } => op.dense_operator(t),
        }
    }

    /// Maps per-mode noise coefficients into the backend's coordinates.
    pub fn project_noise(&self, coeffs: Vec<f64>) -> Result<StateVector> {
        match &self.disc {
            Discretization::Spectral(_) => Ok(StateVector::from_raw(coeffs, BackendKind::Spectral)),
            Discretization::Fem { op, basis } => op.interpolate(basis, &coeffs),
        }
    }
}

/// Integrates `spec` over its grid, drawing `ΔW_m` from `path` aggregated by `ratio`.
pub fn run_trajectory(
    spec: &ProblemSpec,
    path: &NoisePath,
    scheme: Scheme,
    ratio: usize,
) -> Result<StateVector> {
    let grid = spec.grid();
    let fine = path.grid();
    if fine.steps() != grid.steps() * ratio || (fine.t_final() - grid.t_final()).abs() > 1e-12 * grid.t_final() {
        return invalid(format!(
            "noise grid ({} steps to T = {}) does not nest the scheme grid ({} steps x {ratio})",
            fine.steps(),
            fine.t_final(),
            grid.steps()
        ));
    }
    let dt = grid.dt();
    let mut x = spec.initial_state().clone();
    for m in 0..grid.steps() {
        let t = grid.time(m);
        let op = spec.operator_at(t)?;
        let dw = spec.project_noise(coarse_increment(path, spec.covariance(), m, ratio)?)?;
        x = step_state(scheme, &op, dt, &x, &dw, spec.drift(), t).map_err(|e| match e {
            Error::Step { msg, .. } => Error::Step { step: m, msg },
            other => other,
        })?;
    }
    Ok(x)
}

/// Per-mode OU parameters: `dX = -b(t)X dt + √q dβ`, `b(t) = D(t)λ + k(t)`.
#[derive(Debug, Clone)]
pub struct OuModeParams {
    pub lambda: f64,
    pub q: f64,
    diffusion: SharedCoefficient,
    reaction: SharedCoefficient,
}

impl OuModeParams {
    pub fn new(lambda: f64, q: f64, diffusion: SharedCoefficient, reaction: SharedCoefficient) -> Self {
        OuModeParams {
            lambda,
            q,
            diffusion,
            reaction,
        }
    }

    /// Mode of the reaction–diffusion experiment (`D(t) = (1 + e^{-t})/10`, `k = 1`).
    pub fn reaction_diffusion(lambda: f64, q: f64) -> Self {
        OuModeParams::new(
            lambda,
            q,
            Arc::new(RelaxingDiffusion::default()),
            Arc::new(Constant(1.0)),
        )
    }

    pub fn b(&self, t: f64) -> f64 {
        self.diffusion.value(t) * self.lambda + self.reaction.value(t)
    }

    /// `∫_{t0}^{t1} b`, from the closed-form antiderivatives.
    pub fn b_integral(&self, t0: f64, t1: f64) -> f64 {
        self.lambda * self.diffusion.integral(t0, t1) + self.reaction.integral(t0, t1)
    }
}

/// `q e^{-2∫_{t0}^{t1} b} ∫_{t0}^{t1} e^{2∫_{t0}^{s} b} ds`, evaluated as
/// `q ∫_{t0}^{t1} e^{-2∫_s^{t1} b} ds` so the integrand stays in `[0, 1]`.
pub fn ou_variance(params: &OuModeParams, t0: f64, t1: f64) -> Result<f64> {
    if !(t0 < t1) {
        return invalid(format!("variance interval [{t0}, {t1}] is empty"));
    }
    if params.q == 0.0 {
        return Ok(0.0);
    }
    let v = integrate(|s| (-2.0 * params.b_integral(s, t1)).exp(), t0, t1, 1e-10)?;
    Ok(params.q * v)
}

/// Exact transition `e^{-∫b} x + √Var · gaussian` over `[t0, t1]`.
pub fn ou_reference_step(params: &OuModeParams, t0: f64, t1: f64, x: f64, gaussian: f64) -> Result<f64> {
    let decay = (-params.b_integral(t0, t1)).exp();
    let noise = if gaussian == 0.0 {
        0.0
    } else {
        ou_variance(params, t0, t1)?.sqrt() * gaussian
    };
    Ok(decay * x + noise)
}

/// Reference solver for problems that are diagonal in the cosine basis.
///
/// Each fine step applies the exact integrating factor to the left-point
/// stochastic increment: `x ← e^{-∫b}(x + √q dβ)`. Decay factors are
/// precomputed once per fine grid and reused across samples.
#[derive(Debug, Clone)]
pub struct ReferenceSolver {
    spec: ProblemSpec,
    fine: TimeGrid,
    /// Mode-major decay factors `e^{-∫ b_k}` per fine step.
    decay: Vec<f64>,
    sqrt_q: Vec<f64>,
    x0: Vec<f64>,
}

impl ReferenceSolver {
    pub fn new(spec: &ProblemSpec, fine: TimeGrid) -> Result<Self> {
        let reaction = match spec.drift().kind() {
            DriftKind::LinearReaction(k) => k.clone(),
            DriftKind::Zero => Arc::new(Constant(0.0)) as SharedCoefficient,
            other => {
                return Err(Error::Unsupported(format!(
                    "reference solution needs a drift diagonal in the eigenbasis, got {other:?}"
                )))
            }
        };
        let x0 = match spec.discretization() {
            Discretization::Spectral(_) => spec.initial_state().values().to_vec(),
            Discretization::Fem { basis, .. } => {
                if spec.initial_state().values().iter().any(|&v| v != 0.0) {
                    return Err(Error::Unsupported(
                        "FEM reference requires a zero initial state".into(),
                    ));
                }
                vec![0.0; basis.len()]
            }
        };
        let basis = spec.discretization().basis();
        let steps = fine.steps();
        let d_int: Vec<f64> = (0..steps)
            .map(|s| spec.diffusion().integral(fine.time(s), fine.time(s + 1)))
            .collect();
        let k_int: Vec<f64> = (0..steps)
            .map(|s| reaction.integral(fine.time(s), fine.time(s + 1)))
            .collect();
        let mut decay = Vec::with_capacity(basis.len() * steps);
        for &lam in basis.lambdas() {
            decay.extend(d_int.iter().zip(&k_int).map(|(d, k)| (-(lam * d + k)).exp()));
        }
        Ok(ReferenceSolver {
            spec: spec.clone(),
            fine,
            decay,
            sqrt_q: spec.covariance().q().iter().map(|q| q.sqrt()).collect(),
            x0,
        })
    }

    pub fn fine_grid(&self) -> TimeGrid {
        self.fine
    }

    /// Reference state at `T` driven by `path` (which must live on the fine grid).
    pub fn solve(&self, path: &NoisePath) -> Result<StateVector> {
        if path.grid() != self.fine || path.modes() != self.sqrt_q.len() {
            return invalid("noise path does not match the reference grid");
        }
        let steps = self.fine.steps();
        let coeffs: Vec<f64> = (0..self.sqrt_q.len())
            .map(|k| {
                let dec = &self.decay[k * steps..(k + 1) * steps];
                let sq = self.sqrt_q[k];
                path.mode_increments(k)
                    .iter()
                    .zip(dec)
                    .fold(self.x0[k], |x, (db, d)| d * (x + sq * db))
            })
            .collect();
        match self.spec.discretization() {
            Discretization::Spectral(_) => Ok(StateVector::from_raw(coeffs, BackendKind::Spectral)),
            Discretization::Fem { op, basis } => op.interpolate(basis, &coeffs),
        }
    }
}

/// Coupled reference solution at `T` on the path's own (fine) grid.
pub fn run_reference(spec: &ProblemSpec, path: &NoisePath) -> Result<StateVector> {
    ReferenceSolver::new(spec, path.grid())?.solve(path)
}
