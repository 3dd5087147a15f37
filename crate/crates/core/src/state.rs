use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    Spectral,
    Fem,
}

/// Solution coefficients: per-mode for the spectral backend, per-DOF nodal
/// values for the finite element backend.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    values: Vec<f64>,
    backend: BackendKind,
}

impl StateVector {
    pub fn new(values: Vec<f64>, backend: BackendKind) -> Result<Self> {
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return invalid(format!("state entry {k} is not finite"));
        }
        Ok(StateVector { values, backend })
    }

    pub fn zeros(len: usize, backend: BackendKind) -> Self {
        StateVector {
            values: vec![0.0; len],
            backend,
        }
    }

    pub(crate) fn from_raw(values: Vec<f64>, backend: BackendKind) -> Self {
        StateVector { values, backend }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn backend(&self) -> BackendKind {
        self.backend
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `self - other`, requiring matching backend and length.
    pub fn difference(&self, other: &StateVector) -> Result<StateVector> {
        if self.backend != other.backend || self.len() != other.len() {
            return invalid("state vectors live in different spaces");
        }
        Ok(StateVector {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
            backend: self.backend,
        })
    }
}

/// Discretisation that knows how to measure `L²(Λ)` norms of its coordinates.
pub trait NormContext {
    fn backend(&self) -> BackendKind;
    fn dofs(&self) -> usize;
    /// `‖v‖²` for a coordinate vector of length [`NormContext::dofs`].
    fn norm_squared(&self, values: &[f64]) -> f64;
}

pub fn l2_norm(v: &StateVector, ctx: &impl NormContext) -> Result<f64> {
    if v.backend() != ctx.backend() {
        return Err(Error::InvalidArgument(format!(
            "{:?} state measured in a {:?} context",
            v.backend(),
            ctx.backend()
        )));
    }
    if v.len() != ctx.dofs() {
        return invalid(format!(
            "state has {} entries, context expects {}",
            v.len(),
            ctx.dofs()
        ));
    }
    Ok(ctx.norm_squared(v.values()).max(0.0).sqrt())
}
