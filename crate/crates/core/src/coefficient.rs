//! Scalar time-dependent coefficients with known antiderivatives.

use std::fmt::Debug;
use std::sync::Arc;

use crate::quadrature::integrate;

/// A scalar function of time together with its integral over an interval.
pub trait TimeCoefficient: Debug + Send + Sync {
    fn value(&self, t: f64) -> f64;
    /// `∫_{t0}^{t1} value(s) ds`.
    fn integral(&self, t0: f64, t1: f64) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constant(pub f64);

impl TimeCoefficient for Constant {
    fn value(&self, _t: f64) -> f64 {
        self.0
    }

    fn integral(&self, t0: f64, t1: f64) -> f64 {
        self.0 * (t1 - t0)
    }
}

/// `D(t) = scale · (1 + e^{-t})`; the reaction–diffusion experiment uses `scale = 1/10`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelaxingDiffusion {
    pub scale: f64,
}

impl Default for RelaxingDiffusion {
    fn default() -> Self {
        RelaxingDiffusion { scale: 0.1 }
    }
}

impl TimeCoefficient for RelaxingDiffusion {
    fn value(&self, t: f64) -> f64 {
        self.scale * (1.0 + (-t).exp())
    }

    fn integral(&self, t0: f64, t1: f64) -> f64 {
        // e^{-t0} - e^{-t1} = -e^{-t0} expm1(-(t1 - t0))
        let h = t1 - t0;
        self.scale * (h - (-t0).exp() * (-h).exp_m1())
    }
}

/// Arbitrary closure; integrals by adaptive quadrature.
#[derive(Clone)]
pub struct Sampled(pub Arc<dyn Fn(f64) -> f64 + Send + Sync>);

impl Debug for Sampled {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Sampled(..)")
    }
}

impl TimeCoefficient for Sampled {
    fn value(&self, t: f64) -> f64 {
        (self.0)(t)
    }

    fn integral(&self, t0: f64, t1: f64) -> f64 {
        integrate(|s| (self.0)(s), t0, t1, 1e-12).unwrap_or(f64::NAN)
    }
}

pub type SharedCoefficient = Arc<dyn TimeCoefficient>;
