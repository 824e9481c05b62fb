//! 2-Wasserstein machinery: entropic Sinkhorn divergences with gradients,
//! exact small-instance solvers, and free-support barycenters.

mod barycenter;
mod exact;
mod sinkhorn;

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use barycenter::{free_support_barycenter, free_support_barycenter_traced, BarycenterTrace};
pub use exact::{assignment, cost_matrix, exact_w2_squared, transport_lp, Coupling, EXACT_CAPACITY};
pub use sinkhorn::{
    divergence_value_and_grad, divergence_value_and_grad_warm, entropic_ot, entropic_plan, sinkhorn_divergence,
    sinkhorn_grad_points, WarmStart,
};

use crate::error::{Error, Result};
use crate::measures::EmpiricalMeasure;

/// How the `blur` value maps to the entropic temperature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlurConvention {
    /// `blur` is the temperature `eps` multiplying `KL(pi | a x b)`.
    #[default]
    Temperature,
    /// `blur` is a length scale; `eps = blur^2`.
    LengthScale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SinkhornConfig {
    pub blur: f64,
    pub max_iters: usize,
    /// Stop once the sup-norm change of both potentials drops below this.
    pub tol: f64,
    pub debiased: bool,
    /// Iterations differentiated through by the reverse pass.
    pub unroll_iters: usize,
    pub convention: BlurConvention,
    /// Temperature annealing: start near the largest cost and multiply the
    /// temperature by this ratio each iteration until it reaches `epsilon()`.
    /// `None` iterates at the target temperature from the start.
    pub anneal: Option<f64>,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            blur: 0.15,
            max_iters: 1000,
            tol: 1e-6,
            debiased: true,
            unroll_iters: 50,
            convention: BlurConvention::Temperature,
            anneal: Some(0.5),
        }
    }
}

impl SinkhornConfig {
    pub fn with_blur(blur: f64) -> Self {
        Self { blur, ..Self::default() }
    }

    /// Entropic temperature implied by `blur` and the convention.
    pub fn epsilon(&self) -> f64 {
        match self.convention {
            BlurConvention::Temperature => self.blur,
            BlurConvention::LengthScale => self.blur * self.blur,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.blur > 0.0 && self.blur.is_finite()) {
            return Err(Error::Validation(alloc::format!("blur must be > 0, got {}", self.blur)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Validation(alloc::format!("tol must be > 0, got {}", self.tol)));
        }
        if let Some(r) = self.anneal {
            if !(r > 0.0 && r < 1.0) {
                return Err(Error::Validation(alloc::format!("anneal ratio must be in (0, 1), got {r}")));
            }
        }
        if self.max_iters == 0 || self.unroll_iters == 0 {
            return Err(Error::Validation("max_iters and unroll_iters must be positive".into()));
        }
        if self.unroll_iters > self.max_iters {
            return Err(Error::Validation(alloc::format!(
                "unroll_iters ({}) exceeds max_iters ({})",
                self.unroll_iters,
                self.max_iters
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OtResult {
    /// Squared-distance scale.
    pub value: f64,
    /// Dual potentials on the first and second measure (debiased when the
    /// divergence is).
    pub potentials: (Vec<f64>, Vec<f64>),
    pub converged: bool,
    pub iters_used: usize,
}

/// Which W2² backend a caller wants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceBackend {
    /// Exact when `k_a * k_b <= AUTO_EXACT_LIMIT`, Sinkhorn otherwise.
    #[default]
    Auto,
    Exact,
    Sinkhorn,
}

/// Size under which [`DistanceBackend::Auto`] uses the exact solver.
pub const AUTO_EXACT_LIMIT: usize = 250_000;

/// Squared W2 through the requested backend. The Sinkhorn route returns the
/// debiased divergence clamped at zero.
pub fn w2_squared(
    a: &EmpiricalMeasure,
    b: &EmpiricalMeasure,
    backend: DistanceBackend,
    cfg: &SinkhornConfig,
) -> Result<f64> {
    let exact = match backend {
        DistanceBackend::Exact => true,
        DistanceBackend::Sinkhorn => false,
        DistanceBackend::Auto => a.len() * b.len() <= AUTO_EXACT_LIMIT,
    };
    if exact {
        exact_w2_squared(a, b)
    } else {
        let cfg = SinkhornConfig { debiased: true, ..cfg.clone() };
        Ok(sinkhorn_divergence(a, b, &cfg)?.value.max(0.0))
    }
}

/// W2 distance (square root of [`w2_squared`]).
pub fn w2(a: &EmpiricalMeasure, b: &EmpiricalMeasure, backend: DistanceBackend, cfg: &SinkhornConfig) -> Result<f64> {
    w2_squared(a, b, backend, cfg).map(crate::math::sqrt)
}
