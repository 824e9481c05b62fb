//! Kernels on W2 distances and the nearest-neighbor bandwidth rule.

use alloc::vec::Vec;
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    #[default]
    Gaussian,
    Epanechnikov,
}

impl KernelFamily {
    /// Unscaled profile `K(u)`.
    pub fn profile(self, u: f64) -> f64 {
        match self {
            KernelFamily::Gaussian => math::exp(-0.5 * u * u) / math::sqrt(2.0 * PI),
            KernelFamily::Epanechnikov => 0.75 * (1.0 - u * u).max(0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub bandwidth: f64,
    pub ambient_dim: usize,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, bandwidth: f64, ambient_dim: usize) -> Result<Self> {
        let spec = Self { family, bandwidth, ambient_dim };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return Err(Error::Validation(alloc::format!("bandwidth must be > 0, got {}", self.bandwidth)));
        }
        if self.ambient_dim == 0 {
            return Err(Error::Validation("ambient dimension must be >= 1".into()));
        }
        Ok(())
    }
}

/// `h^{-d} K(dist / h)`.
pub fn kernel_weight(dist: f64, spec: &KernelSpec) -> Result<f64> {
    if !(dist >= 0.0) {
        return Err(Error::Validation(alloc::format!("kernel distance must be >= 0, got {dist}")));
    }
    spec.validate()?;
    let h = spec.bandwidth;
    let prefactor = 1.0 / powi(h, spec.ambient_dim);
    Ok(prefactor * spec.family.profile(dist / h))
}

fn powi(x: f64, n: usize) -> f64 {
    (0..n).fold(1.0, |acc, _| acc * x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandwidthRule {
    /// Rank of the neighbor whose distance sets the scale.
    pub neighbors: usize,
    pub scale: f64,
}

impl Default for BandwidthRule {
    fn default() -> Self {
        Self { neighbors: 10, scale: 1.0 }
    }
}

impl BandwidthRule {
    pub fn validate(&self) -> Result<()> {
        if self.neighbors == 0 {
            return Err(Error::Validation("neighbor count must be >= 1".into()));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Validation(alloc::format!("bandwidth scale must be > 0, got {}", self.scale)));
        }
        Ok(())
    }
}

/// Bandwidth returned when every distance is zero.
pub const H_MIN: f64 = 1e-6;

/// `rho * r_k`: the scaled distance to the `k`-th nearest neighbor.
///
/// When the order statistic is zero (all neighbors coincide with the
/// reference) the result is the floor `H_MIN * (1 + max distance)`.
pub fn select_bandwidth(dists: &[f64], rule: &BandwidthRule) -> Result<f64> {
    rule.validate()?;
    if dists.len() < rule.neighbors {
        return Err(Error::Validation(alloc::format!(
            "{} distances for the {}-th nearest neighbor",
            dists.len(),
            rule.neighbors
        )));
    }
    if let Some(d) = dists.iter().find(|d| !(d.is_finite() && **d >= 0.0)) {
        return Err(Error::Validation(alloc::format!("invalid distance {d}")));
    }
    let mut sorted: Vec<f64> = dists.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rk = sorted[rule.neighbors - 1];
    let h = rule.scale * rk;
    if h > 0.0 {
        Ok(h)
    } else {
        let diameter = sorted.last().copied().unwrap_or(0.0);
        Ok(H_MIN * (1.0 + diameter))
    }
}
