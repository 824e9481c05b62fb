use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("exact solver capacity exceeded: {size} cost entries > {limit}; use sinkhorn_divergence instead")]
    Capacity { size: usize, limit: usize },
    #[error("no training pair has support under the kernel (bandwidth {bandwidth:.6e}, nearest distance {nearest:.6e}); increase rho or the neighbor count")]
    Support { bandwidth: f64, nearest: f64 },
    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Training { epoch: usize, loss: f64 },
    #[error("degenerate denominator: SS_tot = {0:.3e} (target coincides with the barycenter)")]
    DegenerateDenominator(f64),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
}

impl Error {
    /// True for errors caused by numerics rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Training { .. } | Error::Support { .. } | Error::DegenerateDenominator(_)
        )
    }
}
