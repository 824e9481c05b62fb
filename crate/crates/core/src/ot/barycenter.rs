use alloc::vec::Vec;

use super::sinkhorn::Problem;
use super::SinkhornConfig;
use crate::error::{Error, Result};
use crate::math;
use crate::matrix::Matrix;
use crate::measures::EmpiricalMeasure;

/// Stop once no support point moves further than this.
pub const MOVEMENT_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct BarycenterTrace {
    pub measure: EmpiricalMeasure,
    /// `Σ_i OT_eps(X_t, nu_i)` at every iterate, including the returned one.
    pub objective: Vec<f64>,
    pub outer_iters: usize,
    pub converged: bool,
}

/// Free-support barycenter with uniform weights, see
/// [`free_support_barycenter_traced`].
pub fn free_support_barycenter(
    measures: &[EmpiricalMeasure],
    support_size: usize,
    cfg: &SinkhornConfig,
    max_outer: usize,
) -> Result<EmpiricalMeasure> {
    free_support_barycenter_traced(measures, support_size, cfg, max_outer).map(|t| t.measure)
}

/// Fixed-point iteration on the support of a uniform measure.
///
/// The support starts from the first input (evenly subsampled, or cycled when
/// `support_size` exceeds its size). Each outer step computes the entropic
/// plan from the current support to every input and moves each support point
/// to the plan-weighted average of its targets, averaged over inputs.
pub fn free_support_barycenter_traced(
    measures: &[EmpiricalMeasure],
    support_size: usize,
    cfg: &SinkhornConfig,
    max_outer: usize,
) -> Result<BarycenterTrace> {
    let first = measures.first().ok_or(Error::Empty("barycenter needs at least one measure"))?;
    if support_size == 0 {
        return Err(Error::Validation("support_size must be >= 1".into()));
    }
    cfg.validate()?;
    let d = first.dim();
    if let Some(m) = measures.iter().find(|m| m.dim() != d) {
        return Err(Error::Dimension(alloc::format!("barycenter inputs mix R^{d} and R^{}", m.dim())));
    }
    let k = first.len();
    let mut support = Matrix::zeros(support_size, d);
    for r in 0..support_size {
        let src = if support_size <= k { r * k / support_size } else { r % k };
        support.row_mut(r).copy_from_slice(first.point(src));
    }
    let mut current = EmpiricalMeasure::uniform(support)?;
    let eps = cfg.epsilon();
    let n = measures.len() as f64;
    let mut objective = Vec::new();
    let mut outer = 0;
    let mut converged = false;
    // potentials of each input's problem, reused by the next outer step
    let mut warm: Vec<Option<(Vec<f64>, Vec<f64>)>> = alloc::vec![None; measures.len()];
    loop {
        let mut next = Matrix::zeros(support_size, d);
        let mut total = 0.0;
        for (nu, w) in measures.iter().zip(warm.iter_mut()) {
            let prob = Problem::new(&current, nu, eps)?;
            let solve = match w.as_ref() {
                Some((f, g)) => {
                    // a restart far from the new optimum can stall at small
                    // eps; annealing from scratch is then much faster
                    let budget = SinkhornConfig { max_iters: (cfg.max_iters / 10).max(1), ..cfg.clone() };
                    let s = prob.solve_from(&budget, 0, Some((f, g)));
                    if s.converged { s } else { prob.solve(cfg, 0) }
                }
                None => prob.solve(cfg, 0),
            };
            *w = Some(solve.state.clone());
            total += solve.value;
            if outer == max_outer || converged {
                continue;
            }
            let plan = prob.plan(&solve);
            for r in 0..support_size {
                let row = plan.row(r);
                let mass: f64 = row.iter().sum();
                if mass <= 0.0 {
                    for (o, x) in next.row_mut(r).iter_mut().zip(current.point(r)) {
                        *o += x / n;
                    }
                    continue;
                }
                let out = next.row_mut(r);
                for (j, &p) in row.iter().enumerate() {
                    if p == 0.0 {
                        continue;
                    }
                    for (o, y) in out.iter_mut().zip(nu.point(j)) {
                        *o += p / mass * y / n;
                    }
                }
            }
        }
        objective.push(total);
        if outer == max_outer || converged {
            break;
        }
        let movement = (0..support_size)
            .map(|r| math::sq_dist(next.row(r), current.point(r)))
            .fold(0.0f64, f64::max);
        current = current.with_points(next)?;
        outer += 1;
        if math::sqrt(movement) < MOVEMENT_TOL {
            converged = true;
        }
    }
    Ok(BarycenterTrace { measure: current, objective, outer_iters: outer, converged })
}
