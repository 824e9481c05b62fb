//! Log-domain Sinkhorn iterations with a hand-written reverse pass.
//!
//! Cost is the full squared Euclidean distance, and the soft-min operators are
//!
//! ```text
//! F(g)[i] = -eps * LSE_j( log b_j + (g[j] - C_ij) / eps )
//! G(f)[j] = -eps * LSE_i( log a_i + (f[i] - C_ij) / eps )
//! ```
//!
//! Two measures that differ are solved by alternating updates
//! `f_t = F(g_{t-1}), g_t = G(f_t)` from zero potentials, and the value is the
//! dual objective `<a, f> + <b, g>` at the last iterate (exact column
//! marginals make the exponential term vanish). The measure updated first is
//! the smaller one in a fixed total order on measures, so swapping the
//! arguments reproduces the same floating-point operations and the value is
//! symmetric bit for bit.
//!
//! Identical measures (the self terms of the debiased divergence) use the
//! symmetric averaged update `f_t = (f_{t-1} + F(f_{t-1})) / 2` followed by one
//! plain step, which converges in a few dozen iterations where the alternating
//! update oscillates.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use super::{OtResult, SinkhornConfig};
use crate::error::{Error, Result};
use crate::math;
use crate::matrix::Matrix;
use crate::measures::EmpiricalMeasure;

/// One Sinkhorn problem. Internally the measure updated first is `x`; when
/// that is `b`, inputs and outputs are swapped at the boundary.
pub(crate) struct Problem<'a> {
    x: &'a EmpiricalMeasure,
    y: &'a EmpiricalMeasure,
    swapped: bool,
    /// `C` row-major (k_x by k_y) and its transpose.
    cost: Vec<f64>,
    cost_t: Vec<f64>,
    log_x: Vec<f64>,
    log_y: Vec<f64>,
    eps: f64,
    /// `x` and `y` are equal as weighted point lists.
    symmetric: bool,
}

pub(crate) struct Solve {
    /// Potentials on `a` and `b`.
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub value: f64,
    pub iters: usize,
    pub converged: bool,
    /// Restart point on `a` and `b`: passing it back to
    /// [`Problem::solve_from`] continues the iteration.
    pub state: (Vec<f64>, Vec<f64>),
    /// Last `unroll + 1` iterates `(f_t, g_t, eps_t)` in internal
    /// orientation, oldest first; `eps_t` produced the iterate. The front entry
    /// is the frozen start of the reverse pass.
    trail: VecDeque<(Vec<f64>, Vec<f64>, f64)>,
}

fn log_weights(w: &[f64]) -> Vec<f64> {
    w.iter().map(|&x| if x > 0.0 { math::ln(x) } else { f64::NEG_INFINITY }).collect()
}

pub(crate) fn check_dims(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension(alloc::format!(
            "measures live in R^{} and R^{}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// Total order on measures: size, then weights, then coordinates.
fn measure_order(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Ordering {
    let lex = |p: &[f64], q: &[f64]| {
        p.iter().zip(q).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
    };
    a.len()
        .cmp(&b.len())
        .then_with(|| lex(a.weights(), b.weights()))
        .then_with(|| lex(a.points().as_slice(), b.points().as_slice()))
}

/// `-eps * log Σ_j exp(logw_j + (pot_j - c_j)/eps)`, stabilised by the max.
#[inline]
fn soft_min(costs: &[f64], pot: &[f64], logw: &[f64], eps: f64, scratch: &mut [f64]) -> f64 {
    let inv_eps = 1.0 / eps;
    let scratch = &mut scratch[..costs.len()];
    let mut m = f64::NEG_INFINITY;
    for (((s, &c), &p), &lw) in scratch.iter_mut().zip(costs).zip(pot).zip(logw) {
        let t = lw + (p - c) * inv_eps;
        *s = t;
        if t > m {
            m = t;
        }
    }
    let sum: f64 = scratch.iter().map(|&t| math::exp(t - m)).sum();
    -eps * (m + math::ln(sum))
}

/// Softmax of `logw_j + (pot_j - c_j)/eps` over `j`, written into `out`.
#[inline]
fn softmax(costs: &[f64], pot: &[f64], logw: &[f64], eps: f64, out: &mut [f64]) {
    let inv_eps = 1.0 / eps;
    let mut m = f64::NEG_INFINITY;
    for (((s, &c), &p), &lw) in out.iter_mut().zip(costs).zip(pot).zip(logw) {
        let t = lw + (p - c) * inv_eps;
        *s = t;
        if t > m {
            m = t;
        }
    }
    let mut sum = 0.0;
    for s in out.iter_mut() {
        *s = math::exp(*s - m);
        sum += *s;
    }
    let inv = 1.0 / sum;
    out.iter_mut().for_each(|s| *s *= inv);
}

fn sup_change(old: &[f64], new: &[f64]) -> f64 {
    old.iter().zip(new).fold(0.0f64, |m, (x, y)| m.max(math::abs(x - y)))
}

impl<'a> Problem<'a> {
    pub fn new(a: &'a EmpiricalMeasure, b: &'a EmpiricalMeasure, eps: f64) -> Result<Self> {
        check_dims(a, b)?;
        let order = if core::ptr::eq(a, b) { Ordering::Equal } else { measure_order(a, b) };
        let (x, y, swapped) = if order == Ordering::Greater { (b, a, true) } else { (a, b, false) };
        let (kx, ky) = (x.len(), y.len());
        let mut cost = vec![0.0; kx * ky];
        let mut cost_t = vec![0.0; kx * ky];
        for i in 0..kx {
            let p = x.point(i);
            for j in 0..ky {
                let c = math::sq_dist(p, y.point(j));
                cost[i * ky + j] = c;
                cost_t[j * kx + i] = c;
            }
        }
        Ok(Self {
            x,
            y,
            swapped,
            cost,
            cost_t,
            log_x: log_weights(x.weights()),
            log_y: log_weights(y.weights()),
            eps,
            symmetric: order == Ordering::Equal,
        })
    }

    /// `F(g)`: potential on `x` from one on `y`.
    fn apply_f(&self, g: &[f64], out: &mut [f64], eps: f64, scratch: &mut [f64]) {
        let ky = self.y.len();
        for (i, o) in out.iter_mut().enumerate() {
            *o = soft_min(&self.cost[i * ky..(i + 1) * ky], g, &self.log_y, eps, scratch);
        }
    }

    /// `G(f)`: potential on `y` from one on `x`.
    fn apply_g(&self, f: &[f64], out: &mut [f64], eps: f64, scratch: &mut [f64]) {
        let kx = self.x.len();
        for (j, o) in out.iter_mut().enumerate() {
            *o = soft_min(&self.cost_t[j * kx..(j + 1) * kx], f, &self.log_x, eps, scratch);
        }
    }

    /// First temperature of the annealing schedule: the smallest power of two
    /// at or above the largest cost, so it is locally constant in the points.
    fn start_eps(&self, ratio: Option<f64>) -> f64 {
        if ratio.is_none() {
            return self.eps;
        }
        let max_cost = self.cost.iter().fold(0.0f64, |m, &c| m.max(c));
        let mut e = 1.0;
        while e < max_cost {
            e *= 2.0;
        }
        while e / 2.0 >= max_cost && e / 2.0 > self.eps {
            e /= 2.0;
        }
        e.max(self.eps)
    }

    fn orient<T>(&self, p: T, q: T) -> (T, T) {
        if self.swapped {
            (q, p)
        } else {
            (p, q)
        }
    }

    pub fn solve(&self, cfg: &SinkhornConfig, keep: usize) -> Solve {
        self.solve_from(cfg, keep, None)
    }

    /// Iterates from `init` (potentials on `a` and `b`) at the target
    /// temperature when given, without annealing; from zero potentials with
    /// annealing otherwise.
    pub fn solve_from(&self, cfg: &SinkhornConfig, keep: usize, init: Option<(&[f64], &[f64])>) -> Solve {
        let (kx, ky) = (self.x.len(), self.y.len());
        let init = init.map(|(p, q)| self.orient(p, q)).filter(|(p, q)| p.len() == kx && q.len() == ky);
        let (f, g, start) = match init {
            Some((p, q)) => (p.to_vec(), q.to_vec(), self.eps),
            None => (vec![0.0; kx], vec![0.0; ky], self.start_eps(cfg.anneal)),
        };
        let mut s = if self.symmetric {
            self.run_averaged(cfg, keep, f, start)
        } else {
            self.run_alternating(cfg, keep, f, g, start)
        };
        if self.swapped {
            core::mem::swap(&mut s.f, &mut s.g);
            let (p, q) = s.state;
            s.state = (q, p);
        }
        s
    }

    /// Next temperature, or `None` once the target is reached.
    fn anneal_next(&self, eps_t: f64, cfg: &SinkhornConfig) -> Option<f64> {
        (eps_t > self.eps).then(|| (eps_t * cfg.anneal.unwrap_or(0.0)).max(self.eps))
    }

    fn run_alternating(&self, cfg: &SinkhornConfig, keep: usize, mut f: Vec<f64>, mut g: Vec<f64>, start: f64) -> Solve {
        let (kx, ky) = (self.x.len(), self.y.len());
        let mut fo = vec![0.0; kx];
        let mut go = vec![0.0; ky];
        let mut scratch = vec![0.0; kx.max(ky)];
        let mut trail = VecDeque::with_capacity(keep + 1);
        if keep > 0 {
            trail.push_back((f.clone(), g.clone(), start));
        }
        let mut eps = start;
        let mut last_eps = start;
        let mut iters = 0;
        let mut converged = false;
        while iters < cfg.max_iters {
            let eps_t = eps;
            last_eps = eps_t;
            self.apply_f(&g, &mut fo, eps_t, &mut scratch);
            self.apply_g(&fo, &mut go, eps_t, &mut scratch);
            iters += 1;
            let change = sup_change(&f, &fo).max(sup_change(&g, &go));
            core::mem::swap(&mut f, &mut fo);
            core::mem::swap(&mut g, &mut go);
            if keep > 0 {
                if trail.len() == keep + 1 {
                    trail.pop_front();
                }
                trail.push_back((f.clone(), g.clone(), eps_t));
            }
            if let Some(next) = self.anneal_next(eps_t, cfg) {
                eps = next;
                continue;
            }
            if change < cfg.tol {
                converged = true;
                break;
            }
        }
        if last_eps != self.eps {
            // annealing ran out of iterations: finish at the target temperature
            self.apply_f(&g, &mut fo, self.eps, &mut scratch);
            self.apply_g(&fo, &mut go, self.eps, &mut scratch);
            core::mem::swap(&mut f, &mut fo);
            core::mem::swap(&mut g, &mut go);
            if keep > 0 {
                if trail.len() == keep + 1 {
                    trail.pop_front();
                }
                trail.push_back((f.clone(), g.clone(), self.eps));
            }
        }
        let value = dot(self.x.weights(), &f) + dot(self.y.weights(), &g);
        Solve { state: (f.clone(), g.clone()), f, g, value, iters, converged, trail }
    }

    /// Averaged self iteration on `f` (here `x == y` and `g == f`).
    fn run_averaged(&self, cfg: &SinkhornConfig, keep: usize, mut f: Vec<f64>, start: f64) -> Solve {
        let k = self.x.len();
        let mut fo = vec![0.0; k];
        let mut scratch = vec![0.0; k];
        let mut trail = VecDeque::with_capacity(keep + 1);
        if keep > 0 {
            trail.push_back((f.clone(), Vec::new(), start));
        }
        let mut eps = start;
        let mut iters = 0;
        let mut converged = false;
        while iters < cfg.max_iters {
            let eps_t = eps;
            self.apply_f(&f, &mut fo, eps_t, &mut scratch);
            for (x, y) in fo.iter_mut().zip(&f) {
                *x = 0.5 * (*x + y);
            }
            iters += 1;
            let change = sup_change(&f, &fo);
            core::mem::swap(&mut f, &mut fo);
            if keep > 0 {
                if trail.len() == keep + 1 {
                    trail.pop_front();
                }
                trail.push_back((f.clone(), Vec::new(), eps_t));
            }
            if let Some(next) = self.anneal_next(eps_t, cfg) {
                eps = next;
                continue;
            }
            if change < cfg.tol {
                converged = true;
                break;
            }
        }
        self.apply_f(&f, &mut fo, self.eps, &mut scratch);
        let value = 2.0 * dot(self.x.weights(), &fo);
        Solve { f: fo.clone(), g: fo, value, iters, converged, state: (f.clone(), f), trail }
    }

    /// Reverse pass of the reported value through the stored trail.
    ///
    /// Returns `(∂value/∂a, ∂value/∂b)` for the support points.
    pub fn backward(&self, solve: &Solve) -> (Matrix, Matrix) {
        let cbar = if self.symmetric { self.adjoint_averaged(solve) } else { self.adjoint_alternating(solve) };
        let (kx, ky) = (self.x.len(), self.y.len());
        let d = self.x.dim();
        let mut gx = Matrix::zeros(kx, d);
        let mut gy = Matrix::zeros(ky, d);
        for i in 0..kx {
            let p = self.x.point(i);
            for j in 0..ky {
                let c = cbar[i * ky + j];
                if c == 0.0 {
                    continue;
                }
                let q = self.y.point(j);
                for k in 0..d {
                    let diff = 2.0 * c * (p[k] - q[k]);
                    gx[(i, k)] += diff;
                    gy[(j, k)] -= diff;
                }
            }
        }
        self.orient(gx, gy)
    }

    /// `∂<u, F(g)>` at temperature `eps`: accumulates `u_i P_ij` into `cbar`
    /// and returns the adjoint reaching `g`, `-Pᵀu` (`P` the row softmax).
    fn adjoint_f(&self, g: &[f64], eps: f64, u: &[f64], cbar: &mut [f64], row: &mut [f64]) -> Vec<f64> {
        let ky = self.y.len();
        let mut to_g = vec![0.0; ky];
        for (i, &ui) in u.iter().enumerate() {
            if ui == 0.0 {
                continue;
            }
            softmax(&self.cost[i * ky..(i + 1) * ky], g, &self.log_y, eps, row);
            let cb = &mut cbar[i * ky..(i + 1) * ky];
            for j in 0..ky {
                let c = ui * row[j];
                to_g[j] -= c;
                cb[j] += c;
            }
        }
        to_g
    }

    /// `∂<v, G(f)>`, the column counterpart of [`Self::adjoint_f`].
    fn adjoint_g(&self, f: &[f64], eps: f64, v: &[f64], cbar: &mut [f64], col: &mut [f64]) -> Vec<f64> {
        let (kx, ky) = (self.x.len(), self.y.len());
        let mut to_f = vec![0.0; kx];
        for (j, &vj) in v.iter().enumerate() {
            if vj == 0.0 {
                continue;
            }
            softmax(&self.cost_t[j * kx..(j + 1) * kx], f, &self.log_x, eps, col);
            for i in 0..kx {
                let c = vj * col[i];
                to_f[i] -= c;
                cbar[i * ky + j] += c;
            }
        }
        to_f
    }

    fn adjoint_alternating(&self, solve: &Solve) -> Vec<f64> {
        let (kx, ky) = (self.x.len(), self.y.len());
        let mut cbar = vec![0.0; kx * ky];
        let mut row = vec![0.0; ky];
        let mut col = vec![0.0; kx];
        let mut fbar = self.x.weights().to_vec();
        let mut gbar = self.y.weights().to_vec();
        for s in (1..solve.trail.len()).rev() {
            let (f_s, _, eps_s) = &solve.trail[s];
            let g_prev = &solve.trail[s - 1].1;
            // g_s = G(f_s)
            for (fb, t) in fbar.iter_mut().zip(self.adjoint_g(f_s, *eps_s, &gbar, &mut cbar, &mut col)) {
                *fb += t;
            }
            // f_s = F(g_{s-1}); f_{s-1} feeds nothing else
            gbar = self.adjoint_f(g_prev, *eps_s, &fbar, &mut cbar, &mut row);
            fbar.iter_mut().for_each(|x| *x = 0.0);
        }
        cbar
    }

    /// Reverse pass for the averaged self iteration, `value = 2<a, F(f_T)>`.
    /// Entry `C_ij` enters only row `i` of `F`, so row softmaxes suffice.
    fn adjoint_averaged(&self, solve: &Solve) -> Vec<f64> {
        let k = self.x.len();
        let mut cbar = vec![0.0; k * k];
        let mut row = vec![0.0; k];
        if let Some((f_last, _, _)) = solve.trail.back() {
            let seed: Vec<f64> = self.x.weights().iter().map(|w| 2.0 * w).collect();
            let mut fbar = self.adjoint_f(f_last, self.eps, &seed, &mut cbar, &mut row);
            for s in (1..solve.trail.len()).rev() {
                let eps_s = solve.trail[s].2;
                let f_prev = &solve.trail[s - 1].0;
                let u: Vec<f64> = fbar.iter().map(|x| 0.5 * x).collect();
                let to_f = self.adjoint_f(f_prev, eps_s, &u, &mut cbar, &mut row);
                fbar = u.iter().zip(&to_f).map(|(x, y)| x + y).collect();
            }
        }
        cbar
    }

    /// Transport plan `a_i b_j exp((f_i + g_j - C_ij)/eps)` at the solved
    /// potentials, rows indexed by `a`.
    pub fn plan(&self, solve: &Solve) -> Matrix {
        let (kx, ky) = (self.x.len(), self.y.len());
        let (f, g) = self.orient(&solve.f, &solve.g);
        let inv = 1.0 / self.eps;
        let mut p = Matrix::zeros(kx, ky);
        for i in 0..kx {
            for j in 0..ky {
                p[(i, j)] = math::exp(self.log_x[i] + self.log_y[j] + (f[i] + g[j] - self.cost[i * ky + j]) * inv);
            }
        }
        if self.swapped {
            p.transpose()
        } else {
            p
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Raw entropic transport cost `OT_eps(a, b)`.
pub fn entropic_ot(a: &EmpiricalMeasure, b: &EmpiricalMeasure, cfg: &SinkhornConfig) -> Result<OtResult> {
    cfg.validate()?;
    let prob = Problem::new(a, b, cfg.epsilon())?;
    let s = prob.solve(cfg, 0);
    Ok(OtResult { value: s.value, potentials: (s.f, s.g), converged: s.converged, iters_used: s.iters })
}

/// Debiased Sinkhorn divergence
/// `S(a,b) = OT(a,b) - OT(a,a)/2 - OT(b,b)/2` (or raw `OT(a,b)` when
/// `cfg.debiased` is false).
///
/// Non-convergence is not an error: the result carries `converged = false`.
pub fn sinkhorn_divergence(a: &EmpiricalMeasure, b: &EmpiricalMeasure, cfg: &SinkhornConfig) -> Result<OtResult> {
    cfg.validate()?;
    check_dims(a, b)?;
    let eps = cfg.epsilon();
    let cross = Problem::new(a, b, eps)?.solve(cfg, 0);
    if !cfg.debiased {
        return Ok(OtResult {
            value: cross.value,
            potentials: (cross.f, cross.g),
            converged: cross.converged,
            iters_used: cross.iters,
        });
    }
    let aa = Problem::new(a, a, eps)?.solve(cfg, 0);
    let bb = Problem::new(b, b, eps)?.solve(cfg, 0);
    // summing the self terms first keeps the value bitwise symmetric
    let value = cross.value - 0.5 * (aa.value + bb.value);
    let fa = cross.f.iter().zip(&aa.f).map(|(x, y)| x - y).collect();
    let gb = cross.g.iter().zip(&bb.g).map(|(x, y)| x - y).collect();
    Ok(OtResult {
        value,
        potentials: (fa, gb),
        converged: cross.converged && aa.converged && bb.converged,
        iters_used: cross.iters.max(aa.iters).max(bb.iters),
    })
}

/// Value and gradient of the (debiased) divergence with respect to the support
/// points of `a`. `b_self` optionally supplies a precomputed `OT(b,b)`.
pub fn divergence_value_and_grad(
    a: &EmpiricalMeasure,
    b: &EmpiricalMeasure,
    cfg: &SinkhornConfig,
    b_self: Option<f64>,
) -> Result<(f64, Matrix)> {
    divergence_value_and_grad_warm(a, b, cfg, b_self, &mut WarmStart::default())
}

/// Potentials carried between calls of [`divergence_value_and_grad_warm`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WarmStart {
    cross: Option<(Vec<f64>, Vec<f64>)>,
    self_term: Option<Vec<f64>>,
}

impl WarmStart {
    pub fn is_empty(&self) -> bool {
        self.cross.is_none() && self.self_term.is_none()
    }
}

/// [`divergence_value_and_grad`] restarting from the potentials stored in
/// `warm` (when their sizes fit) and storing the new ones. A warm start skips
/// annealing, and the reverse pass treats the restart point as constant.
pub fn divergence_value_and_grad_warm(
    a: &EmpiricalMeasure,
    b: &EmpiricalMeasure,
    cfg: &SinkhornConfig,
    b_self: Option<f64>,
    warm: &mut WarmStart,
) -> Result<(f64, Matrix)> {
    cfg.validate()?;
    check_dims(a, b)?;
    let eps = cfg.epsilon();
    let keep = cfg.unroll_iters;
    let cross_p = Problem::new(a, b, eps)?;
    let init = warm.cross.as_ref().map(|(f, g)| (f.as_slice(), g.as_slice()));
    let cross = cross_p.solve_from(cfg, keep, init);
    let (mut grad, _) = cross_p.backward(&cross);
    warm.cross = Some(cross.state.clone());
    if !cfg.debiased {
        return Ok((cross.value, grad));
    }
    let self_p = Problem::new(a, a, eps)?;
    let init = warm.self_term.as_ref().map(|f| (f.as_slice(), f.as_slice()));
    let selfs = self_p.solve_from(cfg, keep, init);
    let (gx, gy) = self_p.backward(&selfs);
    warm.self_term = Some(selfs.state.0.clone());
    for ((g, x), y) in grad.as_mut_slice().iter_mut().zip(gx.as_slice()).zip(gy.as_slice()) {
        *g -= 0.5 * (x + y);
    }
    let bb = match b_self {
        Some(v) => v,
        None => Problem::new(b, b, eps)?.solve(cfg, 0).value,
    };
    Ok((cross.value - 0.5 * selfs.value - 0.5 * bb, grad))
}

/// Gradient of [`sinkhorn_divergence`] with respect to the points of
/// `a_pushed`, by reverse-mode differentiation through the last
/// `cfg.unroll_iters` Sinkhorn iterations.
pub fn sinkhorn_grad_points(a_pushed: &EmpiricalMeasure, b: &EmpiricalMeasure, cfg: &SinkhornConfig) -> Result<Matrix> {
    divergence_value_and_grad(a_pushed, b, cfg, None).map(|(_, g)| g)
}

/// Entropic plan between `a` and `b` together with the raw OT result.
pub fn entropic_plan(a: &EmpiricalMeasure, b: &EmpiricalMeasure, cfg: &SinkhornConfig) -> Result<(Matrix, OtResult)> {
    cfg.validate()?;
    let prob = Problem::new(a, b, cfg.epsilon())?;
    let s = prob.solve(cfg, 0);
    let plan = prob.plan(&s);
    Ok((plan, OtResult { value: s.value, potentials: (s.f, s.g), converged: s.converged, iters_used: s.iters }))
}
