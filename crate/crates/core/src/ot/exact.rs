//! Exact W2 solvers for small supports.
//!
//! Equal-size uniform measures reduce to a linear assignment problem, solved
//! with the shortest-augmenting-path Hungarian method in `O(k^3)`. General
//! weights go through a transportation LP solved by successive shortest paths
//! with reduced-cost potentials.

use alloc::vec;
use alloc::vec::Vec;

use super::sinkhorn::check_dims;
use crate::error::{Error, Result};
use crate::math;
use crate::matrix::Matrix;
use crate::measures::EmpiricalMeasure;

/// Largest `k_a * k_b` accepted by [`exact_w2_squared`].
pub const EXACT_CAPACITY: usize = 1_000_000;

/// Squared-distance cost matrix between two supports.
pub fn cost_matrix(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Matrix {
    let mut c = Matrix::zeros(a.len(), b.len());
    for i in 0..a.len() {
        for j in 0..b.len() {
            c[(i, j)] = math::sq_dist(a.point(i), b.point(j));
        }
    }
    c
}

/// Minimum-cost perfect matching on a square cost matrix.
///
/// Returns `(assignment, total)` where row `i` is matched to column
/// `assignment[i]`.
pub fn assignment(cost: &Matrix) -> Result<(Vec<usize>, f64)> {
    let (n, m) = cost.shape();
    if n != m {
        return Err(Error::Shape(alloc::format!("assignment needs a square matrix, got {n}x{m}")));
    }
    if n == 0 {
        return Ok((Vec::new(), 0.0));
    }
    // 1-indexed potentials; column 0 is a virtual start.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    let mut minv = vec![inf; m + 1];
    let mut used = vec![false; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        minv.iter_mut().for_each(|x| *x = inf);
        used.iter_mut().for_each(|x| *x = false);
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            let row = cost.row(i0 - 1);
            for j in 1..=m {
                if !used[j] {
                    let cur = row[j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0usize; n];
    for j in 1..=m {
        assign[p[j] - 1] = j - 1;
    }
    let total = assign.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum();
    Ok((assign, total))
}

const MASS_EPS: f64 = 1e-15;

/// Sparse optimal coupling: `(i, j, mass)` triples.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    pub entries: Vec<(usize, usize, f64)>,
    pub cost: f64,
}

/// Exact transportation LP between weight vectors `a`, `b` with cost `c`.
pub fn transport_lp(a: &[f64], b: &[f64], c: &Matrix) -> Result<Coupling> {
    let (na, nb) = (a.len(), b.len());
    if c.shape() != (na, nb) {
        return Err(Error::Shape(alloc::format!("cost is {:?}, weights are {na} and {nb}", c.shape())));
    }
    let mut supply = a.to_vec();
    let mut demand = b.to_vec();
    let mut flow = Matrix::zeros(na, nb);
    // Node layout: sources 0..na, sinks na..na+nb.
    let nv = na + nb;
    let mut pot = vec![0.0; nv];
    let mut dist = vec![0.0; nv];
    let mut prev = vec![usize::MAX; nv];
    let mut done = vec![false; nv];
    loop {
        let remaining: f64 = supply.iter().sum();
        let wanted: f64 = demand.iter().sum();
        if remaining <= MASS_EPS || wanted <= MASS_EPS {
            break;
        }
        // Multi-source Dijkstra over the residual graph with reduced costs.
        for v in 0..nv {
            dist[v] = if v < na && supply[v] > MASS_EPS { 0.0 } else { f64::INFINITY };
            prev[v] = usize::MAX;
            done[v] = false;
        }
        loop {
            let mut best = usize::MAX;
            let mut bd = f64::INFINITY;
            for v in 0..nv {
                if !done[v] && dist[v] < bd {
                    bd = dist[v];
                    best = v;
                }
            }
            if best == usize::MAX {
                break;
            }
            done[best] = true;
            if best < na {
                let i = best;
                for j in 0..nb {
                    let v = na + j;
                    if done[v] {
                        continue;
                    }
                    let rc = c[(i, j)] + pot[i] - pot[v];
                    let nd = bd + rc.max(0.0);
                    if nd < dist[v] {
                        dist[v] = nd;
                        prev[v] = i;
                    }
                }
            } else {
                let j = best - na;
                for i in 0..na {
                    if done[i] || flow[(i, j)] <= MASS_EPS {
                        continue;
                    }
                    let rc = -c[(i, j)] + pot[best] - pot[i];
                    let nd = bd + rc.max(0.0);
                    if nd < dist[i] {
                        dist[i] = nd;
                        prev[i] = best;
                    }
                }
            }
        }
        let mut sink = usize::MAX;
        let mut sd = f64::INFINITY;
        for j in 0..nb {
            let v = na + j;
            if demand[j] > MASS_EPS && dist[v] < sd {
                sd = dist[v];
                sink = v;
            }
        }
        if sink == usize::MAX {
            break;
        }
        for v in 0..nv {
            // capping at the sink distance keeps every residual reduced cost >= 0
            pot[v] += dist[v].min(sd);
        }
        // Bottleneck along the path.
        let mut amount = demand[sink - na];
        let mut v = sink;
        let mut start = sink;
        while prev[v] != usize::MAX {
            let u = prev[v];
            if u >= na {
                // backward arc: sink u -> source v
                amount = amount.min(flow[(v, u - na)]);
            }
            start = u;
            v = u;
        }
        amount = amount.min(supply[start]);
        let mut v = sink;
        while prev[v] != usize::MAX {
            let u = prev[v];
            if u < na {
                flow[(u, v - na)] += amount;
            } else {
                flow[(v, u - na)] -= amount;
            }
            v = u;
        }
        supply[start] -= amount;
        demand[sink - na] -= amount;
    }
    let mut entries = Vec::new();
    let mut cost = 0.0;
    for i in 0..na {
        for j in 0..nb {
            let m = flow[(i, j)];
            if m > MASS_EPS {
                entries.push((i, j, m));
                cost += m * c[(i, j)];
            }
        }
    }
    Ok(Coupling { entries, cost })
}

/// Exact squared 2-Wasserstein distance for small supports.
pub fn exact_w2_squared(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<f64> {
    check_dims(a, b)?;
    let size = a.len() * b.len();
    if size > EXACT_CAPACITY {
        return Err(Error::Capacity { size, limit: EXACT_CAPACITY });
    }
    let c = cost_matrix(a, b);
    if a.len() == b.len() && a.is_uniform() && b.is_uniform() {
        let (_, total) = assignment(&c)?;
        Ok((total / a.len() as f64).max(0.0))
    } else {
        Ok(transport_lp(a.weights(), b.weights(), &c)?.cost.max(0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force(c: &Matrix) -> f64 {
        fn rec(c: &Matrix, row: usize, used: &mut [bool], acc: f64, best: &mut f64) {
            if row == c.rows() {
                *best = best.min(acc);
                return;
            }
            for j in 0..c.cols() {
                if !used[j] {
                    used[j] = true;
                    rec(c, row + 1, used, acc + c[(row, j)], best);
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(c, 0, &mut vec![false; c.cols()], 0.0, &mut best);
        best
    }

    #[test]
    fn assignment_matches_enumeration() {
        let c = Matrix::from_rows(&[[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]]).unwrap();
        let (a, total) = assignment(&c).unwrap();
        assert_eq!(total, brute_force(&c));
        assert_eq!(total, 5.0);
        let mut seen = a.clone();
        seen.sort();
        assert_eq!(seen, vec![0, 1, 2]);
    }

    #[test]
    fn lp_agrees_with_assignment_on_uniform() {
        let c = Matrix::from_rows(&[[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]]).unwrap();
        let w = [1.0 / 3.0; 3];
        let lp = transport_lp(&w, &w, &c).unwrap();
        assert!((lp.cost - 5.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn lp_splits_mass() {
        // one source at 0, two sinks at 1 and 2 with masses 0.25/0.75
        let c = Matrix::from_rows(&[[1.0, 4.0]]).unwrap();
        let lp = transport_lp(&[1.0], &[0.25, 0.75], &c).unwrap();
        assert!((lp.cost - (0.25 + 3.0)).abs() < 1e-12);
    }

    #[test]
    fn two_point_example() {
        let a = EmpiricalMeasure::from_points(&[[0.0], [1.0]]).unwrap();
        let b = EmpiricalMeasure::from_points(&[[1.0], [2.0]]).unwrap();
        assert!((exact_w2_squared(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(exact_w2_squared(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn diracs() {
        let a = EmpiricalMeasure::dirac(&[0.0, 0.0]).unwrap();
        let b = EmpiricalMeasure::dirac(&[3.0, 4.0]).unwrap();
        assert_eq!(exact_w2_squared(&a, &b).unwrap(), 25.0);
    }

    #[test]
    fn capacity_guard() {
        let rows: Vec<[f64; 1]> = (0..1001).map(|i| [i as f64]).collect();
        let a = EmpiricalMeasure::from_points(&rows).unwrap();
        assert!(matches!(exact_w2_squared(&a, &a), Err(Error::Capacity { .. })));
    }
}
