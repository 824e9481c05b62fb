//! Weighted point clouds and regression datasets.
//!
//! Every constructor validates; there is no way to obtain an
//! [`EmpiricalMeasure`] whose weights leave the simplex or whose coordinates
//! are non-finite.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::matrix::Matrix;

/// Absolute tolerance on the weight sum.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

/// A probability measure `Σ_j w_j δ_{x_j}` on `R^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMeasure", into = "RawMeasure")]
pub struct EmpiricalMeasure {
    points: Matrix,
    weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawMeasure {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl TryFrom<RawMeasure> for EmpiricalMeasure {
    type Error = Error;
    fn try_from(raw: RawMeasure) -> Result<Self> {
        let points = Matrix::from_rows(&raw.points)?;
        EmpiricalMeasure::new(points, raw.weights)
    }
}

impl From<EmpiricalMeasure> for RawMeasure {
    fn from(m: EmpiricalMeasure) -> Self {
        RawMeasure { points: m.points.iter_rows().map(<[f64]>::to_vec).collect(), weights: m.weights }
    }
}

impl EmpiricalMeasure {
    /// Weighted measure; validates the simplex and finiteness invariants.
    pub fn new(points: Matrix, weights: Vec<f64>) -> Result<Self> {
        let (k, d) = points.shape();
        if k == 0 {
            return Err(Error::Dimension("measure needs at least one support point".into()));
        }
        if d == 0 {
            return Err(Error::Dimension("support points need dimension >= 1".into()));
        }
        if weights.len() != k {
            return Err(Error::Dimension(format!("{} weights for {k} points", weights.len())));
        }
        if let Some(i) = points.as_slice().iter().position(|x| !x.is_finite()) {
            return Err(Error::Validation(format!("non-finite coordinate at point {}", i / d)));
        }
        if let Some(i) = weights.iter().position(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Validation(format!("weight {i} is {}", weights[i])));
        }
        let total: f64 = weights.iter().sum();
        if math::abs(total - 1.0) > WEIGHT_SUM_TOL {
            return Err(Error::Validation(format!("weights sum to {total}, expected 1")));
        }
        Ok(Self { points, weights })
    }

    /// Uniform weights `1/k` on the given points.
    pub fn uniform(points: Matrix) -> Result<Self> {
        let k = points.rows();
        if k == 0 {
            return Err(Error::Dimension("measure needs at least one support point".into()));
        }
        let w = 1.0 / k as f64;
        Self::new(points, alloc::vec![w; k])
    }

    /// Uniform measure from row slices.
    pub fn from_points<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        Self::uniform(Matrix::from_rows(rows)?)
    }

    /// Single atom at `x`.
    pub fn dirac(x: &[f64]) -> Result<Self> {
        Self::uniform(Matrix::row_vector(x))
    }

    #[inline]
    pub fn points(&self) -> &Matrix {
        &self.points
    }

    #[inline]
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.points.rows()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.points.cols()
    }

    #[inline]
    pub fn point(&self, j: usize) -> &[f64] {
        self.points.row(j)
    }

    /// True when every weight equals `1/k` to within rounding.
    pub fn is_uniform(&self) -> bool {
        let w = 1.0 / self.len() as f64;
        self.weights.iter().all(|&x| math::abs(x - w) <= 1e-12)
    }

    /// Same weights, new points (e.g. a pushforward). Validates finiteness.
    pub fn with_points(&self, points: Matrix) -> Result<Self> {
        if points.shape().0 != self.len() {
            return Err(Error::Dimension(format!(
                "replacement has {} points, measure has {}",
                points.rows(),
                self.len()
            )));
        }
        Self::new(points, self.weights.clone())
    }

    /// Weighted mean of the support.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = alloc::vec![0.0; self.dim()];
        for (x, &w) in self.points.iter_rows().zip(&self.weights) {
            for (mi, xi) in m.iter_mut().zip(x) {
                *mi += w * xi;
            }
        }
        m
    }

    /// Largest pairwise distance over the support.
    pub fn diameter(&self) -> f64 {
        let mut best: f64 = 0.0;
        for i in 0..self.len() {
            for j in i + 1..self.len() {
                best = best.max(math::sq_dist(self.point(i), self.point(j)));
            }
        }
        math::sqrt(best)
    }

    /// Applies a support permutation: output point `j` is input point `perm[j]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let rows: Vec<&[f64]> = perm.iter().map(|&p| self.point(p)).collect();
        let weights = perm.iter().map(|&p| self.weights[p]).collect();
        Self::new(Matrix::from_rows(&rows)?, weights)
    }

    /// Translates every support point by `t`.
    pub fn translated(&self, t: &[f64]) -> Result<Self> {
        let mut p = self.points.clone();
        for i in 0..p.rows() {
            for (x, ti) in p.row_mut(i).iter_mut().zip(t) {
                *x += ti;
            }
        }
        self.with_points(p)
    }
}

/// Largest distance between any two points of the union of two supports.
pub fn joint_diameter(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> f64 {
    let mut best = a.diameter().max(b.diameter());
    for x in a.points().iter_rows() {
        for y in b.points().iter_rows() {
            best = best.max(math::sqrt(math::sq_dist(x, y)));
        }
    }
    best
}

pub type PairId = u64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurePair {
    pub id: PairId,
    pub source: EmpiricalMeasure,
    pub target: EmpiricalMeasure,
}

/// Ordered `(source, target)` pairs sharing one ambient dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDataset", into = "RawDataset")]
pub struct RegressionDataset {
    dim: usize,
    pairs: Vec<MeasurePair>,
}

#[derive(Serialize, Deserialize)]
struct RawDataset {
    dim: usize,
    pairs: Vec<MeasurePair>,
}

impl TryFrom<RawDataset> for RegressionDataset {
    type Error = Error;
    fn try_from(raw: RawDataset) -> Result<Self> {
        RegressionDataset::new(raw.dim, raw.pairs)
    }
}

impl From<RegressionDataset> for RawDataset {
    fn from(d: RegressionDataset) -> Self {
        RawDataset { dim: d.dim, pairs: d.pairs }
    }
}

impl RegressionDataset {
    pub fn new(dim: usize, pairs: Vec<MeasurePair>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Dimension("dataset dimension must be >= 1".into()));
        }
        let mut seen = BTreeSet::new();
        for p in &pairs {
            if p.source.dim() != dim || p.target.dim() != dim {
                return Err(Error::Validation(format!(
                    "pair {} has dimensions ({}, {}), dataset dimension is {dim}",
                    p.id,
                    p.source.dim(),
                    p.target.dim()
                )));
            }
            if !seen.insert(p.id) {
                return Err(Error::Validation(format!("duplicate pair id {}", p.id)));
            }
        }
        Ok(Self { dim, pairs })
    }

    /// Pairs with ids `0..n`.
    pub fn from_measures(dim: usize, pairs: Vec<(EmpiricalMeasure, EmpiricalMeasure)>) -> Result<Self> {
        let pairs = pairs
            .into_iter()
            .enumerate()
            .map(|(i, (source, target))| MeasurePair { id: i as PairId, source, target })
            .collect();
        Self::new(dim, pairs)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    #[inline]
    pub fn pairs(&self) -> &[MeasurePair] {
        &self.pairs
    }

    pub fn ids(&self) -> impl Iterator<Item = PairId> + '_ {
        self.pairs.iter().map(|p| p.id)
    }

    pub fn sources(&self) -> impl Iterator<Item = &EmpiricalMeasure> {
        self.pairs.iter().map(|p| &p.source)
    }

    pub fn targets(&self) -> impl Iterator<Item = &EmpiricalMeasure> {
        self.pairs.iter().map(|p| &p.target)
    }

    /// Subset by positional indices, keeping ids.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let pairs = indices.iter().map(|&i| self.pairs[i].clone()).collect();
        Self::new(self.dim, pairs)
    }

    pub fn into_pairs(self) -> Vec<MeasurePair> {
        self.pairs
    }
}
