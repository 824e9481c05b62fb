//! Synthetic pair generators: Gaussian clouds under rotation-plus-translation
//! maps, and Gaussian mixtures under a radius-dependent blend of rotation and
//! shear.
//!
//! Every pair draws from its own ChaCha8 stream: the generator is seeded with
//! `seed` and pair `i` uses `set_stream(i)`, so pair `i` does not depend on how
//! many pairs are generated. The pilot sample behind the default GMM threshold
//! uses stream `u64::MAX`.

use alloc::vec;
use alloc::vec::Vec;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::matrix::Matrix;
use crate::measures::{EmpiricalMeasure, MeasurePair, PairId, RegressionDataset};

const PILOT_STREAM: u64 = u64::MAX;
const PILOT_SIZE: usize = 256;

fn pair_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaussianGenConfig {
    pub n: usize,
    pub k: usize,
    /// Standard deviation of the per-pair target shift.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for GaussianGenConfig {
    fn default() -> Self {
        Self { n: 100, k: 100, noise_sigma: 0.05, seed: 0 }
    }
}

impl GaussianGenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.k == 0 {
            return Err(Error::Validation("n and k must be >= 1".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Validation(alloc::format!("noise sigma must be >= 0, got {}", self.noise_sigma)));
        }
        Ok(())
    }
}

/// Ground-truth map of the Gaussian generator for mean `m`: rotation by
/// `2|m|` and translation `m / 2`.
pub fn gaussian_truth(m: [f64; 2]) -> ([[f64; 2]; 2], [f64; 2]) {
    let theta = 2.0 * math::sqrt(m[0] * m[0] + m[1] * m[1]);
    (rotation(theta), [0.5 * m[0], 0.5 * m[1]])
}

pub fn rotation(theta: f64) -> [[f64; 2]; 2] {
    let (s, c) = (math::sin(theta), math::cos(theta));
    [[c, -s], [s, c]]
}

pub fn shear(k: f64) -> [[f64; 2]; 2] {
    [[1.0, k], [0.0, 1.0]]
}

fn apply2(a: &[[f64; 2]; 2], x: &[f64]) -> [f64; 2] {
    [a[0][0] * x[0] + a[0][1] * x[1], a[1][0] * x[0] + a[1][1] * x[1]]
}

/// Gaussian pair with a given mean; `rng` supplies the point and noise draws.
fn gaussian_pair(m: [f64; 2], k: usize, sigma: f64, rng: &mut ChaCha8Rng) -> Result<(EmpiricalMeasure, EmpiricalMeasure)> {
    let mut xs = Matrix::zeros(k, 2);
    for j in 0..k {
        let row = xs.row_mut(j);
        row[0] = m[0] + normal(rng);
        row[1] = m[1] + normal(rng);
    }
    let shift = [sigma * normal(rng), sigma * normal(rng)];
    let (a, t) = gaussian_truth(m);
    let mut ys = Matrix::zeros(k, 2);
    for j in 0..k {
        let y = apply2(&a, xs.row(j));
        ys.row_mut(j).copy_from_slice(&[y[0] + t[0] + shift[0], y[1] + t[1] + shift[1]]);
    }
    Ok((EmpiricalMeasure::uniform(xs)?, EmpiricalMeasure::uniform(ys)?))
}

/// Gaussian pairs in the plane: mean `m ~ U([-3,3]^2)`, source `N(m, I)`,
/// target `R(2|m|) x + m/2 + e` with one noise draw `e ~ N(0, sigma^2 I)`
/// shared by all points of a pair.
pub fn gen_gaussian_pairs(cfg: &GaussianGenConfig) -> Result<RegressionDataset> {
    cfg.validate()?;
    let pairs = (0..cfg.n)
        .map(|i| {
            let mut rng = pair_rng(cfg.seed, i as u64);
            let m = [rng.random_range(-3.0..=3.0), rng.random_range(-3.0..=3.0)];
            gaussian_pair(m, cfg.k, cfg.noise_sigma, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    RegressionDataset::from_measures(2, pairs)
}

/// Gaussian pair for a fixed mean, drawn from stream 0 of `seed`.
pub fn gaussian_pair_with_mean(m: [f64; 2], k: usize, sigma: f64, seed: u64) -> Result<(EmpiricalMeasure, EmpiricalMeasure)> {
    if k == 0 {
        return Err(Error::Validation("k must be >= 1".into()));
    }
    gaussian_pair(m, k, sigma, &mut pair_rng(seed, 0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GmmGenConfig {
    pub n: usize,
    pub k: usize,
    /// Ambient dimension. The map acts on the first two coordinates; the rest
    /// only receive the translation and noise.
    pub dim: usize,
    pub components: usize,
    /// Dirichlet concentration shared by all components.
    pub weight_conc: f64,
    pub mean_low: f64,
    pub mean_high: f64,
    pub component_sigma: f64,
    pub alpha_rot: f64,
    pub kappa0: f64,
    pub kappa1: f64,
    /// `None`: median RMS radius of a pilot sample of sources.
    pub r_thresh: Option<f64>,
    pub gamma: f64,
    pub beta: f64,
    pub tau: f64,
    pub seed: u64,
}

impl Default for GmmGenConfig {
    fn default() -> Self {
        Self {
            n: 100,
            k: 100,
            dim: 2,
            components: 3,
            weight_conc: 1.0,
            mean_low: -3.0,
            mean_high: 3.0,
            component_sigma: 0.5,
            alpha_rot: 0.3,
            kappa0: 0.2,
            kappa1: 0.05,
            r_thresh: None,
            gamma: 0.5,
            beta: 0.5,
            tau: 0.05,
            seed: 0,
        }
    }
}

impl GmmGenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: alloc::string::String| Err(Error::Validation(msg));
        if self.n == 0 || self.k == 0 {
            return bad("n and k must be >= 1".into());
        }
        if self.dim < 2 {
            return bad(alloc::format!("dimension must be >= 2, got {}", self.dim));
        }
        if self.components == 0 {
            return bad("need at least one mixture component".into());
        }
        if !(self.weight_conc > 0.0 && self.weight_conc.is_finite()) {
            return bad(alloc::format!("weight concentration must be > 0, got {}", self.weight_conc));
        }
        if !(self.mean_low < self.mean_high) || !self.mean_low.is_finite() || !self.mean_high.is_finite() {
            return bad(alloc::format!("mean box [{}, {}] is empty", self.mean_low, self.mean_high));
        }
        if !(self.gamma > 0.0) {
            return bad(alloc::format!("gamma must be > 0, got {}", self.gamma));
        }
        for (name, v) in [("component sigma", self.component_sigma), ("tau", self.tau)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(alloc::format!("{name} must be >= 0, got {v}"));
            }
        }
        for (name, v) in [("alpha", self.alpha_rot), ("kappa0", self.kappa0), ("kappa1", self.kappa1), ("beta", self.beta)] {
            if !v.is_finite() {
                return bad(alloc::format!("{name} must be finite"));
            }
        }
        if let Some(r) = self.r_thresh {
            if !r.is_finite() {
                return bad("r_thresh must be finite".into());
            }
        }
        Ok(())
    }

    /// Blend weight `sigmoid((r_thresh - r) / gamma)` of the rotation.
    pub fn lambda(&self, r: f64, r_thresh: f64) -> f64 {
        math::sigmoid((r_thresh - r) / self.gamma)
    }

    /// `A(r) = lambda R(alpha r) + (1 - lambda) S(kappa0 + kappa1 r)`.
    pub fn operator(&self, r: f64, r_thresh: f64) -> [[f64; 2]; 2] {
        let l = self.lambda(r, r_thresh);
        let rot = rotation(self.alpha_rot * r);
        let sh = shear(self.kappa0 + self.kappa1 * r);
        let mut a = [[0.0; 2]; 2];
        for (r_, (ro, so)) in a.iter_mut().zip(rot.iter().zip(&sh)) {
            for (v, (x, y)) in r_.iter_mut().zip(ro.iter().zip(so)) {
                *v = l * x + (1.0 - l) * y;
            }
        }
        a
    }

    /// The configured threshold, or the pilot median when unset.
    pub fn resolved_r_thresh(&self) -> Result<f64> {
        self.validate()?;
        match self.r_thresh {
            Some(r) => Ok(r),
            None => {
                let mut rng = pair_rng(self.seed, PILOT_STREAM);
                let mut radii: Vec<f64> = (0..PILOT_SIZE).map(|_| rms_radius(&self.sample_source(&mut rng))).collect();
                radii.sort_by(f64::total_cmp);
                Ok(0.5 * (radii[PILOT_SIZE / 2 - 1] + radii[PILOT_SIZE / 2]))
            }
        }
    }

    fn sample_source(&self, rng: &mut ChaCha8Rng) -> Matrix {
        let (c, d) = (self.components, self.dim);
        // Dirichlet(conc * 1_C) as normalised Gamma draws
        let gamma = Gamma::new(self.weight_conc, 1.0).expect("validated concentration");
        let raw: Vec<f64> = (0..c).map(|_| gamma.sample(rng)).collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = if total > 0.0 { raw.iter().map(|w| w / total).collect() } else { vec![1.0; c] };
        let means: Vec<f64> = (0..c * d).map(|_| rng.random_range(self.mean_low..=self.mean_high)).collect();
        let pick = WeightedIndex::new(&weights).expect("Dirichlet weights are a valid distribution");
        let mut xs = Matrix::zeros(self.k, d);
        for l in 0..self.k {
            let comp = pick.sample(rng);
            let m = &means[comp * d..(comp + 1) * d];
            for (x, mu) in xs.row_mut(l).iter_mut().zip(m) {
                *x = mu + self.component_sigma * normal(rng);
            }
        }
        xs
    }

    /// Applies the ground-truth map of a source cloud, without noise.
    pub fn truth(&self, xs: &Matrix, r_thresh: f64) -> Matrix {
        let r = rms_radius(xs);
        let a = self.operator(r, r_thresh);
        let mean = column_mean(xs);
        let mut ys = Matrix::zeros(xs.rows(), xs.cols());
        for l in 0..xs.rows() {
            let x = xs.row(l);
            let y = ys.row_mut(l);
            let head = apply2(&a, x);
            y[..2].copy_from_slice(&head);
            y[2..].copy_from_slice(&x[2..]);
            for (v, m) in y.iter_mut().zip(&mean) {
                *v += self.beta * m;
            }
        }
        ys
    }
}

fn column_mean(xs: &Matrix) -> Vec<f64> {
    let mut m = vec![0.0; xs.cols()];
    for row in xs.iter_rows() {
        for (a, x) in m.iter_mut().zip(row) {
            *a += x;
        }
    }
    let k = xs.rows() as f64;
    m.iter_mut().for_each(|a| *a /= k);
    m
}

/// `((1/k) Σ |x|^2)^{1/2}` over the rows of `xs`.
pub fn rms_radius(xs: &Matrix) -> f64 {
    let s: f64 = xs.as_slice().iter().map(|x| x * x).sum();
    math::sqrt(s / xs.rows() as f64)
}

/// Gaussian-mixture pairs. Sources are `C`-component mixtures with Dirichlet
/// weights and means uniform on `[L, U]^d`; targets are
/// `A(r) x + beta * mean + e` with per-point noise `e ~ N(0, tau^2 I)`, where
/// `r` is the RMS radius of the source cloud.
pub fn gen_gmm_pairs(cfg: &GmmGenConfig) -> Result<RegressionDataset> {
    let r_thresh = cfg.resolved_r_thresh()?;
    let pairs = (0..cfg.n)
        .map(|i| {
            let mut rng = pair_rng(cfg.seed, i as u64);
            let xs = cfg.sample_source(&mut rng);
            let mut ys = cfg.truth(&xs, r_thresh);
            for y in ys.as_mut_slice() {
                *y += cfg.tau * normal(&mut rng);
            }
            Ok((EmpiricalMeasure::uniform(xs)?, EmpiricalMeasure::uniform(ys)?))
        })
        .collect::<Result<Vec<_>>>()?;
    RegressionDataset::from_measures(cfg.dim, pairs)
}

/// Deterministic `(n, k)` subset of a master dataset.
///
/// Pair indices are drawn without replacement and kept in master order. Each
/// selected pair keeps `k` support indices, shared by source and target when
/// their sizes agree, so corresponding points stay paired. Selected weights are
/// renormalised.
pub fn subsample_regime(master: &RegressionDataset, n: usize, k: usize, subset_seed: u64) -> Result<RegressionDataset> {
    if n > master.len() {
        return Err(Error::Validation(alloc::format!("requested {n} pairs from a master of {}", master.len())));
    }
    if k == 0 {
        return Err(Error::Validation("k must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(subset_seed);
    let mut picked = rand::seq::index::sample(&mut rng, master.len(), n).into_vec();
    picked.sort_unstable();
    let mut pairs = Vec::with_capacity(n);
    for &i in &picked {
        let p = &master.pairs()[i];
        let ks = p.source.len();
        let kt = p.target.len();
        if k > ks || k > kt {
            return Err(Error::Validation(alloc::format!(
                "requested {k} points from pair {} with supports ({ks}, {kt})",
                p.id
            )));
        }
        let src_idx = support_subset(&mut rng, ks, k);
        let tgt_idx = if kt == ks { src_idx.clone() } else { support_subset(&mut rng, kt, k) };
        pairs.push(MeasurePair {
            id: p.id as PairId,
            source: restrict(&p.source, &src_idx)?,
            target: restrict(&p.target, &tgt_idx)?,
        });
    }
    RegressionDataset::new(master.dim(), pairs)
}

fn support_subset(rng: &mut ChaCha8Rng, len: usize, k: usize) -> Vec<usize> {
    let mut idx = rand::seq::index::sample(rng, len, k).into_vec();
    idx.sort_unstable();
    idx
}

fn restrict(m: &EmpiricalMeasure, idx: &[usize]) -> Result<EmpiricalMeasure> {
    if idx.len() == m.len() {
        return Ok(m.clone());
    }
    let mut pts = Matrix::zeros(idx.len(), m.dim());
    let mut w = Vec::with_capacity(idx.len());
    for (r, &i) in idx.iter().enumerate() {
        pts.row_mut(r).copy_from_slice(m.point(i));
        w.push(m.weights()[i]);
    }
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Validation("subsampled support carries no mass".into()));
    }
    if m.is_uniform() {
        EmpiricalMeasure::uniform(pts)
    } else {
        w.iter_mut().for_each(|x| *x /= total);
        EmpiricalMeasure::new(pts, w)
    }
}
