//! Local transport-map families.
//!
//! Two variants are supported: an affine map `T(x) = alpha + B x`, and a
//! residual displacement map `T(x) = x + Δ(x, z)` whose displacement head is
//! conditioned on a DeepSets context `z` of the measure being pushed.
//!
//! The DeepSets context is `z = dec( Σ_j w_j ψ(x_j) )` where `ψ` is a
//! two-layer ReLU perceptron applied pointwise and `dec` a linear layer.
//! Pooling uses the measure weights, which is the plain mean for uniform
//! clouds, and sums in index order.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::math;
use crate::matrix::Matrix;
use crate::measures::EmpiricalMeasure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub alpha: Vec<f64>,
    pub b: Matrix,
}

impl AffineMap {
    pub fn identity(d: usize) -> Self {
        Self { alpha: alloc::vec![0.0; d], b: Matrix::identity(d) }
    }

    pub fn translation(t: &[f64]) -> Self {
        Self { alpha: t.to_vec(), b: Matrix::identity(t.len()) }
    }

    pub fn new(alpha: Vec<f64>, b: Matrix) -> Result<Self> {
        let m = Self { alpha, b };
        m.validate()?;
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.alpha.len()
    }

    fn validate(&self) -> Result<()> {
        let d = self.alpha.len();
        if self.b.shape() != (d, d) {
            return Err(Error::Shape(alloc::format!("B is {:?} for a {d}-vector alpha", self.b.shape())));
        }
        if !self.b.is_finite() || self.alpha.iter().any(|x| !x.is_finite()) {
            return Err(Error::Validation("affine map has non-finite entries".into()));
        }
        Ok(())
    }
}

/// Fully connected layer `y = x Wᵀ + b`; `weight` is `out x in`, `bias` is `1 x out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Dense {
    /// Uniform `±1/sqrt(fan_in)` initialization.
    fn init(input: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / math::sqrt(input as f64);
        let mut weight = Matrix::zeros(output, input);
        for w in weight.as_mut_slice() {
            *w = rng.random_range(-bound..bound);
        }
        let mut bias = Matrix::zeros(1, output);
        for b in bias.as_mut_slice() {
            *b = rng.random_range(-bound..bound);
        }
        Self { weight, bias }
    }

    fn zeros(input: usize, output: usize) -> Self {
        Self { weight: Matrix::zeros(output, input), bias: Matrix::zeros(1, output) }
    }

    pub fn input(&self) -> usize {
        self.weight.cols()
    }

    pub fn output(&self) -> usize {
        self.weight.rows()
    }

    fn record(&self, tape: &mut Tape, x: Var) -> (Var, [Var; 2]) {
        let w = tape.leaf(self.weight.clone());
        let b = tape.leaf(self.bias.clone());
        (tape.linear(x, w, b), [w, b])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HiddenSizes {
    pub encoder: usize,
    pub context: usize,
    pub head: usize,
}

impl Default for HiddenSizes {
    fn default() -> Self {
        Self { encoder: 64, context: 32, head: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepSetsParams {
    /// Pointwise encoder ψ: `d -> encoder -> encoder`, ReLU after each layer.
    pub enc1: Dense,
    pub enc2: Dense,
    /// Linear decoder from the pooled encoding to the context `z`.
    pub dec: Dense,
    /// Displacement head: `(d + context) -> head -> d`, ReLU in between.
    pub head1: Dense,
    pub head2: Dense,
    pub seed: u64,
}

impl DeepSetsParams {
    /// Seeded initialization; the last head layer is zero so the map starts at
    /// the identity.
    pub fn init(d: usize, sizes: HiddenSizes, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let enc1 = Dense::init(d, sizes.encoder, &mut rng);
        let enc2 = Dense::init(sizes.encoder, sizes.encoder, &mut rng);
        let dec = Dense::init(sizes.encoder, sizes.context, &mut rng);
        let head1 = Dense::init(d + sizes.context, sizes.head, &mut rng);
        let head2 = Dense::zeros(sizes.head, d);
        Self { enc1, enc2, dec, head1, head2, seed }
    }

    pub fn dim(&self) -> usize {
        self.enc1.input()
    }

    pub fn sizes(&self) -> HiddenSizes {
        HiddenSizes { encoder: self.enc1.output(), context: self.dec.output(), head: self.head1.output() }
    }

    pub fn layers(&self) -> [(&'static str, &Dense); 5] {
        [("enc1", &self.enc1), ("enc2", &self.enc2), ("dec", &self.dec), ("head1", &self.head1), ("head2", &self.head2)]
    }

    fn layers_mut(&mut self) -> [&mut Dense; 5] {
        [&mut self.enc1, &mut self.enc2, &mut self.dec, &mut self.head1, &mut self.head2]
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        let s = self.sizes();
        let chain = [
            (&self.enc1, d, s.encoder),
            (&self.enc2, s.encoder, s.encoder),
            (&self.dec, s.encoder, s.context),
            (&self.head1, d + s.context, s.head),
            (&self.head2, s.head, d),
        ];
        for (i, (layer, input, output)) in chain.iter().enumerate() {
            if layer.weight.shape() != (*output, *input) || layer.bias.shape() != (1, *output) {
                return Err(Error::Shape(alloc::format!(
                    "layer {i}: weight {:?}, bias {:?}, expected ({output}, {input})",
                    layer.weight.shape(),
                    layer.bias.shape()
                )));
            }
            if !layer.weight.is_finite() || !layer.bias.is_finite() {
                return Err(Error::Validation(alloc::format!("layer {i} has non-finite weights")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapFamily {
    Affine,
    Displacement,
}

impl core::str::FromStr for MapFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "affine" => Ok(MapFamily::Affine),
            "displacement" => Ok(MapFamily::Displacement),
            other => Err(Error::Validation(alloc::format!("unknown map family {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "lowercase")]
pub enum TransportMapParams {
    Affine(AffineMap),
    Displacement(DeepSetsParams),
}

/// Leaves recorded for one forward pass, in [`TransportMapParams::param_slices_mut`] order.
pub struct Recorded {
    pub output: Var,
    pub params: Vec<Var>,
}

impl TransportMapParams {
    /// Identity-start parameters for `family` in `R^d`.
    pub fn init(family: MapFamily, d: usize, sizes: HiddenSizes, seed: u64) -> Self {
        match family {
            MapFamily::Affine => TransportMapParams::Affine(AffineMap::identity(d)),
            MapFamily::Displacement => TransportMapParams::Displacement(DeepSetsParams::init(d, sizes, seed)),
        }
    }

    pub fn family(&self) -> MapFamily {
        match self {
            TransportMapParams::Affine(_) => MapFamily::Affine,
            TransportMapParams::Displacement(_) => MapFamily::Displacement,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            TransportMapParams::Affine(m) => m.dim(),
            TransportMapParams::Displacement(p) => p.dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TransportMapParams::Affine(m) => m.validate(),
            TransportMapParams::Displacement(p) => p.validate(),
        }
    }

    /// Parameter shapes in optimizer order.
    pub fn param_shapes(&self) -> Vec<(usize, usize)> {
        match self {
            TransportMapParams::Affine(m) => alloc::vec![(1, m.dim()), m.b.shape()],
            TransportMapParams::Displacement(p) => {
                p.layers().iter().flat_map(|(_, l)| [l.weight.shape(), l.bias.shape()]).collect()
            }
        }
    }

    /// Parameter blocks in optimizer order.
    pub fn param_slices(&self) -> Vec<&[f64]> {
        match self {
            TransportMapParams::Affine(m) => alloc::vec![m.alpha.as_slice(), m.b.as_slice()],
            TransportMapParams::Displacement(p) => {
                p.layers().into_iter().flat_map(|(_, l)| [l.weight.as_slice(), l.bias.as_slice()]).collect()
            }
        }
    }

    /// Mutable parameter blocks in a fixed order.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            TransportMapParams::Affine(m) => alloc::vec![m.alpha.as_mut_slice(), m.b.as_mut_slice()],
            TransportMapParams::Displacement(p) => p
                .layers_mut()
                .into_iter()
                .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
                .collect(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.param_shapes().iter().map(|(r, c)| r * c).sum()
    }

    /// Records the pushforward of `source` on `tape`.
    pub fn record(&self, tape: &mut Tape, source: &EmpiricalMeasure) -> Result<Recorded> {
        if source.dim() != self.dim() {
            return Err(Error::Dimension(alloc::format!(
                "map acts on R^{}, measure lives in R^{}",
                self.dim(),
                source.dim()
            )));
        }
        let x = tape.leaf(source.points().clone());
        match self {
            TransportMapParams::Affine(m) => {
                let b = tape.leaf(m.b.clone());
                let alpha = tape.leaf(Matrix::row_vector(&m.alpha));
                let output = tape.linear(x, b, alpha);
                Ok(Recorded { output, params: alloc::vec![alpha, b] })
            }
            TransportMapParams::Displacement(p) => {
                let (z, mut params) = record_context(p, tape, x, source.weights());
                let zb = tape.broadcast_rows(z, source.len());
                let (delta, head_params) = record_head(p, tape, x, zb);
                params.extend(head_params);
                let output = tape.add(x, delta);
                Ok(Recorded { output, params })
            }
        }
    }
}

fn record_context(p: &DeepSetsParams, tape: &mut Tape, x: Var, weights: &[f64]) -> (Var, Vec<Var>) {
    let (h, p1) = p.enc1.record(tape, x);
    let h = tape.relu(h);
    let (h, p2) = p.enc2.record(tape, h);
    let h = tape.relu(h);
    let pooled = tape.weighted_sum_rows(h, weights);
    let (z, p3) = p.dec.record(tape, pooled);
    let mut params = Vec::with_capacity(10);
    params.extend(p1);
    params.extend(p2);
    params.extend(p3);
    (z, params)
}

fn record_head(p: &DeepSetsParams, tape: &mut Tape, x: Var, z: Var) -> (Var, Vec<Var>) {
    let input = tape.concat_cols(x, z);
    let (h, p4) = p.head1.record(tape, input);
    let h = tape.relu(h);
    let (delta, p5) = p.head2.record(tape, h);
    let mut params = Vec::with_capacity(4);
    params.extend(p4);
    params.extend(p5);
    (delta, params)
}

/// Context vector `z` of `source` under the DeepSets encoder/decoder.
pub fn deepsets_encode(source: &EmpiricalMeasure, params: &DeepSetsParams) -> Result<Vec<f64>> {
    if source.dim() != params.dim() {
        return Err(Error::Dimension(alloc::format!(
            "encoder expects R^{}, measure lives in R^{}",
            params.dim(),
            source.dim()
        )));
    }
    let mut tape = Tape::new();
    let x = tape.leaf(source.points().clone());
    let (z, _) = record_context(params, &mut tape, x, source.weights());
    Ok(tape.value(z).as_slice().to_vec())
}

/// Image of a single point. The displacement variant needs the context `z`.
pub fn apply_map(params: &TransportMapParams, x: &[f64], z: Option<&[f64]>) -> Result<Vec<f64>> {
    if x.len() != params.dim() {
        return Err(Error::Dimension(alloc::format!("point in R^{} for a map on R^{}", x.len(), params.dim())));
    }
    match params {
        TransportMapParams::Affine(m) => Ok((0..m.dim())
            .map(|i| m.alpha[i] + m.b.row(i).iter().zip(x).map(|(b, v)| b * v).sum::<f64>())
            .collect()),
        TransportMapParams::Displacement(p) => {
            let z = z.ok_or_else(|| Error::Validation("displacement map needs a context vector".into()))?;
            if z.len() != p.sizes().context {
                return Err(Error::Dimension(alloc::format!(
                    "context has {} entries, expected {}",
                    z.len(),
                    p.sizes().context
                )));
            }
            let mut tape = Tape::new();
            let xv = tape.leaf(Matrix::row_vector(x));
            let zv = tape.leaf(Matrix::row_vector(z));
            let (delta, _) = record_head(p, &mut tape, xv, zv);
            Ok(x.iter().zip(tape.value(delta).as_slice()).map(|(a, b)| a + b).collect())
        }
    }
}

/// `T # source`: same weights, points mapped one by one. The displacement
/// variant takes its context from `source` itself.
pub fn pushforward(params: &TransportMapParams, source: &EmpiricalMeasure) -> Result<EmpiricalMeasure> {
    let mut tape = Tape::new();
    let rec = params.record(&mut tape, source)?;
    source.with_points(tape.value(rec.output).clone())
}
