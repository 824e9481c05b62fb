//! Kernel-weighted fitting of local transport maps.
//!
//! Around a reference measure `mu_0` the loss is
//!
//! ```text
//! L(T) = (1/n) Σ_i w_i S_eps(T#mu_i, nu_i),   w_i = h^{-d} K(W2(mu_0, mu_i) / h)
//! ```
//!
//! minimised with Adam. Gradients run from the unrolled Sinkhorn reverse pass
//! through the pushforward tape into the map parameters.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::kernel::{kernel_weight, select_bandwidth, BandwidthRule, KernelFamily, KernelSpec};
use crate::maps::{pushforward, HiddenSizes, MapFamily, TransportMapParams};
use crate::measures::{EmpiricalMeasure, MeasurePair, PairId, RegressionDataset};
use crate::ot::{
    divergence_value_and_grad, divergence_value_and_grad_warm, entropic_ot, sinkhorn_divergence, w2, DistanceBackend,
    SinkhornConfig, WarmStart,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Pairs per optimizer step.
    pub batch_size: usize,
    pub epochs: usize,
    pub sinkhorn: SinkhornConfig,
    /// Pairs whose kernel weight is below `weight_floor * max weight` are dropped.
    pub weight_floor: f64,
    /// Seeds the network initialization and the batch shuffling.
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub kernel: KernelFamily,
    pub hidden: HiddenSizes,
    /// Backend for the reference-to-source distances.
    pub distance_backend: DistanceBackend,
    /// Restart each pair's Sinkhorn iterations from its potentials at the
    /// previous visit.
    pub warm_start: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 8,
            epochs: 20,
            // warm starts carry the potentials across steps, so a short solve
            // per step is enough
            sinkhorn: SinkhornConfig { tol: 1e-3, max_iters: 50, ..SinkhornConfig::default() },
            weight_floor: 1e-3,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            kernel: KernelFamily::Gaussian,
            hidden: HiddenSizes::default(),
            distance_backend: DistanceBackend::Auto,
            warm_start: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Validation(alloc::format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.weight_floor) {
            return Err(Error::Validation(alloc::format!("weight floor must be in [0, 1), got {}", self.weight_floor)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Validation("batch size and epochs must be >= 1".into()));
        }
        self.adam().validate()?;
        self.sinkhorn.validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.learning_rate, beta1: self.beta1, beta2: self.beta2, eps: self.adam_eps }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |b: f64| (0.0..1.0).contains(&b);
        if !(self.lr > 0.0) || !unit(self.beta1) || !unit(self.beta2) || !(self.eps > 0.0) {
            return Err(Error::Validation(alloc::format!("invalid Adam settings {self:?}")));
        }
        Ok(())
    }
}

/// First and second moments per parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
    beta1_pow: f64,
    beta2_pow: f64,
}

impl AdamState {
    pub fn new(block_sizes: &[usize]) -> Self {
        Self {
            m: block_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: block_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
            beta1_pow: 1.0,
            beta2_pow: 1.0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update of every block.
pub fn adam_step(params: &mut [&mut [f64]], grads: &[Vec<f64>], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(alloc::format!(
            "{} parameter blocks, {} gradient blocks, {} optimizer blocks",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (b, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.m[b].len() {
            return Err(Error::Shape(alloc::format!(
                "block {b}: {} parameters, {} gradients, {} moments",
                p.len(),
                g.len(),
                state.m[b].len()
            )));
        }
    }
    state.step += 1;
    state.beta1_pow *= cfg.beta1;
    state.beta2_pow *= cfg.beta2;
    let c1 = 1.0 - state.beta1_pow;
    let c2 = 1.0 - state.beta2_pow;
    for (b, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[b], &mut state.v[b]);
        for i in 0..p.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            p[i] -= cfg.lr * mhat / (crate::math::sqrt(vhat) + cfg.eps);
        }
    }
    Ok(())
}

/// `(1/n) Σ_i weights_i S_eps(T#mu_i, nu_i)`.
pub fn weighted_loss(
    map: &TransportMapParams,
    pairs: &[MeasurePair],
    weights: &[f64],
    sinkhorn: &SinkhornConfig,
) -> Result<f64> {
    check_weights(pairs.len(), weights)?;
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (p, &w) in pairs.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        let pushed = pushforward(map, &p.source)?;
        total += w * sinkhorn_divergence(&pushed, &p.target, sinkhorn)?.value;
    }
    Ok(total / pairs.len() as f64)
}

/// [`weighted_loss`] together with its gradient, one block per entry of
/// [`TransportMapParams::param_slices`].
pub fn weighted_loss_and_grad(
    map: &TransportMapParams,
    pairs: &[MeasurePair],
    weights: &[f64],
    sinkhorn: &SinkhornConfig,
) -> Result<(f64, Vec<Vec<f64>>)> {
    check_weights(pairs.len(), weights)?;
    let items: Vec<Term<'_>> = pairs
        .iter()
        .zip(weights)
        .map(|(p, &w)| Term { source: &p.source, target: &p.target, weight: w, target_self: None })
        .collect();
    let (sum, grads) = loss_and_grad(map, &items, sinkhorn, None)?;
    Ok((if pairs.is_empty() { 0.0 } else { sum / pairs.len() as f64 }, grads))
}

fn check_weights(n: usize, weights: &[f64]) -> Result<()> {
    if weights.len() != n {
        return Err(Error::Shape(alloc::format!("{} weights for {n} pairs", weights.len())));
    }
    if let Some(w) = weights.iter().find(|w| !(**w >= 0.0 && w.is_finite())) {
        return Err(Error::Validation(alloc::format!("pair weight must be finite and >= 0, got {w}")));
    }
    Ok(())
}

struct Term<'a> {
    source: &'a EmpiricalMeasure,
    target: &'a EmpiricalMeasure,
    weight: f64,
    /// Cached `OT_eps(nu, nu)`.
    target_self: Option<f64>,
}

/// `Σ w_i S_i` over `items` and the gradient of its mean.
fn loss_and_grad(
    map: &TransportMapParams,
    items: &[Term<'_>],
    sinkhorn: &SinkhornConfig,
    mut warm: Option<&mut [WarmStart]>,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let shapes = map.param_shapes();
    let mut grads: Vec<Vec<f64>> = shapes.iter().map(|(r, c)| vec![0.0; r * c]).collect();
    if items.is_empty() {
        return Ok((0.0, grads));
    }
    let scale = 1.0 / items.len() as f64;
    let mut total = 0.0;
    for (t, item) in items.iter().enumerate() {
        if item.weight == 0.0 {
            continue;
        }
        let mut tape = Tape::new();
        let rec = map.record(&mut tape, item.source)?;
        let pushed = item.source.with_points(tape.value(rec.output).clone())?;
        let (value, mut seed) = match warm.as_deref_mut() {
            Some(w) => divergence_value_and_grad_warm(&pushed, item.target, sinkhorn, item.target_self, &mut w[t])?,
            None => divergence_value_and_grad(&pushed, item.target, sinkhorn, item.target_self)?,
        };
        total += item.weight * value;
        seed.scale(item.weight * scale);
        let g = tape.backward(rec.output, seed);
        for ((acc, var), shape) in grads.iter_mut().zip(&rec.params).zip(&shapes) {
            if let Some(gv) = g.get(*var) {
                debug_assert_eq!(gv.shape(), *shape);
                for (a, x) in acc.iter_mut().zip(gv.as_slice()) {
                    *a += x;
                }
            }
        }
    }
    Ok((total, grads))
}

/// Result of [`fit_weighted`].
#[derive(Debug, Clone, PartialEq)]
pub struct Fit {
    pub map: TransportMapParams,
    pub loss_history: Vec<f64>,
}

/// Adam on the weighted loss over fixed pairs and weights.
///
/// Within every mini-batch the weights are rescaled to mean one, so the
/// trajectory does not depend on a common factor of the weights. All pairs
/// form one batch when they fit; otherwise the order is reshuffled every epoch.
/// `loss_history[e]` is the batch-size weighted mean of the batch losses seen
/// during epoch `e`.
pub fn fit_weighted(pairs: &[&MeasurePair], weights: &[f64], family: MapFamily, cfg: &TrainConfig) -> Result<Fit> {
    cfg.validate()?;
    let first = pairs.first().ok_or(Error::Empty("no training pairs"))?;
    check_weights(pairs.len(), weights)?;
    let d = first.source.dim();
    let target_self = pairs
        .iter()
        .map(|p| entropic_ot(&p.target, &p.target, &cfg.sinkhorn).map(|o| o.value))
        .collect::<Result<Vec<f64>>>()?;
    let mut map = TransportMapParams::init(family, d, cfg.hidden, cfg.seed);
    let sizes: Vec<usize> = map.param_shapes().iter().map(|(r, c)| r * c).collect();
    let mut adam = AdamState::new(&sizes);
    let adam_cfg = cfg.adam();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut warm = vec![WarmStart::default(); pairs.len()];
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        if pairs.len() > cfg.batch_size {
            order.shuffle(&mut rng);
        }
        let mut epoch_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mean_w = batch.iter().map(|&i| weights[i]).sum::<f64>() / batch.len() as f64;
            if !(mean_w > 0.0) {
                continue;
            }
            let mut batch_warm: Vec<WarmStart> = batch.iter().map(|&i| core::mem::take(&mut warm[i])).collect();
            let items: Vec<Term<'_>> = batch
                .iter()
                .map(|&i| Term {
                    source: &pairs[i].source,
                    target: &pairs[i].target,
                    weight: weights[i] / mean_w,
                    target_self: Some(target_self[i]),
                })
                .collect();
            let slots = if cfg.warm_start { Some(batch_warm.as_mut_slice()) } else { None };
            let (sum, grads) = loss_and_grad(&map, &items, &cfg.sinkhorn, slots).map_err(|e| match e {
                Error::Validation(_) => Error::Training { epoch, loss: f64::NAN },
                other => other,
            })?;
            if !sum.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::Training { epoch, loss: sum / batch.len() as f64 });
            }
            for (&i, w) in batch.iter().zip(batch_warm) {
                warm[i] = w;
            }
            epoch_sum += sum;
            adam_step(&mut map.param_slices_mut(), &grads, &mut adam, &adam_cfg)?;
        }
        history.push(epoch_sum / pairs.len() as f64);
    }
    Ok(Fit { map, loss_history: history })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedLocalModel {
    pub reference: EmpiricalMeasure,
    pub map: TransportMapParams,
    pub kernel: KernelSpec,
    pub rule: BandwidthRule,
    pub included_pair_ids: Vec<PairId>,
    pub loss_history: Vec<f64>,
    pub config: TrainConfig,
}

impl TrainedLocalModel {
    pub fn final_loss(&self) -> Option<f64> {
        self.loss_history.last().copied()
    }
}

/// Kernel weights of every training pair around `reference`.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhood {
    pub distances: Vec<f64>,
    pub kernel: KernelSpec,
    pub weights: Vec<f64>,
    /// Positions (into the dataset) of the pairs kept after the weight floor.
    pub included: Vec<usize>,
}

/// Distances, bandwidth, kernel weights and the pairs surviving the floor.
pub fn neighborhood(
    reference: &EmpiricalMeasure,
    data: &RegressionDataset,
    rule: &BandwidthRule,
    cfg: &TrainConfig,
) -> Result<Neighborhood> {
    if data.is_empty() {
        return Err(Error::Empty("training dataset has no pairs"));
    }
    if reference.dim() != data.dim() {
        return Err(Error::Dimension(alloc::format!(
            "reference lives in R^{}, data in R^{}",
            reference.dim(),
            data.dim()
        )));
    }
    let distances = data
        .sources()
        .map(|s| w2(reference, s, cfg.distance_backend, &cfg.sinkhorn))
        .collect::<Result<Vec<f64>>>()?;
    let h = select_bandwidth(&distances, rule)?;
    let kernel = KernelSpec::new(cfg.kernel, h, data.dim())?;
    let weights = distances.iter().map(|&r| kernel_weight(r, &kernel)).collect::<Result<Vec<f64>>>()?;
    let max_w = weights.iter().fold(0.0f64, |m, &w| m.max(w));
    let included: Vec<usize> =
        (0..weights.len()).filter(|&i| weights[i] > 0.0 && weights[i] >= cfg.weight_floor * max_w).collect();
    if included.is_empty() {
        let nearest = distances.iter().fold(f64::INFINITY, |m, &r| m.min(r));
        return Err(Error::Support { bandwidth: h, nearest });
    }
    Ok(Neighborhood { distances, kernel, weights, included })
}

/// Fits the local map at `reference` on the kernel-weighted pairs of `data`.
pub fn fit_local_map(
    reference: &EmpiricalMeasure,
    data: &RegressionDataset,
    family: MapFamily,
    rule: &BandwidthRule,
    cfg: &TrainConfig,
) -> Result<TrainedLocalModel> {
    cfg.validate()?;
    let hood = neighborhood(reference, data, rule, cfg)?;
    let pairs: Vec<&MeasurePair> = hood.included.iter().map(|&i| &data.pairs()[i]).collect();
    let weights: Vec<f64> = hood.included.iter().map(|&i| hood.weights[i]).collect();
    let fit = fit_weighted(&pairs, &weights, family, cfg)?;
    Ok(TrainedLocalModel {
        reference: reference.clone(),
        map: fit.map,
        kernel: hood.kernel,
        rule: *rule,
        included_pair_ids: pairs.iter().map(|p| p.id).collect(),
        loss_history: fit.loss_history,
        config: cfg.clone(),
    })
}

/// Pushes `test_source` through the model whose reference is nearest in W2.
/// Ties go to the lowest index. Returns the prediction and that index.
pub fn predict(
    models: &[TrainedLocalModel],
    test_source: &EmpiricalMeasure,
    sinkhorn: &SinkhornConfig,
) -> Result<(EmpiricalMeasure, usize)> {
    if models.is_empty() {
        return Err(Error::Empty("no trained models to predict with"));
    }
    let mut best = (f64::INFINITY, 0);
    for (i, m) in models.iter().enumerate() {
        let dist = w2(&m.reference, test_source, DistanceBackend::Auto, sinkhorn)?;
        if dist < best.0 {
            best = (dist, i);
        }
    }
    let chosen = &models[best.1];
    Ok((pushforward(&chosen.map, test_source)?, best.1))
}

/// Greedy farthest-point selection of `m` reference sources, starting from
/// the first pair. Returns dataset positions in selection order.
pub fn select_references(
    data: &RegressionDataset,
    m: usize,
    backend: DistanceBackend,
    sinkhorn: &SinkhornConfig,
) -> Result<Vec<usize>> {
    let n = data.len();
    if m == 0 || m > n {
        return Err(Error::Validation(alloc::format!("cannot pick {m} references from {n} pairs")));
    }
    let sources: Vec<&EmpiricalMeasure> = data.sources().collect();
    let mut chosen = vec![0];
    let mut nearest: Vec<f64> =
        sources.iter().map(|s| w2(sources[0], s, backend, sinkhorn)).collect::<Result<Vec<f64>>>()?;
    while chosen.len() < m {
        let mut next = None;
        for (i, &dist) in nearest.iter().enumerate() {
            if chosen.contains(&i) {
                continue;
            }
            if next.is_none_or(|(_, best)| dist > best) {
                next = Some((i, dist));
            }
        }
        let (pick, _) = next.expect("m <= n leaves a candidate");
        chosen.push(pick);
        for (i, s) in sources.iter().enumerate() {
            let dist = w2(sources[pick], s, backend, sinkhorn)?;
            if dist < nearest[i] {
                nearest[i] = dist;
            }
        }
    }
    Ok(chosen)
}
