//! Wasserstein coefficient of determination, absolute test error and the
//! regime harness.
//!
//! For a held-out pair `(mu_0, nu_0)` with prediction `T#mu_0`:
//!
//! ```text
//! SS_res = W2^2(nu_0, T#mu_0)    SS_tot = W2^2(nu_0, bary)    R2_W = 1 - SS_res / SS_tot
//! ```
//!
//! where `bary` is the free-support barycenter of the training targets. The
//! absolute test error is `SS_res`.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::datagen::subsample_regime;
use crate::error::{Error, Result};
use crate::kernel::BandwidthRule;
use crate::maps::{pushforward, MapFamily};
use crate::math;
use crate::measures::{EmpiricalMeasure, PairId, RegressionDataset};
use crate::ot::{free_support_barycenter, w2_squared, DistanceBackend, SinkhornConfig};
use crate::train::{fit_local_map, TrainConfig};

/// Denominators at or below this are rejected.
pub const SS_TOT_MIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct R2Report {
    pub ss_res: f64,
    pub ss_tot: f64,
    pub r2w: f64,
}

/// `R2_W` of `prediction` against `target`, with `barycenter` as the baseline.
/// Both sums of squares use the same backend.
pub fn r2w(
    target: &EmpiricalMeasure,
    prediction: &EmpiricalMeasure,
    barycenter: &EmpiricalMeasure,
    backend: DistanceBackend,
    cfg: &SinkhornConfig,
) -> Result<R2Report> {
    let ss_res = w2_squared(target, prediction, backend, cfg)?;
    let ss_tot = w2_squared(target, barycenter, backend, cfg)?;
    r2w_from_sums(ss_res, ss_tot)
}

pub fn r2w_from_sums(ss_res: f64, ss_tot: f64) -> Result<R2Report> {
    if !(ss_tot > SS_TOT_MIN) {
        return Err(Error::DegenerateDenominator(ss_tot));
    }
    Ok(R2Report { ss_res, ss_tot, r2w: 1.0 - ss_res / ss_tot })
}

/// `W2^2(target, prediction)`.
pub fn abs_test_error(
    target: &EmpiricalMeasure,
    prediction: &EmpiricalMeasure,
    backend: DistanceBackend,
    cfg: &SinkhornConfig,
) -> Result<f64> {
    w2_squared(target, prediction, backend, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegimeSpec {
    pub n: usize,
    pub k: usize,
    pub reps: usize,
    /// Repetition `r` subsamples with `subset_seed + r`.
    pub subset_seed: u64,
    pub family: MapFamily,
    pub rule: BandwidthRule,
    pub train: TrainConfig,
    /// Sinkhorn settings for the barycenter plans and any Sinkhorn-backed
    /// distance.
    pub eval_sinkhorn: SinkhornConfig,
    pub backend: DistanceBackend,
    pub barycenter_iters: usize,
}

impl Default for RegimeSpec {
    fn default() -> Self {
        Self {
            n: 100,
            k: 100,
            reps: 5,
            subset_seed: 0,
            family: MapFamily::Displacement,
            rule: BandwidthRule::default(),
            train: TrainConfig::default(),
            eval_sinkhorn: SinkhornConfig { tol: 1e-3, ..SinkhornConfig::default() },
            backend: DistanceBackend::Auto,
            barycenter_iters: 20,
        }
    }
}

/// One repetition: the held-out pair and its scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepEval {
    pub rep: usize,
    pub subset_seed: u64,
    pub test_pair: PairId,
    pub ss_res: f64,
    pub ss_tot: f64,
    pub r2w: f64,
    pub abs_test_error: f64,
    pub bandwidth: f64,
    pub included_pairs: usize,
    pub final_loss: f64,
}

/// Everything a repetition produces, for plotting and inspection.
#[derive(Debug, Clone)]
pub struct RepOutcome {
    pub eval: RepEval,
    pub test_source: EmpiricalMeasure,
    pub test_target: EmpiricalMeasure,
    pub prediction: EmpiricalMeasure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepFailure {
    pub rep: usize,
    pub subset_seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub d: usize,
    pub n: usize,
    pub k: usize,
    pub reps: usize,
    pub abs_err_mean: f64,
    pub abs_err_std: f64,
    pub r2w_mean: f64,
    pub per_rep: Vec<RepEval>,
    pub failures: Vec<RepFailure>,
}

pub const CSV_HEADER: &str = "d,n,k,reps,abs_err_mean,abs_err_std,r2w_mean";

impl EvalReport {
    /// One CSV row matching [`CSV_HEADER`]. `reps` counts successful
    /// repetitions.
    pub fn csv_row(&self) -> String {
        alloc::format!(
            "{},{},{},{},{},{},{}",
            self.d,
            self.n,
            self.k,
            self.per_rep.len(),
            self.abs_err_mean,
            self.abs_err_std,
            self.r2w_mean
        )
    }
}

/// Runs repetition `rep` of a regime on `master`.
///
/// The subsample's first pair is held out as the test pair; the local map is
/// fitted at its source on the remaining `n - 1` pairs. The neighbor count of
/// the bandwidth rule is capped at `n - 1`.
pub fn run_repetition(master: &RegressionDataset, spec: &RegimeSpec, rep: usize) -> Result<RepOutcome> {
    if spec.n < 2 {
        return Err(Error::Validation("a regime needs n >= 2 (one test pair plus training pairs)".into()));
    }
    let subset_seed = spec.subset_seed.wrapping_add(rep as u64);
    let subset = subsample_regime(master, spec.n, spec.k, subset_seed)?;
    let test = subset.pairs()[0].clone();
    let positions: Vec<usize> = (1..subset.len()).collect();
    let train = subset.select(&positions)?;
    let rule = BandwidthRule { neighbors: spec.rule.neighbors.min(train.len()), ..spec.rule };
    let model = fit_local_map(&test.source, &train, spec.family, &rule, &spec.train)?;
    let prediction = pushforward(&model.map, &test.source)?;
    let targets: Vec<EmpiricalMeasure> = train.targets().cloned().collect();
    let bary = free_support_barycenter(&targets, spec.k, &spec.eval_sinkhorn, spec.barycenter_iters)?;
    let report = r2w(&test.target, &prediction, &bary, spec.backend, &spec.eval_sinkhorn)?;
    let eval = RepEval {
        rep,
        subset_seed,
        test_pair: test.id,
        ss_res: report.ss_res,
        ss_tot: report.ss_tot,
        r2w: report.r2w,
        abs_test_error: report.ss_res,
        bandwidth: model.kernel.bandwidth,
        included_pairs: model.included_pair_ids.len(),
        final_loss: model.final_loss().unwrap_or(f64::NAN),
    };
    Ok(RepOutcome { eval, test_source: test.source, test_target: test.target, prediction })
}

/// Aggregates repetition results in index order. Failed repetitions are
/// listed in `failures` and left out of the statistics; the standard deviation
/// is the sample one (zero for a single repetition).
pub fn summarize(d: usize, spec: &RegimeSpec, results: Vec<Result<RepOutcome>>) -> Result<EvalReport> {
    let mut per_rep = Vec::new();
    let mut failures = Vec::new();
    for (rep, r) in results.into_iter().enumerate() {
        match r {
            Ok(o) => per_rep.push(o.eval),
            Err(e) => failures.push(RepFailure {
                rep,
                subset_seed: spec.subset_seed.wrapping_add(rep as u64),
                message: e.to_string(),
            }),
        }
    }
    if per_rep.is_empty() {
        let msg = failures.first().map(|f| f.message.clone()).unwrap_or_else(|| "no repetitions requested".into());
        return Err(Error::Validation(alloc::format!("every repetition failed: {msg}")));
    }
    let errs: Vec<f64> = per_rep.iter().map(|r| r.abs_test_error).collect();
    let (mean, std) = mean_std(&errs);
    let r2 = per_rep.iter().map(|r| r.r2w).sum::<f64>() / per_rep.len() as f64;
    Ok(EvalReport {
        d,
        n: spec.n,
        k: spec.k,
        reps: spec.reps,
        abs_err_mean: mean,
        abs_err_std: std,
        r2w_mean: r2,
        per_rep,
        failures,
    })
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, math::sqrt(var))
}

/// Sequential regime run over `spec.reps` repetitions.
pub fn run_regime(master: &RegressionDataset, spec: &RegimeSpec) -> Result<EvalReport> {
    let results = (0..spec.reps).map(|rep| run_repetition(master, spec, rep)).collect();
    summarize(master.dim(), spec, results)
}
