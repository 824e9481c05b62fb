use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{ArgGroup, Args, Parser, Subcommand};
use wassreg_core::datagen::{gen_gaussian_pairs, gen_gmm_pairs, GaussianGenConfig, GmmGenConfig};
use wassreg_core::eval::{
    abs_test_error, r2w, run_repetition, summarize, EvalReport, RegimeSpec, RepEval, RepOutcome, CSV_HEADER,
};
use wassreg_core::kernel::BandwidthRule;
use wassreg_core::measures::MeasurePair;
use wassreg_core::ot::{free_support_barycenter, DistanceBackend};
use wassreg_core::train::{fit_local_map, predict, select_references, TrainedLocalModel};
use wassreg_core::{EmpiricalMeasure, RegressionDataset};

use crate::config::{layered, FitConfig, Overrides};
use crate::error::{CliError, CliResult};
use crate::io;
use crate::svg;

const BLUR_HELP: &str = "Entropic blur. With --convention temperature (default) it is the temperature eps \
multiplying KL(pi | a x b); with length-scale, eps = blur^2";

#[derive(Parser, Debug)]
#[command(name = "wassreg", version, about = "Local Wasserstein regression between point-cloud measures")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset.
    #[command(subcommand)]
    Gen(GenKind),
    /// Fit local transport maps around one or more reference measures.
    Fit(FitArgs),
    /// Push test sources through the nearest fitted model.
    Predict(PredictArgs),
    /// Score fitted models on a test set.
    Eval(EvalArgs),
    /// Run a held-out regime over repeated subsamples of a master dataset.
    Regime(RegimeArgs),
    /// Draw pairs (and optional predictions) as SVG.
    Plot(PlotArgs),
}

#[derive(Subcommand, Debug)]
pub enum GenKind {
    /// Gaussian pairs in the plane with a rotation-and-translation truth.
    Gauss(GaussArgs),
    /// Gaussian-mixture pairs with a radius-dependent rotation/shear truth.
    Gmm(GmmArgs),
}

#[derive(Args, Debug)]
pub struct OutArgs {
    /// Output file; `.json` selects JSON, anything else the binary format.
    #[arg(short, long)]
    pub out: PathBuf,
    /// Overwrite existing output.
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug)]
pub struct GaussArgs {
    /// Number of pairs (required unless --config is given).
    #[arg(long)]
    pub n: Option<usize>,
    /// Points per measure.
    #[arg(long)]
    pub k: Option<usize>,
    /// Standard deviation of the per-pair target shift.
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON generator config; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Debug)]
pub struct GmmArgs {
    /// Number of pairs (required unless --config is given).
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Ambient dimension (>= 2; extra coordinates are only translated).
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON generator config with the mixture and truth constants.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutArgs,
}

/// Flags shared by the commands that train.
#[derive(Args, Debug)]
pub struct TrainFlags {
    #[arg(long, value_parser = ["affine", "displacement"])]
    pub map: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, help = BLUR_HELP)]
    pub blur: Option<f64>,
    #[arg(long, value_parser = ["temperature", "length-scale"])]
    pub convention: Option<String>,
    /// Rank of the neighbor that sets the bandwidth.
    #[arg(long)]
    pub neighbors: Option<usize>,
    /// Bandwidth multiplier.
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long, value_parser = ["gaussian", "epanechnikov"])]
    pub kernel: Option<String>,
    /// Seed of the network initialization and batch order.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("reference").required(true).args(["ref_index", "ref_file", "refs"])))]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Use the source of the pair at this position as the reference.
    #[arg(long)]
    pub ref_index: Option<usize>,
    /// JSON measure file to use as the reference.
    #[arg(long)]
    pub ref_file: Option<PathBuf>,
    /// Pick this many spread-out references greedily and fit one model each.
    #[arg(long)]
    pub refs: Option<usize>,
    /// JSON config (`family`, `rule`, `train`); flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Model file; with several references, `stem.i.ext` per model.
    #[arg(short, long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    /// Fitted model files; each test source is routed to the nearest reference.
    #[arg(long = "model", required = true)]
    pub models: Vec<PathBuf>,
    /// Dataset whose sources are pushed forward.
    #[arg(long)]
    pub data: PathBuf,
    /// Output dataset of (source, prediction) pairs with the input ids.
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long = "model", required = true)]
    pub models: Vec<PathBuf>,
    /// Held-out pairs to score.
    #[arg(long)]
    pub data: PathBuf,
    /// Training pairs; their targets define the barycenter baseline.
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long, value_parser = ["auto", "exact", "sinkhorn"])]
    pub backend: Option<String>,
    #[arg(long)]
    pub barycenter_iters: Option<usize>,
    /// Directory for one SVG per evaluated pair.
    #[arg(long)]
    pub plot: Option<PathBuf>,
    /// CSV output (stdout when absent).
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug)]
pub struct RegimeArgs {
    /// Master dataset the regime subsamples from.
    #[arg(long)]
    pub data: PathBuf,
    /// JSON file with `RegimeSpec` fields; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// Subset seed of repetition 0 (repetition r uses seed + r).
    #[arg(long)]
    pub subset_seed: Option<u64>,
    #[arg(long, value_parser = ["auto", "exact", "sinkhorn"])]
    pub backend: Option<String>,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Repetitions run concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Directory for one SVG per repetition.
    #[arg(long)]
    pub plot: Option<PathBuf>,
    /// Full per-repetition report as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// CSV output (stdout when absent).
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Dataset of predictions keyed by pair id (as written by `predict`).
    #[arg(long)]
    pub prediction: Option<PathBuf>,
    /// Pair ids to draw; all pairs when absent.
    #[arg(long = "pair")]
    pub pairs: Vec<u64>,
    /// Output directory, one `pair-<id>.svg` per pair.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub force: bool,
}

pub fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Gen(GenKind::Gauss(a)) => gen_gauss(a),
        Command::Gen(GenKind::Gmm(a)) => gen_gmm(a),
        Command::Fit(a) => fit(a),
        Command::Predict(a) => predict_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Regime(a) => regime(a),
        Command::Plot(a) => plot(a),
    }
}

fn require_n(n: Option<usize>, config: &Option<PathBuf>) -> CliResult<()> {
    if n.is_none() && config.is_none() {
        return Err(CliError::Usage("--n is required unless --config is given".into()));
    }
    Ok(())
}

fn summary(data: &RegressionDataset, seed: u64, out: &Path) {
    let k = data.pairs().first().map_or(0, |p| p.source.len());
    println!("wrote {}: n={} k={} d={} seed={}", out.display(), data.len(), k, data.dim(), seed);
}

fn gen_gauss(a: GaussArgs) -> CliResult<()> {
    require_n(a.n, &a.config)?;
    let mut flags = Overrides::default();
    flags.set("n", a.n).set("k", a.k).set("noise_sigma", a.sigma).set("seed", a.seed);
    let cfg: GaussianGenConfig = layered(a.config.as_deref(), &["seed"], flags)?;
    let data = gen_gaussian_pairs(&cfg)?;
    io::save_dataset(&data, &a.out.out, a.out.force)?;
    summary(&data, cfg.seed, &a.out.out);
    Ok(())
}

fn gen_gmm(a: GmmArgs) -> CliResult<()> {
    require_n(a.n, &a.config)?;
    let mut flags = Overrides::default();
    flags.set("n", a.n).set("k", a.k).set("dim", a.dim).set("seed", a.seed);
    let cfg: GmmGenConfig = layered(a.config.as_deref(), &["seed"], flags)?;
    let data = gen_gmm_pairs(&cfg)?;
    io::save_dataset(&data, &a.out.out, a.out.force)?;
    summary(&data, cfg.seed, &a.out.out);
    Ok(())
}

/// Training flags as overrides of the `family`, `rule` and `train` blocks
/// shared by the fit and regime configs.
fn train_overrides(flags: &mut Overrides, t: &TrainFlags) {
    flags
        .set("family", t.map.clone())
        .set("rule.neighbors", t.neighbors)
        .set("rule.scale", t.rho)
        .set("train.epochs", t.epochs)
        .set("train.learning_rate", t.lr)
        .set("train.batch_size", t.batch_size)
        .set("train.sinkhorn.blur", t.blur)
        .set("train.sinkhorn.convention", t.convention.clone())
        .set("train.kernel", t.kernel.clone())
        .set("train.seed", t.seed);
}

/// Neighbor counts above the number of training pairs fall back to all pairs.
fn capped(rule: &BandwidthRule, len: usize) -> BandwidthRule {
    BandwidthRule { neighbors: rule.neighbors.min(len.max(1)), ..*rule }
}

fn fit(a: FitArgs) -> CliResult<()> {
    let mut flags = Overrides::default();
    train_overrides(&mut flags, &a.train);
    let cfg: FitConfig = layered(a.config.as_deref(), &["train.seed"], flags)?;
    let data = io::load_dataset(&a.data)?;
    if data.is_empty() {
        return Err(CliError::Validation(format!("{} has no pairs to fit on", a.data.display())));
    }
    let references: Vec<(String, EmpiricalMeasure)> = if let Some(i) = a.ref_index {
        let p = data.pairs().get(i).ok_or_else(|| {
            CliError::Validation(format!("--ref-index {i} is out of range for {} pairs", data.len()))
        })?;
        vec![(format!("pair {}", p.id), p.source.clone())]
    } else if let Some(path) = &a.ref_file {
        vec![(path.display().to_string(), io::load_measure(path)?)]
    } else {
        let m = a.refs.expect("clap enforces one reference option");
        let picked = select_references(&data, m, cfg.train.distance_backend, &cfg.train.sinkhorn)?;
        picked.iter().map(|&i| (format!("pair {}", data.pairs()[i].id), data.pairs()[i].source.clone())).collect()
    };
    let rule = capped(&cfg.rule, data.len());
    let total = references.len();
    // fit everything first so a failure leaves no partial set of files
    let mut models = Vec::with_capacity(total);
    for (label, reference) in &references {
        let model = fit_local_map(reference, &data, cfg.family, &rule, &cfg.train).map_err(|e| match e {
            wassreg_core::Error::Support { .. } => {
                CliError::Numeric(format!("{e} (or use a reference closer to the data)"))
            }
            e => e.into(),
        })?;
        models.push((label, model));
    }
    for (i, (label, model)) in models.iter().enumerate() {
        let path = io::indexed_path(&a.out, i, total);
        io::save_model(model, &path, a.force)?;
        println!(
            "wrote {} (reference {label}): final loss {:.6e}, bandwidth {:.6e}, {} pairs",
            path.display(),
            model.final_loss().unwrap_or(f64::NAN),
            model.kernel.bandwidth,
            model.included_pair_ids.len()
        );
    }
    Ok(())
}

fn load_models(paths: &[PathBuf]) -> CliResult<Vec<TrainedLocalModel>> {
    let models: Vec<TrainedLocalModel> = paths.iter().map(|p| io::load_model(p)).collect::<CliResult<_>>()?;
    if let Some(m) = models.iter().find(|m| m.map.dim() != models[0].map.dim()) {
        return Err(CliError::Validation(format!(
            "models mix dimensions {} and {}",
            models[0].map.dim(),
            m.map.dim()
        )));
    }
    Ok(models)
}

/// Routed prediction for every source of `data`.
fn predictions(models: &[TrainedLocalModel], data: &RegressionDataset) -> CliResult<Vec<(EmpiricalMeasure, usize)>> {
    let routing = &models[0].config.sinkhorn;
    Ok(data.sources().map(|s| predict(models, s, routing)).collect::<Result<_, _>>()?)
}

fn predict_cmd(a: PredictArgs) -> CliResult<()> {
    let models = load_models(&a.models)?;
    let data = io::load_dataset(&a.data)?;
    let preds = predictions(&models, &data)?;
    let pairs = data
        .pairs()
        .iter()
        .zip(&preds)
        .map(|(p, (pred, idx))| {
            println!("pair {} -> model {}", p.id, a.models[*idx].display());
            MeasurePair { id: p.id, source: p.source.clone(), target: pred.clone() }
        })
        .collect();
    let out = RegressionDataset::new(data.dim(), pairs)?;
    io::save_dataset(&out, &a.out.out, a.out.force)?;
    println!("wrote {}: {} predictions", a.out.out.display(), out.len());
    Ok(())
}

fn backend(name: Option<&str>, default: DistanceBackend) -> DistanceBackend {
    match name {
        Some("exact") => DistanceBackend::Exact,
        Some("sinkhorn") => DistanceBackend::Sinkhorn,
        Some("auto") => DistanceBackend::Auto,
        _ => default,
    }
}

fn emit_csv(out: Option<&Path>, force: bool, report: &EvalReport) -> CliResult<()> {
    let text = format!("{CSV_HEADER}\n{}\n", report.csv_row());
    match out {
        Some(p) => {
            io::write(p, text.as_bytes(), force)?;
            println!("wrote {}", p.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn write_svg(dir: &Path, name: &str, text: &str, force: bool) -> CliResult<()> {
    io::write(&dir.join(name), text.as_bytes(), force)
}

fn eval_cmd(a: EvalArgs) -> CliResult<()> {
    let models = load_models(&a.models)?;
    let test = io::load_dataset(&a.data)?;
    let train = io::load_dataset(&a.train)?;
    if test.is_empty() || train.is_empty() {
        return Err(CliError::Usage("eval needs a non-empty --data and --train".into()));
    }
    let defaults = RegimeSpec::default();
    let backend = backend(a.backend.as_deref(), defaults.backend);
    let cfg = defaults.eval_sinkhorn;
    let k = test.pairs().iter().map(|p| p.target.len()).max().unwrap_or(0);
    let targets: Vec<EmpiricalMeasure> = train.targets().cloned().collect();
    let bary = free_support_barycenter(&targets, k, &cfg, a.barycenter_iters.unwrap_or(defaults.barycenter_iters))?;
    let preds = predictions(&models, &test)?;
    let mut per_rep = Vec::new();
    for (i, (p, (pred, idx))) in test.pairs().iter().zip(&preds).enumerate() {
        let rep = r2w(&p.target, pred, &bary, backend, &cfg)?;
        let model = &models[*idx];
        per_rep.push(RepEval {
            rep: i,
            subset_seed: 0,
            test_pair: p.id,
            ss_res: rep.ss_res,
            ss_tot: rep.ss_tot,
            r2w: rep.r2w,
            abs_test_error: abs_test_error(&p.target, pred, backend, &cfg)?,
            bandwidth: model.kernel.bandwidth,
            included_pairs: model.included_pair_ids.len(),
            final_loss: model.final_loss().unwrap_or(f64::NAN),
        });
        if let Some(dir) = &a.plot {
            let svg = svg::snapshot(&format!("pair {}", p.id), &p.source, Some(pred), Some(&p.target));
            write_svg(dir, &format!("pair-{}.svg", p.id), &svg, a.force)?;
        }
        eprintln!("pair {}: r2w {:.6}, abs error {:.6e}", p.id, rep.r2w, rep.ss_res);
    }
    let errs: Vec<f64> = per_rep.iter().map(|r| r.abs_test_error).collect();
    let n = errs.len() as f64;
    let mean = errs.iter().sum::<f64>() / n;
    let std = if errs.len() < 2 {
        0.0
    } else {
        (errs.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    let report = EvalReport {
        d: test.dim(),
        n: train.len(),
        k,
        reps: per_rep.len(),
        abs_err_mean: mean,
        abs_err_std: std,
        r2w_mean: per_rep.iter().map(|r| r.r2w).sum::<f64>() / n,
        per_rep,
        failures: vec![],
    };
    emit_csv(a.out.as_deref(), a.force, &report)
}

/// Runs `reps` jobs on up to `jobs` threads; results come back in index order.
fn parallel<T: Send>(reps: usize, jobs: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..reps).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, reps.max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= reps {
                    break;
                }
                let r = f(i);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots.into_inner().unwrap().into_iter().map(|r| r.expect("every job ran")).collect()
}

fn regime(a: RegimeArgs) -> CliResult<()> {
    if a.jobs == 0 {
        return Err(CliError::Usage("--jobs must be >= 1".into()));
    }
    let mut flags = Overrides::default();
    flags
        .set("n", a.n)
        .set("k", a.k)
        .set("reps", a.reps)
        .set("subset_seed", a.subset_seed)
        .set("backend", a.backend.clone());
    train_overrides(&mut flags, &a.train);
    let spec: RegimeSpec = layered(a.config.as_deref(), &["subset_seed", "train.seed"], flags)?;
    let master = io::load_dataset(&a.data)?;
    let results: Vec<Result<RepOutcome, wassreg_core::Error>> =
        parallel(spec.reps, a.jobs, |rep| run_repetition(&master, &spec, rep));
    if let Some(dir) = &a.plot {
        for o in results.iter().flatten() {
            let title = format!("rep {} (pair {}): R2_W {:.5}", o.eval.rep, o.eval.test_pair, o.eval.r2w);
            let svg = svg::snapshot(&title, &o.test_source, Some(&o.prediction), Some(&o.test_target));
            write_svg(dir, &format!("rep-{}.svg", o.eval.rep), &svg, a.force)?;
        }
    }
    if let Some(first) = results.iter().find_map(|r| r.as_ref().err()) {
        if results.iter().all(Result::is_err) {
            return Err(first.clone().into());
        }
    }
    let report = summarize(master.dim(), &spec, results)?;
    for f in &report.failures {
        eprintln!("warning: repetition {} (subset seed {}) failed: {}", f.rep, f.subset_seed, f.message);
    }
    if let Some(path) = &a.report {
        let json = serde_json::to_string_pretty(&report).expect("reports serialize");
        io::write(path, json.as_bytes(), a.force)?;
    }
    emit_csv(a.out.as_deref(), a.force, &report)
}

fn plot(a: PlotArgs) -> CliResult<()> {
    let data = io::load_dataset(&a.data)?;
    let preds = a.prediction.as_deref().map(io::load_dataset).transpose()?;
    let wanted: Vec<&MeasurePair> = if a.pairs.is_empty() {
        data.pairs().iter().collect()
    } else {
        a.pairs
            .iter()
            .map(|id| {
                data.pairs()
                    .iter()
                    .find(|p| p.id == *id)
                    .ok_or_else(|| CliError::Validation(format!("no pair with id {id} in {}", a.data.display())))
            })
            .collect::<CliResult<_>>()?
    };
    for p in wanted {
        let pred = match &preds {
            Some(ds) => Some(
                ds.pairs()
                    .iter()
                    .find(|q| q.id == p.id)
                    .map(|q| &q.target)
                    .ok_or_else(|| CliError::Validation(format!("no prediction for pair {}", p.id)))?,
            ),
            None => None,
        };
        let svg = svg::snapshot(&format!("pair {}", p.id), &p.source, pred, Some(&p.target));
        write_svg(&a.out_dir, &format!("pair-{}.svg", p.id), &svg, a.force)?;
    }
    println!("wrote SVGs to {}", a.out_dir.display());
    Ok(())
}
