use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use wassreg::io::{load_dataset, load_model, save_dataset};
use wassreg_core::measures::MeasurePair;
use wassreg_core::{EmpiricalMeasure, RegressionDataset};

fn wassreg(args: &[&str]) -> Output {
    wassreg_env(args, None)
}

fn wassreg_env(args: &[&str], seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_wassreg"));
    cmd.args(args).env_remove("WASSREG_SEED");
    if let Some(s) = seed {
        cmd.env("WASSREG_SEED", s);
    }
    cmd.output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(o: Output) -> Output {
    assert_eq!(code(&o), 0, "stderr: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn svgs(dir: &Path) -> usize {
    std::fs::read_dir(dir).map_or(0, |d| d.filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "svg")).count())
}

#[test]
fn gen_gauss_writes_the_requested_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d.wrd");
    let o = ok(wassreg(&["gen", "gauss", "--n", "50", "--k", "200", "--sigma", "0.05", "--seed", "7", "-o", p(&out)]));
    assert!(stdout(&o).contains("n=50 k=200 d=2 seed=7"));
    let data = load_dataset(&out).unwrap();
    assert_eq!(data.len(), 50);
    assert!(data.pairs().iter().all(|p| p.source.len() == 200));

    // refuses to overwrite, then does with --force
    let again = wassreg(&["gen", "gauss", "--n", "5", "--seed", "7", "-o", p(&out)]);
    assert_eq!(code(&again), 3);
    assert_eq!(load_dataset(&out).unwrap().len(), 50);
    ok(wassreg(&["gen", "gauss", "--n", "5", "--seed", "7", "-o", p(&out), "--force"]));
    assert_eq!(load_dataset(&out).unwrap().len(), 5);
}

#[test]
fn gen_gmm_from_config_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("gmm.json");
    std::fs::write(&cfg, r#"{"n": 6, "k": 30, "dim": 5, "seed": 11, "tau": 0.02}"#).unwrap();
    let (a, b) = (dir.path().join("a.wrd"), dir.path().join("b.wrd"));
    ok(wassreg(&["gen", "gmm", "--config", p(&cfg), "-o", p(&a)]));
    ok(wassreg(&["gen", "gmm", "--config", p(&cfg), "-o", p(&b)]));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let data = load_dataset(&a).unwrap();
    assert_eq!((data.len(), data.dim()), (6, 5));

    // a flag beats the config file
    let c = dir.path().join("c.wrd");
    ok(wassreg(&["gen", "gmm", "--config", p(&cfg), "--n", "2", "-o", p(&c)]));
    assert_eq!(load_dataset(&c).unwrap().len(), 2);
}

#[test]
fn seed_environment_variable_is_the_default_seed() {
    let dir = tempfile::tempdir().unwrap();
    let path = |s: &str| dir.path().join(s);
    ok(wassreg_env(&["gen", "gauss", "--n", "3", "--k", "4", "-o", p(&path("env.wrd"))], Some("42")));
    ok(wassreg(&["gen", "gauss", "--n", "3", "--k", "4", "--seed", "42", "-o", p(&path("flag.wrd"))]));
    ok(wassreg_env(&["gen", "gauss", "--n", "3", "--k", "4", "--seed", "1", "-o", p(&path("both.wrd"))], Some("42")));
    ok(wassreg(&["gen", "gauss", "--n", "3", "--k", "4", "--seed", "1", "-o", p(&path("one.wrd"))]));
    let read = |s: &str| std::fs::read(path(s)).unwrap();
    assert_eq!(read("env.wrd"), read("flag.wrd"));
    assert_eq!(read("both.wrd"), read("one.wrd"));
    assert_ne!(read("env.wrd"), read("one.wrd"));
    assert_eq!(code(&wassreg_env(&["gen", "gauss", "--n", "3", "-o", p(&path("x.wrd"))], Some("abc"))), 2);
}

#[test]
fn usage_and_validation_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d.wrd");
    assert_eq!(code(&wassreg(&["gen", "gauss", "--k", "5", "-o", p(&out)])), 2);
    assert_eq!(code(&wassreg(&["gen", "nope"])), 2);
    assert_eq!(code(&wassreg(&[])), 2);
    assert_eq!(code(&wassreg(&["gen", "gauss", "--n", "0", "-o", p(&out)])), 3);
    assert_eq!(code(&wassreg(&["gen", "gauss", "--n", "3", "--sigma=-1", "-o", p(&out)])), 3);
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"n": 3, "colour": 1}"#).unwrap();
    assert_eq!(code(&wassreg(&["gen", "gmm", "--config", p(&cfg), "-o", p(&out)])), 3);
    assert_eq!(code(&wassreg(&["fit", "--data", p(&out), "--ref-index", "0", "-o", "m.json"])), 3);
    assert!(!out.exists());
    assert_eq!(code(&wassreg(&["--help"])), 0);
}

fn translation_set(dir: &Path) -> PathBuf {
    let rows: Vec<[f64; 2]> = (0..12)
        .map(|i| {
            let a = i as f64 * std::f64::consts::FRAC_PI_6;
            [a.cos() * (1.0 + 0.1 * i as f64) - 0.1, a.sin() * 0.8]
        })
        .collect();
    let mu = EmpiricalMeasure::from_points(&rows).unwrap();
    let nu = mu.translated(&[0.1, -0.05]).unwrap();
    let data = RegressionDataset::new(2, vec![MeasurePair { id: 0, source: mu, target: nu }]).unwrap();
    let path = dir.join("toy.json");
    save_dataset(&data, &path, false).unwrap();
    path
}

#[test]
fn fit_recovers_a_translation() {
    let dir = tempfile::tempdir().unwrap();
    let data = translation_set(dir.path());
    let model = dir.path().join("m.json");
    let o = ok(wassreg(&[
        "fit", "--data", p(&data), "--ref-index", "0", "--map", "affine", "--epochs", "200", "-o", p(&model),
    ]));
    let line = stdout(&o);
    let loss: f64 = line.split("final loss ").nth(1).unwrap().split(',').next().unwrap().parse().unwrap();
    assert!(loss <= 1e-3, "{line}");
    assert!(line.contains("1 pairs"));
    let m = load_model(&model).unwrap();
    assert_eq!(m.loss_history.len(), 200);
    assert!((m.final_loss().unwrap() - loss).abs() <= 1e-6 * loss.abs().max(1e-12), "{line} {:?}", m.final_loss());
}

#[test]
fn bad_map_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = translation_set(dir.path());
    let o = wassreg(&["fit", "--data", p(&data), "--ref-index", "0", "--map", "quadratic", "-o", "m.json"]);
    assert_eq!(code(&o), 2);
    let o = wassreg(&["fit", "--data", p(&data), "-o", "m.json"]);
    assert_eq!(code(&o), 2, "a reference option is required");
    let o = wassreg(&["fit", "--data", p(&data), "--ref-index", "0", "--refs", "2", "-o", "m.json"]);
    assert_eq!(code(&o), 2, "reference options are exclusive");
}

#[test]
fn diverging_fit_is_a_numeric_failure() {
    let dir = tempfile::tempdir().unwrap();
    let data = translation_set(dir.path());
    let model = dir.path().join("m.json");
    let o = wassreg(&["fit", "--data", p(&data), "--ref-index", "0", "--map", "affine", "--lr", "1e300", "-o", p(&model)]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!model.exists());
}

#[test]
fn unsupported_reference_is_a_numeric_failure_with_advice() {
    let dir = tempfile::tempdir().unwrap();
    let data = translation_set(dir.path());
    let far = dir.path().join("far.json");
    std::fs::write(&far, r#"{"points": [[500.0, 0.0]], "weights": [1.0]}"#).unwrap();
    let o = wassreg(&[
        "fit", "--data", p(&data), "--ref-file", p(&far), "--kernel", "epanechnikov", "--rho", "0.5", "-o", "m.json",
    ]);
    assert_eq!(code(&o), 4);
    assert!(String::from_utf8_lossy(&o.stderr).contains("increase rho"));
}

#[test]
fn pipeline_with_several_references() {
    let dir = tempfile::tempdir().unwrap();
    let d = |s: &str| dir.path().join(s);
    ok(wassreg(&["gen", "gauss", "--n", "10", "--k", "12", "--seed", "3", "-o", p(&d("train.wrd"))]));
    ok(wassreg(&["gen", "gauss", "--n", "3", "--k", "12", "--seed", "4", "-o", p(&d("test.json"))]));
    let o = ok(wassreg(&[
        "fit", "--data", p(&d("train.wrd")), "--refs", "3", "--epochs", "2", "--neighbors", "4", "-o", p(&d("m.json")),
    ]));
    assert_eq!(stdout(&o).lines().count(), 3);
    let models: Vec<PathBuf> = (0..3).map(|i| d(&format!("m.{i}.json"))).collect();
    assert!(models.iter().all(|m| m.exists()));
    assert!(!d("m.json").exists());

    let mut args = vec!["predict".to_string()];
    for m in &models {
        args.extend(["--model".into(), p(m).into()]);
    }
    let model_args = args[1..].to_vec();
    args.extend(["--data".into(), p(&d("test.json")).into(), "-o".into(), p(&d("pred.wrd")).into()]);
    let o = ok(wassreg(&args.iter().map(String::as_str).collect::<Vec<_>>()));
    assert_eq!(stdout(&o).matches(" -> model ").count(), 3);
    let pred = load_dataset(&d("pred.wrd")).unwrap();
    let test = load_dataset(&d("test.json")).unwrap();
    assert_eq!(pred.ids().collect::<Vec<_>>(), test.ids().collect::<Vec<_>>());

    let mut eval = vec!["eval".to_string()];
    eval.extend(model_args);
    eval.extend(
        ["--data", p(&d("test.json")), "--train", p(&d("train.wrd")), "--plot", p(&d("evalplots"))].map(String::from),
    );
    let o = ok(wassreg(&eval.iter().map(String::as_str).collect::<Vec<_>>()));
    let csv = stdout(&o);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("d,n,k,reps,abs_err_mean,abs_err_std,r2w_mean"));
    assert!(lines.next().unwrap().starts_with("2,10,12,3,"));
    assert_eq!(svgs(&d("evalplots")), 3);

    ok(wassreg(&[
        "plot", "--data", p(&d("test.json")), "--prediction", p(&d("pred.wrd")), "--out-dir", p(&d("plots")),
    ]));
    assert_eq!(svgs(&d("plots")), 3);
    let svg = std::fs::read_to_string(d("plots").join("pair-0.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("prediction (12 points)"));
    assert_eq!(code(&wassreg(&["plot", "--data", p(&d("test.json")), "--pair", "99", "--out-dir", p(&d("p2"))])), 3);
}

#[test]
fn regime_outputs_csv_plots_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = |s: &str| dir.path().join(s);
    ok(wassreg(&["gen", "gmm", "--n", "12", "--k", "15", "--seed", "1", "-o", p(&d("master.wrd"))]));
    let cfg = d("regime.json");
    std::fs::write(&cfg, r#"{"n": 8, "k": 10, "reps": 3, "train": {"epochs": 2}}"#).unwrap();
    let master = d("master.wrd");
    let run = |jobs: &str, out: &str, plot: Option<&str>| {
        let mut a = vec!["regime", "--data", p(&master), "--config", p(&cfg), "--jobs", jobs];
        let out = d(out);
        let out_s = p(&out).to_string();
        a.extend(["-o", &out_s]);
        let plot_dir = plot.map(|s| p(&d(s)).to_string());
        if let Some(pd) = &plot_dir {
            a.extend(["--plot", pd]);
        }
        ok(wassreg(&a));
        std::fs::read_to_string(out).unwrap()
    };
    let one = run("1", "one.csv", Some("plots"));
    let three = run("3", "three.csv", None);
    assert_eq!(one, three);
    assert!(one.starts_with("d,n,k,reps,abs_err_mean,abs_err_std,r2w_mean\n2,8,10,3,"));
    assert_eq!(svgs(&d("plots")), 3);

    // flags override the config file
    let o = ok(wassreg(&[
        "regime", "--data", p(&d("master.wrd")), "--config", p(&cfg), "--reps", "1", "--map", "affine",
    ]));
    assert!(stdout(&o).contains("\n2,8,10,1,"));
    assert_eq!(code(&wassreg(&["regime", "--data", p(&d("master.wrd")), "--n", "50"])), 3);
    assert_eq!(code(&wassreg(&["regime", "--data", p(&d("master.wrd")), "--jobs", "0"])), 2);
}
