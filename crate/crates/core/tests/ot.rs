use proptest::prelude::*;
use wassreg_core::ot::{
    assignment, exact_w2_squared, free_support_barycenter, free_support_barycenter_traced, sinkhorn_divergence,
    sinkhorn_grad_points, transport_lp, w2_squared, BlurConvention, DistanceBackend, SinkhornConfig,
};
use wassreg_core::{EmpiricalMeasure, Error, Matrix};

fn cloud(rows: &[Vec<f64>]) -> EmpiricalMeasure {
    EmpiricalMeasure::from_points(rows).unwrap()
}

fn line(xs: &[f64]) -> EmpiricalMeasure {
    let rows: Vec<[f64; 1]> = xs.iter().map(|&x| [x]).collect();
    EmpiricalMeasure::from_points(&rows).unwrap()
}

fn tight(blur: f64) -> SinkhornConfig {
    SinkhornConfig { blur, tol: 1e-12, max_iters: 5000, unroll_iters: 5000, ..Default::default() }
}

/// `blur` as a length: the temperature is `blur^2`.
fn fine(blur: f64) -> SinkhornConfig {
    SinkhornConfig {
        blur,
        convention: BlurConvention::LengthScale,
        tol: 1e-7,
        max_iters: 100_000,
        ..Default::default()
    }
}

fn sorted_matching(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

fn points(k: std::ops::RangeInclusive<usize>, d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-2.0..2.0f64, d), k)
}

#[test]
fn two_diracs() {
    let a = EmpiricalMeasure::dirac(&[0.0, 0.0]).unwrap();
    let b = EmpiricalMeasure::dirac(&[3.0, 4.0]).unwrap();
    let s = sinkhorn_divergence(&a, &b, &SinkhornConfig::with_blur(0.01)).unwrap();
    assert!((s.value - 25.0).abs() < 0.1, "{}", s.value);
    assert_eq!(exact_w2_squared(&a, &b).unwrap(), 25.0);
}

#[test]
fn two_point_line() {
    let a = line(&[0.0, 1.0]);
    let b = line(&[1.0, 2.0]);
    let s = sinkhorn_divergence(&a, &b, &SinkhornConfig::with_blur(0.01)).unwrap();
    assert!((s.value - 1.0).abs() < 0.05, "{}", s.value);
    // both matchings: identity costs (1 + 1) / 2, swap costs (4 + 0) / 2
    assert!((exact_w2_squared(&a, &b).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn self_divergence_is_zero() {
    let a = cloud(&[vec![0.1, 0.3], vec![-1.0, 2.0], vec![0.5, -0.4]]);
    for blur in [0.01, 0.15, 3.0] {
        let s = sinkhorn_divergence(&a, &a, &SinkhornConfig::with_blur(blur)).unwrap();
        assert!(s.value.abs() <= 1e-9, "{blur}: {}", s.value);
    }
    assert_eq!(exact_w2_squared(&a, &a).unwrap(), 0.0);
}

#[test]
fn divergence_tends_to_w2_as_blur_shrinks() {
    let a = cloud(&[vec![0.0, 0.0], vec![1.0, 0.5], vec![-0.3, 1.2]]);
    let b = cloud(&[vec![0.4, -0.2], vec![1.5, 1.0], vec![0.2, 2.0]]);
    let exact = exact_w2_squared(&a, &b).unwrap();
    let errs: Vec<f64> = [1.0, 0.1, 0.01]
        .iter()
        .map(|&blur| (sinkhorn_divergence(&a, &b, &SinkhornConfig::with_blur(blur)).unwrap().value - exact).abs())
        .collect();
    assert!(errs[2] < errs[0], "{errs:?}");
    assert!(errs[2] < 0.02 * exact, "{errs:?}");
}

#[test]
fn gradient_examples() {
    let a = cloud(&[vec![0.1, 0.3], vec![-1.0, 2.0]]);
    let g = sinkhorn_grad_points(&a, &a, &tight(0.15)).unwrap();
    assert!(g.frobenius_norm() <= 1e-6, "{g:?}");

    let x = EmpiricalMeasure::dirac(&[1.0, -2.0]).unwrap();
    let y = EmpiricalMeasure::dirac(&[0.5, 1.0]).unwrap();
    let g = sinkhorn_grad_points(&x, &y, &SinkhornConfig::with_blur(0.01)).unwrap();
    assert!((g[(0, 0)] - 1.0).abs() < 1e-6 && (g[(0, 1)] + 6.0).abs() < 1e-6, "{g:?}");
}

#[test]
fn unconverged_result_is_flagged() {
    let a = cloud(&[vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 0.0]]);
    let b = cloud(&[vec![0.5, 0.1], vec![3.0, 1.0]]);
    let cfg = SinkhornConfig { blur: 0.001, max_iters: 3, unroll_iters: 3, anneal: None, ..Default::default() };
    let r = sinkhorn_divergence(&a, &b, &cfg).unwrap();
    assert!(!r.converged);
    assert_eq!(r.iters_used, 3);
}

#[test]
fn dimension_mismatch_errors() {
    let a = cloud(&[vec![0.0, 0.0]]);
    let b = line(&[1.0]);
    assert!(matches!(sinkhorn_divergence(&a, &b, &SinkhornConfig::default()), Err(Error::Dimension(_))));
    assert!(matches!(exact_w2_squared(&a, &b), Err(Error::Dimension(_))));
}

#[test]
fn capacity_guard() {
    let xs: Vec<f64> = (0..1001).map(|i| i as f64).collect();
    let a = line(&xs);
    let b = line(&xs[..1000]);
    assert!(matches!(exact_w2_squared(&a, &b), Err(Error::Capacity { .. })));
}

#[test]
fn assignment_against_brute_force() {
    let c = Matrix::from_rows(&[[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]]).unwrap();
    let (perm, cost) = assignment(&c).unwrap();
    let mut best = f64::INFINITY;
    for p in [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]] {
        best = best.min((0..3).map(|i| c[(i, p[i])]).sum());
    }
    assert_eq!(cost, best);
    assert_eq!((0..3).map(|i| c[(i, perm[i])]).sum::<f64>(), best);
}

#[test]
fn lp_with_unequal_weights() {
    // all mass of the single source point must go to both targets
    let c = Matrix::from_rows(&[[1.0, 4.0]]).unwrap();
    let plan = transport_lp(&[1.0], &[0.25, 0.75], &c).unwrap();
    assert!((plan.cost - (0.25 + 3.0)).abs() < 1e-12);
    // a weighted pair where splitting is forced
    let a = EmpiricalMeasure::new(Matrix::from_rows(&[[0.0], [1.0]]).unwrap(), vec![0.5, 0.5]).unwrap();
    let b = EmpiricalMeasure::new(Matrix::from_rows(&[[0.0], [1.0], [2.0]]).unwrap(), vec![0.25, 0.25, 0.5]).unwrap();
    // monotone coupling: 0.25 (0->0), 0.25 (0->1), 0.5 (1->2)
    assert!((exact_w2_squared(&a, &b).unwrap() - (0.25 + 0.5)).abs() < 1e-9);
}

#[test]
fn backends_agree_on_small_inputs() {
    let a = cloud(&[vec![0.0, 0.0], vec![1.0, 0.5], vec![-0.3, 1.2], vec![2.0, 2.0]]);
    let b = cloud(&[vec![0.4, -0.2], vec![1.5, 1.0], vec![0.2, 2.0], vec![2.5, 1.0]]);
    let cfg = SinkhornConfig::with_blur(0.01 * 3.0);
    let e = w2_squared(&a, &b, DistanceBackend::Exact, &cfg).unwrap();
    let s = w2_squared(&a, &b, DistanceBackend::Sinkhorn, &cfg).unwrap();
    assert_eq!(w2_squared(&a, &b, DistanceBackend::Auto, &cfg).unwrap(), e);
    assert!((e - s).abs() <= 0.02 * e, "{e} vs {s}");
}

#[test]
fn barycenter_of_two_diracs_is_the_midpoint() {
    let a = EmpiricalMeasure::dirac(&[0.0, 2.0]).unwrap();
    let b = EmpiricalMeasure::dirac(&[4.0, -2.0]).unwrap();
    let bary = free_support_barycenter(&[a, b], 1, &SinkhornConfig::default(), 50).unwrap();
    assert!((bary.point(0)[0] - 2.0).abs() < 1e-9 && bary.point(0)[1].abs() < 1e-9);
}

#[test]
fn self_barycenter() {
    let mu = cloud(&[vec![0.0, 0.0], vec![3.0, 1.0], vec![-2.0, 4.0]]);
    let bary = free_support_barycenter(&[mu.clone()], 3, &tight(0.01), 200).unwrap();
    for j in 0..3 {
        let p = mu.point(j);
        let hit = (0..3).any(|r| bary.point(r).iter().zip(p).all(|(x, y)| (x - y).abs() < 1e-6));
        assert!(hit, "{p:?} missing from {bary:?}");
    }
}

#[test]
fn barycenter_of_two_lines() {
    let a = line(&[0.0, 2.0]);
    let b = line(&[2.0, 4.0]);
    let bary = free_support_barycenter(&[a, b], 2, &tight(0.01), 200).unwrap();
    let mut xs: Vec<f64> = (0..2).map(|r| bary.point(r)[0]).collect();
    xs.sort_by(f64::total_cmp);
    assert!((xs[0] - 1.0).abs() < 1e-6 && (xs[1] - 3.0).abs() < 1e-6, "{xs:?}");
}

#[test]
fn barycenter_needs_input() {
    assert!(matches!(free_support_barycenter(&[], 3, &SinkhornConfig::default(), 5), Err(Error::Empty(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn divergence_symmetric_nonnegative(a in points(1..=6, 2), b in points(1..=6, 2), blur in 0.05..1.0f64) {
        let (a, b) = (cloud(&a), cloud(&b));
        let cfg = SinkhornConfig::with_blur(blur);
        let ab = sinkhorn_divergence(&a, &b, &cfg).unwrap().value;
        let ba = sinkhorn_divergence(&b, &a, &cfg).unwrap().value;
        prop_assert_eq!(ab, ba);
        prop_assert!(ab >= -1e-9);
        prop_assert!(sinkhorn_divergence(&a, &a, &cfg).unwrap().value.abs() <= 1e-9);
    }

    #[test]
    fn exact_matches_sorted_matching(xs in prop::collection::vec(-5.0..5.0f64, 1..=8), shift in -1.0..1.0f64, seed in any::<u64>()) {
        let ys: Vec<f64> = xs.iter().enumerate().map(|(i, x)| x * 0.7 + shift + ((seed >> (i % 60)) & 7) as f64 * 0.3).collect();
        let e = exact_w2_squared(&line(&xs), &line(&ys)).unwrap();
        prop_assert!((e - sorted_matching(&xs, &ys)).abs() <= 1e-12 * (1.0 + e));
    }

    #[test]
    fn exact_translation_equivariant(a in points(1..=6, 3), b in points(1..=6, 3), t in prop::collection::vec(-3.0..3.0f64, 3)) {
        let (a, b) = (cloud(&a), cloud(&b));
        let e = exact_w2_squared(&a, &b).unwrap();
        let et = exact_w2_squared(&a.translated(&t).unwrap(), &b.translated(&t).unwrap()).unwrap();
        prop_assert!((e - et).abs() <= 1e-9);
    }

    #[test]
    fn oracle_agreement_small_blur(a in points(1..=8, 3), b in points(1..=8, 3)) {
        let (a, b) = (cloud(&a), cloud(&b));
        let diam = wassreg_core::measures::joint_diameter(&a, &b);
        prop_assume!(diam > 1e-3);
        let e = exact_w2_squared(&a, &b).unwrap();
        let s = sinkhorn_divergence(&a, &b, &fine(0.01 * diam)).unwrap();
        prop_assert!((s.value - e).abs() <= 0.02 * e + 1e-9, "{} vs {}", s.value, e);
    }

    #[test]
    fn gradient_matches_finite_differences(a in points(2..=5, 2), b in points(2..=5, 2)) {
        let (a, b) = (cloud(&a), cloud(&b));
        let cfg = tight(0.5);
        let g = sinkhorn_grad_points(&a, &b, &cfg).unwrap();
        let h = 1e-5;
        let mut worst = 0.0f64;
        let scale = g.max_abs().max(1e-3);
        for i in 0..a.len() {
            for c in 0..2 {
                let bump = |s: f64| {
                    let mut p = a.points().clone();
                    p[(i, c)] += s;
                    sinkhorn_divergence(&a.with_points(p).unwrap(), &b, &cfg).unwrap().value
                };
                let fd = (bump(h) - bump(-h)) / (2.0 * h);
                worst = worst.max((fd - g[(i, c)]).abs() / scale);
            }
        }
        prop_assert!(worst <= 1e-4, "relative error {}", worst);
    }

    #[test]
    fn barycenter_objective_non_increasing(ms in prop::collection::vec(points(3..=5, 2), 2..=4)) {
        let ms: Vec<EmpiricalMeasure> = ms.iter().map(|m| cloud(m)).collect();
        let trace = free_support_barycenter_traced(&ms, 4, &SinkhornConfig { tol: 1e-12, max_iters: 20_000, ..Default::default() }, 15).unwrap();
        for w in trace.objective.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9, "{:?}", trace.objective);
        }
    }
}
