use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wassreg_core::datagen::{gen_gaussian_pairs, gen_gmm_pairs, subsample_regime, GaussianGenConfig, GmmGenConfig};
use wassreg_core::eval::{r2w, run_regime, RegimeSpec};
use wassreg_core::kernel::{kernel_weight, select_bandwidth, BandwidthRule, KernelFamily, KernelSpec};
use wassreg_core::maps::{pushforward, HiddenSizes, MapFamily, TransportMapParams};
use wassreg_core::ot::{exact_w2_squared, w2_squared, BlurConvention, DistanceBackend, SinkhornConfig};
use wassreg_core::train::TrainConfig;
use wassreg_core::EmpiricalMeasure;

fn cloud(rng: &mut ChaCha8Rng, k: usize, d: usize) -> EmpiricalMeasure {
    let rows: Vec<Vec<f64>> = (0..k).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    EmpiricalMeasure::from_points(&rows).unwrap()
}

fn shuffled(rng: &mut ChaCha8Rng, k: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..k).collect();
    for i in (1..k).rev() {
        p.swap(i, rng.random_range(0..=i));
    }
    p
}

fn family() -> impl Strategy<Value = KernelFamily> {
    prop_oneof![Just(KernelFamily::Gaussian), Just(KernelFamily::Epanechnikov)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// `K_{ch}(c r) = c^{-d} K_h(r)`.
    #[test]
    fn kernel_scale_covariance(r in 0.0..5.0f64, h in 0.05..3.0f64, c in 0.1..10.0f64, d in 1usize..6, fam in family()) {
        let base = kernel_weight(r, &KernelSpec::new(fam, h, d).unwrap()).unwrap();
        let scaled = kernel_weight(c * r, &KernelSpec::new(fam, c * h, d).unwrap()).unwrap();
        let expect = base / c.powi(d as i32);
        prop_assert!((scaled - expect).abs() <= 1e-12 * expect.abs().max(1e-300));
    }

    #[test]
    fn kernel_is_non_increasing(r in 0.0..5.0f64, dr in 0.0..2.0f64, h in 0.05..3.0f64, fam in family()) {
        let s = KernelSpec::new(fam, h, 2).unwrap();
        prop_assert!(kernel_weight(r + dr, &s).unwrap() <= kernel_weight(r, &s).unwrap());
    }

    #[test]
    fn bandwidth_scales_with_distances(
        dists in prop::collection::vec(0.01..10.0f64, 1..20),
        c in 0.1..10.0f64,
        scale in 0.1..3.0f64,
        pick in any::<prop::sample::Index>(),
    ) {
        let rule = BandwidthRule { neighbors: pick.index(dists.len()) + 1, scale };
        let h = select_bandwidth(&dists, &rule).unwrap();
        let scaled: Vec<f64> = dists.iter().map(|x| c * x).collect();
        let hc = select_bandwidth(&scaled, &rule).unwrap();
        prop_assert!((hc - c * h).abs() <= 1e-12 * c * h);
        // order does not matter
        let rev: Vec<f64> = dists.iter().rev().copied().collect();
        prop_assert_eq!(select_bandwidth(&rev, &rule).unwrap(), h);
    }

    /// Relabelling the source points relabels the pushforward and nothing else.
    #[test]
    fn pushforward_is_permutation_equivariant(seed in any::<u64>(), k in 1usize..12, d in 1usize..4, displacement in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fam = if displacement { MapFamily::Displacement } else { MapFamily::Affine };
        let mut map = TransportMapParams::init(fam, d, HiddenSizes { encoder: 8, context: 4, head: 8 }, seed);
        for block in map.param_slices_mut() {
            for p in block.iter_mut() {
                *p += rng.random_range(-0.5..0.5);
            }
        }
        let mu = cloud(&mut rng, k, d);
        let perm = shuffled(&mut rng, k);
        let a = pushforward(&map, &mu).unwrap().permuted(&perm).unwrap();
        let b = pushforward(&map, &mu.permuted(&perm).unwrap()).unwrap();
        for j in 0..k {
            for (x, y) in a.point(j).iter().zip(b.point(j)) {
                prop_assert!((x - y).abs() <= 1e-12, "{} vs {}", x, y);
            }
        }
    }

    /// R² does not see point labels.
    #[test]
    fn r2_is_relabelling_invariant(seed in any::<u64>(), k in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (t, p, b) = (cloud(&mut rng, k, 2), cloud(&mut rng, k, 2), cloud(&mut rng, k + 1, 2));
        let cfg = SinkhornConfig::default();
        let base = r2w(&t, &p, &b, DistanceBackend::Exact, &cfg).unwrap();
        let tp = t.permuted(&shuffled(&mut rng, k)).unwrap();
        let pp = p.permuted(&shuffled(&mut rng, k)).unwrap();
        let bp = b.permuted(&shuffled(&mut rng, k + 1)).unwrap();
        let other = r2w(&tp, &pp, &bp, DistanceBackend::Exact, &cfg).unwrap();
        prop_assert!((base.r2w - other.r2w).abs() <= 1e-9 * base.r2w.abs().max(1.0));
    }

    /// With a small length-scale blur the Sinkhorn route tracks the exact one.
    #[test]
    fn backends_are_consistent(seed in any::<u64>(), k in 2usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (cloud(&mut rng, k, 2), cloud(&mut rng, k, 2));
        let cfg = SinkhornConfig {
            blur: 0.02,
            convention: BlurConvention::LengthScale,
            tol: 1e-8,
            max_iters: 100_000,
            ..Default::default()
        };
        let exact = w2_squared(&a, &b, DistanceBackend::Exact, &cfg).unwrap();
        let sk = w2_squared(&a, &b, DistanceBackend::Sinkhorn, &cfg).unwrap();
        prop_assert!((exact - sk).abs() <= 0.02 * exact + 1e-3, "{} vs {}", exact, sk);
        prop_assert_eq!(w2_squared(&a, &b, DistanceBackend::Auto, &cfg).unwrap(), exact);
    }

    /// In one dimension a prediction moved away from the target only loses R².
    #[test]
    fn r2_decreases_with_shift_in_1d(seed in any::<u64>(), k in 1usize..10, s1 in 0.0..2.0f64, ds in 0.01..2.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = cloud(&mut rng, k, 1);
        let bary = t.translated(&[5.0]).unwrap();
        let cfg = SinkhornConfig::default();
        let near = r2w(&t, &t.translated(&[s1]).unwrap(), &bary, DistanceBackend::Exact, &cfg).unwrap();
        let far = r2w(&t, &t.translated(&[s1 + ds]).unwrap(), &bary, DistanceBackend::Exact, &cfg).unwrap();
        prop_assert!(far.r2w < near.r2w);
        prop_assert!((near.ss_res - s1 * s1).abs() <= 1e-9);
    }

    #[test]
    fn translation_moves_the_mean(seed in any::<u64>(), k in 1usize..10, t in prop::collection::vec(-5.0..5.0f64, 3)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = cloud(&mut rng, k, 3);
        let moved = m.translated(&t).unwrap();
        for ((a, b), ti) in moved.mean().iter().zip(m.mean()).zip(&t) {
            prop_assert!((a - b - ti).abs() <= 1e-12);
        }
        prop_assert!((moved.diameter() - m.diameter()).abs() <= 1e-9);
        prop_assert!((exact_w2_squared(&m, &moved).unwrap() - t.iter().map(|x| x * x).sum::<f64>()).abs() <= 1e-9);
    }

    #[test]
    fn subsample_is_deterministic_and_within_bounds(seed in any::<u64>(), n in 1usize..6, k in 1usize..6) {
        let master = gen_gaussian_pairs(&GaussianGenConfig { n: 6, k: 6, seed: 3, ..Default::default() }).unwrap();
        let a = subsample_regime(&master, n, k, seed).unwrap();
        let b = subsample_regime(&master, n, k, seed).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.len(), n);
        let ids: Vec<_> = a.ids().collect();
        prop_assert!(ids.windows(2).all(|w| w[0] < w[1]));
        for p in a.pairs() {
            prop_assert_eq!(p.source.len(), k);
            prop_assert_eq!(p.target.len(), k);
            prop_assert!((p.source.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }
}

#[test]
fn generators_produce_the_requested_shapes() {
    let g = gen_gaussian_pairs(&GaussianGenConfig { n: 4, k: 7, ..Default::default() }).unwrap();
    assert_eq!((g.len(), g.dim()), (4, 2));
    assert!(g.pairs().iter().all(|p| p.source.len() == 7 && p.target.len() == 7));
    for dim in [2, 5] {
        let cfg = GmmGenConfig { n: 3, k: 9, dim, ..Default::default() };
        let m = gen_gmm_pairs(&cfg).unwrap();
        assert_eq!((m.len(), m.dim()), (3, dim));
        assert_eq!(m, gen_gmm_pairs(&cfg).unwrap());
        assert_ne!(m, gen_gmm_pairs(&GmmGenConfig { seed: 1, ..cfg }).unwrap());
    }
}

#[test]
fn small_regime_is_reproducible() {
    let master = gen_gaussian_pairs(&GaussianGenConfig { n: 12, k: 12, ..Default::default() }).unwrap();
    let spec = RegimeSpec {
        n: 8,
        k: 10,
        reps: 2,
        train: TrainConfig { epochs: 3, ..Default::default() },
        ..Default::default()
    };
    let a = run_regime(&master, &spec).unwrap();
    let b = run_regime(&master, &spec).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.per_rep.len(), 2);
    assert!(a.failures.is_empty());
    for r in &a.per_rep {
        assert_eq!(r.abs_test_error, r.ss_res);
        assert!(r.ss_res >= 0.0 && r.ss_tot > 0.0);
        assert_eq!(r.included_pairs, 7);
    }
    assert!(a.csv_row().starts_with("2,8,10,2,"));
}
