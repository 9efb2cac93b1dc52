use proptest::prelude::*;

use tailtilt_core::diagnostics::{js_grid, kl_grid, tv_grid};
use tailtilt_core::fdc::fdc_step_values;
use tailtilt_core::math::logsumexp;
use tailtilt_core::risk::{dual_right_cvar, inverse_cdf, left_cvar, right_cvar, var_beta};
use tailtilt_core::threshold::{solve_biased_sgd, SgdConfig};
use tailtilt_core::tilt::{log_tilt, regularized_objective, tilt_grid_values};
use tailtilt_core::{EmpiricalDistribution, GridDistribution, SampleSet, TailMode, ThresholdProblem, TiltSpec};

fn rewards(max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0..10.0f64, 1..max)
}

fn weighted(max: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1..max).prop_flat_map(|n| {
        (
            prop::collection::vec(-10.0..10.0f64, n),
            prop::collection::vec(0.01..5.0f64, n),
        )
    })
}

fn grid_pair() -> impl Strategy<Value = (GridDistribution, GridDistribution)> {
    (
        prop::collection::vec(-6.0..3.0f64, 64),
        prop::collection::vec(-6.0..3.0f64, 64),
    )
        .prop_map(|(a, b)| {
            let g = |lm| GridDistribution::from_log_mass(&[0.0, 0.0], &[1.0, 1.0], 8, lm).unwrap();
            (g(a), g(b))
        })
}

fn level() -> impl Strategy<Value = f64> {
    0.02..0.98f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn sample_weights_are_normalized(lw in prop::collection::vec(-700.0..700.0f64, 1..200)) {
        let n = lw.len();
        let set = SampleSet::new(1, vec![0.0; n]).unwrap().with_log_weights(lw).unwrap();
        let total: f64 = set.weights().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(logsumexp(&set.normalized_log_weights()).abs() < 1e-12);
    }

    #[test]
    fn grid_mass_is_normalized(lm in prop::collection::vec(-300.0..300.0f64, 25)) {
        let g = GridDistribution::from_log_mass(&[-1.0, -1.0], &[1.0, 1.0], 5, lm).unwrap();
        prop_assert!(logsumexp(g.log_mass()).abs() < 1e-10);
    }

    #[test]
    fn reweighting_composes(
        (f, g) in (1..100usize).prop_flat_map(|n| (
            prop::collection::vec(-20.0..20.0f64, n),
            prop::collection::vec(-20.0..20.0f64, n),
        ))
    ) {
        let set = SampleSet::new(1, (0..f.len()).map(|i| i as f64).collect()).unwrap();
        let two = set.reweight_by(&f).unwrap().reweight_by(&g).unwrap();
        let sum: Vec<f64> = f.iter().zip(&g).map(|(a, b)| a + b).collect();
        let one = set.reweight_by(&sum).unwrap();
        for (a, b) in two.weights().iter().zip(one.weights()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn risk_is_translation_equivariant((r, w) in weighted(60), beta in level(), c in -50.0..50.0f64) {
        let shifted: Vec<f64> = r.iter().map(|x| x + c).collect();
        let tol = 1e-9 * (1.0 + c.abs());
        prop_assert!((var_beta(&shifted, Some(&w), beta).unwrap() - var_beta(&r, Some(&w), beta).unwrap() - c).abs() < tol);
        prop_assert!((right_cvar(&shifted, Some(&w), beta).unwrap() - right_cvar(&r, Some(&w), beta).unwrap() - c).abs() < tol);
        prop_assert!((left_cvar(&shifted, Some(&w), beta).unwrap() - left_cvar(&r, Some(&w), beta).unwrap() - c).abs() < tol);
    }

    #[test]
    fn risk_is_scale_equivariant((r, w) in weighted(60), beta in level(), s in 0.01..100.0f64) {
        let scaled: Vec<f64> = r.iter().map(|x| s * x).collect();
        let tol = 1e-9 * (1.0 + s) * 10.0;
        prop_assert!((var_beta(&scaled, Some(&w), beta).unwrap() - s * var_beta(&r, Some(&w), beta).unwrap()).abs() < tol);
        prop_assert!((right_cvar(&scaled, Some(&w), beta).unwrap() - s * right_cvar(&r, Some(&w), beta).unwrap()).abs() < tol);
        prop_assert!((left_cvar(&scaled, Some(&w), beta).unwrap() - s * left_cvar(&r, Some(&w), beta).unwrap()).abs() < tol);
    }

    #[test]
    fn reflection_identity((r, w) in weighted(80), beta in level()) {
        let neg: Vec<f64> = r.iter().map(|x| -x).collect();
        let l = left_cvar(&r, Some(&w), beta).unwrap();
        let rr = right_cvar(&neg, Some(&w), 1.0 - beta).unwrap();
        prop_assert!((l + rr).abs() < 1e-10, "{l} vs {rr}");
    }

    #[test]
    fn risk_functionals_are_ordered((r, w) in weighted(80), beta in level()) {
        let d = EmpiricalDistribution::new(&r, Some(&w)).unwrap();
        let v = d.quantile(beta).unwrap();
        let eps = 1e-12 * (1.0 + v.abs());
        prop_assert!(d.left_cvar(beta).unwrap() <= v + eps);
        prop_assert!(d.right_cvar(beta).unwrap() >= v - eps);
        prop_assert!(d.left_cvar(beta).unwrap() <= d.mean() + eps);
        prop_assert!(d.right_cvar(beta).unwrap() >= d.mean() - eps);
    }

    #[test]
    fn inverse_cdf_is_monotone((r, w) in weighted(80), mut qs in prop::collection::vec(0.001..0.999f64, 1..30)) {
        qs.sort_by(f64::total_cmp);
        let out = inverse_cdf(&r, Some(&w), &qs).unwrap();
        prop_assert!(out.windows(2).all(|p| p[0] <= p[1]));
    }

    #[test]
    fn mode_consistency_is_bitwise(r in rewards(50), t in -10.0..10.0f64, alpha in 0.05..10.0f64, beta in level()) {
        for mode in [TailMode::Right, TailMode::Left] {
            let p = ThresholdProblem::new(mode, alpha, beta, r.clone(), None).unwrap();
            let spec = TiltSpec::new(mode.into(), alpha, beta, t).unwrap();
            for &x in &r {
                prop_assert_eq!(p.exponent(x, t).to_bits(), log_tilt(&spec, x).to_bits());
            }
        }
    }

    #[test]
    fn gradient_boundary_identities(r in rewards(50), alpha in 0.05..10.0f64, beta in level()) {
        let right = ThresholdProblem::new(TailMode::Right, alpha, beta, r.clone(), None).unwrap();
        let (lo, hi) = right.reward_range();
        prop_assert_eq!(right.gradient(hi + 1.0).unwrap(), 1.0);
        prop_assert!((right.gradient(lo - 1.0).unwrap() - (1.0 - 1.0 / (1.0 - beta))).abs() < 1e-12);
        prop_assert_eq!(right.objective(hi + 0.5).unwrap(), hi + 0.5);
        let left = ThresholdProblem::new(TailMode::Left, alpha, beta, r, None).unwrap();
        prop_assert_eq!(left.gradient(lo - 1.0).unwrap(), 1.0);
        prop_assert!((left.gradient(hi + 1.0).unwrap() - (1.0 - 1.0 / beta)).abs() < 1e-12);
        prop_assert_eq!(left.objective(lo - 0.5).unwrap(), lo - 0.5);
    }

    #[test]
    fn dual_matches_primal((r, w) in weighted(40), beta in level()) {
        let (lo, hi) = r.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        let grid: Vec<f64> = (0..=20_000).map(|k| lo + (hi - lo) * k as f64 / 20_000.0).collect();
        let dual = dual_right_cvar(&r, Some(&w), beta, &grid).unwrap();
        let primal = right_cvar(&r, Some(&w), beta).unwrap();
        prop_assert!((dual - primal).abs() <= 1e-3 * (hi - lo).max(1e-12), "{dual} vs {primal}");
    }

    #[test]
    fn divergences_are_consistent((p, q) in grid_pair()) {
        let kl = kl_grid(&p, &q).unwrap();
        let js = js_grid(&p, &q).unwrap();
        let tv = tv_grid(&p, &q).unwrap();
        prop_assert!(kl >= 0.0);
        prop_assert!(tv <= (kl / 2.0).sqrt() + 1e-9);
        prop_assert!((0.0..=std::f64::consts::LN_2 + 1e-12).contains(&js));
        prop_assert!((js - js_grid(&q, &p).unwrap()).abs() < 1e-12);
        prop_assert!((tv - tv_grid(&q, &p).unwrap()).abs() < 1e-12);
        prop_assert_eq!(kl_grid(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn fdc_step_stays_normalized((p, prior) in grid_pair(), r in prop::collection::vec(-3.0..3.0f64, 64),
                                 alpha in 0.1..3.0f64, beta in level(), ratio in 1.0..10.0f64) {
        let (next, t) = fdc_step_values(&p, &prior, &r, alpha, beta, alpha * ratio).unwrap();
        prop_assert!(t.is_finite());
        prop_assert!(logsumexp(next.log_mass()).abs() < 1e-10);
    }

    #[test]
    fn sgd_iterates_stay_in_interval(r in prop::collection::vec(-5.0..5.0f64, 2..200), seed in 0u64..1000,
                                     beta in level(), lo in -8.0..0.0f64, width in 0.1..10.0f64) {
        let p = ThresholdProblem::new(TailMode::Right, 1.0, beta, r, None).unwrap()
            .with_interval(lo, lo + width).unwrap();
        let mut cfg = SgdConfig::new(8, 100, seed);
        cfg.step = Some(1.0);
        let res = solve_biased_sgd(&p, &cfg).unwrap();
        for tp in &res.trace {
            prop_assert!(tp.t >= lo && tp.t <= lo + width);
        }
        prop_assert!(res.t_star >= lo && res.t_star <= lo + width);
    }
}

// The expected-mode grid tilt maximizes E[r] - alpha KL(. || prior): every
// perturbation direction lowers the regularized objective.
#[test]
fn expected_tilt_maximizes_regularized_objective() {
    use rand::{Rng, SeedableRng};
    let prior = GridDistribution::gaussian(
        &tailtilt_core::GaussianPrior::standard(2),
        &[-4.0, -4.0],
        &[4.0, 4.0],
        40,
    )
    .unwrap();
    let r: Vec<f64> = (0..prior.len())
        .map(|k| {
            let c = prior.cell_center(k);
            c[0] + c[1]
        })
        .collect();
    let alpha = 1.0;
    let tilted = tilt_grid_values(&prior, &r, &TiltSpec::expected(alpha).unwrap()).unwrap();
    let best = regularized_objective(&tilted, &prior, &r, alpha).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
    for _ in 0..100 {
        let eps = rng.random_range(1e-3..0.3);
        let lm: Vec<f64> = tilted
            .log_mass()
            .iter()
            .map(|l| l + eps * rng.random_range(-1.0..1.0))
            .collect();
        let q = tilted.with_log_mass(lm).unwrap();
        let v = regularized_objective(&q, &prior, &r, alpha).unwrap();
        assert!(v < best, "perturbation improved the objective: {v} >= {best}");
    }
}
