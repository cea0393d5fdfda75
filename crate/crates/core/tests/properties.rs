use proptest::prelude::*;
use sgdm_core::dataset::make_neighbor;
use sgdm_core::harness::{
    aggregate, prepare_data, run_bound_check, run_stability_on, BoundCheckConfig, DataSource,
    ExperimentConfig,
};
use sgdm_core::losses::smoothness;
use sgdm_core::optimizer::{
    coupled_run, hb_params, nesterov_params, run, sgdm_step, HyperParams, RiskRecording,
    SgdmState,
};
use sgdm_core::suite::admissible_params;
use sgdm_core::synthetic::gaussian_logistic;
use sgdm_core::theory::{
    auxiliary_sequence, check_opt_condition, check_stab_condition, epr_recipe, max_eta_hb,
    optimization_bound, stability_bound, verify_dist_identity, verify_m_recursion_bound,
    verify_y_identity, NoiseRegime,
};
use sgdm_core::{LossKind, NeighborSpec, SampleStream, Variant, WeightVector};

fn loss_kind() -> impl Strategy<Value = LossKind> {
    prop_oneof![Just(LossKind::Logistic), Just(LossKind::Squared)]
}

fn beta_grid() -> impl Strategy<Value = f64> {
    prop_oneof![Just(0.0), Just(0.5), Just(0.9), Just(0.99)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn identities_hold_on_admissible_runs(
        seed in 0u64..1000,
        n in 5usize..60,
        d in 1usize..8,
        loss in loss_kind(),
        beta in beta_grid(),
        nesterov in any::<bool>(),
        fraction in 0.05f64..1.0,
    ) {
        let data = gaussian_logistic(n, d, seed).unwrap();
        let alpha = smoothness(&data, loss).alpha;
        let variant = if nesterov && beta > 0.0 { Variant::Nesterov } else { Variant::Hb };
        let hp = admissible_params(variant, beta, alpha, fraction, 300).unwrap();
        let stream = SampleStream::new(seed, n).unwrap();
        let traj = run(&data, loss, &hp, WeightVector::zeros(d), &stream, RiskRecording::Off).unwrap();
        let aux = auxiliary_sequence(&traj);
        prop_assert_eq!(aux.y.len(), traj.iterates.len());
        prop_assert_eq!(&aux.y[0], &traj.iterates[0]);
        let y = verify_y_identity(&aux, &traj);
        prop_assert!(y.passed, "y residual {}", y.relative);
        let dist = verify_dist_identity(&aux, &traj);
        prop_assert!(dist.passed, "dist residual {} margin {}", dist.max_relative_residual, dist.min_bound_margin);
    }

    #[test]
    fn momentum_recursion_margin_nonnegative(
        seed in 0u64..1000,
        beta in prop_oneof![Just(0.5), Just(0.9)],
        loss in loss_kind(),
        i in 1usize..30,
        j in 1usize..30,
    ) {
        let data = gaussian_logistic(30, 4, seed).unwrap();
        let alpha = smoothness(&data, loss).alpha;
        let hp = hb_params(0.5 * max_eta_hb(beta, alpha).unwrap(), beta, 200).unwrap();
        let spec = NeighborSpec { index: i, replacement: data.example(j).clone() };
        let stream = SampleStream::new(seed, 30).unwrap();
        let trace = coupled_run(&data, &spec, loss, &hp, WeightVector::zeros(4), &stream).unwrap();
        let check = verify_m_recursion_bound(&trace);
        prop_assert!(check.min_margin >= -1e-10, "margin {}", check.min_margin);
    }

    #[test]
    fn zero_divergence_before_first_hit(
        seed in 0u64..1000,
        i in 1usize..20,
        flip in any::<bool>(),
    ) {
        let data = gaussian_logistic(20, 3, seed).unwrap();
        let mut replacement = data.example(1 + (i % 20)).clone();
        if flip {
            replacement.label = -replacement.label;
        }
        let spec = NeighborSpec { index: i, replacement };
        let hp = hb_params(0.05, 0.9, 100).unwrap();
        let stream = SampleStream::new(seed, 20).unwrap();
        let trace = coupled_run(&data, &spec, LossKind::Logistic, &hp, WeightVector::zeros(3), &stream).unwrap();
        let first = trace.base.indices.iter().position(|&k| k == i).map_or(trace.distances.len(), |p| p + 1);
        prop_assert!(trace.distances[..first].iter().all(|&v| v == 0.0));
        prop_assert_eq!(make_neighbor(&data, &spec).unwrap().n(), data.n());
    }

    #[test]
    fn replay_is_bit_exact(seed in 0u64..1000, beta in beta_grid(), gamma in 0.0f64..0.1, eta in 1e-4f64..0.1) {
        let data = gaussian_logistic(15, 4, seed).unwrap();
        let hp = HyperParams::new(beta, gamma, eta, 60).unwrap();
        let stream = SampleStream::new(seed, 15).unwrap();
        let traj = run(&data, LossKind::Logistic, &hp, WeightVector::zeros(4), &stream, RiskRecording::Off).unwrap();
        let mut s = SgdmState::new(traj.iterates[0].clone());
        for (k, g) in traj.gradients.iter().enumerate() {
            s = sgdm_step(s, g, &hp).unwrap();
            prop_assert_eq!(&s.w, &traj.iterates[k + 1]);
        }
    }

    #[test]
    fn stream_is_pure_and_in_range(seed in any::<u64>(), n in 1usize..1000, k in 1usize..5000) {
        let s = SampleStream::new(seed, n).unwrap();
        let v = s.index(k);
        prop_assert!(v >= 1 && v <= n);
        prop_assert_eq!(v, s.iter().nth(k - 1).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn hb_cap_nests_inside_both_conditions(beta in 0.0f64..0.995, alpha in 0.01f64..100.0, fraction in 0.0001f64..0.999999) {
        let eta = fraction * max_eta_hb(beta, alpha).unwrap();
        let hp = hb_params(eta, beta, 1).unwrap();
        prop_assert!(check_stab_condition(&hp, alpha).satisfied);
        prop_assert!(check_opt_condition(&hp, alpha).satisfied);
    }

    #[test]
    fn stability_bound_nondecreasing_in_beta(
        b1 in 0.0f64..0.99,
        b2 in 0.0f64..0.99,
        gamma in 0.0f64..0.1,
        eta in 1e-6f64..0.1,
        n in 1usize..10_000,
        t in 1usize..100_000,
        risk in 0.0f64..1e3,
    ) {
        let (lo, hi) = if b1 <= b2 { (b1, b2) } else { (b2, b1) };
        let a = stability_bound(&HyperParams::new(lo, gamma, eta, t).unwrap(), 1.0, n, t, risk, Variant::General);
        let b = stability_bound(&HyperParams::new(hi, gamma, eta, t).unwrap(), 1.0, n, t, risk, Variant::General);
        prop_assert!(a.value <= b.value * (1.0 + 1e-14));
    }

    #[test]
    fn specialized_formulas_match_general(
        beta in 0.01f64..0.99,
        step in 1e-5f64..0.5,
        alpha in 0.01f64..10.0,
        n in 1usize..100_000,
        t in 1usize..1_000_000,
        risk in 0.0f64..1e4,
        dist in 0.0f64..1e3,
    ) {
        let rel = |a: f64, b: f64| if a == b { 0.0 } else { (a - b).abs() / a.abs().max(b.abs()) };
        for (hp, v) in [(hb_params(step, beta, t).unwrap(), Variant::Hb), (nesterov_params(step, beta, t).unwrap(), Variant::Nesterov)] {
            let s = rel(stability_bound(&hp, alpha, n, t, risk, v).value, stability_bound(&hp, alpha, n, t, risk, Variant::General).value);
            let o = rel(optimization_bound(&hp, alpha, dist, t, risk, v).value, optimization_bound(&hp, alpha, dist, t, risk, Variant::General).value);
            prop_assert!(s <= 1e-12 && o <= 1e-12, "stab {s} opt {o}");
        }
    }

    #[test]
    fn epr_regime_follows_threshold(n in 1usize..1_000_000, beta in 0.0f64..0.99, l in 0.0f64..1.0) {
        let r = epr_recipe(n, beta, l, Variant::Hb, None).unwrap();
        prop_assert_eq!(r.regime == NoiseRegime::HighNoise, l >= 1.0 / n as f64);
    }

    #[test]
    fn aggregate_is_nonnegative(series in prop::collection::vec(prop::collection::vec(0.0f64..10.0, 5), 1..12)) {
        let (m, s) = aggregate(&series).unwrap();
        prop_assert_eq!(m.len(), 5);
        prop_assert!(m.iter().chain(&s).all(|&v| v >= 0.0));
    }
}

fn sweep_config() -> ExperimentConfig {
    ExperimentConfig {
        data: DataSource::Gaussian { n: 80, d: 5, seed: 6 },
        max_examples: None,
        loss: LossKind::Logistic,
        variant: Variant::Hb,
        steps: vec![0.01, 0.5, 40.0],
        betas: vec![0.0, 0.9],
        gamma: 0.0,
        repetitions: 6,
        epochs: 3,
        train_fraction: 0.8,
        seed: 77,
        stride: Some(16),
        output_dir: None,
    }
}

#[test]
fn stability_result_independent_of_thread_count() {
    let cfg = sweep_config();
    let data = prepare_data(&cfg.data, None, cfg.train_fraction, cfg.loss, cfg.seed).unwrap();
    let in_pool = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_stability_on(&cfg, &data).unwrap())
    };
    let one = in_pool(1);
    let four = in_pool(4);
    assert_eq!(one, four);
    for p in &one.points {
        assert_eq!(p.mean.len(), 3 * 64 / 16);
        assert_eq!(p.censored + p.completed, 6);
    }
}

#[test]
fn divergent_grid_points_are_censored_not_fatal() {
    let cfg = sweep_config();
    let data = prepare_data(&cfg.data, None, cfg.train_fraction, cfg.loss, cfg.seed).unwrap();
    // squared loss with a huge step diverges quickly
    let cfg = ExperimentConfig { loss: LossKind::Squared, steps: vec![40.0], betas: vec![0.9], ..cfg };
    let res = run_stability_on(&cfg, &data).unwrap();
    let p = &res.points[0];
    // a repetition whose perturbed index is never drawn keeps zero distance
    assert!(p.censored >= 5 && p.censored + p.completed == 6);
    assert!(p.mean.iter().all(|v| !v.is_infinite()));
    assert!(!res.points[0].conditions.iter().all(|c| c.satisfied));
}

#[test]
fn momentum_raises_the_theoretical_value() {
    let data = prepare_data(&DataSource::Gaussian { n: 250, d: 10, seed: 11 }, None, 0.8, LossKind::Logistic, 5).unwrap();
    let n = data.train.n();
    let eta = 0.5 * max_eta_hb(0.5, data.alpha).unwrap();
    let check = |beta| {
        let cfg = BoundCheckConfig {
            loss: LossKind::Logistic,
            variant: Variant::Hb,
            hp: hb_params(eta, beta, 1).unwrap(),
            t: 5 * n,
            samples: 10,
            seed: 3,
        };
        run_bound_check(&data.train, &data.held, &cfg).unwrap()
    };
    let (plain, heavy) = (check(0.0), check(0.5));
    assert!(heavy.theoretical.value > plain.theoretical.value);
    assert!(plain.holds && heavy.holds);
}
