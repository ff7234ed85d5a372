use dynabench::dataset::{Dataset, Episode};
use dynabench::envs::{EnvKind, EnvSpec, RewardFn};
use dynabench::eval::percentile;
use dynabench::models::{bound_sigma_grad, decode_model, encode_model, LearnedModel, ModelFrame, ModelKind, SigmaBounds};
use dynabench::dataset::DatasetStats;
use dynabench::numerics::{Activation, Rng};
use dynabench::planner::interpolate_controls;
use dynabench::training::{horizon_schedule, Schedule};
use ndarray::Array2;
use proptest::prelude::*;

fn env_kind() -> impl Strategy<Value = EnvKind> {
    prop_oneof![Just(EnvKind::Pendulum), Just(EnvKind::CartpoleSwingup), Just(EnvKind::Reacher2)]
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn sigma_stays_inside_its_bounds(raw in -1e3f64..1e3, lo in 1e-6f64..1.0, width in 1e-3f64..10.0) {
        let hi = lo + width;
        let (s, ds) = bound_sigma_grad(raw, lo, hi);
        // deep in the lower tail the softplus underflows and σ rounds to the floor
        prop_assert!(s >= lo && s < hi + std::f64::consts::LN_2);
        if raw > -30.0 {
            prop_assert!(s > lo);
        }
        prop_assert!(ds >= 0.0);
        let (s2, _) = bound_sigma_grad(raw + 0.1, lo, hi);
        prop_assert!(s2 >= s);
    }

    #[test]
    fn interpolation_stays_in_the_control_hull(
        pts in prop::collection::vec(-1.0f64..1.0, 2..12),
        extra in 0usize..40,
    ) {
        let c = pts.len();
        let steps = c + extra;
        let points = Array2::from_shape_vec((c, 1), pts.clone()).unwrap();
        let acts = interpolate_controls(&points, steps);
        let (lo, hi) = pts.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        prop_assert_eq!(acts.nrows(), steps);
        prop_assert!(acts.iter().all(|&a| a >= lo - 1e-12 && a <= hi + 1e-12));
        prop_assert!((acts[[0, 0]] - pts[0]).abs() < 1e-12);
        prop_assert!((acts[[steps - 1, 0]] - pts[c - 1]).abs() < 1e-12);
    }

    #[test]
    fn rewards_are_bounded_and_angle_periodic(kind in env_kind(), seed in 0u64..1000) {
        let env = EnvSpec::new(kind);
        let reward = RewardFn::default_for(kind);
        let mut rng = Rng::new(seed);
        let mut state: Vec<f64> = (0..env.state_dim()).map(|_| rng.uniform_range(-10.0, 10.0)).collect();
        let action: Vec<f64> = (0..env.act_dim()).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        let r = reward.evaluate_state(&env, &state, &action);
        prop_assert!((0.0..=1.0).contains(&r));
        for &i in env.angle_indices() {
            state[i] += 2.0 * std::f64::consts::PI;
        }
        prop_assert!((reward.evaluate_state(&env, &state, &action) - r).abs() < 1e-9);
    }

    #[test]
    fn observations_invert_modulo_wrapping(kind in env_kind(), seed in 0u64..1000) {
        let env = EnvSpec::new(kind);
        let mut rng = Rng::new(seed);
        let state: Vec<f64> = (0..env.state_dim()).map(|_| rng.uniform_range(-10.0, 10.0)).collect();
        let back = env.state_from_obs(&env.observe(&state));
        for (i, (a, b)) in state.iter().zip(&back).enumerate() {
            let d = if env.angle_indices().contains(&i) { (a - b).rem_euclid(2.0 * std::f64::consts::PI) } else { a - b };
            let d = d.min((2.0 * std::f64::consts::PI - d).abs());
            prop_assert!(d.abs() < 1e-9);
        }
    }

    #[test]
    fn model_files_round_trip(seed in 0u64..500, e in 1usize..4, hidden in 1usize..9, stochastic in any::<bool>()) {
        let kind = if stochastic { ModelKind::Stochastic } else { ModelKind::Deterministic };
        let frame = ModelFrame {
            kind,
            act_dim: 2,
            dt: 0.03,
            dt_multiple: 3,
            stats: DatasetStats::identity(4),
            sigma: SigmaBounds::default(),
        };
        let arch = dynabench::models::Architecture { hidden: vec![hidden], activation: Activation::Elu };
        let m = LearnedModel::init(frame, &arch, e, &Rng::new(seed)).unwrap();
        let bytes = encode_model(&m);
        prop_assert_eq!(decode_model(&bytes).unwrap(), m);
    }

    #[test]
    fn dataset_files_round_trip(lens in prop::collection::vec(1usize..20, 1..5), seed in 0u64..500) {
        let mut rng = Rng::new(seed);
        let mut d = Dataset::new("reacher2", 0.01);
        for t in lens {
            let obs = (0..(t + 1) * 6).map(|_| rng.standard_normal()).collect();
            let act = (0..t * 2).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
            let rew = (0..t).map(|_| rng.uniform()).collect();
            d.episodes.push(Episode::from_parts(0.01, 6, 2, obs, act, rew).unwrap());
        }
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.dynd");
        dynabench::dataset::save_dataset(&d, &p).unwrap();
        prop_assert_eq!(dynabench::dataset::load_dataset(&p).unwrap(), d);
    }

    #[test]
    fn linear_schedule_is_monotone_and_complete(total in 1usize..400, target in 1usize..25) {
        let trace: Vec<usize> = (0..total).map(|u| horizon_schedule(u, total, target, Schedule::Linear)).collect();
        prop_assert!(trace.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(*trace.last().unwrap(), target);
        prop_assert!(trace[0] >= 1);
        if total >= target {
            for h in 1..=target {
                prop_assert!(trace.contains(&h));
            }
        }
    }

    #[test]
    fn percentiles_are_ordered(values in prop::collection::vec(-1e3f64..1e3, 1..50)) {
        let (p20, p50, p80) = (percentile(&values, 20.0), percentile(&values, 50.0), percentile(&values, 80.0));
        let (lo, hi) = values.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        prop_assert!(lo <= p20 && p20 <= p50 && p50 <= p80 && p80 <= hi);
    }

    #[test]
    fn config_round_trip(kind in env_kind(), stochastic in any::<bool>(), e in 1usize..8) {
        let model_kind = if stochastic { "stochastic" } else { "deterministic" };
        let v = serde_json::json!({"env": kind.name(), "model": {"kind": model_kind, "ensemble_size": e}});
        let c = dynabench::harness::parse_config(&v).unwrap();
        let back = dynabench::harness::parse_config(&serde_json::to_value(&c).unwrap()).unwrap();
        prop_assert_eq!(back.hash(), c.hash());
        prop_assert_eq!(back, c);
    }
}
