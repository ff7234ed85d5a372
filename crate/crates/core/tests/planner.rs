use dynabench::envs::{EnvKind, EnvSpec, RewardFn};
use dynabench::models::{DynamicsModel, LearnedModel, ModelFrame, ModelKind, SigmaBounds, TrueModel};
use dynabench::dataset::DatasetStats;
use dynabench::numerics::{Activation, MlpParams, Rng};
use dynabench::planner::{
    cem_plan, control_point_count, evaluate_plans, mpc_episode, sample_colored_noise, EnvReward, MemberEval,
    PlannerConfig,
};
use ndarray::{Array2, Array3, ArrayView2};

/// Static one-dimensional "system": the observation never changes.
struct Frozen {
    dt: f64,
}

impl DynamicsModel for Frozen {
    fn obs_dim(&self) -> usize {
        1
    }
    fn act_dim(&self) -> usize {
        1
    }
    fn dt(&self) -> f64 {
        self.dt
    }
    fn member_count(&self) -> usize {
        1
    }
    fn step_batch(&self, _: usize, obs: ArrayView2<f64>, _: ArrayView2<f64>, _: Option<ArrayView2<f64>>) -> Array2<f64> {
        obs.to_owned()
    }
}

fn autocorr(rows: &[Vec<f64>], lag: usize) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for r in rows {
        let m = r.iter().sum::<f64>() / r.len() as f64;
        for i in 0..r.len() {
            den += (r[i] - m).powi(2);
            if i + lag < r.len() {
                num += (r[i] - m) * (r[i + lag] - m);
            }
        }
    }
    num / den
}

fn draws(beta: f64) -> Vec<Vec<f64>> {
    let mut rng = Rng::new(21);
    (0..10_000).map(|_| sample_colored_noise(&mut rng, beta, 64, 1, 0.5).column(0).to_vec()).collect()
}

#[test]
fn white_noise_has_requested_scale_and_no_correlation() {
    let rows = draws(0.0);
    let n = (rows.len() * 64) as f64;
    let var = rows.iter().flatten().map(|v| v * v).sum::<f64>() / n;
    assert!((var.sqrt() / 0.5 - 1.0).abs() < 0.05, "std {}", var.sqrt());
    assert!(autocorr(&rows, 1).abs() < 0.05);
}

#[test]
fn pink_to_red_noise_is_correlated() {
    assert!(autocorr(&draws(2.0), 1) > 0.5);
}

#[test]
fn colored_noise_is_seeded() {
    let a = sample_colored_noise(&mut Rng::new(3), 2.0, 17, 2, 1.0);
    let b = sample_colored_noise(&mut Rng::new(3), 2.0, 17, 2, 1.0);
    assert_eq!(a, b);
}

#[test]
fn cartpole_counts() {
    let cfg = PlannerConfig::for_env(EnvKind::CartpoleSwingup);
    assert_eq!(cfg.horizon_steps(0.01), 125);
    assert_eq!(control_point_count(1.25, 1.0 / 50.0), 63);
    assert_eq!(cfg.control_points(), 63);
}

#[test]
fn true_model_expectation_equals_realized_return() {
    let env = EnvSpec::new(EnvKind::Pendulum);
    let reward = RewardFn::default_for(env.kind);
    let model = TrueModel::at_base_rate(env.clone());
    let mut rng = Rng::new(5);
    let s0 = env.reset(&mut rng);
    let h = 40;
    let acts = Array3::from_shape_fn((3, h, 1), |_| rng.uniform_range(-1.0, 1.0));
    let scorer = EnvReward { env: &env, reward: &reward };
    let (returns, dead) = evaluate_plans(&model, &env.observe(&s0), &acts, &scorer, MemberEval::All, &rng);
    assert!(dead.iter().all(|d| !d));
    for (k, ret) in returns.iter().enumerate() {
        let ep = env.run_episode_from(&reward, &s0, |_, t| vec![acts[[k, t, 0]]], h).unwrap();
        assert!((ret - ep.total_reward()).abs() < 1e-9, "{ret} vs {}", ep.total_reward());
    }
}

fn pendulum_ensemble(members: Vec<MlpParams>) -> LearnedModel {
    let frame = ModelFrame {
        kind: ModelKind::Deterministic,
        act_dim: 1,
        dt: 0.05,
        dt_multiple: 5,
        stats: DatasetStats::identity(3),
        sigma: SigmaBounds::default(),
    };
    LearnedModel::from_members(frame, members).unwrap()
}

#[test]
fn identical_members_average_to_one_member() {
    let p = MlpParams::glorot(&[4, 16, 3], Activation::Swish, &mut Rng::new(8)).unwrap();
    let single = pendulum_ensemble(vec![p.clone()]);
    let triple = pendulum_ensemble(vec![p.clone(), p.clone(), p]);
    let env = EnvSpec::new(EnvKind::Pendulum);
    let reward = RewardFn::default_for(env.kind);
    let scorer = EnvReward { env: &env, reward: &reward };
    let mut rng = Rng::new(9);
    let acts = Array3::from_shape_fn((60, 12, 1), |_| rng.uniform_range(-1.0, 1.0));
    let obs = env.observe(&env.reset(&mut rng));
    let (a, _) = evaluate_plans(&single, &obs, &acts, &scorer, MemberEval::All, &rng);
    let (b, _) = evaluate_plans(&triple, &obs, &acts, &scorer, MemberEval::All, &rng);
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-12);
    }
}

fn pendulum_setup() -> (EnvSpec, RewardFn, TrueModel, Vec<f64>) {
    let env = EnvSpec::new(EnvKind::Pendulum);
    let reward = RewardFn::default_for(env.kind);
    let model = TrueModel::new(env.clone(), 0.05).unwrap();
    let obs = env.observe(&env.reset(&mut Rng::new(11)));
    (env, reward, model, obs)
}

#[test]
fn single_iteration_returns_best_sampled_candidate() {
    let (env, reward, model, obs) = pendulum_setup();
    let cfg = PlannerConfig { iterations: 1, particles: 200, argmax: true, ..PlannerConfig::for_env(EnvKind::Pendulum) };
    let scorer = EnvReward { env: &env, reward: &reward };
    let plan = cem_plan(&cfg, &model, &scorer, &obs, None, &Rng::new(12)).unwrap();
    assert_eq!(plan.returns.len(), 200);
    let best = plan.returns.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(plan.expected_return, best);
    let acts = plan.actions.clone().insert_axis(ndarray::Axis(0));
    let (r, _) = evaluate_plans(&model, &obs, &acts, &scorer, MemberEval::All, &Rng::new(0));
    assert!((r[0] - best).abs() < 1e-9);
}

#[test]
fn planning_is_deterministic() {
    let (env, reward, model, obs) = pendulum_setup();
    let cfg = PlannerConfig { iterations: 3, ..PlannerConfig::for_env(EnvKind::Pendulum) };
    let scorer = EnvReward { env: &env, reward: &reward };
    let a = cem_plan(&cfg, &model, &scorer, &obs, None, &Rng::new(13)).unwrap();
    let b = cem_plan(&cfg, &model, &scorer, &obs, None, &Rng::new(13)).unwrap();
    assert_eq!(a, b);
    let c = cem_plan(&cfg, &model, &scorer, &obs, None, &Rng::new(14)).unwrap();
    assert_ne!(a.control_points, c.control_points);
}

#[test]
fn quadratic_surrogate_finds_known_optimum() {
    let target = 0.3;
    let reward = |_: &[f64], a: &[f64]| -(a[0] - target).powi(2);
    let cfg = PlannerConfig {
        horizon: 1.0,
        control_spacing: 0.1,
        particles: 200,
        iterations: 5,
        argmax: false,
        ..PlannerConfig::for_env(EnvKind::Pendulum)
    };
    let plan = cem_plan(&cfg, &Frozen { dt: 0.1 }, &reward, &[0.0], None, &Rng::new(15)).unwrap();
    assert!((plan.actions[[0, 0]] - target).abs() < 0.05, "{}", plan.actions[[0, 0]]);
}

#[test]
fn replanning_every_horizon_is_open_loop() {
    let (env, reward, model, _) = pendulum_setup();
    let cfg = PlannerConfig { replan_interval: 1.5, particles: 20, ..PlannerConfig::for_env(EnvKind::Pendulum) };
    let out = mpc_episode(&cfg, &env, &model, &reward, 150, &Rng::new(16)).unwrap();
    assert_eq!(out.plans, 1);
    assert_eq!(out.discrepancy.entries.len(), 1);
    let out = mpc_episode(&cfg, &env, &model, &reward, 300, &Rng::new(16)).unwrap();
    assert_eq!(out.plans, 2);
}

#[test]
fn spacing_off_the_model_grid_is_rejected() {
    let (env, reward, model, obs) = pendulum_setup();
    let cfg = PlannerConfig { control_spacing: 0.07, ..PlannerConfig::for_env(EnvKind::Pendulum) };
    let scorer = EnvReward { env: &env, reward: &reward };
    assert!(cem_plan(&cfg, &model, &scorer, &obs, None, &Rng::new(0)).is_err());
}
