use serde::{Deserialize, Serialize};

use super::{cem_plan, EnvReward, Plan, PlannerConfig};
use crate::dataset::Episode;
use crate::envs::{EnvSpec, RewardFn};
use crate::error::{config, Result};
use crate::models::DynamicsModel;
use crate::numerics::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyEntry {
    /// Base step at which the plan was made.
    pub step: usize,
    /// Planner's expected return over its horizon.
    pub expected: f64,
    /// Return collected over the same span of the executed episode, in model
    /// steps; `None` when the span runs past the episode end.
    pub realized: Option<f64>,
}

/// Expected versus realized return for every replanning step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyLog {
    pub entries: Vec<DiscrepancyEntry>,
    /// Model steps in the planning horizon.
    pub horizon_steps: usize,
    /// Base steps per model step.
    pub base_per_model: usize,
}

impl DiscrepancyLog {
    /// Fills `realized` from the executed episode's per-base-step rewards.
    pub fn fill_realized(&mut self, rewards: &[f64]) {
        let span = self.horizon_steps * self.base_per_model;
        for e in &mut self.entries {
            e.realized = (e.step + span <= rewards.len())
                .then(|| rewards[e.step..e.step + span].iter().sum::<f64>() / self.base_per_model as f64);
        }
    }

    /// `(expected - realized) / H` for every complete entry.
    pub fn per_step(&self) -> Vec<f64> {
        let h = self.horizon_steps.max(1) as f64;
        self.entries
            .iter()
            .filter_map(|e| e.realized.map(|r| (e.expected - r) / h))
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct MpcOutcome {
    pub episode: Episode,
    pub discrepancy: DiscrepancyLog,
    /// Set when the environment failed and the episode stopped early.
    pub aborted: Option<String>,
    pub plans: usize,
    /// Plans for which every rollout diverged.
    pub dead_plans: usize,
}

fn base_multiple(value: f64, base: f64, what: &str) -> Result<usize> {
    let k = (value / base).round();
    if k < 1.0 || (k * base - value).abs() > 1e-9 * value.max(base) {
        return Err(config(format!("{what} {value} is not a positive multiple of the base step {base}")));
    }
    Ok(k as usize)
}

/// Runs one closed-loop episode: plan from the current observation, execute
/// the plan for one replan interval at the base rate, repeat.
pub fn mpc_episode<M: DynamicsModel + ?Sized>(
    cfg: &PlannerConfig,
    env: &EnvSpec,
    model: &M,
    reward: &RewardFn,
    episode_len: usize,
    rng: &Rng,
) -> Result<MpcOutcome> {
    if episode_len == 0 {
        return Err(config("episode length must be >= 1"));
    }
    if model.obs_dim() != env.obs_dim() || model.act_dim() != env.act_dim() {
        return Err(config("model and environment dimensions differ"));
    }
    let base = env.dt_base;
    let replan = base_multiple(cfg.replan_interval, base, "replan interval")?;
    let per_model = base_multiple(model.dt(), base, "model step")?;
    let scorer = EnvReward { env, reward };
    let mut state = env.reset(&mut rng.fork("reset"));
    let mut obs = env.observe(&state);
    let mut episode = Episode::with_capacity(base, env.obs_dim(), env.act_dim(), episode_len);
    episode.push_observation(&obs);
    let mut log = DiscrepancyLog {
        entries: Vec::new(),
        horizon_steps: cfg.horizon_steps(model.dt()),
        base_per_model: per_model,
    };
    let mut previous: Option<Plan> = None;
    let mut aborted = None;
    let (mut plans, mut dead_plans) = (0, 0);
    let mut t = 0;
    'outer: while t < episode_len {
        let plan = cem_plan(cfg, model, &scorer, &obs, previous.as_ref(), &rng.fork_index(t as u64))?;
        plans += 1;
        dead_plans += plan.all_dead as usize;
        log.entries.push(DiscrepancyEntry { step: t, expected: plan.expected_return, realized: None });
        for j in 0..replan {
            if t >= episode_len {
                break;
            }
            let action = plan.action_at(j as f64 * base);
            match env.step(&state, &action, base) {
                Ok(s) => state = s,
                Err(e) => {
                    aborted = Some(format!("environment failed at step {t}: {e}"));
                    break 'outer;
                }
            }
            obs = env.observe(&state);
            let r = reward.evaluate(env, &obs, &action);
            episode.push_transition(&action, r, &obs);
            t += 1;
        }
        previous = Some(plan);
    }
    log.fill_realized(episode.rewards().as_slice().expect("contiguous"));
    Ok(MpcOutcome { episode, discrepancy: log, aborted, plans, dead_plans })
}
