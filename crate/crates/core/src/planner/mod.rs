//! CEM model-predictive control over interpolated control points with
//! colored exploration noise.

mod controls;
mod mpc;

use ndarray::{s, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::envs::{EnvKind, EnvSpec, RewardFn};
use crate::error::{config, Result};
use crate::models::{DynamicsModel, RolloutMode};
use crate::numerics::Rng;
use crate::par;

pub use controls::{
    action_at_time, colored_sequence, control_point_count, interpolate_controls, sample_colored_noise, shift_controls,
};
pub use mpc::{mpc_episode, DiscrepancyEntry, DiscrepancyLog, MpcOutcome};

/// Candidates per rollout batch. Fixed so results do not depend on how
/// batches are spread over threads.
const CHUNK: usize = 50;

/// Which ensemble members score a candidate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemberEval {
    /// Every member rolls out every candidate; returns are averaged.
    #[default]
    All,
    /// Candidate `c` is rolled out by member `c mod E` only.
    Partition,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerConfig {
    /// Planning horizon, seconds.
    pub horizon: f64,
    /// Control-point spacing, seconds.
    pub control_spacing: f64,
    pub particles: usize,
    pub iterations: usize,
    pub elite_fraction: f64,
    /// Exploration noise σ.
    pub sigma: f64,
    /// Colored-noise exponent β.
    pub beta: f64,
    pub argmax: bool,
    /// Time between replanning, seconds.
    pub replan_interval: f64,
    pub warm_start: bool,
    /// Evaluate the unperturbed sampling mean as candidate 0.
    pub keep_mean: bool,
    pub member_eval: MemberEval,
    /// Snap control points to this many evenly spaced levels in `[-1, 1]`.
    pub quantize_levels: Option<usize>,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig::for_env(EnvKind::CartpoleSwingup)
    }
}

impl PlannerConfig {
    /// Defaults per environment. Cartpole uses the reference settings;
    /// the others are desk-scale picks.
    pub fn for_env(kind: EnvKind) -> Self {
        let base = PlannerConfig {
            horizon: 1.25,
            control_spacing: 1.0 / 50.0,
            particles: 200,
            iterations: 1,
            elite_fraction: 0.1,
            sigma: 0.5,
            beta: 2.0,
            argmax: true,
            replan_interval: 1.0 / 100.0,
            warm_start: true,
            keep_mean: true,
            member_eval: MemberEval::All,
            quantize_levels: None,
        };
        match kind {
            EnvKind::CartpoleSwingup => base,
            EnvKind::Pendulum => PlannerConfig {
                horizon: 1.5,
                control_spacing: 0.1,
                replan_interval: 0.02,
                sigma: 0.75,
                ..base
            },
            EnvKind::Reacher2 => PlannerConfig {
                horizon: 0.5,
                control_spacing: 0.05,
                replan_interval: 0.02,
                sigma: 1.0,
                ..base
            },
        }
    }

    /// Model steps covering the horizon.
    pub fn horizon_steps(&self, dt: f64) -> usize {
        ((self.horizon / dt) - 1e-9).ceil().max(1.0) as usize
    }

    pub fn control_points(&self) -> usize {
        control_point_count(self.horizon, self.control_spacing)
    }

    pub fn elite_count(&self) -> usize {
        ((self.elite_fraction * self.particles as f64).ceil() as usize).clamp(1, self.particles)
    }

    pub fn validate(&self, model_dt: f64) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(config("planner horizon must be > 0"));
        }
        let ratio = self.control_spacing / model_dt;
        if ratio < 1.0 - 1e-9 || (ratio - ratio.round()).abs() > 1e-6 {
            return Err(config(format!(
                "control-point spacing {} must be a whole multiple of the model step {model_dt}",
                self.control_spacing
            )));
        }
        if self.particles < 2 || self.iterations == 0 {
            return Err(config("planner needs >= 2 particles and >= 1 iteration"));
        }
        if !(self.elite_fraction > 0.0 && self.elite_fraction <= 1.0) {
            return Err(config("elite_fraction must lie in (0, 1]"));
        }
        if !(self.sigma >= 0.0 && self.beta >= 0.0) {
            return Err(config("exploration sigma and beta must be >= 0"));
        }
        if !(self.replan_interval > 0.0) {
            return Err(config("replan_interval must be > 0"));
        }
        if matches!(self.quantize_levels, Some(l) if l < 2) {
            return Err(config("quantize_levels must be >= 2"));
        }
        Ok(())
    }
}

/// Reward used to score predicted transitions.
pub trait PlanReward: Sync {
    fn reward(&self, next_obs: &[f64], action: &[f64]) -> f64;
}

impl<F: Fn(&[f64], &[f64]) -> f64 + Sync> PlanReward for F {
    fn reward(&self, next_obs: &[f64], action: &[f64]) -> f64 {
        self(next_obs, action)
    }
}

/// An environment's reward function evaluated on observations.
pub struct EnvReward<'a> {
    pub env: &'a EnvSpec,
    pub reward: &'a RewardFn,
}

impl PlanReward for EnvReward<'_> {
    fn reward(&self, next_obs: &[f64], action: &[f64]) -> f64 {
        self.reward.evaluate(self.env, next_obs, action)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Plan {
    /// `[C × act_dim]`
    pub control_points: Array2<f64>,
    /// `[H × act_dim]` at the model step.
    pub actions: Array2<f64>,
    pub dt: f64,
    pub expected_return: f64,
    /// Returns of the final iteration's candidates.
    pub returns: Vec<f64>,
    /// Every rollout of every candidate diverged.
    pub all_dead: bool,
}

impl Plan {
    pub fn steps(&self) -> usize {
        self.actions.nrows()
    }

    /// Executed action `t` seconds after the plan was made.
    pub fn action_at(&self, t: f64) -> Vec<f64> {
        action_at_time(&self.control_points, self.steps(), self.dt, t)
    }
}

/// Expected return of each candidate action sequence `[P × H × act_dim]`,
/// averaged over the evaluating members. Steps after a rollout diverges earn
/// nothing. The second value flags candidates whose every rollout diverged.
pub fn evaluate_plans<M: DynamicsModel + ?Sized, R: PlanReward + ?Sized>(
    model: &M,
    obs0: &[f64],
    actions: &Array3<f64>,
    reward: &R,
    member_eval: MemberEval,
    rng: &Rng,
) -> (Vec<f64>, Vec<bool>) {
    let (p, h, _) = actions.dim();
    let e = model.member_count();
    let mode = if model.is_stochastic() { RolloutMode::Sample } else { RolloutMode::Mean };
    let chunks = p.div_ceil(CHUNK);
    let jobs: Vec<(usize, usize)> = (0..chunks).flat_map(|c| (0..e).map(move |m| (c, m))).collect();
    let parts = par::map_slice(&jobs, |&(chunk, member)| {
        let lo = chunk * CHUNK;
        let hi = (lo + CHUNK).min(p);
        let idx: Vec<usize> = (lo..hi)
            .filter(|&c| member_eval == MemberEval::All || c % e == member)
            .collect();
        if idx.is_empty() {
            return Vec::new();
        }
        let n = idx.len();
        let obs = Array2::from_shape_fn((n, obs0.len()), |(_, j)| obs0[j]);
        let acts = actions.select(ndarray::Axis(0), &idx);
        let mut rngs: Vec<Rng> = idx.iter().map(|&c| rng.fork_index(c as u64).fork_index(member as u64)).collect();
        let out = model.rollout_batch(member, obs.view(), acts.view(), mode, &mut rngs);
        idx.iter()
            .enumerate()
            .map(|(k, &c)| {
                let live = out.dead_at[k].unwrap_or(h);
                let mut ret = 0.0;
                for t in 0..live {
                    let next = out.trajectories.slice(s![k, t + 1, ..]);
                    let a = acts.slice(s![k, t, ..]);
                    ret += reward.reward(next.as_slice().expect("contiguous"), a.as_slice().expect("contiguous"));
                }
                (c, ret, out.dead_at[k].is_some())
            })
            .collect::<Vec<_>>()
    });
    let mut sums = vec![0.0; p];
    let mut counts = vec![0usize; p];
    let mut alive = vec![false; p];
    for part in parts {
        for (c, ret, dead) in part {
            sums[c] += ret;
            counts[c] += 1;
            alive[c] |= !dead;
        }
    }
    let returns = sums.iter().zip(&counts).map(|(s, &n)| if n > 0 { s / n as f64 } else { 0.0 }).collect();
    (returns, alive.into_iter().map(|a| !a).collect())
}

fn quantize(v: f64, levels: usize) -> f64 {
    let step = 2.0 / (levels - 1) as f64;
    (((v.clamp(-1.0, 1.0) + 1.0) / step).round() * step - 1.0).clamp(-1.0, 1.0)
}

/// One CEM planning call from `obs0`.
pub fn cem_plan<M: DynamicsModel + ?Sized, R: PlanReward + ?Sized>(
    cfg: &PlannerConfig,
    model: &M,
    reward: &R,
    obs0: &[f64],
    previous: Option<&Plan>,
    rng: &Rng,
) -> Result<Plan> {
    let dt = model.dt();
    cfg.validate(dt)?;
    if obs0.iter().any(|v| !v.is_finite()) || obs0.len() != model.obs_dim() {
        return Err(config("planner start observation must be finite and match the model"));
    }
    let steps = cfg.horizon_steps(dt);
    let c = cfg.control_points();
    let a = model.act_dim();
    let mut mean = match previous {
        Some(prev) if cfg.warm_start && prev.control_points.dim() == (c, a) => {
            shift_controls(&prev.control_points, prev.steps(), prev.dt, cfg.replan_interval)
        }
        _ => Array2::zeros((c, a)),
    };
    let mut std = Array2::from_elem((c, a), cfg.sigma);
    let p = cfg.particles;
    let mut best: Option<(f64, Array2<f64>)> = None;
    let mut last_returns = Vec::new();
    let mut any_alive = false;
    for it in 0..cfg.iterations {
        let iter_rng = rng.fork_index(it as u64);
        let cand_rng = iter_rng.fork("candidates");
        let candidates: Vec<Array2<f64>> = par::map_range(p, |k| {
            let mut pts = if k == 0 && cfg.keep_mean {
                mean.clone()
            } else {
                let mut r = cand_rng.fork_index(k as u64);
                let noise = sample_colored_noise(&mut r, cfg.beta, c, a, 1.0);
                &mean + &(&noise * &std)
            };
            pts.mapv_inplace(|v| match cfg.quantize_levels {
                Some(l) => quantize(v, l),
                None => v.clamp(-1.0, 1.0),
            });
            pts
        });
        let mut actions = Array3::zeros((p, steps, a));
        for (k, pts) in candidates.iter().enumerate() {
            actions.slice_mut(s![k, .., ..]).assign(&interpolate_controls(pts, steps));
        }
        let (returns, dead) = evaluate_plans(model, obs0, &actions, reward, cfg.member_eval, &iter_rng.fork("rollouts"));
        let mut order: Vec<usize> = (0..p).filter(|&k| !dead[k]).collect();
        any_alive |= !order.is_empty();
        order.sort_by(|&x, &y| returns[y].total_cmp(&returns[x]).then(x.cmp(&y)));
        if let Some(&top) = order.first() {
            if best.as_ref().is_none_or(|(r, _)| returns[top] > *r) {
                best = Some((returns[top], candidates[top].clone()));
            }
            let elites = &order[..cfg.elite_count().min(order.len())];
            let ne = elites.len() as f64;
            let mut new_mean = Array2::<f64>::zeros((c, a));
            for &k in elites {
                new_mean += &candidates[k];
            }
            new_mean /= ne;
            let mut new_std = Array2::<f64>::zeros((c, a));
            for &k in elites {
                new_std += &(&candidates[k] - &new_mean).mapv(|v| v * v);
            }
            std = (new_std / ne).mapv(f64::sqrt);
            mean = new_mean;
        }
        last_returns = returns;
    }
    if !any_alive {
        log::warn!("every planner rollout diverged; returning a zero plan");
        return Ok(Plan {
            control_points: Array2::zeros((c, a)),
            actions: Array2::zeros((steps, a)),
            dt,
            expected_return: 0.0,
            returns: last_returns,
            all_dead: true,
        });
    }
    let (expected_return, points) = if cfg.argmax {
        best.expect("an alive candidate exists")
    } else {
        let mut pts = mean.clone();
        pts.mapv_inplace(|v| v.clamp(-1.0, 1.0));
        let acts = interpolate_controls(&pts, steps).insert_axis(ndarray::Axis(0));
        let (r, _) = evaluate_plans(model, obs0, &acts, reward, cfg.member_eval, &rng.fork("final"));
        (r[0], pts)
    };
    Ok(Plan {
        actions: interpolate_controls(&points, steps),
        control_points: points,
        dt,
        expected_return,
        returns: last_returns,
        all_dead: false,
    })
}

/// Actions of `plan` resampled at `dt` for `n` steps starting at `t0` seconds.
pub fn resample(plan: &Plan, t0: f64, dt: f64, n: usize) -> Array2<f64> {
    let mut out = Array2::zeros((n, plan.control_points.ncols()));
    for i in 0..n {
        out.row_mut(i).assign(&ndarray::aview1(&plan.action_at(t0 + i as f64 * dt)));
    }
    out
}
