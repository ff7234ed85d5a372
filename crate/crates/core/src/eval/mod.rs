//! Metrics over episodes, models and planner logs.

use ndarray::{s, Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::dataset::{CoarseAction, DatasetStats, Episode};
use crate::envs::{EnvSpec, RewardFn};
use crate::error::{config, structural, Result};
use crate::models::{DynamicsModel, LearnedModel, RolloutMode};
use crate::numerics::Rng;
use crate::par;
use crate::planner::{mpc_episode, DiscrepancyLog, MpcOutcome, PlannerConfig};
use crate::training::Checkpoint;

/// Windows per rollout batch.
const WINDOW_CHUNK: usize = 256;

/// `1000 * sum(rewards) / length`.
pub fn normalized_reward(episode: &Episode) -> f64 {
    if episode.is_empty() {
        return 0.0;
    }
    1000.0 * episode.total_reward() / episode.len() as f64
}

/// Linear-interpolation percentile of `values`, `q` in `[0, 100]`.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 100.0) / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub fn median(values: &[f64]) -> f64 {
    percentile(values, 50.0)
}

/// Mean and 20/80 percentiles.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean: f64,
    pub p20: f64,
    pub p80: f64,
}

impl Spread {
    pub fn of(values: &[f64]) -> Spread {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        Spread { mean, p20: percentile(values, 20.0), p80: percentile(values, 80.0) }
    }
}

/// How an ensemble's prediction error is pooled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NmsePooling {
    /// Mean of the members' errors.
    #[default]
    MemberMean,
    /// Error of the members' mean prediction.
    EnsembleMean,
}

/// Open-loop windows over held-out episodes.
#[derive(Clone, Debug, PartialEq)]
pub struct Windows {
    /// `[W × obs_dim]`
    pub start: Array2<f64>,
    /// `[W × K × act_dim]`
    pub actions: Array3<f64>,
    /// `[W × K × obs_dim]`
    pub targets: Array3<f64>,
}

impl Windows {
    pub fn len(&self) -> usize {
        self.start.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Every `stride`-th window of `steps` model steps (`multiple` base steps
/// each) from the episodes. Episodes that are too short are skipped.
pub fn collect_windows(episodes: &[Episode], steps: usize, multiple: usize, stride: usize, coarse: CoarseAction) -> Result<Windows> {
    if steps == 0 || multiple == 0 || stride == 0 {
        return Err(config("window steps, multiple and stride must be >= 1"));
    }
    let span = steps * multiple;
    let mut picks = Vec::new();
    let mut skipped = 0;
    for (e, ep) in episodes.iter().enumerate() {
        if ep.len() < span {
            skipped += 1;
            continue;
        }
        picks.extend((0..=ep.len() - span).step_by(stride).map(|s| (e, s)));
    }
    if skipped > 0 {
        log::warn!("{skipped} episode(s) shorter than the {span}-step window were skipped");
    }
    if picks.is_empty() {
        return Err(structural("no episode is long enough for the evaluation window"));
    }
    let (od, ad) = (episodes[picks[0].0].obs_dim(), episodes[picks[0].0].act_dim());
    let w = picks.len();
    let mut start = Array2::zeros((w, od));
    let mut actions = Array3::zeros((w, steps, ad));
    let mut targets = Array3::zeros((w, steps, od));
    for (i, &(e, s0)) in picks.iter().enumerate() {
        let ep = &episodes[e];
        start.row_mut(i).assign(&ndarray::aview1(ep.observation(s0)));
        for j in 0..steps {
            let base = s0 + j * multiple;
            for d in 0..ad {
                actions[[i, j, d]] = match coarse {
                    CoarseAction::First => ep.action(base)[d],
                    CoarseAction::Mean => (0..multiple).map(|q| ep.action(base + q)[d]).sum::<f64>() / multiple as f64,
                };
            }
            targets.slice_mut(s![i, j, ..]).assign(&ndarray::aview1(ep.observation(base + multiple)));
        }
    }
    Ok(Windows { start, actions, targets })
}

fn rollouts<M: DynamicsModel + ?Sized>(model: &M, member: usize, w: &Windows) -> Array3<f64> {
    let n = w.len();
    let chunks: Vec<usize> = (0..n.div_ceil(WINDOW_CHUNK)).collect();
    let parts = par::map_slice(&chunks, |&c| {
        let lo = c * WINDOW_CHUNK;
        let hi = (lo + WINDOW_CHUNK).min(n);
        model
            .rollout_batch(
                member,
                w.start.slice(s![lo..hi, ..]),
                w.actions.slice(s![lo..hi, .., ..]),
                RolloutMode::Mean,
                &mut [],
            )
            .trajectories
    });
    let views: Vec<_> = parts.iter().map(|p| p.slice(s![.., 1.., ..])).collect();
    ndarray::concatenate(Axis(0), &views).expect("window chunks share shape")
}

fn nmse_of(pred: &Array3<f64>, w: &Windows, stats: &DatasetStats) -> f64 {
    let mut acc = 0.0;
    for ((i, j, d), p) in pred.indexed_iter() {
        let e = p - w.targets[[i, j, d]];
        acc += e * e / stats.variance[d];
    }
    acc / pred.len() as f64
}

/// Prediction error of one member over the windows, normalized per dimension
/// by the dataset variance and averaged over steps, dimensions and windows.
pub fn member_nmse<M: DynamicsModel + ?Sized>(model: &M, member: usize, w: &Windows, stats: &DatasetStats) -> f64 {
    nmse_of(&rollouts(model, member, w), w, stats)
}

/// k-step NMSE of a model (all members) over held-out windows.
pub fn windows_nmse<M: DynamicsModel + ?Sized>(model: &M, w: &Windows, stats: &DatasetStats, pooling: NmsePooling) -> f64 {
    let e = model.member_count();
    match pooling {
        NmsePooling::MemberMean => (0..e).map(|m| member_nmse(model, m, w, stats)).sum::<f64>() / e as f64,
        NmsePooling::EnsembleMean => {
            let mut mean = rollouts(model, 0, w);
            for m in 1..e {
                mean += &rollouts(model, m, w);
            }
            mean /= e as f64;
            nmse_of(&mean, w, stats)
        }
    }
}

/// Model steps in `duration` seconds; must be a whole number.
pub fn duration_steps(duration: f64, model_dt: f64) -> Result<usize> {
    let k = (duration / model_dt).round();
    if k < 1.0 || (k * model_dt - duration).abs() > 1e-9 {
        return Err(config(format!("duration {duration} is not a whole number of model steps {model_dt}")));
    }
    Ok(k as usize)
}

/// NMSE of open-loop predictions over `duration` seconds from every window
/// start in the test episodes.
pub fn kstep_nmse<M: DynamicsModel + ?Sized>(
    model: &M,
    episodes: &[Episode],
    stats: &DatasetStats,
    duration: f64,
) -> Result<f64> {
    let w = model_windows(model, episodes, duration, 1)?;
    Ok(windows_nmse(model, &w, stats, NmsePooling::MemberMean))
}

/// Windows matched to a model's step.
pub fn model_windows<M: DynamicsModel + ?Sized>(model: &M, episodes: &[Episode], duration: f64, stride: usize) -> Result<Windows> {
    let base = episodes.first().ok_or_else(|| structural("no test episodes"))?.dt();
    let multiple = duration_steps(model.dt(), base)?;
    let steps = duration_steps(duration, model.dt())?;
    collect_windows(episodes, steps, multiple, stride, CoarseAction::Mean)
}

/// Fraction of open-loop rollouts (over every member) that diverge within the
/// windows.
pub fn divergence_rate<M: DynamicsModel + ?Sized>(model: &M, w: &Windows) -> f64 {
    let e = model.member_count();
    let mut dead = 0usize;
    for m in 0..e {
        let out = model.rollout_batch(m, w.start.view(), w.actions.view(), RolloutMode::Mean, &mut []);
        dead += out.dead_at.iter().filter(|d| d.is_some()).count();
    }
    dead as f64 / (e * w.len()) as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancySummary {
    /// Complete entries the statistics cover.
    pub count: usize,
    pub mean: f64,
    pub fraction_positive: f64,
    pub p95: f64,
    /// Entries without a realized return.
    pub incomplete: usize,
}

/// Summary of per-step discrepancies `(expected - realized) / H` pooled over
/// logs.
pub fn discrepancy_stats(logs: &[&DiscrepancyLog]) -> Result<DiscrepancySummary> {
    let mut values = Vec::new();
    let mut incomplete = 0;
    for log in logs {
        values.extend(log.per_step());
        incomplete += log.entries.iter().filter(|e| e.realized.is_none()).count();
    }
    if values.is_empty() {
        return Err(structural("no discrepancy entries with realized returns"));
    }
    let n = values.len() as f64;
    Ok(DiscrepancySummary {
        count: values.len(),
        mean: values.iter().sum::<f64>() / n,
        fraction_positive: values.iter().filter(|v| **v > 0.0).count() as f64 / n,
        p95: percentile(&values, 95.0),
        incomplete,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub normalized_reward: Spread,
    pub episode_rewards: Vec<f64>,
    pub kstep_nmse: Option<f64>,
    pub discrepancy: Option<DiscrepancySummary>,
    pub divergence_rate: Option<f64>,
}

/// Closed-loop episodes with episode `i` seeded from `rng.fork_index(i)`.
pub fn planner_episodes<M: DynamicsModel + ?Sized>(
    planner: &PlannerConfig,
    env: &EnvSpec,
    model: &M,
    reward: &RewardFn,
    episode_len: usize,
    episodes: usize,
    rng: &Rng,
) -> Result<Vec<MpcOutcome>> {
    (0..episodes)
        .map(|i| mpc_episode(planner, env, model, reward, episode_len, &rng.fork_index(i as u64)))
        .collect()
}

/// Report over closed-loop outcomes.
pub fn planner_report(outcomes: &[MpcOutcome]) -> MetricReport {
    let rewards: Vec<f64> = outcomes.iter().map(|o| normalized_reward(&o.episode)).collect();
    let logs: Vec<&DiscrepancyLog> = outcomes.iter().map(|o| &o.discrepancy).collect();
    MetricReport {
        normalized_reward: Spread::of(&rewards),
        episode_rewards: rewards,
        kstep_nmse: None,
        discrepancy: discrepancy_stats(&logs).ok(),
        divergence_rate: None,
    }
}

/// Plans with `model` against another task's reward on the same dynamics.
pub fn transfer_eval<M: DynamicsModel + ?Sized>(
    model: &M,
    env: &EnvSpec,
    reward: &RewardFn,
    planner: &PlannerConfig,
    episode_len: usize,
    episodes: usize,
    rng: &Rng,
) -> Result<MetricReport> {
    if model.obs_dim() != env.obs_dim() || model.act_dim() != env.act_dim() {
        return Err(structural("model and environment dimensions differ"));
    }
    let outcomes = planner_episodes(planner, env, model, reward, episode_len, episodes, rng)?;
    Ok(planner_report(&outcomes))
}

/// Training hook: held-out NMSE per member and, optionally, planner reward.
pub struct EvalCheckpoint<'a> {
    pub windows: Windows,
    pub stats: DatasetStats,
    /// Closed-loop evaluation at every checkpoint.
    pub planner: Option<PlannerProbe<'a>>,
}

pub struct PlannerProbe<'a> {
    pub planner: PlannerConfig,
    pub env: &'a EnvSpec,
    pub reward: &'a RewardFn,
    pub episode_len: usize,
    pub rng: Rng,
}

impl Checkpoint for EvalCheckpoint<'_> {
    fn test_nmse(&self, model: &LearnedModel, member: usize) -> Option<f64> {
        Some(member_nmse(model, member, &self.windows, &self.stats))
    }

    fn planner_reward(&self, update: usize, model: &LearnedModel) -> Option<f64> {
        let p = self.planner.as_ref()?;
        let rng = p.rng.fork_index(update as u64);
        match mpc_episode(&p.planner, p.env, model, p.reward, p.episode_len, &rng) {
            Ok(out) => Some(normalized_reward(&out.episode)),
            Err(e) => {
                log::warn!("checkpoint planner evaluation failed: {e}");
                None
            }
        }
    }
}
