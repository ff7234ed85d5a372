use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Dataset, Episode};
use crate::envs::{EnvSpec, RewardFn};
use crate::error::{config, Error, Result};
use crate::models::TrueModel;
use crate::numerics::Rng;
use crate::par;
use crate::planner::{colored_sequence, mpc_episode, PlannerConfig};

/// Data-generating policy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollectorKind {
    /// Independent uniform actions.
    Random,
    /// Colored-noise actions (β = 2), temporally correlated.
    SmoothedRandom,
    /// True-model CEM-MPC with a capped particle budget.
    Mpc,
}

impl FromStr for CollectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(CollectorKind::Random),
            "smoothed_random" => Ok(CollectorKind::SmoothedRandom),
            "mpc" => Ok(CollectorKind::Mpc),
            other => Err(config(format!("unknown collector kind '{other}'"))),
        }
    }
}

impl fmt::Display for CollectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CollectorKind::Random => "random",
            CollectorKind::SmoothedRandom => "smoothed_random",
            CollectorKind::Mpc => "mpc",
        })
    }
}

fn one() -> usize {
    1
}

fn default_particles() -> usize {
    50
}

fn default_replan() -> f64 {
    0.05
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollectorSpec {
    pub kind: CollectorKind,
    pub episodes: usize,
    /// Particle budget of the MPC collector.
    #[serde(default = "default_particles")]
    pub particles: usize,
    /// Replan interval of the MPC collector, seconds.
    #[serde(default = "default_replan")]
    pub replan_interval: f64,
    /// Base steps each random action is held for.
    #[serde(default = "one")]
    pub action_repeat: usize,
}

impl CollectorSpec {
    pub fn new(kind: CollectorKind, episodes: usize) -> Self {
        CollectorSpec {
            kind,
            episodes,
            particles: default_particles(),
            replan_interval: default_replan(),
            action_repeat: 1,
        }
    }

    pub fn mpc(episodes: usize, particles: usize) -> Self {
        CollectorSpec { particles, ..CollectorSpec::new(CollectorKind::Mpc, episodes) }
    }
}

/// Collector mix for dataset quality level `0..=4`. Level 0 is pure random
/// exploration; higher levels replace half the episodes with true-model MPC
/// episodes of growing particle budget.
pub fn quality_collectors(level: usize, episodes: usize) -> Result<Vec<CollectorSpec>> {
    const BUDGETS: [usize; 5] = [0, 4, 16, 64, 200];
    if level >= BUDGETS.len() {
        return Err(config(format!("quality level {level} outside 0..=4")));
    }
    let half = episodes / 2;
    if level == 0 {
        return Ok(vec![
            CollectorSpec::new(CollectorKind::Random, half),
            CollectorSpec::new(CollectorKind::SmoothedRandom, episodes - half),
        ]);
    }
    let quarter = half / 2;
    Ok(vec![
        CollectorSpec::new(CollectorKind::Random, quarter),
        CollectorSpec::new(CollectorKind::SmoothedRandom, half - quarter),
        CollectorSpec::mpc(episodes - half, BUDGETS[level]),
    ])
}

fn collect_one(env: &EnvSpec, reward: &RewardFn, spec: &CollectorSpec, length: usize, rng: &Rng) -> Result<Episode> {
    let a = env.act_dim();
    let repeat = spec.action_repeat.max(1);
    let decisions = length.div_ceil(repeat);
    let mut policy_rng = rng.fork("policy");
    match spec.kind {
        CollectorKind::Random => {
            let acts: Vec<f64> = (0..decisions * a).map(|_| policy_rng.uniform_range(-1.0, 1.0)).collect();
            env.run_episode(reward, |_, t| acts[(t / repeat) * a..(t / repeat + 1) * a].to_vec(), length, &mut rng.fork("reset"))
        }
        CollectorKind::SmoothedRandom => {
            let seqs: Vec<Vec<f64>> = (0..a).map(|_| colored_sequence(&mut policy_rng, 2.0, decisions, 0.6)).collect();
            env.run_episode(
                reward,
                |_, t| seqs.iter().map(|s| s[t / repeat].clamp(-1.0, 1.0)).collect(),
                length,
                &mut rng.fork("reset"),
            )
        }
        CollectorKind::Mpc => {
            let planner = PlannerConfig {
                particles: spec.particles.max(2),
                replan_interval: spec.replan_interval,
                ..PlannerConfig::for_env(env.kind)
            };
            let model = TrueModel::at_base_rate(env.clone());
            let out = mpc_episode(&planner, env, &model, reward, length, rng)?;
            match out.aborted {
                Some(msg) => Err(crate::error::numeric(msg)),
                None => Ok(out.episode),
            }
        }
    }
}

/// Episodes from every collector in order. Episode `i` uses its own fork of
/// `rng`, so collection parallelizes without changing the result.
pub fn collect_dataset(
    env: &EnvSpec,
    reward: &RewardFn,
    collectors: &[CollectorSpec],
    episode_len: usize,
    rng: &Rng,
) -> Result<Dataset> {
    let total: usize = collectors.iter().map(|c| c.episodes).sum();
    if total == 0 {
        return Err(config("collectors must request at least one episode"));
    }
    if episode_len == 0 {
        return Err(config("episode length must be >= 1"));
    }
    let jobs: Vec<&CollectorSpec> = collectors.iter().flat_map(|c| std::iter::repeat_n(c, c.episodes)).collect();
    let episodes = par::map_range(jobs.len(), |i| collect_one(env, reward, jobs[i], episode_len, &rng.fork_index(i as u64)));
    let mut data = Dataset::new(env.kind.name(), env.dt_base);
    for ep in episodes {
        data.episodes.push(ep?);
    }
    Ok(data)
}
