use serde::{Deserialize, Serialize};

use super::{EnvKind, EnvSpec};
use crate::error::{config, Result};

/// Task selecting which goal the reward measures distance to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Task {
    /// Pendulum or pole upright and at rest; cart near the origin.
    Swingup,
    /// Same goal as swing-up with tighter tolerances.
    Balance,
    /// Pendulum spinning at a target angular rate (rad/s).
    Spin { rate: f64 },
    /// Reacher fingertip at a planar goal position.
    Reach { goal: [f64; 2] },
}

/// Dense, bounded reward: `exp(-d^2 / 2) * (1 - action_cost * mean(u^2))`,
/// where `d` is a scaled Euclidean distance between the observation and the
/// goal. Evaluated purely on observations so that learned models, whose
/// predictions may leave the observation manifold, are scored by the same
/// function as the simulator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardFn {
    pub task: Task,
    /// Tolerance scales, task dependent (see [`RewardFn::for_task`]).
    pub scales: Vec<f64>,
    /// In `[0, 1)`; the reward never drops below `1 - action_cost` from
    /// actions alone.
    pub action_cost: f64,
}

impl RewardFn {
    pub fn for_task(env: EnvKind, task: Task) -> Result<Self> {
        let scales = match (env, &task) {
            // angle chord, angular rate
            (EnvKind::Pendulum, Task::Swingup) => vec![0.7, 4.0],
            (EnvKind::Pendulum, Task::Balance) => vec![0.3, 2.0],
            (EnvKind::Pendulum, Task::Spin { .. }) => vec![1.5],
            // angle chord, cart position, pole rate
            (EnvKind::CartpoleSwingup, Task::Swingup) => vec![0.6, 1.5, 6.0],
            (EnvKind::CartpoleSwingup, Task::Balance) => vec![0.25, 0.5, 3.0],
            // fingertip distance, joint rates
            (EnvKind::Reacher2, Task::Reach { .. }) => vec![0.15, 10.0],
            (env, task) => {
                return Err(config(format!("task {task:?} is not defined for {env}")));
            }
        };
        Ok(Self {
            task,
            scales,
            action_cost: 0.02,
        })
    }

    pub fn default_for(env: EnvKind) -> Self {
        let task = match env {
            EnvKind::Pendulum | EnvKind::CartpoleSwingup => Task::Swingup,
            EnvKind::Reacher2 => Task::Reach { goal: [0.6, 0.3] },
        };
        Self::for_task(env, task).expect("default task exists")
    }

    /// Parses a task name as used in configs: `swingup`, `balance`,
    /// `spin[:rate]`, `reach[:x,y]`.
    pub fn parse_task(env: EnvKind, name: &str) -> Result<Self> {
        let (head, arg) = match name.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (name, None),
        };
        let nums = |s: &str| -> Result<Vec<f64>> {
            s.split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|_| config(format!("bad task argument '{s}'"))))
                .collect()
        };
        let task = match head {
            "swingup" => Task::Swingup,
            "balance" => Task::Balance,
            "spin" => Task::Spin {
                rate: arg.map(nums).transpose()?.map(|v| v[0]).unwrap_or(2.0 * std::f64::consts::PI),
            },
            "reach" => {
                let goal = match arg {
                    Some(a) => {
                        let v = nums(a)?;
                        if v.len() != 2 {
                            return Err(config("reach goal needs two coordinates"));
                        }
                        [v[0], v[1]]
                    }
                    None => [0.6, 0.3],
                };
                Task::Reach { goal }
            }
            other => return Err(config(format!("unknown task '{other}'"))),
        };
        Self::for_task(env, task)
    }

    fn action_factor(&self, action: &[f64]) -> f64 {
        if action.is_empty() {
            return 1.0;
        }
        let mean_sq = action.iter().map(|a| a.clamp(-1.0, 1.0).powi(2)).sum::<f64>() / action.len() as f64;
        1.0 - self.action_cost * mean_sq
    }

    /// Squared scaled distance to the goal for an observation.
    fn distance_sq(&self, env: &EnvSpec, obs: &[f64]) -> f64 {
        let s = &self.scales;
        let chord_sq = |sin: f64, cos: f64| sin * sin + (cos - 1.0) * (cos - 1.0);
        match (env.kind, &self.task) {
            (EnvKind::Pendulum, Task::Spin { rate }) => ((obs[2] - rate) / s[0]).powi(2),
            (EnvKind::Pendulum, _) => chord_sq(obs[0], obs[1]) / (s[0] * s[0]) + (obs[2] / s[1]).powi(2),
            (EnvKind::CartpoleSwingup, _) => {
                chord_sq(obs[1], obs[2]) / (s[0] * s[0]) + (obs[0] / s[1]).powi(2) + (obs[4] / s[2]).powi(2)
            }
            (EnvKind::Reacher2, task) => {
                let goal = match task {
                    Task::Reach { goal } => *goal,
                    _ => [0.0, 0.0],
                };
                let (l1, l2) = (env.constant("link1_length"), env.constant("link2_length"));
                let (s1, c1, s2, c2) = (obs[0], obs[1], obs[2], obs[3]);
                let c12 = c1 * c2 - s1 * s2;
                let s12 = s1 * c2 + c1 * s2;
                let tip = [l1 * c1 + l2 * c12, l1 * s1 + l2 * s12];
                let d2 = (tip[0] - goal[0]).powi(2) + (tip[1] - goal[1]).powi(2);
                d2 / (s[0] * s[0]) + (obs[4] * obs[4] + obs[5] * obs[5]) / (s[1] * s[1])
            }
        }
    }

    /// Reward in `[0, 1]` for arriving at `obs` under `action`.
    pub fn evaluate(&self, env: &EnvSpec, obs: &[f64], action: &[f64]) -> f64 {
        let d2 = self.distance_sq(env, obs);
        (-0.5 * d2).exp() * self.action_factor(action)
    }

    /// Reward for a minimal-coordinate state.
    pub fn evaluate_state(&self, env: &EnvSpec, state: &[f64], action: &[f64]) -> f64 {
        self.evaluate(env, &env.observe(state), action)
    }
}
