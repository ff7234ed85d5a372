//! Trajectory storage, normalization statistics, splitting, minibatch
//! streams and persistence.

mod collect;
mod io;
mod stream;

use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{config, structural, Result};
use crate::numerics::Rng;

pub use collect::{collect_dataset, quality_collectors, CollectorKind, CollectorSpec};
pub use io::{load_dataset, save_dataset, DATASET_MAGIC, DATASET_VERSION};
pub use stream::{CoarseAction, MinibatchStream, SubTrajectoryBatch};

/// Variance floor applied before taking square roots.
pub const VARIANCE_FLOOR: f64 = 1e-8;

/// One recorded episode at a fixed control timestep.
///
/// `observations` has `T + 1` rows, `actions` and `rewards` have `T`.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    dt: f64,
    obs_dim: usize,
    act_dim: usize,
    observations: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
}

impl Episode {
    pub fn with_capacity(dt: f64, obs_dim: usize, act_dim: usize, steps: usize) -> Self {
        Self {
            dt,
            obs_dim,
            act_dim,
            observations: Vec::with_capacity((steps + 1) * obs_dim),
            actions: Vec::with_capacity(steps * act_dim),
            rewards: Vec::with_capacity(steps),
        }
    }

    /// Builds an episode from flat row-major buffers, checking consistency.
    pub fn from_parts(
        dt: f64,
        obs_dim: usize,
        act_dim: usize,
        observations: Vec<f64>,
        actions: Vec<f64>,
        rewards: Vec<f64>,
    ) -> Result<Self> {
        let t = rewards.len();
        if observations.len() != (t + 1) * obs_dim || actions.len() != t * act_dim {
            return Err(structural("episode arrays have inconsistent row counts"));
        }
        if observations.iter().chain(&actions).chain(&rewards).any(|v| !v.is_finite()) {
            return Err(structural("episode contains non-finite values"));
        }
        if rewards.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(structural("episode reward outside [0, 1]"));
        }
        Ok(Self {
            dt,
            obs_dim,
            act_dim,
            observations,
            actions,
            rewards,
        })
    }

    pub(crate) fn push_observation(&mut self, obs: &[f64]) {
        debug_assert_eq!(obs.len(), self.obs_dim);
        self.observations.extend_from_slice(obs);
    }

    pub(crate) fn push_transition(&mut self, action: &[f64], reward: f64, next_obs: &[f64]) {
        self.actions.extend_from_slice(action);
        self.rewards.push(reward);
        self.push_observation(next_obs);
    }

    /// Number of transitions.
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    pub fn observations(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.observations.len() / self.obs_dim, self.obs_dim), &self.observations).unwrap()
    }

    pub fn actions(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.len(), self.act_dim), &self.actions).unwrap()
    }

    pub fn rewards(&self) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.rewards[..])
    }

    pub fn observation(&self, t: usize) -> &[f64] {
        &self.observations[t * self.obs_dim..(t + 1) * self.obs_dim]
    }

    pub fn action(&self, t: usize) -> &[f64] {
        &self.actions[t * self.act_dim..(t + 1) * self.act_dim]
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }

    pub(crate) fn raw_parts(&self) -> (&[f64], &[f64], &[f64]) {
        (&self.observations, &self.actions, &self.rewards)
    }
}

/// A collection of episodes from one environment.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub env_name: String,
    pub dt_base: f64,
    pub episodes: Vec<Episode>,
}

impl Dataset {
    pub fn new(env_name: impl Into<String>, dt_base: f64) -> Self {
        Self {
            env_name: env_name.into(),
            dt_base,
            episodes: Vec::new(),
        }
    }

    pub fn transitions(&self) -> usize {
        self.episodes.iter().map(Episode::len).sum()
    }

    pub fn obs_dim(&self) -> usize {
        self.episodes.first().map_or(0, Episode::obs_dim)
    }

    pub fn act_dim(&self) -> usize {
        self.episodes.first().map_or(0, Episode::act_dim)
    }

    pub fn mean_episode_reward(&self) -> f64 {
        if self.episodes.is_empty() {
            return 0.0;
        }
        self.episodes.iter().map(Episode::total_reward).sum::<f64>() / self.episodes.len() as f64
    }

    fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            env_name: self.env_name.clone(),
            dt_base: self.dt_base,
            episodes: idx.iter().map(|&i| self.episodes[i].clone()).collect(),
        }
    }
}

/// Per-dimension normalization statistics of the observations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub mean: Vec<f64>,
    /// Population variance, floored at [`VARIANCE_FLOOR`].
    pub variance: Vec<f64>,
    /// Diagonal Cholesky factor, `sqrt(variance)`.
    pub cholesky: Vec<f64>,
    /// Number of transitions the statistics were computed from.
    pub count: usize,
}

impl DatasetStats {
    /// Identity statistics (zero mean, unit variance).
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            variance: vec![1.0; dim],
            cholesky: vec![1.0; dim],
            count: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Mean and population variance over every observation row.
pub fn compute_stats(dataset: &Dataset) -> Result<DatasetStats> {
    let rows: usize = dataset.episodes.iter().map(|e| e.len() + 1).sum();
    if dataset.transitions() < 2 {
        return Err(structural("statistics need at least two transitions"));
    }
    let dim = dataset.obs_dim();
    let mut mean = vec![0.0; dim];
    for ep in &dataset.episodes {
        for row in ep.observations().rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
    }
    mean.iter_mut().for_each(|m| *m /= rows as f64);
    let mut variance = vec![0.0; dim];
    for ep in &dataset.episodes {
        for row in ep.observations().rows() {
            for ((acc, v), m) in variance.iter_mut().zip(row).zip(&mean) {
                *acc += (v - m) * (v - m);
            }
        }
    }
    variance.iter_mut().for_each(|v| *v = (*v / rows as f64).max(VARIANCE_FLOOR));
    let cholesky = variance.iter().map(|v| v.sqrt()).collect();
    Ok(DatasetStats {
        mean,
        variance,
        cholesky,
        count: dataset.transitions(),
    })
}

/// Episode indices of a deterministic train/test split.
pub fn split_indices(n: usize, test_fraction: f64, rng: &mut Rng) -> (Vec<usize>, Vec<usize>) {
    let n_test = ((n as f64) * test_fraction).round() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut idx);
    let mut test = idx[..n_test].to_vec();
    let mut train = idx[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    (train, test)
}

/// Splits at episode granularity into `(train, test)`.
pub fn split(dataset: &Dataset, test_fraction: f64, rng: &mut Rng) -> Result<(Dataset, Dataset)> {
    if dataset.episodes.len() < 5 {
        return Err(config(format!(
            "splitting needs at least 5 episodes, have {}",
            dataset.episodes.len()
        )));
    }
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(config("test fraction must lie in [0, 1)"));
    }
    let (train, test) = split_indices(dataset.episodes.len(), test_fraction, rng);
    Ok((dataset.subset(&train), dataset.subset(&test)))
}
