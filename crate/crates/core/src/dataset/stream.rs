use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{config, Result};
use crate::numerics::Rng;

/// How the per-model-step action is formed when one model step spans several
/// base steps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoarseAction {
    /// Mean of the base actions inside the model step.
    #[default]
    Mean,
    /// First base action of the model step.
    First,
}

/// `B` sub-trajectory windows of `H` model steps.
#[derive(Clone, Debug, PartialEq)]
pub struct SubTrajectoryBatch {
    /// `[B x obs_dim]`
    pub start: Array2<f64>,
    /// `[B x H x act_dim]`
    pub actions: Array3<f64>,
    /// `[B x H x obs_dim]`; entry `j` is the observation `j + 1` model steps
    /// after the start.
    pub targets: Array3<f64>,
    /// Model timestep, seconds.
    pub dt: f64,
}

impl SubTrajectoryBatch {
    pub fn len(&self) -> usize {
        self.start.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn horizon(&self) -> usize {
        self.actions.shape()[1]
    }

    /// The first `h` steps of every window.
    pub fn truncated(&self, h: usize) -> SubTrajectoryBatch {
        use ndarray::s;
        SubTrajectoryBatch {
            start: self.start.clone(),
            actions: self.actions.slice(s![.., ..h, ..]).to_owned(),
            targets: self.targets.slice(s![.., ..h, ..]).to_owned(),
            dt: self.dt,
        }
    }
}

/// Endless stream of shuffled windows for one ensemble member.
///
/// Every epoch visits each admissible window start exactly once, in an order
/// drawn from a stream forked by member id, so members see the same data in
/// different minibatch order and composition.
#[derive(Clone, Debug)]
pub struct MinibatchStream<'a> {
    data: &'a Dataset,
    windows: Vec<(u32, u32)>,
    order: Vec<usize>,
    cursor: usize,
    epoch: usize,
    batch: usize,
    horizon: usize,
    stride: usize,
    coarse: CoarseAction,
    rng: Rng,
}

impl<'a> MinibatchStream<'a> {
    pub fn new(
        data: &'a Dataset,
        member_id: usize,
        batch: usize,
        horizon: usize,
        stride: usize,
        coarse: CoarseAction,
        rng: &Rng,
    ) -> Result<Self> {
        if batch == 0 || horizon == 0 || stride == 0 {
            return Err(config("batch, horizon and time-step multiple must be >= 1"));
        }
        let span = horizon * stride;
        let mut windows = Vec::new();
        for (e, ep) in data.episodes.iter().enumerate() {
            if ep.len() < span {
                return Err(config(format!(
                    "episode {e} has {} steps, fewer than horizon x multiple = {span}",
                    ep.len()
                )));
            }
            for s in 0..=ep.len() - span {
                windows.push((e as u32, s as u32));
            }
        }
        if windows.is_empty() {
            return Err(config("dataset has no episodes"));
        }
        let mut stream = Self {
            data,
            order: Vec::new(),
            windows,
            cursor: 0,
            epoch: 0,
            batch,
            horizon,
            stride,
            coarse,
            rng: rng.fork_index(member_id as u64).fork("minibatch"),
        };
        stream.reshuffle();
        Ok(stream)
    }

    fn reshuffle(&mut self) {
        self.order = (0..self.windows.len()).collect();
        self.rng.shuffle(&mut self.order);
        self.cursor = 0;
    }

    pub fn window_count(&self) -> usize {
        self.windows.len()
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// `(episode, base start index)` of the windows in the current epoch order.
    pub fn epoch_order(&self) -> Vec<(usize, usize)> {
        self.order
            .iter()
            .map(|&i| (self.windows[i].0 as usize, self.windows[i].1 as usize))
            .collect()
    }

    fn next_window(&mut self) -> (usize, usize) {
        if self.cursor == self.order.len() {
            self.epoch += 1;
            self.reshuffle();
        }
        let w = self.windows[self.order[self.cursor]];
        self.cursor += 1;
        (w.0 as usize, w.1 as usize)
    }

    /// Next batch truncated to `h <= horizon` model steps.
    pub fn next_batch_with_horizon(&mut self, h: usize) -> SubTrajectoryBatch {
        let h = h.clamp(1, self.horizon);
        let (od, ad) = (self.data.obs_dim(), self.data.act_dim());
        let k = self.stride;
        let mut start = Array2::zeros((self.batch, od));
        let mut actions = Array3::zeros((self.batch, h, ad));
        let mut targets = Array3::zeros((self.batch, h, od));
        for b in 0..self.batch {
            let (e, s) = self.next_window();
            let ep = &self.data.episodes[e];
            for (d, v) in ep.observation(s).iter().enumerate() {
                start[[b, d]] = *v;
            }
            for j in 0..h {
                let base = s + j * k;
                match self.coarse {
                    CoarseAction::First => {
                        for (d, v) in ep.action(base).iter().enumerate() {
                            actions[[b, j, d]] = *v;
                        }
                    }
                    CoarseAction::Mean => {
                        for i in 0..k {
                            for (d, v) in ep.action(base + i).iter().enumerate() {
                                actions[[b, j, d]] += *v;
                            }
                        }
                        for d in 0..ad {
                            actions[[b, j, d]] /= k as f64;
                        }
                    }
                }
                for (d, v) in ep.observation(base + k).iter().enumerate() {
                    targets[[b, j, d]] = *v;
                }
            }
        }
        SubTrajectoryBatch {
            start,
            actions,
            targets,
            dt: self.data.dt_base * k as f64,
        }
    }
}

impl Iterator for MinibatchStream<'_> {
    type Item = SubTrajectoryBatch;

    fn next(&mut self) -> Option<SubTrajectoryBatch> {
        Some(self.next_batch_with_horizon(self.horizon))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Episode;

    fn ramp_dataset(episodes: usize, len: usize) -> Dataset {
        let mut d = Dataset::new("ramp", 0.01);
        for e in 0..episodes {
            let obs: Vec<f64> = (0..=len).map(|t| (e * 1000 + t) as f64).collect();
            let acts: Vec<f64> = (0..len).map(|t| t as f64 / len as f64).collect();
            d.episodes
                .push(Episode::from_parts(0.01, 1, 1, obs, acts, vec![0.0; len]).unwrap());
        }
        d
    }

    #[test]
    fn epoch_covers_each_window_once() {
        let d = ramp_dataset(3, 10);
        let mut s = MinibatchStream::new(&d, 0, 4, 2, 1, CoarseAction::Mean, &Rng::new(0)).unwrap();
        assert_eq!(s.window_count(), 3 * 9);
        for _ in 0..s.window_count() {
            let b = s.next_batch_with_horizon(2);
            assert_eq!(b.len(), 4);
        }
        // 27 batches of 4 = 4 epochs exactly
        assert_eq!(s.epoch(), 3);
        let fresh = MinibatchStream::new(&d, 0, 1, 2, 1, CoarseAction::Mean, &Rng::new(0)).unwrap();
        let mut order = fresh.epoch_order();
        order.sort_unstable();
        order.dedup();
        assert_eq!(order.len(), 27);
    }

    #[test]
    fn members_get_different_orders_of_same_windows() {
        let d = ramp_dataset(4, 12);
        let rng = Rng::new(9);
        let a = MinibatchStream::new(&d, 0, 8, 3, 1, CoarseAction::Mean, &rng).unwrap().epoch_order();
        let b = MinibatchStream::new(&d, 1, 8, 3, 1, CoarseAction::Mean, &rng).unwrap().epoch_order();
        assert_ne!(a, b);
        let (mut sa, mut sb) = (a.clone(), b.clone());
        sa.sort_unstable();
        sb.sort_unstable();
        assert_eq!(sa, sb);
    }

    #[test]
    fn one_step_pairs() {
        let d = ramp_dataset(1, 5);
        let mut s = MinibatchStream::new(&d, 0, 1, 1, 1, CoarseAction::Mean, &Rng::new(0)).unwrap();
        for _ in 0..5 {
            let b = s.next().unwrap();
            assert_eq!(b.targets[[0, 0, 0]], b.start[[0, 0]] + 1.0);
            assert_eq!(b.dt, 0.01);
        }
    }

    #[test]
    fn strided_windows_and_action_means() {
        let d = ramp_dataset(1, 20);
        let mut s = MinibatchStream::new(&d, 0, 1, 2, 4, CoarseAction::Mean, &Rng::new(3)).unwrap();
        assert_eq!(s.window_count(), 20 - 8 + 1);
        let b = s.next().unwrap();
        let start = b.start[[0, 0]];
        assert_eq!(b.targets[[0, 0, 0]], start + 4.0);
        assert_eq!(b.targets[[0, 1, 0]], start + 8.0);
        let t0 = start as usize;
        let mean: f64 = (t0..t0 + 4).map(|t| t as f64 / 20.0).sum::<f64>() / 4.0;
        assert!((b.actions[[0, 0, 0]] - mean).abs() < 1e-15);
        assert!((b.dt - 0.04).abs() < 1e-15);
    }

    #[test]
    fn too_long_window_is_config_error() {
        let d = ramp_dataset(2, 10);
        assert!(MinibatchStream::new(&d, 0, 1, 6, 2, CoarseAction::Mean, &Rng::new(0)).is_err());
    }
}
