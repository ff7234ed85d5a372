use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3};

use super::{DynamicsModel, RolloutBatch, RolloutMode};
use crate::envs::EnvSpec;
use crate::error::{config, Result};
use crate::numerics::Rng;

/// The simulator itself, seen through observations. Angles are recovered with
/// `atan2`; the minimal state is carried between steps of a rollout.
#[derive(Clone, Debug)]
pub struct TrueModel {
    env: EnvSpec,
    dt: f64,
}

impl TrueModel {
    pub fn new(env: EnvSpec, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt <= 0.1) {
            return Err(config(format!("true model dt {dt} outside (0, 0.1]")));
        }
        Ok(TrueModel { env, dt })
    }

    /// True model stepping at the environment's base rate.
    pub fn at_base_rate(env: EnvSpec) -> Self {
        let dt = env.dt_base;
        TrueModel { env, dt }
    }

    pub fn env(&self) -> &EnvSpec {
        &self.env
    }
}

impl DynamicsModel for TrueModel {
    fn obs_dim(&self) -> usize {
        self.env.obs_dim()
    }

    fn act_dim(&self) -> usize {
        self.env.act_dim()
    }

    fn dt(&self) -> f64 {
        self.dt
    }

    fn member_count(&self) -> usize {
        1
    }

    fn step_batch(
        &self,
        _member: usize,
        obs: ArrayView2<f64>,
        actions: ArrayView2<f64>,
        _noise: Option<ArrayView2<f64>>,
    ) -> Array2<f64> {
        let mut next = Array2::<f64>::from_elem(obs.raw_dim(), f64::NAN);
        for (i, mut row) in next.rows_mut().into_iter().enumerate() {
            let state = self.env.state_from_obs(&obs.row(i).to_vec());
            if let Ok(s) = self.env.step(&state, &actions.row(i).to_vec(), self.dt) {
                for (dst, v) in row.iter_mut().zip(self.env.observe(&s)) {
                    *dst = v;
                }
            }
        }
        next
    }

    fn rollout_batch(
        &self,
        _member: usize,
        obs0: ArrayView2<f64>,
        actions: ArrayView3<f64>,
        _mode: RolloutMode,
        _rngs: &mut [Rng],
    ) -> RolloutBatch {
        let (n, horizon, _) = actions.dim();
        let mut traj = Array3::<f64>::zeros((n, horizon + 1, self.obs_dim()));
        let mut dead_at = vec![None; n];
        for i in 0..n {
            let obs = obs0.row(i).to_vec();
            let mut state = self.env.state_from_obs(&obs);
            let mut last = obs;
            traj.slice_mut(s![i, 0, ..]).assign(&ndarray::aview1(&last));
            for t in 0..horizon {
                if dead_at[i].is_none() {
                    match self.env.step(&state, &actions.slice(s![i, t, ..]).to_vec(), self.dt) {
                        Ok(s) => {
                            last = self.env.observe(&s);
                            state = s;
                        }
                        Err(_) => dead_at[i] = Some(t),
                    }
                }
                traj.slice_mut(s![i, t + 1, ..]).assign(&ndarray::aview1(&last));
            }
        }
        RolloutBatch { trajectories: traj, dead_at }
    }
}
