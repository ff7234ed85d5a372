//! Dynamics models. Every model predicts with the integrator form
//! `x' = x + dt * f(x, u)` and shares the batched open-loop rollout code.

mod checkpoint;
mod learned;
mod sigma;
mod truth;

use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{numeric, structural, Result};
use crate::numerics::Rng;
use crate::par;

pub use checkpoint::{decode_model, encode_model, load_model, save_model, MODEL_MAGIC, MODEL_VERSION};
pub use learned::{Architecture, LearnedModel, ModelFrame, ModelKind};
pub use sigma::{bound_sigma, bound_sigma_grad, softplus, SigmaBounds, SigmaParam};
pub use truth::TrueModel;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RolloutMode {
    #[default]
    Mean,
    Sample,
}

/// Batched rollout output.
#[derive(Clone, Debug)]
pub struct RolloutBatch {
    /// `[n × (H+1) × obs_dim]`; row 0 is the start observation.
    pub trajectories: Array3<f64>,
    /// First step whose prediction was non-finite. Later rows repeat the last
    /// finite observation.
    pub dead_at: Vec<Option<usize>>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.dead_at.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dead_at.is_empty()
    }
}

/// A single open-loop trajectory.
#[derive(Clone, Debug)]
pub struct Rollout {
    pub trajectory: Array2<f64>,
    pub dead_at: Option<usize>,
}

pub trait DynamicsModel: Send + Sync {
    fn obs_dim(&self) -> usize;
    fn act_dim(&self) -> usize;
    /// Model step, seconds.
    fn dt(&self) -> f64;
    fn member_count(&self) -> usize;

    fn is_stochastic(&self) -> bool {
        false
    }

    /// One integrator step for every row. `noise`, when given, holds
    /// standard-normal draws `[n × obs_dim]` for stochastic models. Rows may
    /// come back non-finite.
    fn step_batch(
        &self,
        member: usize,
        obs: ArrayView2<f64>,
        actions: ArrayView2<f64>,
        noise: Option<ArrayView2<f64>>,
    ) -> Array2<f64>;

    /// Chains `step_batch` over the action windows `[n × H × act_dim]`.
    /// `rngs` needs one entry per row in sample mode and may be empty otherwise.
    fn rollout_batch(
        &self,
        member: usize,
        obs0: ArrayView2<f64>,
        actions: ArrayView3<f64>,
        mode: RolloutMode,
        rngs: &mut [Rng],
    ) -> RolloutBatch {
        default_rollout(self, member, obs0, actions, mode, rngs)
    }
}

fn default_rollout<M: DynamicsModel + ?Sized>(
    model: &M,
    member: usize,
    obs0: ArrayView2<f64>,
    actions: ArrayView3<f64>,
    mode: RolloutMode,
    rngs: &mut [Rng],
) -> RolloutBatch {
    let (n, horizon, _) = actions.dim();
    let d = model.obs_dim();
    let sample = mode == RolloutMode::Sample && model.is_stochastic();
    assert!(!sample || rngs.len() == n, "sample mode needs one rng per row");
    let mut traj = Array3::<f64>::zeros((n, horizon + 1, d));
    traj.slice_mut(s![.., 0, ..]).assign(&obs0);
    let mut current = obs0.to_owned();
    let mut dead_at = vec![None; n];
    let mut noise = Array2::<f64>::zeros((if sample { n } else { 0 }, d));
    for t in 0..horizon {
        if sample {
            for (i, rng) in rngs.iter_mut().enumerate() {
                for v in noise.row_mut(i) {
                    *v = rng.standard_normal();
                }
            }
        }
        let next = model.step_batch(
            member,
            current.view(),
            actions.index_axis(Axis(1), t),
            if sample { Some(noise.view()) } else { None },
        );
        for i in 0..n {
            if dead_at[i].is_some() {
                continue;
            }
            let row = next.row(i);
            if row.iter().all(|v| v.is_finite()) {
                current.row_mut(i).assign(&row);
            } else {
                dead_at[i] = Some(t);
            }
        }
        traj.slice_mut(s![.., t + 1, ..]).assign(&current);
    }
    RolloutBatch { trajectories: traj, dead_at }
}

fn check_dims<M: DynamicsModel + ?Sized>(model: &M, member: usize, obs: &[f64], action: &[f64]) -> Result<()> {
    if member >= model.member_count() {
        return Err(structural(format!("member {member} out of range")));
    }
    if obs.len() != model.obs_dim() || action.len() != model.act_dim() {
        return Err(structural("observation or action has the wrong length"));
    }
    Ok(())
}

fn single_step<M: DynamicsModel + ?Sized>(
    model: &M,
    member: usize,
    obs: &[f64],
    action: &[f64],
    noise: Option<&[f64]>,
) -> Result<Vec<f64>> {
    check_dims(model, member, obs, action)?;
    let o = ArrayView2::from_shape((1, obs.len()), obs).unwrap();
    let a = ArrayView2::from_shape((1, action.len()), action).unwrap();
    let nz = noise.map(|z| ArrayView2::from_shape((1, z.len()), z).unwrap());
    let out = model.step_batch(member, o, a, nz);
    let v = out.into_raw_vec_and_offset().0;
    if v.iter().any(|x| !x.is_finite()) {
        return Err(numeric("model prediction is not finite"));
    }
    Ok(v)
}

/// Mean prediction `obs + dt * mu(obs, action)` of one member.
pub fn predict_mean<M: DynamicsModel + ?Sized>(model: &M, member: usize, obs: &[f64], action: &[f64]) -> Result<Vec<f64>> {
    single_step(model, member, obs, action, None)
}

/// Sampled prediction `obs + dt * (mu + sigma * xi)`; equals the mean for
/// deterministic models.
pub fn predict_sample<M: DynamicsModel + ?Sized>(
    model: &M,
    member: usize,
    obs: &[f64],
    action: &[f64],
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    if !model.is_stochastic() {
        return single_step(model, member, obs, action, None);
    }
    let xi = rng.gaussian(model.obs_dim());
    single_step(model, member, obs, action, Some(&xi))
}

/// Open-loop rollout of one member under `actions` `[H × act_dim]`.
pub fn rollout_open_loop<M: DynamicsModel + ?Sized>(
    model: &M,
    member: usize,
    obs0: &[f64],
    actions: ArrayView2<f64>,
    mode: RolloutMode,
    rng: &mut Rng,
) -> Result<Rollout> {
    if member >= model.member_count() {
        return Err(structural(format!("member {member} out of range")));
    }
    if obs0.len() != model.obs_dim() || actions.ncols() != model.act_dim() {
        return Err(structural("observation or action has the wrong length"));
    }
    let o = ArrayView2::from_shape((1, obs0.len()), obs0).unwrap();
    let a = actions.insert_axis(Axis(0));
    let out = model.rollout_batch(member, o, a, mode, std::slice::from_mut(rng));
    Ok(Rollout {
        trajectory: out.trajectories.index_axis_move(Axis(0), 0),
        dead_at: out.dead_at[0],
    })
}

/// Rolls out particle `i` under member `assignment[i]`. Particle `i` draws
/// its noise from `rng.fork_index(i)`, so results do not depend on grouping.
pub fn ensemble_rollouts<M: DynamicsModel + ?Sized>(
    model: &M,
    obs0: ArrayView2<f64>,
    actions: ArrayView3<f64>,
    assignment: &[usize],
    mode: RolloutMode,
    rng: &Rng,
) -> Result<RolloutBatch> {
    let n = obs0.nrows();
    if actions.dim().0 != n || assignment.len() != n {
        return Err(structural("particle counts disagree"));
    }
    if let Some(&m) = assignment.iter().find(|&&m| m >= model.member_count()) {
        return Err(structural(format!("member {m} out of range")));
    }
    let horizon = actions.dim().1;
    let groups: Vec<Vec<usize>> = (0..model.member_count())
        .map(|m| (0..n).filter(|&i| assignment[i] == m).collect())
        .collect();
    let parts = par::map_range(groups.len(), |m| {
        let idx = &groups[m];
        if idx.is_empty() {
            return None;
        }
        let o = obs0.select(Axis(0), idx);
        let a = actions.select(Axis(0), idx);
        let mut rngs: Vec<Rng> = idx.iter().map(|&i| rng.fork_index(i as u64)).collect();
        Some(model.rollout_batch(m, o.view(), a.view(), mode, &mut rngs))
    });
    let mut traj = Array3::<f64>::zeros((n, horizon + 1, model.obs_dim()));
    let mut dead_at = vec![None; n];
    for (idx, part) in groups.iter().zip(parts) {
        if let Some(part) = part {
            for (k, &i) in idx.iter().enumerate() {
                traj.index_axis_mut(Axis(0), i).assign(&part.trajectories.index_axis(Axis(0), k));
                dead_at[i] = part.dead_at[k];
            }
        }
    }
    Ok(RolloutBatch { trajectories: traj, dead_at })
}
