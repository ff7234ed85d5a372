//! Losses, input-noise augmentation, horizon schedules and the per-member
//! training loop.

mod loss;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{CoarseAction, Dataset, MinibatchStream};
use crate::error::{config, Result};
use crate::models::{LearnedModel, ModelKind};
use crate::numerics::{Adam, MlpParams, Rng};
use crate::par;

pub use loss::{apply_input_noise, clip_global_norm, loss_nll_1step, loss_nmse_1step, loss_nmse_multistep, InputNoise};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Nmse1,
    NmseMulti,
    Nll1,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    None,
    #[serde(alias = "linear_to_h")]
    Linear,
}

/// Training horizon in effect at `update` (0-based).
pub fn horizon_schedule(update: usize, total: usize, target: usize, mode: Schedule) -> usize {
    let target = target.max(1);
    match mode {
        Schedule::None => target,
        Schedule::Linear => {
            let total = total.max(1);
            let h = (target * (update + 1)).div_ceil(total);
            h.clamp(1, target)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub horizon: usize,
    pub schedule: Schedule,
    /// Input-noise amplitude λ in units of the dataset Cholesky factor.
    pub input_noise: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub updates: usize,
    pub eval_interval: usize,
    pub grad_clip: f64,
    pub coarse_action: CoarseAction,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossKind::Nmse1,
            horizon: 1,
            schedule: Schedule::None,
            input_noise: 0.0,
            batch_size: 64,
            learning_rate: 5e-4,
            updates: 20_000,
            eval_interval: 1_000,
            grad_clip: 100.0,
            coarse_action: CoarseAction::Mean,
        }
    }
}

impl TrainConfig {
    /// Horizon actually trained: forced to 1 for the one-step losses.
    pub fn effective_horizon(&self) -> usize {
        match self.loss {
            LossKind::NmseMulti => self.horizon,
            LossKind::Nmse1 | LossKind::Nll1 => 1,
        }
    }

    pub fn validate(&self, kind: ModelKind) -> Result<()> {
        if self.horizon == 0 {
            return Err(config("horizon must be >= 1"));
        }
        match (self.loss, kind) {
            (LossKind::Nll1, ModelKind::Stochastic) => {}
            (LossKind::Nll1, ModelKind::Deterministic) => {
                return Err(config("nll1 needs a stochastic model"));
            }
            (LossKind::NmseMulti, ModelKind::Stochastic) => {
                return Err(config("multi-step losses are not defined for stochastic models"));
            }
            (_, ModelKind::Stochastic) => return Err(config("stochastic models train with nll1")),
            _ => {}
        }
        if !(self.input_noise >= 0.0 && self.input_noise.is_finite()) {
            return Err(config("input_noise must be a finite value >= 0"));
        }
        if self.batch_size == 0 || self.eval_interval == 0 {
            return Err(config("batch_size and eval_interval must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(config("learning_rate must be > 0"));
        }
        if !(self.grad_clip > 0.0) {
            return Err(config("grad_clip must be > 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Number of updates completed.
    pub update: usize,
    /// Mean training loss since the previous point.
    pub train_loss: f64,
    pub test_nmse: Option<f64>,
    pub planner_reward: Option<f64>,
    pub horizon: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub member: usize,
    pub points: Vec<CurvePoint>,
}

impl LearningCurve {
    pub fn new(member: usize) -> Self {
        LearningCurve { member, points: Vec::new() }
    }

    /// Appends a point; update indices must increase strictly.
    pub fn push(&mut self, point: CurvePoint) -> Result<()> {
        if let Some(last) = self.points.last() {
            if point.update <= last.update {
                return Err(config("learning-curve updates must increase"));
            }
        }
        self.points.push(point);
        Ok(())
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

/// CSV with one row per member and checkpoint.
pub fn curves_to_csv(curves: &[LearningCurve]) -> String {
    let mut out = String::from("update_idx,member_id,train_loss,test_nmse,planner_reward\n");
    for c in curves {
        for p in &c.points {
            let _ = writeln!(
                out,
                "{},{},{:e},{},{}",
                p.update,
                c.member,
                p.train_loss,
                opt(p.test_nmse),
                opt(p.planner_reward)
            );
        }
    }
    out
}

pub fn write_curves_csv(curves: &[LearningCurve], path: &Path) -> Result<()> {
    fs::write(path, curves_to_csv(curves))?;
    Ok(())
}

/// Evaluation run at every checkpoint.
pub trait Checkpoint: Sync {
    /// Held-out prediction error of one member.
    fn test_nmse(&self, _model: &LearnedModel, _member: usize) -> Option<f64> {
        None
    }

    /// Planner reward with the whole ensemble; called once per checkpoint.
    fn planner_reward(&self, _update: usize, _model: &LearnedModel) -> Option<f64> {
        None
    }
}

/// Checkpoints that record only the training loss.
pub struct NoEval;

impl Checkpoint for NoEval {}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemberFailure {
    pub member: usize,
    pub update: usize,
    pub reason: String,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub model: LearnedModel,
    pub curves: Vec<LearningCurve>,
    pub failures: Vec<MemberFailure>,
    /// Horizon used at each update.
    pub horizon_trace: Vec<usize>,
}

struct MemberState<'a> {
    params: MlpParams,
    adam: Adam,
    stream: MinibatchStream<'a>,
    noise_rng: Rng,
    failed: Option<MemberFailure>,
    loss_sum: f64,
    loss_count: usize,
}

/// One loss evaluation with gradients on `params`.
pub fn member_loss(
    params: &MlpParams,
    model: &LearnedModel,
    cfg: &TrainConfig,
    batch: &crate::dataset::SubTrajectoryBatch,
    noise_rng: &mut Rng,
) -> (f64, MlpParams) {
    let noise = (cfg.input_noise > 0.0).then_some(InputNoise { lambda: cfg.input_noise, rng: noise_rng });
    match cfg.loss {
        LossKind::Nmse1 => loss_nmse_1step(params, model.frame(), batch, noise),
        LossKind::NmseMulti => loss_nmse_multistep(params, model.frame(), batch, noise),
        LossKind::Nll1 => loss_nll_1step(params, model.frame(), batch, noise),
    }
}

/// Trains every member on its own minibatch stream. Members run in parallel
/// between checkpoints; the result is a deterministic function of
/// `(model, data, cfg, rng)`.
pub fn train(
    model: LearnedModel,
    data: &Dataset,
    cfg: &TrainConfig,
    rng: &Rng,
    hooks: &dyn Checkpoint,
) -> Result<TrainReport> {
    cfg.validate(model.kind())?;
    let frame = model.frame().clone();
    if data.obs_dim() != frame.obs_dim() || data.act_dim() != frame.act_dim {
        return Err(config("dataset dimensions do not match the model"));
    }
    let dt_expected = data.dt_base * frame.dt_multiple as f64;
    if (dt_expected - frame.dt).abs() > 1e-12 * dt_expected {
        return Err(config("model dt must equal dt_multiple x dataset dt"));
    }
    let horizon = cfg.effective_horizon();
    let mut states = Vec::with_capacity(model.members().len());
    for (m, params) in model.members().iter().enumerate() {
        let stream = MinibatchStream::new(
            data,
            m,
            cfg.batch_size,
            horizon,
            frame.dt_multiple as usize,
            cfg.coarse_action,
            rng,
        )?;
        states.push(MemberState {
            params: params.clone(),
            adam: Adam::new(params, cfg.learning_rate),
            stream,
            noise_rng: rng.fork_index(m as u64).fork("input-noise"),
            failed: None,
            loss_sum: 0.0,
            loss_count: 0,
        });
    }
    let horizon_trace: Vec<usize> =
        (0..cfg.updates).map(|u| horizon_schedule(u, cfg.updates, horizon, cfg.schedule)).collect();
    let mut curves: Vec<LearningCurve> = (0..states.len()).map(LearningCurve::new).collect();
    let mut model = model;
    let mut done = 0;
    while done < cfg.updates {
        let end = (done + cfg.eval_interval).min(cfg.updates);
        let trace = &horizon_trace[done..end];
        let snapshot = &model;
        par::for_each_mut(&mut states, |m, st| {
            if st.failed.is_some() {
                return;
            }
            for (i, &h) in trace.iter().enumerate() {
                let batch = st.stream.next_batch_with_horizon(h);
                let (loss, mut grads) = member_loss(&st.params, snapshot, cfg, &batch, &mut st.noise_rng);
                if !loss.is_finite() || !grads.is_finite() {
                    st.failed = Some(MemberFailure {
                        member: m,
                        update: done + i,
                        reason: format!("non-finite loss {loss}"),
                    });
                    return;
                }
                clip_global_norm(&mut grads, cfg.grad_clip);
                if let Err(e) = st.adam.update(&mut st.params, &grads) {
                    st.failed = Some(MemberFailure { member: m, update: done + i, reason: e.to_string() });
                    return;
                }
                st.loss_sum += loss;
                st.loss_count += 1;
            }
        });
        for (dst, st) in model.members_mut().iter_mut().zip(&states) {
            dst.clone_from(&st.params);
        }
        let nmse = par::map_range(states.len(), |m| hooks.test_nmse(&model, m));
        let reward = hooks.planner_reward(end, &model);
        for (m, st) in states.iter_mut().enumerate() {
            let train_loss = if st.loss_count > 0 { st.loss_sum / st.loss_count as f64 } else { f64::NAN };
            curves[m].push(CurvePoint {
                update: end,
                train_loss,
                test_nmse: nmse[m],
                planner_reward: reward,
                horizon: horizon_trace[end - 1],
            })?;
            st.loss_sum = 0.0;
            st.loss_count = 0;
        }
        done = end;
    }
    let failures = states.into_iter().filter_map(|s| s.failed).collect();
    Ok(TrainReport { model, curves, failures, horizon_trace })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints_and_coverage() {
        assert_eq!(horizon_schedule(0, 100, 5, Schedule::Linear), 1);
        assert_eq!(horizon_schedule(99, 100, 5, Schedule::Linear), 5);
        assert!((0..100).all(|u| horizon_schedule(u, 100, 5, Schedule::None) == 5));
        let seq: Vec<usize> = (0..37).map(|u| horizon_schedule(u, 37, 7, Schedule::Linear)).collect();
        assert!(seq.windows(2).all(|w| w[0] <= w[1]));
        for h in 1..=7 {
            assert!(seq.contains(&h));
        }
    }

    #[test]
    fn config_consistency() {
        let mut c = TrainConfig { loss: LossKind::Nll1, ..Default::default() };
        assert!(c.validate(ModelKind::Stochastic).is_ok());
        assert!(c.validate(ModelKind::Deterministic).is_err());
        c.loss = LossKind::NmseMulti;
        c.horizon = 5;
        assert!(c.validate(ModelKind::Stochastic).is_err());
        assert!(c.validate(ModelKind::Deterministic).is_ok());
        assert_eq!(c.effective_horizon(), 5);
        c.loss = LossKind::Nmse1;
        assert_eq!(c.effective_horizon(), 1);
        c.input_noise = -1.0;
        assert!(c.validate(ModelKind::Deterministic).is_err());
    }

    #[test]
    fn curve_indices_increase() {
        let p = |u| CurvePoint { update: u, train_loss: 1.0, test_nmse: None, planner_reward: Some(2.0), horizon: 1 };
        let mut c = LearningCurve::new(0);
        c.push(p(10)).unwrap();
        assert!(c.push(p(10)).is_err());
        c.push(p(20)).unwrap();
        let csv = curves_to_csv(&[c]);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().nth(1).unwrap().starts_with("10,0,1e0,,2e0"));
    }
}
