use ndarray::{concatenate, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::{DynamicsModel, SigmaBounds};
use crate::dataset::DatasetStats;
use crate::error::{config, structural, Result};
use crate::numerics::{Activation, MlpParams, Rng};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[default]
    #[serde(alias = "det")]
    Deterministic,
    #[serde(alias = "stoch")]
    Stochastic,
}

impl ModelKind {
    pub(crate) fn tag(self) -> u8 {
        match self {
            ModelKind::Deterministic => 0,
            ModelKind::Stochastic => 1,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(ModelKind::Deterministic),
            1 => Some(ModelKind::Stochastic),
            _ => None,
        }
    }
}

/// Hidden layer widths and their nonlinearity.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

/// Everything a learned model needs besides its weights.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelFrame {
    pub kind: ModelKind,
    pub act_dim: usize,
    /// Model step in seconds, `dt_multiple` base steps.
    pub dt: f64,
    pub dt_multiple: u32,
    /// Normalization statistics of the training split.
    pub stats: DatasetStats,
    pub sigma: SigmaBounds,
}

impl ModelFrame {
    pub fn obs_dim(&self) -> usize {
        self.stats.dim()
    }

    pub fn input_dim(&self) -> usize {
        self.obs_dim() + self.act_dim
    }

    pub fn output_dim(&self) -> usize {
        match self.kind {
            ModelKind::Deterministic => self.obs_dim(),
            ModelKind::Stochastic => 2 * self.obs_dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) || self.dt_multiple == 0 {
            return Err(config("model dt must be positive"));
        }
        if self.act_dim == 0 || self.obs_dim() == 0 {
            return Err(config("model dimensions must be positive"));
        }
        if self.kind == ModelKind::Stochastic && !self.sigma.is_valid() {
            return Err(config("sigma bounds need 0 < min < max"));
        }
        Ok(())
    }

    /// `(obs - mean) / sqrt(var)`, row by row.
    pub fn standardize(&self, obs: ArrayView2<f64>) -> Array2<f64> {
        let mut z = obs.to_owned();
        for mut row in z.rows_mut() {
            for ((v, m), c) in row.iter_mut().zip(&self.stats.mean).zip(&self.stats.cholesky) {
                *v = (*v - m) / c;
            }
        }
        z
    }

    /// Network input `[z, u]`.
    pub fn net_input(&self, z: ArrayView2<f64>, actions: ArrayView2<f64>) -> Array2<f64> {
        concatenate(Axis(1), &[z, actions]).expect("row counts match")
    }
}

/// Deterministic or stochastic MLP ensemble; a single model is `E = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct LearnedModel {
    frame: ModelFrame,
    members: Vec<MlpParams>,
}

impl LearnedModel {
    /// Glorot-initialized members, each from its own fork of `rng`.
    pub fn init(frame: ModelFrame, arch: &Architecture, ensemble: usize, rng: &Rng) -> Result<Self> {
        frame.validate()?;
        if ensemble == 0 {
            return Err(config("ensemble size must be >= 1"));
        }
        let mut sizes = vec![frame.input_dim()];
        sizes.extend(&arch.hidden);
        sizes.push(frame.output_dim());
        let members = (0..ensemble)
            .map(|m| MlpParams::glorot(&sizes, arch.activation, &mut rng.fork_index(m as u64).fork("init")))
            .collect::<Result<Vec<_>>>()?;
        Ok(LearnedModel { frame, members })
    }

    pub fn from_members(frame: ModelFrame, members: Vec<MlpParams>) -> Result<Self> {
        frame.validate()?;
        if members.is_empty() {
            return Err(config("ensemble size must be >= 1"));
        }
        for m in &members {
            if m.input_dim() != frame.input_dim() || m.output_dim() != frame.output_dim() {
                return Err(structural("member dimensions do not match the model frame"));
            }
            if !m.same_shape(&members[0]) || m.activations() != members[0].activations() {
                return Err(structural("ensemble members differ in architecture"));
            }
        }
        Ok(LearnedModel { frame, members })
    }

    pub fn frame(&self) -> &ModelFrame {
        &self.frame
    }

    pub fn kind(&self) -> ModelKind {
        self.frame.kind
    }

    pub fn stats(&self) -> &DatasetStats {
        &self.frame.stats
    }

    pub fn members(&self) -> &[MlpParams] {
        &self.members
    }

    pub fn members_mut(&mut self) -> &mut [MlpParams] {
        &mut self.members
    }

    pub fn member(&self, m: usize) -> &MlpParams {
        &self.members[m]
    }

    pub fn into_members(self) -> Vec<MlpParams> {
        self.members
    }
}

impl DynamicsModel for LearnedModel {
    fn obs_dim(&self) -> usize {
        self.frame.obs_dim()
    }

    fn act_dim(&self) -> usize {
        self.frame.act_dim
    }

    fn dt(&self) -> f64 {
        self.frame.dt
    }

    fn member_count(&self) -> usize {
        self.members.len()
    }

    fn is_stochastic(&self) -> bool {
        self.frame.kind == ModelKind::Stochastic
    }

    fn step_batch(
        &self,
        member: usize,
        obs: ArrayView2<f64>,
        actions: ArrayView2<f64>,
        noise: Option<ArrayView2<f64>>,
    ) -> Array2<f64> {
        let d = self.obs_dim();
        let z = self.frame.standardize(obs);
        let input = self.frame.net_input(z.view(), actions);
        let out = self.members[member].forward_batch(input.view());
        let chol = &self.frame.stats.cholesky;
        let dt = self.frame.dt;
        let mut next = obs.to_owned();
        for (i, mut row) in next.rows_mut().into_iter().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let mut rate = out[[i, j]];
                if let Some(xi) = noise {
                    if self.frame.kind == ModelKind::Stochastic {
                        rate += self.frame.sigma.apply(out[[i, d + j]]).0 * xi[[i, j]];
                    }
                }
                *v += dt * chol[j] * rate;
            }
        }
        next
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{predict_mean, predict_sample, rollout_open_loop, RolloutMode};
    use ndarray::array;

    fn frame(kind: ModelKind) -> ModelFrame {
        ModelFrame {
            kind,
            act_dim: 1,
            dt: 0.05,
            dt_multiple: 5,
            stats: DatasetStats {
                mean: vec![0.5, -1.0],
                variance: vec![4.0, 0.25],
                cholesky: vec![2.0, 0.5],
                count: 10,
            },
            sigma: SigmaBounds::default(),
        }
    }

    fn arch() -> Architecture {
        Architecture { hidden: vec![8, 8], activation: Activation::Swish }
    }

    #[test]
    fn zero_network_is_identity() {
        let mut m = LearnedModel::init(frame(ModelKind::Deterministic), &arch(), 2, &Rng::new(1)).unwrap();
        for p in m.members_mut() {
            p.scale(0.0);
        }
        let x = [0.3, -0.7];
        assert_eq!(predict_mean(&m, 1, &x, &[0.4]).unwrap(), x.to_vec());
    }

    #[test]
    fn prediction_follows_integrator_form() {
        let m = LearnedModel::init(frame(ModelKind::Deterministic), &arch(), 1, &Rng::new(2)).unwrap();
        let x = [1.5, -0.5];
        let u = [0.2];
        let z = [(1.5 - 0.5) / 2.0, (-0.5 + 1.0) / 0.5];
        let o = m.member(0).apply(&[z[0], z[1], u[0]]).unwrap();
        let p = predict_mean(&m, 0, &x, &u).unwrap();
        assert!((p[0] - (x[0] + 0.05 * 2.0 * o[0])).abs() < 1e-15);
        assert!((p[1] - (x[1] + 0.05 * 0.5 * o[1])).abs() < 1e-15);
    }

    #[test]
    fn members_are_distinct_and_reproducible() {
        let a = LearnedModel::init(frame(ModelKind::Stochastic), &arch(), 3, &Rng::new(3)).unwrap();
        let b = LearnedModel::init(frame(ModelKind::Stochastic), &arch(), 3, &Rng::new(3)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.member(0), a.member(1));
        assert_eq!(a.member(0).output_dim(), 4);
    }

    #[test]
    fn tiny_sigma_sample_matches_mean() {
        let mut f = frame(ModelKind::Stochastic);
        f.sigma = SigmaBounds { min: 1e-9, max: 1.0, ..Default::default() };
        let mut m = LearnedModel::init(f, &arch(), 1, &Rng::new(4)).unwrap();
        let last = m.members_mut()[0].layers_mut().last_mut().unwrap();
        for j in 2..4 {
            last.weight.row_mut(j).fill(0.0);
            last.bias[j] = -1e3;
        }
        let mut rng = Rng::new(5);
        let mean = predict_mean(&m, 0, &[0.1, 0.2], &[0.0]).unwrap();
        let sample = predict_sample(&m, 0, &[0.1, 0.2], &[0.0], &mut rng).unwrap();
        for (a, b) in mean.iter().zip(&sample) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn sample_moments_match_sigma() {
        let m = LearnedModel::init(frame(ModelKind::Stochastic), &arch(), 1, &Rng::new(6)).unwrap();
        let (x, u) = ([0.4, -0.9], [0.3]);
        let z = [(0.4 - 0.5) / 2.0, (-0.9 + 1.0) / 0.5];
        let o = m.member(0).apply(&[z[0], z[1], u[0]]).unwrap();
        let mean = predict_mean(&m, 0, &x, &u).unwrap();
        let mut rng = Rng::new(7);
        let n = 10_000;
        let samples: Vec<Vec<f64>> = (0..n).map(|_| predict_sample(&m, 0, &x, &u, &mut rng).unwrap()).collect();
        for j in 0..2 {
            let sd = 0.05 * [2.0, 0.5][j] * m.frame().sigma.apply(o[2 + j]).0;
            let mu = samples.iter().map(|s| s[j]).sum::<f64>() / n as f64;
            let var = samples.iter().map(|s| (s[j] - mu).powi(2)).sum::<f64>() / n as f64;
            assert!((mu - mean[j]).abs() < 4.0 * sd / 100.0);
            assert!((var.sqrt() / sd - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn rollout_recomposes_predictions() {
        for kind in [ModelKind::Deterministic, ModelKind::Stochastic] {
            let m = LearnedModel::init(frame(kind), &arch(), 2, &Rng::new(8)).unwrap();
            let actions = array![[0.1], [-0.4], [0.9], [0.0]];
            let mode = if kind == ModelKind::Stochastic { RolloutMode::Sample } else { RolloutMode::Mean };
            let r = rollout_open_loop(&m, 1, &[0.2, 0.3], actions.view(), mode, &mut Rng::new(9)).unwrap();
            let mut rng = Rng::new(9);
            let mut x = vec![0.2, 0.3];
            for t in 0..4 {
                x = predict_sample(&m, 1, &x, &[actions[[t, 0]]], &mut rng).unwrap();
                assert_eq!(r.trajectory.row(t + 1).to_vec(), x);
            }
        }
    }

    #[test]
    fn rejects_mismatched_members() {
        let f = frame(ModelKind::Deterministic);
        let a = MlpParams::glorot(&[3, 4, 2], Activation::Relu, &mut Rng::new(1)).unwrap();
        let b = MlpParams::glorot(&[3, 5, 2], Activation::Relu, &mut Rng::new(1)).unwrap();
        assert!(LearnedModel::from_members(f.clone(), vec![a.clone(), b]).is_err());
        let wrong = MlpParams::glorot(&[4, 4, 2], Activation::Relu, &mut Rng::new(1)).unwrap();
        assert!(LearnedModel::from_members(f.clone(), vec![wrong]).is_err());
        assert!(LearnedModel::from_members(f, vec![a]).is_ok());
    }
}
