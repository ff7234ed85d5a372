use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::dataset::{quality_collectors, CollectorSpec};
use crate::envs::{EnvKind, EnvSpec, RewardFn};
use crate::error::{config, Result};
use crate::eval::NmsePooling;
use crate::models::{Architecture, ModelKind, SigmaBounds};
use crate::numerics::Activation;
use crate::planner::PlannerConfig;
use crate::training::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    /// Explicit collector mix; when empty the mix comes from `quality`.
    pub collectors: Vec<CollectorSpec>,
    /// Quality level `0..=4` (see [`quality_collectors`]).
    pub quality: usize,
    pub episodes: usize,
    pub seed: u64,
    pub test_fraction: f64,
}

impl DatasetSpec {
    pub fn resolved_collectors(&self) -> Result<Vec<CollectorSpec>> {
        if self.collectors.is_empty() {
            quality_collectors(self.quality, self.episodes)
        } else {
            Ok(self.collectors.clone())
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Plan with the simulator instead of a learned model.
    pub true_model: bool,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Model step in base steps.
    pub dt_multiple: u32,
    pub ensemble_size: usize,
    pub sigma: SigmaBounds,
}

impl ModelSpec {
    pub fn architecture(&self) -> Architecture {
        Architecture { hidden: self.hidden.clone(), activation: self.activation }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSpec {
    pub seeds: Vec<u64>,
    pub episodes_per_seed: usize,
    /// Open-loop prediction span, seconds.
    pub nmse_duration: f64,
    /// Window-start stride of the final NMSE.
    pub nmse_stride: usize,
    /// Window-start stride of the per-checkpoint NMSE.
    pub checkpoint_stride: usize,
    /// Run one planner episode per checkpoint.
    pub checkpoint_planner: bool,
    pub pooling: NmsePooling,
    /// Span of the divergence check, seconds.
    pub divergence_duration: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvKind,
    pub task: String,
    pub constants: BTreeMap<String, f64>,
    pub episode_len: usize,
    pub dataset: DatasetSpec,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub planner: PlannerConfig,
    pub eval: EvalSpec,
    /// Output directory; not part of the config hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
}

/// Full default config for an environment and model kind.
pub fn defaults_for(env: EnvKind, kind: ModelKind) -> Value {
    let (hidden, activation, lr, batch, loss, horizon, noise) = match (env, kind) {
        (EnvKind::CartpoleSwingup, ModelKind::Deterministic) => (vec![128, 128], "swish", 5e-4, 256, "nmse_multi", 20, 0.0),
        (EnvKind::CartpoleSwingup, ModelKind::Stochastic) => (vec![256, 256, 256], "relu", 1e-4, 64, "nll1", 1, 1e-3),
        (_, ModelKind::Deterministic) => (vec![64, 64], "swish", 1e-3, 64, "nmse_multi", 5, 0.0),
        (_, ModelKind::Stochastic) => (vec![64, 64], "relu", 1e-3, 64, "nll1", 1, 1e-3),
    };
    let task = match env {
        EnvKind::Reacher2 => "reach",
        _ => "swingup",
    };
    let train = TrainConfig {
        loss: serde_json::from_value(json!(loss)).expect("loss name"),
        horizon,
        input_noise: noise,
        batch_size: batch,
        learning_rate: lr,
        ..TrainConfig::default()
    };
    json!({
        "env": env.name(),
        "task": task,
        "constants": {},
        "episode_len": 1000,
        "dataset": {
            "collectors": [],
            "quality": 2,
            "episodes": 100,
            "seed": 0,
            "test_fraction": 0.2,
        },
        "model": {
            "kind": kind,
            "true_model": false,
            "hidden": hidden,
            "activation": activation,
            "dt_multiple": 1,
            "ensemble_size": 5,
            "sigma": SigmaBounds::default(),
        },
        "train": train,
        "planner": PlannerConfig::for_env(env),
        "eval": {
            "seeds": [0, 1, 2, 3, 4],
            "episodes_per_seed": 1,
            "nmse_duration": 0.5,
            "nmse_stride": 1,
            "checkpoint_stride": 10,
            "checkpoint_planner": false,
            "pooling": NmsePooling::MemberMean,
            "divergence_duration": 1.0,
        },
    })
}

/// Recursively overlays `patch` onto `base`; objects merge, everything else
/// replaces.
pub fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

/// User JSON merged onto the defaults for its environment and model kind.
pub fn resolve(user: &Value) -> Result<Value> {
    if !user.is_object() {
        return Err(config("config must be a JSON object"));
    }
    let env: EnvKind = user
        .get("env")
        .and_then(Value::as_str)
        .ok_or_else(|| config("config needs an \"env\" name"))?
        .parse()?;
    let kind = match user.pointer("/model/kind") {
        Some(k) => serde_json::from_value(k.clone()).map_err(|e| config(format!("model.kind: {e}")))?,
        None => ModelKind::Deterministic,
    };
    let mut base = defaults_for(env, kind);
    merge(&mut base, user);
    base["env"] = json!(env.name());
    Ok(base)
}

/// Parses and validates a user config.
pub fn parse_config(user: &Value) -> Result<ExperimentConfig> {
    let merged = resolve(user)?;
    let cfg: ExperimentConfig =
        serde_path_to_error::deserialize(&merged).map_err(|e| config(format!("{}: {}", e.path(), e.inner())))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let v: Value = serde_json::from_str(text).map_err(|e| config(format!("invalid JSON: {e}")))?;
    parse_config(&v)
}

fn sha_hex(v: &Value) -> String {
    let digest = Sha256::digest(v.to_string().as_bytes());
    hex::encode(&digest[..8])
}

impl ExperimentConfig {
    pub fn env_spec(&self) -> Result<EnvSpec> {
        let mut env = EnvSpec::new(self.env);
        for (k, v) in &self.constants {
            env.set_constant(k, *v)?;
        }
        env.episode_len = self.episode_len;
        Ok(env)
    }

    pub fn reward(&self) -> Result<RewardFn> {
        RewardFn::parse_task(self.env, &self.task)
    }

    /// Model step, seconds.
    pub fn model_dt(&self) -> f64 {
        EnvSpec::new(self.env).dt_base * self.model.dt_multiple as f64
    }

    pub fn validate(&self) -> Result<()> {
        self.env_spec()?;
        self.reward()?;
        if self.episode_len == 0 {
            return Err(config("episode_len must be >= 1"));
        }
        if self.model.dt_multiple == 0 {
            return Err(config("model.dt_multiple must be >= 1"));
        }
        if !self.model.true_model {
            if self.model.ensemble_size == 0 {
                return Err(config("model.ensemble_size must be >= 1"));
            }
            if !self.model.sigma.is_valid() {
                return Err(config("model.sigma bounds must satisfy 0 < min < max"));
            }
            self.train.validate(self.model.kind)?;
            self.dataset.resolved_collectors()?;
            if !(self.dataset.test_fraction > 0.0 && self.dataset.test_fraction < 1.0) {
                return Err(config("dataset.test_fraction must lie in (0, 1)"));
            }
        }
        self.planner.validate(self.model_dt())?;
        if self.eval.seeds.is_empty() || self.eval.episodes_per_seed == 0 {
            return Err(config("eval needs at least one seed and one episode"));
        }
        if self.eval.nmse_stride == 0 || self.eval.checkpoint_stride == 0 {
            return Err(config("eval strides must be >= 1"));
        }
        Ok(())
    }

    /// Hash of every setting that affects a per-seed result.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        let obj = v.as_object_mut().expect("object");
        obj.remove("out");
        obj["eval"]["seeds"] = json!([]);
        sha_hex(&v)
    }

    /// Hash of the settings that determine the dataset.
    pub fn dataset_hash(&self) -> String {
        sha_hex(&json!({
            "env": self.env,
            "task": self.task,
            "constants": self.constants,
            "episode_len": self.episode_len,
            "dataset": self.dataset,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::training::LossKind;

    #[test]
    fn cartpole_defaults() {
        let c = parse_config(&json!({"env": "cartpole_swingup"})).unwrap();
        assert_eq!(c.model.ensemble_size, 5);
        assert_eq!(c.train.horizon, 20);
        assert_eq!(c.train.loss, LossKind::NmseMulti);
        assert_eq!(c.planner.particles, 200);
        assert_eq!(c.planner.iterations, 1);
        assert_eq!(c.planner.sigma, 0.5);
        assert_eq!(c.planner.beta, 2.0);
        assert_eq!(c.model.hidden, vec![128, 128]);
        let s = parse_config(&json!({"env": "cartpole", "model": {"kind": "stochastic"}})).unwrap();
        assert_eq!(s.model.hidden, vec![256, 256, 256]);
        assert_eq!((s.train.batch_size, s.train.input_noise), (64, 1e-3));
    }

    #[test]
    fn errors_name_the_field() {
        let e = parse_config(&json!({"env": "pendulum", "planner": {"particels": 3}})).unwrap_err();
        assert!(matches!(&e, Error::Config(m) if m.contains("planner") && m.contains("particels")), "{e}");
        let e = parse_config(&json!({"env": "pendulum", "train": {"horizon": "five"}})).unwrap_err();
        assert!(matches!(&e, Error::Config(m) if m.contains("train.horizon")), "{e}");
        assert!(parse_config(&json!({"env": "pendulum", "constants": {"mass": -0.0, "nope": 1.0}})).is_err());
        assert!(parse_config(&json!({"env": "mars"})).is_err());
    }

    #[test]
    fn spacing_must_match_model_step() {
        let e = parse_config(&json!({"env": "cartpole", "model": {"dt_multiple": 3}})).unwrap_err();
        assert!(matches!(e, Error::Config(_)));
        assert!(parse_config(&json!({"env": "cartpole", "model": {"dt_multiple": 2}})).is_ok());
    }

    #[test]
    fn hash_ignores_output_and_seeds() {
        let a = parse_config(&json!({"env": "pendulum"})).unwrap();
        let b = parse_config(&json!({"env": "pendulum", "out": "/tmp/x", "eval": {"seeds": [9]}})).unwrap();
        let c = parse_config(&json!({"env": "pendulum", "train": {"updates": 7}})).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.dataset_hash(), c.dataset_hash());
    }

    #[test]
    fn round_trip_is_stable() {
        let a = parse_config(&json!({"env": "reacher2", "model": {"kind": "stoch"}})).unwrap();
        let text = serde_json::to_string(&a).unwrap();
        let b = parse_config_str(&text).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.hash(), b.hash());
    }
}
