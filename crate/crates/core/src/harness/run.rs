use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::ExperimentConfig;
use crate::dataset::{collect_dataset, compute_stats, load_dataset, save_dataset, split, Dataset, DatasetStats};
use crate::error::Result;
use crate::eval::{
    collect_windows, discrepancy_stats, divergence_rate, duration_steps, normalized_reward, planner_episodes,
    windows_nmse, DiscrepancySummary, EvalCheckpoint, PlannerProbe,
};
use crate::models::{load_model, save_model, DynamicsModel, LearnedModel, ModelFrame, TrueModel};
use crate::numerics::Rng;
use crate::planner::DiscrepancyLog;
use crate::training::{train, write_curves_csv, MemberFailure};

static RECORDS_LOCK: Mutex<()> = Mutex::new(());
static DATASET_LOCK: Mutex<()> = Mutex::new(());

/// Outcome of one (config, seed) run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub config_hash: String,
    pub seed: u64,
    /// Mean normalized reward over the evaluation episodes.
    pub normalized_reward: f64,
    pub episode_rewards: Vec<f64>,
    pub kstep_nmse: Option<f64>,
    pub divergence_rate: Option<f64>,
    pub discrepancy: Option<DiscrepancySummary>,
    /// Per-step discrepancies of every evaluation episode, in order.
    pub discrepancy_series: Vec<f64>,
    /// `(update, horizon)` wherever the training horizon changed.
    pub horizon_trace: Vec<(usize, usize)>,
    pub member_failures: Vec<MemberFailure>,
    /// Set when the run could not produce metrics.
    pub failure: Option<String>,
    pub curve_path: Option<String>,
    pub model_path: Option<String>,
    pub wall_clock: f64,
}

impl ResultRecord {
    fn empty(cfg_hash: String, seed: u64) -> Self {
        ResultRecord {
            config_hash: cfg_hash,
            seed,
            normalized_reward: 0.0,
            episode_rewards: Vec::new(),
            kstep_nmse: None,
            divergence_rate: None,
            discrepancy: None,
            discrepancy_series: Vec::new(),
            horizon_trace: Vec::new(),
            member_failures: Vec::new(),
            failure: None,
            curve_path: None,
            model_path: None,
            wall_clock: 0.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub out: PathBuf,
    /// Recompute even when a record or checkpoint exists.
    pub force: bool,
}

impl RunOptions {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        RunOptions { out: out.into(), force: false }
    }

    pub fn records_path(&self) -> PathBuf {
        self.out.join("records.jsonl")
    }
}

/// Every parseable record in a `records.jsonl` file; malformed lines are
/// skipped with a warning.
pub fn read_records(path: &Path) -> Result<Vec<ResultRecord>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(r) => out.push(r),
            Err(e) => log::warn!("{}:{}: skipping malformed record: {e}", path.display(), i + 1),
        }
    }
    Ok(out)
}

pub fn find_record(path: &Path, hash: &str, seed: u64) -> Result<Option<ResultRecord>> {
    Ok(read_records(path)?.into_iter().rev().find(|r| r.config_hash == hash && r.seed == seed))
}

fn append_record(path: &Path, record: &ResultRecord) -> Result<()> {
    let mut line = serde_json::to_string(record)?;
    line.push('\n');
    let _guard = RECORDS_LOCK.lock().unwrap_or_else(|e| e.into_inner());
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(line.as_bytes())?;
    Ok(())
}

/// Loads the config's dataset from the cache under `out`, collecting and
/// saving it first if needed.
pub fn load_or_collect(cfg: &ExperimentConfig, out: &Path) -> Result<Dataset> {
    let dir = out.join("datasets");
    let path = dir.join(format!("{}.dynd", cfg.dataset_hash()));
    let _guard = DATASET_LOCK.lock().unwrap_or_else(|e| e.into_inner());
    if path.exists() {
        match load_dataset(&path) {
            Ok(d) => return Ok(d),
            Err(e) => log::warn!("recollecting unreadable dataset {}: {e}", path.display()),
        }
    }
    let env = cfg.env_spec()?;
    let reward = cfg.reward()?;
    let collectors = cfg.dataset.resolved_collectors()?;
    let data = collect_dataset(&env, &reward, &collectors, cfg.episode_len, &Rng::new(cfg.dataset.seed))?;
    fs::create_dir_all(&dir)?;
    save_dataset(&data, &path)?;
    Ok(data)
}

fn horizon_changes(trace: &[usize]) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = Vec::new();
    for (u, &h) in trace.iter().enumerate() {
        if out.last().is_none_or(|&(_, last)| last != h) {
            out.push((u, h));
        }
    }
    out
}

struct Trained {
    model: LearnedModel,
    horizon_trace: Vec<(usize, usize)>,
    member_failures: Vec<MemberFailure>,
    curve_path: Option<String>,
}

fn train_or_load(
    cfg: &ExperimentConfig,
    seed: u64,
    opts: &RunOptions,
    train_data: &Dataset,
    test_data: &Dataset,
    model_path: &Path,
) -> Result<std::result::Result<Trained, String>> {
    if model_path.exists() && !opts.force {
        return Ok(match load_model(model_path) {
            Ok(model) => Ok(Trained { model, horizon_trace: Vec::new(), member_failures: Vec::new(), curve_path: None }),
            Err(e) => Err(format!("checkpoint {} unreadable: {e}", model_path.display())),
        });
    }
    let env = cfg.env_spec()?;
    let reward = cfg.reward()?;
    let stats = compute_stats(train_data)?;
    let frame = ModelFrame {
        kind: cfg.model.kind,
        act_dim: env.act_dim(),
        dt: cfg.model_dt(),
        dt_multiple: cfg.model.dt_multiple,
        stats: stats.clone(),
        sigma: cfg.model.sigma,
    };
    let root = Rng::new(seed);
    let model = LearnedModel::init(frame, &cfg.model.architecture(), cfg.model.ensemble_size, &root.fork("model"))?;
    let steps = duration_steps(cfg.eval.nmse_duration, cfg.model_dt())?;
    let windows = collect_windows(
        &test_data.episodes,
        steps,
        cfg.model.dt_multiple as usize,
        cfg.eval.checkpoint_stride,
        cfg.train.coarse_action,
    )?;
    let hooks = EvalCheckpoint {
        windows,
        stats,
        planner: cfg.eval.checkpoint_planner.then(|| PlannerProbe {
            planner: cfg.planner.clone(),
            env: &env,
            reward: &reward,
            episode_len: cfg.episode_len,
            rng: root.fork("checkpoint-planner"),
        }),
    };
    let report = train(model, train_data, &cfg.train, &root.fork("train"), &hooks)?;
    fs::create_dir_all(model_path.parent().expect("model dir"))?;
    save_model(&report.model, model_path)?;
    let curve = opts.out.join("curves").join(format!("{}-s{seed}.csv", cfg.hash()));
    fs::create_dir_all(curve.parent().expect("curve dir"))?;
    write_curves_csv(&report.curves, &curve)?;
    Ok(Ok(Trained {
        model: report.model,
        horizon_trace: horizon_changes(&report.horizon_trace),
        member_failures: report.failures,
        curve_path: Some(curve.display().to_string()),
    }))
}

fn evaluate<M: DynamicsModel + ?Sized>(
    cfg: &ExperimentConfig,
    seed: u64,
    model: &M,
    test_data: Option<(&Dataset, &DatasetStats)>,
    record: &mut ResultRecord,
) -> Result<()> {
    let env = cfg.env_spec()?;
    let reward = cfg.reward()?;
    if let Some((test, stats)) = test_data {
        let k = cfg.model.dt_multiple as usize;
        let steps = duration_steps(cfg.eval.nmse_duration, model.dt())?;
        let w = collect_windows(&test.episodes, steps, k, cfg.eval.nmse_stride, cfg.train.coarse_action)?;
        record.kstep_nmse = Some(windows_nmse(model, &w, stats, cfg.eval.pooling));
        let div_steps = duration_steps(cfg.eval.divergence_duration, model.dt())?;
        let dw = collect_windows(&test.episodes, div_steps, k, cfg.eval.nmse_stride, cfg.train.coarse_action)?;
        record.divergence_rate = Some(divergence_rate(model, &dw));
    }
    let outcomes = planner_episodes(
        &cfg.planner,
        &env,
        model,
        &reward,
        cfg.episode_len,
        cfg.eval.episodes_per_seed,
        &Rng::new(seed).fork("eval"),
    )?;
    if let Some(msg) = outcomes.iter().find_map(|o| o.aborted.clone()) {
        log::warn!("evaluation episode aborted: {msg}");
    }
    record.episode_rewards = outcomes.iter().map(|o| normalized_reward(&o.episode)).collect();
    record.normalized_reward = record.episode_rewards.iter().sum::<f64>() / outcomes.len() as f64;
    let logs: Vec<&DiscrepancyLog> = outcomes.iter().map(|o| &o.discrepancy).collect();
    record.discrepancy = discrepancy_stats(&logs).ok();
    record.discrepancy_series = logs.iter().flat_map(|l| l.per_step()).collect();
    Ok(())
}

/// Runs one (config, seed): dataset, training, evaluation. Returns the cached
/// record when one exists for the same config hash and seed. Failures that
/// leave no metrics (an unreadable checkpoint, every member diverging) come
/// back as records with `failure` set rather than as errors.
pub fn run_experiment(cfg: &ExperimentConfig, seed: u64, opts: &RunOptions) -> Result<ResultRecord> {
    cfg.validate()?;
    let hash = cfg.hash();
    let records = opts.records_path();
    if !opts.force {
        if let Some(r) = find_record(&records, &hash, seed)? {
            return Ok(r);
        }
    }
    fs::create_dir_all(&opts.out)?;
    let start = Instant::now();
    let mut record = ResultRecord::empty(hash.clone(), seed);
    if cfg.model.true_model {
        let model = TrueModel::new(cfg.env_spec()?, cfg.model_dt())?;
        evaluate(cfg, seed, &model, None, &mut record)?;
    } else {
        let data = load_or_collect(cfg, &opts.out)?;
        let (train_data, test_data) = split(&data, cfg.dataset.test_fraction, &mut Rng::new(cfg.dataset.seed).fork("split"))?;
        let model_path = model_path(cfg, seed, opts);
        match train_or_load(cfg, seed, opts, &train_data, &test_data, &model_path)? {
            Ok(t) => {
                record.horizon_trace = t.horizon_trace;
                record.member_failures = t.member_failures;
                record.curve_path = t.curve_path;
                record.model_path = Some(model_path.display().to_string());
                if record.member_failures.len() == t.model.members().len() {
                    record.failure = Some("every ensemble member diverged during training".into());
                } else {
                    evaluate(cfg, seed, &t.model, Some((&test_data, t.model.stats())), &mut record)?;
                }
            }
            Err(reason) => record.failure = Some(reason),
        }
    }
    record.wall_clock = start.elapsed().as_secs_f64();
    if let Some(f) = &record.failure {
        log::warn!("run {hash} seed {seed} failed: {f}");
    }
    append_record(&records, &record)?;
    Ok(record)
}

/// Checkpoint location of a (config, seed) model.
pub fn model_path(cfg: &ExperimentConfig, seed: u64, opts: &RunOptions) -> PathBuf {
    opts.out.join("models").join(format!("{}-s{seed}.dynm", cfg.hash()))
}

/// Collects (or loads) the dataset and trains (or loads) the model of one
/// (config, seed) without evaluating it.
pub fn train_experiment(cfg: &ExperimentConfig, seed: u64, opts: &RunOptions) -> Result<(LearnedModel, PathBuf)> {
    cfg.validate()?;
    if cfg.model.true_model {
        return Err(crate::error::config("config plans with the true model; nothing to train"));
    }
    let data = load_or_collect(cfg, &opts.out)?;
    let (train_data, test_data) = split(&data, cfg.dataset.test_fraction, &mut Rng::new(cfg.dataset.seed).fork("split"))?;
    let path = model_path(cfg, seed, opts);
    match train_or_load(cfg, seed, opts, &train_data, &test_data, &path)? {
        Ok(t) => Ok((t.model, path)),
        Err(reason) => Err(crate::error::Error::Format(reason)),
    }
}

/// Runs every seed of the config in order.
pub fn run_seeds(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Vec<ResultRecord>> {
    cfg.eval.seeds.iter().map(|&s| run_experiment(cfg, s, opts)).collect()
}
