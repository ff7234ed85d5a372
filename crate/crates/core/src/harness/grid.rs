use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde_json::Value;

use super::{parse_config, resolve, run_experiment, ExperimentConfig, ResultRecord, RunOptions};
use crate::error::{config, Error, Result};
use crate::eval::Spread;

/// Config path an axis name refers to; dotted paths pass through.
pub fn axis_path(axis: &str) -> String {
    match axis {
        "ensemble_size" => "model.ensemble_size",
        "multistep_horizon" | "horizon" => "train.horizon",
        "input_noise" => "train.input_noise",
        "dt_multiple" | "time_step" => "model.dt_multiple",
        "replan_interval" => "planner.replan_interval",
        "schedule" => "train.schedule",
        "task" => "task",
        "quality" => "dataset.quality",
        "model_kind" => "model.kind",
        other => other,
    }
    .to_string()
}

fn set_path(v: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut cur = v;
    let parts: Vec<&str> = path.split('.').collect();
    for p in &parts[..parts.len() - 1] {
        let obj = cur.as_object_mut().ok_or_else(|| config(format!("axis path '{path}' crosses a non-object")))?;
        cur = obj.entry(p.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    let obj = cur.as_object_mut().ok_or_else(|| config(format!("axis path '{path}' crosses a non-object")))?;
    obj.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Config for one grid cell. A time-step change rounds the control-point
/// spacing up to a whole number of model steps.
pub fn cell_config(base: &Value, axis: &str, value: &Value) -> Result<ExperimentConfig> {
    let mut user = base.clone();
    let path = axis_path(axis);
    set_path(&mut user, &path, value.clone())?;
    if path == "model.dt_multiple" {
        let merged = resolve(&user)?;
        let k = value.as_u64().ok_or_else(|| config("dt_multiple values must be integers"))? as f64;
        let env: crate::envs::EnvKind = merged["env"].as_str().unwrap_or_default().parse()?;
        let model_dt = crate::envs::EnvSpec::new(env).dt_base * k;
        let spacing = merged["planner"]["control_spacing"].as_f64().unwrap_or(model_dt);
        let rounded = (spacing / model_dt - 1e-9).ceil().max(1.0) * model_dt;
        set_path(&mut user, "planner.control_spacing", rounded.into())?;
    }
    parse_config(&user)
}

/// Parses a comma-separated value list; each entry is read as JSON when
/// possible and as a string otherwise.
pub fn parse_values(list: &str) -> Vec<Value> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| serde_json::from_str(s).unwrap_or_else(|_| Value::String(s.to_string())))
        .collect()
}

#[derive(Clone, Debug)]
pub struct GridCell {
    pub value: Value,
    pub config_hash: String,
    pub records: Vec<ResultRecord>,
}

impl GridCell {
    fn ok_records(&self) -> impl Iterator<Item = &ResultRecord> {
        self.records.iter().filter(|r| r.failure.is_none())
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.ok_records().map(|r| r.normalized_reward).collect()
    }

    pub fn nmse(&self) -> Vec<f64> {
        self.ok_records().filter_map(|r| r.kstep_nmse).collect()
    }
}

#[derive(Clone, Debug)]
pub struct GridResult {
    pub axis: String,
    pub cells: Vec<GridCell>,
    pub table_path: PathBuf,
}

fn fmt_spread(out: &mut String, values: &[f64]) {
    if values.is_empty() {
        out.push_str(",,,");
    } else {
        let s = Spread::of(values);
        let _ = write!(out, ",{:e},{:e},{:e}", s.mean, s.p20, s.p80);
    }
}

/// Aggregated table: one row per axis value.
pub fn grid_table(axis: &str, cells: &[GridCell]) -> String {
    let mut out = String::from(
        "axis,value,config_hash,runs,failures,reward_mean,reward_p20,reward_p80,nmse_mean,nmse_p20,nmse_p80\n",
    );
    for c in cells {
        let value = match &c.value {
            Value::String(s) => s.clone(),
            v => v.to_string(),
        };
        let failures = c.records.len() - c.ok_records().count();
        let _ = write!(out, "{axis},{value},{},{},{failures}", c.config_hash, c.records.len());
        fmt_spread(&mut out, &c.rewards());
        fmt_spread(&mut out, &c.nmse());
        out.push('\n');
    }
    out
}

/// Runs every (value, seed) cell of a one-axis sweep with up to `workers`
/// concurrent runs. Finished cells are read back from the records file, so an
/// interrupted grid resumes where it stopped.
pub fn run_grid(base: &Value, axis: &str, values: &[Value], opts: &RunOptions, workers: usize) -> Result<GridResult> {
    if values.is_empty() {
        return Err(config("grid needs at least one axis value"));
    }
    let configs: Vec<ExperimentConfig> = values.iter().map(|v| cell_config(base, axis, v)).collect::<Result<_>>()?;
    let jobs: Vec<(usize, u64)> =
        configs.iter().enumerate().flat_map(|(i, c)| c.eval.seeds.iter().map(move |&s| (i, s))).collect();
    let results: Mutex<Vec<Option<Result<ResultRecord>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers.max(1).min(jobs.len()) {
            scope.spawn(|| loop {
                let j = next.fetch_add(1, Ordering::SeqCst);
                if j >= jobs.len() {
                    break;
                }
                let (i, seed) = jobs[j];
                let r = run_experiment(&configs[i], seed, opts);
                results.lock().unwrap_or_else(|e| e.into_inner())[j] = Some(r);
            });
        }
    });
    let results = results.into_inner().unwrap_or_else(|e| e.into_inner());
    let mut cells: Vec<GridCell> = configs
        .iter()
        .zip(values)
        .map(|(c, v)| GridCell { value: v.clone(), config_hash: c.hash(), records: Vec::new() })
        .collect();
    for ((i, _), r) in jobs.iter().zip(results) {
        let r = r.ok_or_else(|| Error::Structural("grid job did not run".into()))??;
        cells[*i].records.push(r);
    }
    fs::create_dir_all(&opts.out)?;
    let slug: String = axis.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect();
    let table_path = opts.out.join(format!("grid_{slug}.csv"));
    fs::write(&table_path, grid_table(axis, &cells))?;
    Ok(GridResult { axis: axis.to_string(), cells, table_path })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn axis_values_land_in_config() {
        let base = json!({"env": "pendulum"});
        let c = cell_config(&base, "ensemble_size", &json!(3)).unwrap();
        assert_eq!(c.model.ensemble_size, 3);
        let c = cell_config(&base, "schedule", &json!("linear")).unwrap();
        assert_eq!(c.train.schedule, crate::training::Schedule::Linear);
        let c = cell_config(&base, "planner.particles", &json!(10)).unwrap();
        assert_eq!(c.planner.particles, 10);
        assert!(cell_config(&base, "ensemble_size", &json!("many")).is_err());
    }

    #[test]
    fn time_step_rounds_spacing() {
        let c = cell_config(&json!({"env": "cartpole"}), "dt_multiple", &json!(3)).unwrap();
        assert!((c.planner.control_spacing - 0.03).abs() < 1e-12);
        let c = cell_config(&json!({"env": "cartpole"}), "dt_multiple", &json!(1)).unwrap();
        assert!((c.planner.control_spacing - 0.02).abs() < 1e-12);
    }

    #[test]
    fn value_lists() {
        assert_eq!(parse_values("1, 5,0.5"), vec![json!(1), json!(5), json!(0.5)]);
        assert_eq!(parse_values("none,linear"), vec![json!("none"), json!("linear")]);
    }
}
