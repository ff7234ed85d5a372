use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use dynabench::dataset::load_dataset;
use dynabench::eval::{normalized_reward, planner_episodes};
use dynabench::harness::{
    emit_curves, load_or_collect, model_path, parse_config_str, parse_values, run_experiment, run_grid,
    train_experiment, ExperimentConfig, RunOptions,
};
use dynabench::models::{load_model, DynamicsModel, TrueModel};
use dynabench::numerics::Rng;

#[derive(Parser)]
#[command(name = "dynabench", version, about = "Learn dynamics models and benchmark them with CEM-MPC")]
struct Cli {
    /// Output directory (default: $DYNABENCH_OUT, the config's "out", or ./runs).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Recompute results that already exist.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Collect (or load) the config's dataset.
    Collect {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train the config's model for one seed.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run closed-loop planner episodes with a trained or true model.
    Plan {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Model checkpoint; defaults to the harness checkpoint for the seed.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Full run (dataset, training, evaluation) for the config's seeds.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Run only this seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Sweep one config axis over a list of values.
    Grid {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long)]
        values: String,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Learning-curve CSV and SVG plots from the records under the output directory.
    Plot,
    /// Print the fully resolved config.
    Show {
        #[arg(long)]
        config: PathBuf,
    },
}

fn load_config(path: &Path) -> Result<(serde_json::Value, ExperimentConfig)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let raw: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let cfg = parse_config_str(&text).with_context(|| format!("in config {}", path.display()))?;
    Ok((raw, cfg))
}

fn out_dir(cli: &Cli, cfg: Option<&ExperimentConfig>) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| std::env::var_os("DYNABENCH_OUT").map(PathBuf::from))
        .or_else(|| cfg.and_then(|c| c.out.clone()).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn plan(cfg: &ExperimentConfig, seed: u64, model: &dyn DynamicsModel) -> Result<()> {
    let outcomes = planner_episodes(
        &cfg.planner,
        &cfg.env_spec()?,
        model,
        &cfg.reward()?,
        cfg.episode_len,
        cfg.eval.episodes_per_seed,
        &Rng::new(seed).fork("eval"),
    )?;
    for (i, o) in outcomes.iter().enumerate() {
        println!("episode {i}: normalized reward {:.1}, {} plans", normalized_reward(&o.episode), o.plans);
        if let Some(msg) = &o.aborted {
            println!("  aborted: {msg}");
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match &cli.cmd {
        Cmd::Collect { config } => {
            let (_, cfg) = load_config(config)?;
            let out = out_dir(&cli, Some(&cfg));
            let data = load_or_collect(&cfg, &out)?;
            let path = out.join("datasets").join(format!("{}.dynd", cfg.dataset_hash()));
            load_dataset(&path)?;
            println!(
                "{}: {} episodes, {} transitions, mean episode reward {:.2}",
                path.display(),
                data.episodes.len(),
                data.transitions(),
                data.mean_episode_reward()
            );
        }
        Cmd::Train { config, seed } => {
            let (_, cfg) = load_config(config)?;
            let opts = RunOptions { out: out_dir(&cli, Some(&cfg)), force: cli.force };
            let (_, path) = train_experiment(&cfg, *seed, &opts)?;
            println!("{}", path.display());
        }
        Cmd::Plan { config, seed, model } => {
            let (_, cfg) = load_config(config)?;
            if cfg.model.true_model && model.is_none() {
                plan(&cfg, *seed, &TrueModel::new(cfg.env_spec()?, cfg.model_dt())?)?;
            } else {
                let opts = RunOptions { out: out_dir(&cli, Some(&cfg)), force: false };
                let path = model.clone().unwrap_or_else(|| model_path(&cfg, *seed, &opts));
                let m = load_model(&path).with_context(|| format!("loading {}", path.display()))?;
                plan(&cfg, *seed, &m)?;
            }
        }
        Cmd::Eval { config, seed } => {
            let (_, cfg) = load_config(config)?;
            let opts = RunOptions { out: out_dir(&cli, Some(&cfg)), force: cli.force };
            let seeds = seed.map(|s| vec![s]).unwrap_or_else(|| cfg.eval.seeds.clone());
            for s in seeds {
                let r = run_experiment(&cfg, s, &opts)?;
                println!("{}", serde_json::to_string(&r)?);
            }
        }
        Cmd::Grid { config, axis, values, workers } => {
            let (raw, cfg) = load_config(config)?;
            let values = parse_values(values);
            if values.is_empty() {
                bail!("--values needs at least one value");
            }
            let opts = RunOptions { out: out_dir(&cli, Some(&cfg)), force: cli.force };
            let grid = run_grid(&raw, axis, &values, &opts, *workers)?;
            print!("{}", std::fs::read_to_string(&grid.table_path)?);
        }
        Cmd::Plot => {
            let out = out_dir(&cli, None);
            let summary = emit_curves(&out)?;
            match &summary.csv {
                Some(csv) => println!("{} ({} rows)", csv.display(), summary.rows),
                None => println!("no learning curves recorded under {}", out.display()),
            }
            for s in summary.svgs {
                println!("{}", s.display());
            }
        }
        Cmd::Show { config } => {
            let (_, cfg) = load_config(config)?;
            println!("{}", serde_json::to_string_pretty(&cfg)?);
            println!("hash {}", cfg.hash());
        }
    }
    Ok(())
}
