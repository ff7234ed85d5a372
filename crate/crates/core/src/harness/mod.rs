//! Experiment configs, resumable runs and sweeps, and result plots.

mod config;
mod grid;
mod plot;
mod run;

pub use config::{
    defaults_for, merge, parse_config, parse_config_str, resolve, DatasetSpec, EvalSpec, ExperimentConfig, ModelSpec,
};
pub use grid::{axis_path, cell_config, grid_table, parse_values, run_grid, GridCell, GridResult};
pub use plot::{emit_curves, read_curve, PlotSummary};
pub use run::{
    find_record, load_or_collect, model_path, read_records, run_experiment, run_seeds, train_experiment, ResultRecord,
    RunOptions,
};
