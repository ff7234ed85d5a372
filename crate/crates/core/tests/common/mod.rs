#![allow(dead_code)]

use dynabench::dataset::{DatasetStats, SubTrajectoryBatch};
use dynabench::models::{ModelFrame, ModelKind, SigmaBounds};
use dynabench::numerics::{Activation, MlpParams, Rng};
use ndarray::{Array2, Array3};

pub fn stats(rng: &mut Rng, d: usize) -> DatasetStats {
    let mean: Vec<f64> = (0..d).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
    let cholesky: Vec<f64> = (0..d).map(|_| rng.uniform_range(0.5, 2.0)).collect();
    DatasetStats { mean, variance: cholesky.iter().map(|c| c * c).collect(), cholesky, count: 100 }
}

pub fn frame(kind: ModelKind, stats: DatasetStats, act_dim: usize, dt: f64) -> ModelFrame {
    ModelFrame { kind, act_dim, dt, dt_multiple: 1, stats, sigma: SigmaBounds::default() }
}

pub fn batch(rng: &mut Rng, b: usize, h: usize, d: usize, a: usize, dt: f64) -> SubTrajectoryBatch {
    SubTrajectoryBatch {
        start: Array2::from_shape_fn((b, d), |_| rng.uniform_range(-2.0, 2.0)),
        actions: Array3::from_shape_fn((b, h, a), |_| rng.uniform_range(-1.0, 1.0)),
        targets: Array3::from_shape_fn((b, h, d), |_| rng.uniform_range(-2.0, 2.0)),
        dt,
    }
}

/// Glorot weights plus random biases, so no unit sits exactly at zero.
pub fn params(rng: &mut Rng, sizes: &[usize], act: Activation) -> MlpParams {
    let mut p = MlpParams::glorot(sizes, act, rng).unwrap();
    for l in p.layers_mut() {
        for b in l.bias.iter_mut() {
            *b = rng.uniform_range(-0.5, 0.5);
        }
    }
    p
}

/// Central differences of `f` at `p` in every parameter, compared with
/// `grads`. Returns the worst `|a - n| / max(|a|, |n|)` over entries whose
/// magnitude exceeds `floor` and the worst absolute error over the rest.
pub fn fd_check(p: &MlpParams, grads: &MlpParams, step: f64, floor: f64, f: impl Fn(&MlpParams) -> f64) -> (f64, f64) {
    let flat = p.to_flat();
    let analytic = grads.to_flat();
    let mut probe = p.clone();
    let (mut worst_rel, mut worst_abs) = (0.0f64, 0.0f64);
    for i in 0..flat.len() {
        let mut x = flat.clone();
        x[i] = flat[i] + step;
        probe.set_flat(&x).unwrap();
        let up = f(&probe);
        x[i] = flat[i] - step;
        probe.set_flat(&x).unwrap();
        let down = f(&probe);
        let numeric = (up - down) / (2.0 * step);
        let scale = numeric.abs().max(analytic[i].abs());
        let err = (numeric - analytic[i]).abs();
        if scale > floor {
            worst_rel = worst_rel.max(err / scale);
        } else {
            worst_abs = worst_abs.max(err);
        }
    }
    (worst_rel, worst_abs)
}
