//! Training losses on one ensemble member. All losses work on standardized
//! observations `z = (x - mean) / sqrt(var)`, in which the integrator step
//! reads `z' = z + dt * f([z, u])`.

use ndarray::{s, Array2, ArrayView2, Axis};

use crate::dataset::{DatasetStats, SubTrajectoryBatch};
use crate::models::{ModelFrame, SigmaBounds};
use crate::numerics::{MlpParams, Rng};

/// Input-noise settings for one loss evaluation: amplitude and the stream the
/// standard-normal draws come from.
pub struct InputNoise<'a> {
    pub lambda: f64,
    pub rng: &'a mut Rng,
}

fn standardize(stats: &DatasetStats, x: ArrayView2<f64>) -> Array2<f64> {
    let mut z = x.to_owned();
    for mut row in z.rows_mut() {
        for ((v, m), c) in row.iter_mut().zip(&stats.mean).zip(&stats.cholesky) {
            *v = (*v - m) / c;
        }
    }
    z
}

fn noisy(z: &Array2<f64>, noise: &mut Option<InputNoise<'_>>) -> Array2<f64> {
    let mut out = z.clone();
    if let Some(n) = noise {
        if n.lambda > 0.0 {
            for v in out.iter_mut() {
                *v += n.lambda * n.rng.standard_normal();
            }
        }
    }
    out
}

fn cat(z: ArrayView2<f64>, u: ArrayView2<f64>) -> Array2<f64> {
    ndarray::concatenate(Axis(1), &[z, u]).expect("row counts match")
}

/// Mean over batch and dimensions of the variance-normalized squared error of
/// the one-step prediction.
pub fn loss_nmse_1step(
    params: &MlpParams,
    frame: &ModelFrame,
    batch: &SubTrajectoryBatch,
    mut noise: Option<InputNoise<'_>>,
) -> (f64, MlpParams) {
    let stats = &frame.stats;
    let (b, d) = (batch.len(), frame.obs_dim());
    let dt = batch.dt;
    let z0 = standardize(stats, batch.start.view());
    let z1 = standardize(stats, batch.targets.index_axis(Axis(1), 0));
    let input = cat(noisy(&z0, &mut noise).view(), batch.actions.index_axis(Axis(1), 0));
    let (out, tape) = params.forward_tape(input.view());
    let norm = (b * d) as f64;
    let mut loss = 0.0;
    let mut upstream = Array2::<f64>::zeros((b, d));
    for i in 0..b {
        for j in 0..d {
            let r = z0[[i, j]] + dt * out[[i, j]] - z1[[i, j]];
            loss += r * r;
            upstream[[i, j]] = 2.0 * r * dt / norm;
        }
    }
    let (grads, _) = params.backward(&tape, upstream.view());
    (loss / norm, grads)
}

/// Multi-step loss: predictions chained from the true start for `H` steps,
/// squared standardized errors averaged over steps, batch and dimensions.
/// Gradients flow back through the whole chain.
pub fn loss_nmse_multistep(
    params: &MlpParams,
    frame: &ModelFrame,
    batch: &SubTrajectoryBatch,
    mut noise: Option<InputNoise<'_>>,
) -> (f64, MlpParams) {
    let stats = &frame.stats;
    let (b, h, d) = (batch.len(), batch.horizon(), frame.obs_dim());
    let dt = batch.dt;
    let norm = (h * b * d) as f64;
    let mut z = standardize(stats, batch.start.view());
    let mut tapes = Vec::with_capacity(h);
    let mut residuals = Vec::with_capacity(h);
    let mut loss = 0.0;
    for j in 0..h {
        let input = cat(noisy(&z, &mut noise).view(), batch.actions.index_axis(Axis(1), j));
        let (out, tape) = params.forward_tape(input.view());
        z.scaled_add(dt, &out);
        let target = standardize(stats, batch.targets.index_axis(Axis(1), j));
        let r = &z - &target;
        loss += r.iter().map(|v| v * v).sum::<f64>();
        tapes.push(tape);
        residuals.push(r);
    }
    let mut grads = params.zeros_like();
    let mut g = Array2::<f64>::zeros((b, d));
    for j in (0..h).rev() {
        g.scaled_add(2.0 / norm, &residuals[j]);
        let (pg, ig) = params.backward(&tapes[j], (&g * dt).view());
        grads.add_scaled(&pg, 1.0);
        g += &ig.slice(s![.., ..d]);
    }
    (loss / norm, grads)
}

/// Mean Gaussian negative log-likelihood of the standardized rate
/// `(z' - z) / dt` under the mean head and the bounded σ head.
pub fn loss_nll_1step(
    params: &MlpParams,
    frame: &ModelFrame,
    batch: &SubTrajectoryBatch,
    mut noise: Option<InputNoise<'_>>,
) -> (f64, MlpParams) {
    let stats = &frame.stats;
    let (b, d) = (batch.len(), frame.obs_dim());
    let dt = batch.dt;
    let z0 = standardize(stats, batch.start.view());
    let z1 = standardize(stats, batch.targets.index_axis(Axis(1), 0));
    let input = cat(noisy(&z0, &mut noise).view(), batch.actions.index_axis(Axis(1), 0));
    let (out, tape) = params.forward_tape(input.view());
    let norm = (b * d) as f64;
    let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    let bounds: &SigmaBounds = &frame.sigma;
    let mut loss = 0.0;
    let mut upstream = Array2::<f64>::zeros((b, 2 * d));
    for i in 0..b {
        for j in 0..d {
            let target = (z1[[i, j]] - z0[[i, j]]) / dt;
            let (sigma, dsigma) = bounds.apply(out[[i, d + j]]);
            let e = (target - out[[i, j]]) / sigma;
            loss += half_ln_2pi + sigma.ln() + 0.5 * e * e;
            upstream[[i, j]] = -e / sigma / norm;
            upstream[[i, d + j]] = (1.0 - e * e) / sigma * dsigma / norm;
        }
    }
    let (grads, _) = params.backward(&tape, upstream.view());
    (loss / norm, grads)
}

/// Adds `lambda * L_D * omega` to the start observations; targets and actions
/// are left alone.
pub fn apply_input_noise(batch: &SubTrajectoryBatch, lambda: f64, stats: &DatasetStats, rng: &mut Rng) -> SubTrajectoryBatch {
    let mut out = batch.clone();
    if lambda > 0.0 {
        for mut row in out.start.rows_mut() {
            for (v, c) in row.iter_mut().zip(&stats.cholesky) {
                *v += lambda * c * rng.standard_normal();
            }
        }
    }
    out
}

/// Scales `grads` down so its global norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut MlpParams, max_norm: f64) -> f64 {
    let norm = grads.squared_norm().sqrt();
    if norm > max_norm && norm.is_finite() {
        grads.scale(max_norm / norm);
    }
    norm
}
