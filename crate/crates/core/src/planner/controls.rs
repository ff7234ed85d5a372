use std::f64::consts::PI;

use ndarray::Array2;

use crate::numerics::Rng;

/// Number of control points for a horizon and spacing, both in seconds.
pub fn control_point_count(horizon: f64, spacing: f64) -> usize {
    ((horizon / spacing) - 1e-9).ceil().max(1.0) as usize
}

/// Per-frequency amplitudes `f^(-beta/2)` for the real spectrum of a length-`c`
/// signal; the zero bin uses the lowest nonzero frequency.
fn spectral_scales(c: usize, beta: f64) -> Vec<f64> {
    (0..=c / 2)
        .map(|k| {
            let f = k.max(1) as f64 / c as f64;
            f.powf(-beta / 2.0)
        })
        .collect()
}

/// One length-`c` sequence with power spectral density `~ 1/f^beta`, scaled
/// to per-point standard deviation `sigma`. Built by an explicit inverse real
/// DFT of Gaussian spectral coefficients.
pub fn colored_sequence(rng: &mut Rng, beta: f64, c: usize, sigma: f64) -> Vec<f64> {
    if c == 1 {
        return vec![sigma * rng.standard_normal()];
    }
    let scales = spectral_scales(c, beta);
    let nyquist = if c % 2 == 0 { Some(c / 2) } else { None };
    let mut re = vec![0.0; scales.len()];
    let mut im = vec![0.0; scales.len()];
    for k in 0..scales.len() {
        re[k] = scales[k] * rng.standard_normal();
        if k != 0 && Some(k) != nyquist {
            im[k] = scales[k] * rng.standard_normal();
        }
    }
    // Variance of every output sample before normalization.
    let mut var = scales[0] * scales[0];
    for k in 1..scales.len() {
        let w = if Some(k) == nyquist { 1.0 } else { 4.0 };
        var += w * scales[k] * scales[k];
    }
    let norm = sigma / (var.sqrt());
    (0..c)
        .map(|n| {
            let mut y = re[0];
            for k in 1..scales.len() {
                let phase = 2.0 * PI * (k * n) as f64 / c as f64;
                let (s, co) = phase.sin_cos();
                if Some(k) == nyquist {
                    y += re[k] * co;
                } else {
                    y += 2.0 * (re[k] * co - im[k] * s);
                }
            }
            y * norm
        })
        .collect()
}

/// Colored noise `[c × act_dim]`; each action dimension is an independent
/// sequence along the control-point axis.
pub fn sample_colored_noise(rng: &mut Rng, beta: f64, c: usize, act_dim: usize, sigma: f64) -> Array2<f64> {
    let mut out = Array2::zeros((c, act_dim));
    for a in 0..act_dim {
        let seq = colored_sequence(rng, beta, c, sigma);
        for (k, v) in seq.into_iter().enumerate() {
            out[[k, a]] = v;
        }
    }
    out
}

/// Linear interpolation at fractional control-point position `p`, clamped to
/// `[-1, 1]`.
fn interpolate_at(points: &Array2<f64>, p: f64, out: &mut [f64]) {
    let c = points.nrows();
    let p = p.clamp(0.0, (c - 1) as f64);
    let lo = (p.floor() as usize).min(c - 1);
    let hi = (lo + 1).min(c - 1);
    let w = p - lo as f64;
    for (a, o) in out.iter_mut().enumerate() {
        let v = if hi == lo { points[[lo, a]] } else { (1.0 - w) * points[[lo, a]] + w * points[[hi, a]] };
        *o = v.clamp(-1.0, 1.0);
    }
}

/// Fractional control-point position of time `t` within a plan whose `steps`
/// actions start at `0, dt, ..., (steps-1) dt`; the first point sits at the
/// first step and the last point at the last step.
fn position(c: usize, steps: usize, dt: f64, t: f64) -> f64 {
    if c == 1 || steps <= 1 {
        return 0.0;
    }
    t / ((steps - 1) as f64 * dt) * (c - 1) as f64
}

/// Actions `[steps × act_dim]` obtained by sampling the piecewise-linear
/// interpolant of the control points at each step's start.
pub fn interpolate_controls(points: &Array2<f64>, steps: usize) -> Array2<f64> {
    let (c, a) = points.dim();
    let mut out = Array2::zeros((steps, a));
    let mut buf = vec![0.0; a];
    for i in 0..steps {
        let p = if c == 1 || steps <= 1 { 0.0 } else { i as f64 * (c - 1) as f64 / (steps - 1) as f64 };
        interpolate_at(points, p, &mut buf);
        out.row_mut(i).assign(&ndarray::aview1(&buf));
    }
    out
}

/// Action at time `t` seconds into a plan of `steps` model steps of length
/// `dt`. Times past the last step hold the last point.
pub fn action_at_time(points: &Array2<f64>, steps: usize, dt: f64, t: f64) -> Vec<f64> {
    let mut buf = vec![0.0; points.ncols()];
    interpolate_at(points, position(points.nrows(), steps, dt, t), &mut buf);
    buf
}

/// Control points moved `shift` seconds forward in time; points past the end
/// of the old plan become zero.
pub fn shift_controls(points: &Array2<f64>, steps: usize, dt: f64, shift: f64) -> Array2<f64> {
    let (c, a) = points.dim();
    let span = if steps > 1 { (steps - 1) as f64 * dt } else { 0.0 };
    let mut out = Array2::zeros((c, a));
    let mut buf = vec![0.0; a];
    for k in 0..c {
        let t_k = if c > 1 { k as f64 * span / (c - 1) as f64 } else { 0.0 };
        let t = t_k + shift;
        if t <= span * (1.0 + 1e-12) + 1e-12 {
            interpolate_at(points, position(c, steps, dt, t), &mut buf);
            out.row_mut(k).assign(&ndarray::aview1(&buf));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn ramp() {
        let a = interpolate_controls(&array![[0.0], [1.0]], 5);
        assert_eq!(a.column(0).to_vec(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn one_point_per_step_is_identity() {
        let p = array![[0.1, -0.2], [0.5, 0.3], [-0.9, 0.0], [0.2, 0.7]];
        assert_eq!(interpolate_controls(&p, 4), p);
        assert_eq!(interpolate_controls(&array![[0.4]], 3), array![[0.4], [0.4], [0.4]]);
    }

    #[test]
    fn clamps_to_bounds() {
        let a = interpolate_controls(&array![[-3.0], [3.0]], 7);
        assert!(a.iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_eq!(a[[0, 0]], -1.0);
    }

    #[test]
    fn counts_follow_spacing() {
        assert_eq!(control_point_count(1.25, 1.0 / 50.0), 63);
        assert_eq!(control_point_count(0.25, 1.0 / 75.0), 19);
        assert_eq!(control_point_count(0.75, 1.0 / 25.0), 19);
        assert_eq!(control_point_count(0.5, 1.0 / 20.0), 10);
        assert_eq!(control_point_count(0.5, 1.0 / 50.0), 25);
        assert_eq!(control_point_count(1.0, 0.01), 100);
    }

    #[test]
    fn base_rate_resampling_matches_step_samples() {
        let p = array![[0.0], [0.6], [-0.4], [0.2]];
        let steps = 10;
        let a = interpolate_controls(&p, steps);
        for i in 0..steps {
            let t = i as f64 * 0.04;
            assert!((action_at_time(&p, steps, 0.04, t)[0] - a[[i, 0]]).abs() < 1e-12);
        }
        let mid = action_at_time(&p, steps, 0.04, 0.02)[0];
        assert!((mid - 0.5 * (a[[0, 0]] + a[[1, 0]])).abs() < 1e-12);
    }

    #[test]
    fn shift_moves_and_pads() {
        let p = array![[0.0], [1.0], [0.0], [-1.0], [0.5]];
        // five points spanning eight steps of 0.1 s, one every 0.2 s
        let s = shift_controls(&p, 9, 0.1, 0.2);
        assert_eq!(s[[4, 0]], 0.0);
        for k in 0..4 {
            let expect = action_at_time(&p, 9, 0.1, k as f64 * 0.2 + 0.2)[0];
            assert!((s[[k, 0]] - expect).abs() < 1e-12);
        }
        let same = shift_controls(&p, 9, 0.1, 0.0);
        assert!(same.iter().zip(&p).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn colored_noise_matches_direct_dft() {
        for c in [5usize, 8] {
            let beta = 1.5;
            let mut rng = Rng::new(3);
            let y = colored_sequence(&mut rng, beta, c, 1.0);
            // Rebuild the full complex spectrum and invert it term by term.
            let mut rng = Rng::new(3);
            let half = c / 2;
            let mut spec = vec![(0.0f64, 0.0f64); c];
            let mut var = 0.0;
            for k in 0..=half {
                let f = (k.max(1) as f64) / c as f64;
                let s = f.powf(-beta / 2.0);
                let re = s * rng.standard_normal();
                let nyq = c % 2 == 0 && k == half;
                let im = if k == 0 || nyq { 0.0 } else { s * rng.standard_normal() };
                spec[k] = (re, im);
                if k > 0 {
                    spec[c - k] = (re, -im);
                }
                var += s * s * if k == 0 || nyq { 1.0 } else { 4.0 };
            }
            for n in 0..c {
                let mut acc = 0.0;
                for (k, &(re, im)) in spec.iter().enumerate() {
                    let ph = 2.0 * PI * (k * n) as f64 / c as f64;
                    acc += re * ph.cos() - im * ph.sin();
                }
                assert!((acc / var.sqrt() - y[n]).abs() < 1e-12);
            }
        }
    }
}
