use ndarray::Zip;

use super::mlp::MlpParams;
use crate::error::{numeric, structural, Result};

/// Bias-corrected adaptive-moment optimizer state for one network.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: MlpParams,
    v: MlpParams,
}

impl Adam {
    pub fn new(params: &MlpParams, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &MlpParams {
        &self.m
    }

    pub fn second_moment(&self) -> &MlpParams {
        &self.v
    }

    /// Applies one update in place and advances the step counter by one.
    pub fn update(&mut self, params: &mut MlpParams, grads: &MlpParams) -> Result<()> {
        if !params.same_shape(grads) || !params.same_shape(&self.m) {
            return Err(structural("optimizer, parameter and gradient shapes differ"));
        }
        if !grads.is_finite() {
            return Err(numeric("non-finite gradient"));
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.lr);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let step = |p: &mut f64, g: &f64, m: &mut f64, v: &mut f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        };
        let layers = params.layers_mut().iter_mut();
        let moments = self.m.layers_mut().iter_mut().zip(self.v.layers_mut().iter_mut());
        for ((p, g), (m, v)) in layers.zip(grads.layers()).zip(moments) {
            Zip::from(&mut p.weight)
                .and(&g.weight)
                .and(&mut m.weight)
                .and(&mut v.weight)
                .for_each(step);
            Zip::from(&mut p.bias)
                .and(&g.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .for_each(step);
        }
        Ok(())
    }
}
