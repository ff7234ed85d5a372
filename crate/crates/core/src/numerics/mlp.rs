use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use super::rng::Rng;
use crate::error::{numeric, structural, Result};

/// Hidden-layer nonlinearity. The output layer is always linear.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    /// ELU with alpha = 1.
    Elu,
    /// `x * sigmoid(x)`.
    Swish,
}

/// `a · b` through matrixmultiply for every size. ndarray switches to a naive
/// loop for small operands, which would make a row's result depend on how
/// many rows share the call; a single kernel keeps batched and single-sample
/// evaluation bit-identical.
pub(crate) fn gemm(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let (m, k) = a.dim();
    let (k2, n) = b.dim();
    assert_eq!(k, k2, "gemm inner dimensions differ");
    let mut c = Array2::<f64>::zeros((m, n));
    if m == 0 || n == 0 || k == 0 {
        return c;
    }
    let (sa, sb) = (a.strides(), b.strides());
    // SAFETY: pointers and strides come from live ndarray views whose shapes
    // match the dimensions passed; `c` is a freshly allocated standard-layout
    // array of shape (m, n).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa[0],
            sa[1],
            b.as_ptr(),
            sb[0],
            sb[1],
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    c
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Activation::Swish => x * sigmoid(x),
        }
    }

    /// Derivative with respect to the pre-activation `x`.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    x.exp()
                }
            }
            Activation::Swish => {
                let s = sigmoid(x);
                s + x * s * (1.0 - s)
            }
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Elu => 1,
            Activation::Swish => 2,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Elu),
            2 => Some(Activation::Swish),
            _ => None,
        }
    }
}

/// One affine layer, `y = W x + b` with `W` stored `[out x in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn fan_in(&self) -> usize {
        self.weight.ncols()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.nrows()
    }
}

/// Parameters of a dense feed-forward network. Also used as the container
/// for parameter gradients and optimizer moments, which share its shape.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    layers: Vec<Dense>,
    activations: Vec<Activation>,
}

/// Intermediate values recorded by [`MlpParams::forward_tape`].
#[derive(Clone, Debug)]
pub struct Tape {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
}

impl MlpParams {
    /// Builds a network from explicit layers. `activations` has one entry per
    /// hidden layer, i.e. `layers.len() - 1` entries.
    pub fn new(layers: Vec<Dense>, activations: Vec<Activation>) -> Result<Self> {
        if layers.is_empty() {
            return Err(structural("network needs at least one layer"));
        }
        if activations.len() + 1 != layers.len() {
            return Err(structural(format!(
                "{} layers need {} activations, got {}",
                layers.len(),
                layers.len() - 1,
                activations.len()
            )));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.fan_out() {
                return Err(structural(format!("layer {i}: bias length mismatch")));
            }
            if i > 0 && layers[i - 1].fan_out() != l.fan_in() {
                return Err(structural(format!(
                    "layer {i}: fan-in {} does not match previous fan-out {}",
                    l.fan_in(),
                    layers[i - 1].fan_out()
                )));
            }
            if l.weight.iter().chain(l.bias.iter()).any(|v| !v.is_finite()) {
                return Err(numeric(format!("layer {i}: non-finite parameter")));
            }
        }
        Ok(Self { layers, activations })
    }

    /// Glorot-uniform weights, zero biases. `sizes` lists every width from
    /// input to output, e.g. `[6, 64, 64, 5]`.
    pub fn glorot(sizes: &[usize], activation: Activation, rng: &mut Rng) -> Result<Self> {
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
            return Err(structural(format!("invalid layer sizes {sizes:?}")));
        }
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weight =
                    Array2::from_shape_fn((fan_out, fan_in), |_| rng.uniform_range(-limit, limit));
                Dense {
                    weight,
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect::<Vec<_>>();
        let activations = vec![activation; layers.len() - 1];
        Self::new(layers, activations)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
            activations: self.activations.clone(),
        }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn same_shape(&self, other: &MlpParams) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weight.dim() == b.weight.dim() && a.bias.len() == b.bias.len())
    }

    /// All parameters flattened layer by layer (weights row-major, then bias).
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(structural("flat parameter length mismatch"));
        }
        let mut it = flat.iter();
        for l in &mut self.layers {
            for w in l.weight.iter_mut().chain(l.bias.iter_mut()) {
                *w = *it.next().unwrap();
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &MlpParams, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.scaled_add(scale, &b.weight);
            a.bias.scaled_add(scale, &b.bias);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.weight *= s;
            l.bias *= s;
        }
    }

    pub fn squared_norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.weight.iter().chain(l.bias.iter()).map(|v| v * v).sum::<f64>())
            .sum()
    }

    /// Forward pass on a single input vector.
    pub fn apply(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(structural(format!(
                "input length {} does not match fan-in {}",
                input.len(),
                self.input_dim()
            )));
        }
        let x = ArrayView2::from_shape((1, input.len()), input).unwrap();
        Ok(self.forward_batch(x).into_raw_vec_and_offset().0)
    }

    /// Forward pass on a batch, one sample per row.
    pub fn forward_batch(&self, input: ArrayView2<f64>) -> Array2<f64> {
        debug_assert_eq!(input.ncols(), self.input_dim());
        let last = self.layers.len() - 1;
        let mut x: Array2<f64> = self.affine(0, input);
        if last > 0 {
            let act = self.activations[0];
            x.mapv_inplace(|v| act.apply(v));
        }
        for i in 1..=last {
            let mut z = self.affine(i, x.view());
            if i < last {
                let act = self.activations[i];
                z.mapv_inplace(|v| act.apply(v));
            }
            x = z;
        }
        x
    }

    fn affine(&self, i: usize, x: ArrayView2<f64>) -> Array2<f64> {
        let l = &self.layers[i];
        let mut z = gemm(x, l.weight.t());
        z += &l.bias.view().insert_axis(Axis(0));
        z
    }

    /// Forward pass that records what the backward pass needs.
    pub fn forward_tape(&self, input: ArrayView2<f64>) -> (Array2<f64>, Tape) {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(last);
        let mut x = input.to_owned();
        for i in 0..=last {
            let z = self.affine(i, x.view());
            inputs.push(x);
            if i < last {
                let act = self.activations[i];
                let a = z.mapv(|v| act.apply(v));
                pre.push(z);
                x = a;
            } else {
                x = z;
            }
        }
        (x, Tape { inputs, pre })
    }

    /// Reverse-mode pass. Returns gradients of `sum(upstream * output)` with
    /// respect to the parameters (summed over the batch) and to each input row.
    pub fn backward(&self, tape: &Tape, upstream: ArrayView2<f64>) -> (MlpParams, Array2<f64>) {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = upstream.to_owned();
        let mut input_grad = None;
        for i in (0..self.layers.len()).rev() {
            let l = &self.layers[i];
            let gw = gemm(delta.t(), tape.inputs[i].view());
            let gb = delta.sum_axis(Axis(0));
            grads.push(Dense {
                weight: gw,
                bias: gb,
            });
            let mut d_in = gemm(delta.view(), l.weight.view());
            if i > 0 {
                let act = self.activations[i - 1];
                Zip::from(&mut d_in)
                    .and(&tape.pre[i - 1])
                    .for_each(|d, &z| *d *= act.derivative(z));
                delta = d_in;
            } else {
                input_grad = Some(d_in);
            }
        }
        grads.reverse();
        (
            MlpParams {
                layers: grads,
                activations: self.activations.clone(),
            },
            input_grad.expect("at least one layer"),
        )
    }

    /// Exact gradients of `<upstream, apply(input)>` for a single sample.
    pub fn grad(&self, input: &[f64], upstream: &[f64]) -> Result<(MlpParams, Vec<f64>)> {
        if input.len() != self.input_dim() {
            return Err(structural("input length does not match fan-in"));
        }
        if upstream.len() != self.output_dim() {
            return Err(structural("upstream length does not match output"));
        }
        if upstream.iter().any(|v| !v.is_finite()) {
            return Err(numeric("non-finite upstream gradient"));
        }
        let x = ArrayView2::from_shape((1, input.len()), input).unwrap();
        let up = ArrayView2::from_shape((1, upstream.len()), upstream).unwrap();
        let (_, tape) = self.forward_tape(x);
        let (g, gi) = self.backward(&tape, up);
        Ok((g, gi.row(0).to_vec()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn two_layer_relu(rng: &mut Rng) -> MlpParams {
        MlpParams::glorot(&[3, 4, 2], Activation::Relu, rng).unwrap()
    }

    #[test]
    fn zero_net_gives_zero() {
        let net = MlpParams::glorot(&[3, 5, 2], Activation::Swish, &mut Rng::new(0))
            .unwrap()
            .zeros_like();
        assert_eq!(net.apply(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn single_affine_layer() {
        let net = MlpParams::new(
            vec![Dense {
                weight: array![[2.0]],
                bias: array![1.0],
            }],
            vec![],
        )
        .unwrap();
        assert_eq!(net.apply(&[3.0]).unwrap(), vec![7.0]);
        let (g, gi) = net.grad(&[3.0], &[1.0]).unwrap();
        assert_eq!(g.layers()[0].weight[[0, 0]], 3.0);
        assert_eq!(g.layers()[0].bias[0], 1.0);
        assert_eq!(gi, vec![2.0]);
    }

    #[test]
    fn matches_scalar_recomputation() {
        let mut rng = Rng::new(42);
        let mut net = two_layer_relu(&mut rng);
        // give biases some value so both relu branches are exercised
        for l in net.layers_mut() {
            l.bias.mapv_inplace(|_| rng.uniform_range(-0.5, 0.5));
        }
        let x = [0.3, -1.2, 0.8];
        let l0 = &net.layers()[0];
        let l1 = &net.layers()[1];
        let mut hidden = [0.0; 4];
        for (j, h) in hidden.iter_mut().enumerate() {
            let mut s = l0.bias[j];
            for k in 0..3 {
                s += l0.weight[[j, k]] * x[k];
            }
            *h = if s > 0.0 { s } else { 0.0 };
        }
        let mut expected = [0.0; 2];
        for (o, e) in expected.iter_mut().enumerate() {
            let mut s = l1.bias[o];
            for j in 0..4 {
                s += l1.weight[[o, j]] * hidden[j];
            }
            *e = s;
        }
        let got = net.apply(&x).unwrap();
        for (g, e) in got.iter().zip(expected) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_matches_single() {
        let mut rng = Rng::new(9);
        let net = MlpParams::glorot(&[4, 8, 8, 3], Activation::Elu, &mut rng).unwrap();
        let xs = Array2::from_shape_fn((5, 4), |_| rng.standard_normal());
        let batch = net.forward_batch(xs.view());
        for r in 0..5 {
            let single = net.apply(&xs.row(r).to_vec()).unwrap();
            for c in 0..3 {
                assert_eq!(batch[[r, c]], single[c]);
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_structural() {
        let net = two_layer_relu(&mut Rng::new(1));
        assert!(net.apply(&[1.0, 2.0]).is_err());
        assert!(net.grad(&[1.0, 2.0, 3.0], &[1.0]).is_err());
    }

    #[test]
    fn non_finite_upstream_rejected() {
        let net = two_layer_relu(&mut Rng::new(1));
        assert!(net.grad(&[1.0, 2.0, 3.0], &[f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn zero_upstream_zero_grads() {
        let net = MlpParams::glorot(&[3, 6, 2], Activation::Swish, &mut Rng::new(4)).unwrap();
        let (g, gi) = net.grad(&[0.1, 0.2, 0.3], &[0.0, 0.0]).unwrap();
        assert!(g.to_flat().iter().all(|v| *v == 0.0));
        assert!(gi.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn apply_is_pure() {
        let net = MlpParams::glorot(&[3, 6, 2], Activation::Swish, &mut Rng::new(4)).unwrap();
        let a = net.apply(&[0.1, 0.2, 0.3]).unwrap();
        let b = net.apply(&[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_mismatched_layers() {
        let bad = MlpParams::new(
            vec![
                Dense {
                    weight: Array2::zeros((4, 3)),
                    bias: Array1::zeros(4),
                },
                Dense {
                    weight: Array2::zeros((2, 5)),
                    bias: Array1::zeros(2),
                },
            ],
            vec![Activation::Relu],
        );
        assert!(bad.is_err());
    }
}
