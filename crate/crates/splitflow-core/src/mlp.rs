//! Dense multilayer perceptron with hand-written backprop.
//!
//! The network maps `flatten(x) ++ [sigma] ++ cond` to a velocity of the same
//! size as `x`. Hidden layers use tanh or relu; the output layer is linear.
//! Layer weights are row-major `(out_dim, in_dim)`.

// Index loops are used deliberately in the dense kernels.
#![allow(clippy::needless_range_loop)]

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn forward(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed via the activation output.
    #[inline]
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::config(format!("unknown activation '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// Row-major (out_dim, in_dim).
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
}

/// Full parameter block: layer list plus the activation applied to every
/// hidden layer. The final layer is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<DenseLayer>,
    pub activation: Activation,
}

/// Per-layer outputs cached by [`mlp_forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Vec<f64>,
    /// Post-activation output of each layer (last layer is linear).
    layer_outputs: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.layer_outputs.last().expect("cache has layers")
    }
}

/// Parameter gradients with shapes mirroring [`MlpParams`].
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub d_weights: Vec<Vec<f64>>,
    pub d_biases: Vec<Vec<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(params: &MlpParams) -> Self {
        MlpGrads {
            d_weights: params
                .layers
                .iter()
                .map(|l| vec![0.0; l.weights.len()])
                .collect(),
            d_biases: params
                .layers
                .iter()
                .map(|l| vec![0.0; l.biases.len()])
                .collect(),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for w in &mut self.d_weights {
            for v in w.iter_mut() {
                *v *= factor;
            }
        }
        for b in &mut self.d_biases {
            for v in b.iter_mut() {
                *v *= factor;
            }
        }
    }

    pub fn accumulate(&mut self, other: &MlpGrads) {
        for (a, b) in self.d_weights.iter_mut().zip(&other.d_weights) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.d_biases.iter_mut().zip(&other.d_biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

impl MlpParams {
    /// Builds a network `input_dim -> hidden... -> output_dim`.
    ///
    /// Hidden layers get scaled Gaussian init; the output layer starts at zero
    /// so a fresh field predicts the zero velocity.
    pub fn init<R: Rng>(
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 {
            return Err(Error::config("mlp input/output dims must be positive"));
        }
        if hidden.contains(&0) {
            return Err(Error::config("hidden widths must be positive"));
        }
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(output_dim);

        let normal = StandardNormal;
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for k in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[k], dims[k + 1]);
            let last = k == dims.len() - 2;
            let scale = if last {
                0.0
            } else {
                (2.0 / (fan_in + fan_out) as f64).sqrt()
            };
            let weights = (0..fan_in * fan_out)
                .map(|_| {
                    let g: f64 = normal.sample(rng);
                    g * scale
                })
                .collect();
            layers.push(DenseLayer {
                weights,
                biases: vec![0.0; fan_out],
                in_dim: fan_in,
                out_dim: fan_out,
            });
        }
        Ok(MlpParams { layers, activation })
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map(|l| l.in_dim).unwrap_or(0)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.out_dim).unwrap_or(0)
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len().saturating_sub(1)]
            .iter()
            .map(|l| l.out_dim)
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    /// Flat parameter view in layer order (weights then biases per layer).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.biases);
        }
        out
    }

    /// Mutable access to a flat parameter coordinate (matching [`MlpParams::flatten`] order).
    pub fn param_mut(&mut self, mut index: usize) -> Option<&mut f64> {
        for l in &mut self.layers {
            if index < l.weights.len() {
                return Some(&mut l.weights[index]);
            }
            index -= l.weights.len();
            if index < l.biases.len() {
                return Some(&mut l.biases[index]);
            }
            index -= l.biases.len();
        }
        None
    }

    fn check_chain(&self) -> Result<()> {
        for pair in self.layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::dimension(format!(
                    "layer dims do not chain: {} -> {}",
                    pair[0].out_dim, pair[1].in_dim
                )));
            }
        }
        Ok(())
    }
}

/// Forward pass; returns the output vector and the activation cache for
/// [`mlp_backward`].
pub fn mlp_forward(params: &MlpParams, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
    params.check_chain()?;
    if input.len() != params.input_dim() {
        return Err(Error::dimension(format!(
            "mlp input length {} does not match input dim {}",
            input.len(),
            params.input_dim()
        )));
    }
    let n_layers = params.layers.len();
    let mut layer_outputs = Vec::with_capacity(n_layers);
    let mut cur = input.to_vec();
    for (k, layer) in params.layers.iter().enumerate() {
        let mut out = vec![0.0; layer.out_dim];
        for o in 0..layer.out_dim {
            let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
            let mut z = layer.biases[o];
            for (w, x) in row.iter().zip(&cur) {
                z += w * x;
            }
            out[o] = if k + 1 == n_layers {
                z
            } else {
                params.activation.forward(z)
            };
        }
        layer_outputs.push(out.clone());
        cur = out;
    }
    let cache = ForwardCache {
        input: input.to_vec(),
        layer_outputs,
    };
    Ok((cur, cache))
}

/// Backward pass from an upstream gradient w.r.t. the network output.
///
/// The cache must come from a forward pass with the same parameters.
pub fn mlp_backward(
    params: &MlpParams,
    cache: &ForwardCache,
    upstream: &[f64],
) -> Result<MlpGrads> {
    if cache.layer_outputs.len() != params.layers.len() {
        return Err(Error::State(format!(
            "cache has {} layer outputs, params have {} layers",
            cache.layer_outputs.len(),
            params.layers.len()
        )));
    }
    if cache.input.len() != params.input_dim() {
        return Err(Error::State(
            "cached input does not match parameter dims".into(),
        ));
    }
    if upstream.len() != params.output_dim() {
        return Err(Error::dimension(format!(
            "upstream gradient length {} does not match output dim {}",
            upstream.len(),
            params.output_dim()
        )));
    }
    for (layer, out) in params.layers.iter().zip(&cache.layer_outputs) {
        if out.len() != layer.out_dim {
            return Err(Error::State(
                "cached layer output does not match layer dims".into(),
            ));
        }
    }

    let mut grads = MlpGrads::zeros_like(params);
    let n_layers = params.layers.len();
    // d_cur = dL/dz for the current layer (pre-activation gradient).
    let mut d_cur = upstream.to_vec();
    for k in (0..n_layers).rev() {
        let layer = &params.layers[k];
        if k + 1 != n_layers {
            let y = &cache.layer_outputs[k];
            for (d, &yv) in d_cur.iter_mut().zip(y) {
                *d *= params.activation.grad_from_output(yv);
            }
        }
        let layer_input: &[f64] = if k == 0 {
            &cache.input
        } else {
            &cache.layer_outputs[k - 1]
        };
        let dw = &mut grads.d_weights[k];
        for o in 0..layer.out_dim {
            let g = d_cur[o];
            grads.d_biases[k][o] = g;
            let row = &mut dw[o * layer.in_dim..(o + 1) * layer.in_dim];
            for (slot, &x) in row.iter_mut().zip(layer_input) {
                *slot = g * x;
            }
        }
        if k > 0 {
            let mut d_prev = vec![0.0; layer.in_dim];
            for o in 0..layer.out_dim {
                let g = d_cur[o];
                let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (dp, &w) in d_prev.iter_mut().zip(row) {
                    *dp += g * w;
                }
            }
            d_cur = d_prev;
        }
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn single_linear(
        weights: Vec<f64>,
        biases: Vec<f64>,
        in_dim: usize,
        out_dim: usize,
    ) -> MlpParams {
        MlpParams {
            layers: vec![DenseLayer {
                weights,
                biases,
                in_dim,
                out_dim,
            }],
            activation: Activation::Tanh,
        }
    }

    #[test]
    fn identity_single_layer_passes_input_through() {
        let p = single_linear(vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0], 2, 2);
        let (y, _) = mlp_forward(&p, &[0.3, -0.7]).unwrap();
        assert_eq!(y, vec![0.3, -0.7]);
    }

    #[test]
    fn zero_weights_yield_bias() {
        let p = single_linear(vec![0.0, 0.0], vec![0.42], 2, 1);
        let (y, _) = mlp_forward(&p, &[5.0, -3.0]).unwrap();
        assert_eq!(y, vec![0.42]);
    }

    #[test]
    fn fresh_init_with_zero_output_layer_gives_zero() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let p = MlpParams::init(5, &[16, 16], 3, Activation::Tanh, &mut rng).unwrap();
        let (y, _) = mlp_forward(&p, &[0.5, -1.0, 0.2, 0.9, -0.3]).unwrap();
        assert_eq!(y, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn two_layer_tanh_matches_independent_reimplementation() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let mut p = MlpParams::init(3, &[4], 2, Activation::Tanh, &mut rng).unwrap();
        // Give the output layer nonzero weights so the check is meaningful.
        for (i, w) in p.layers[1].weights.iter_mut().enumerate() {
            *w = 0.1 * (i as f64 + 1.0);
        }
        p.layers[1].biases = vec![0.05, -0.02];
        let input = [0.4, -0.6, 1.1];
        let (y, _) = mlp_forward(&p, &input).unwrap();

        // Straightforward second implementation.
        let l0 = &p.layers[0];
        let mut h = vec![0.0; l0.out_dim];
        for o in 0..l0.out_dim {
            let mut z = l0.biases[o];
            for i in 0..l0.in_dim {
                z += l0.weights[o * l0.in_dim + i] * input[i];
            }
            h[o] = z.tanh();
        }
        let l1 = &p.layers[1];
        for o in 0..l1.out_dim {
            let mut z = l1.biases[o];
            for i in 0..l1.in_dim {
                z += l1.weights[o * l1.in_dim + i] * h[i];
            }
            assert!((y[o] - z).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let p = MlpParams::init(4, &[8], 2, Activation::Tanh, &mut rng).unwrap();
        let (_, cache) = mlp_forward(&p, &[0.1, 0.2, 0.3, 0.4]).unwrap();
        let g = mlp_backward(&p, &cache, &[0.0, 0.0]).unwrap();
        assert!(g.d_weights.iter().flatten().all(|&v| v == 0.0));
        assert!(g.d_biases.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_chain_rule() {
        // y = w * x, dL/dw = upstream * x.
        let p = single_linear(vec![2.0], vec![0.0], 1, 1);
        let (_, cache) = mlp_forward(&p, &[3.0]).unwrap();
        let g = mlp_backward(&p, &cache, &[1.5]).unwrap();
        assert_eq!(g.d_weights[0][0], 4.5);
        assert_eq!(g.d_biases[0][0], 1.5);
    }

    #[test]
    fn backward_rejects_mismatched_cache() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let p = MlpParams::init(4, &[8], 2, Activation::Tanh, &mut rng).unwrap();
        let other = MlpParams::init(4, &[8, 8], 2, Activation::Tanh, &mut rng).unwrap();
        let (_, cache) = mlp_forward(&p, &[0.1, 0.2, 0.3, 0.4]).unwrap();
        assert!(matches!(
            mlp_backward(&other, &cache, &[1.0, 1.0]),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(97);
        let mut p = MlpParams::init(6, &[12, 12], 4, Activation::Tanh, &mut rng).unwrap();
        // Randomize the zero-initialized output layer.
        let normal = StandardNormal;
        for w in &mut p.layers.last_mut().unwrap().weights {
            let g: f64 = normal.sample(&mut rng);
            *w = 0.3 * g;
        }
        let input: Vec<f64> = (0..6)
            .map(|_| {
                let g: f64 = normal.sample(&mut rng);
                g
            })
            .collect();
        // Loss = 0.5 * ||y||^2 so upstream = y.
        let (y, cache) = mlp_forward(&p, &input).unwrap();
        let grads = mlp_backward(&p, &cache, &y).unwrap();
        let flat_analytic: Vec<f64> = {
            let mut v = Vec::new();
            for k in 0..p.layers.len() {
                v.extend_from_slice(&grads.d_weights[k]);
                v.extend_from_slice(&grads.d_biases[k]);
            }
            v
        };

        let h = 1e-4;
        let total = p.param_count();
        let step = (total / 220).max(1);
        let mut checked = 0usize;
        for idx in (0..total).step_by(step) {
            let orig = *p.param_mut(idx).unwrap();
            *p.param_mut(idx).unwrap() = orig + h;
            let (yp, _) = mlp_forward(&p, &input).unwrap();
            *p.param_mut(idx).unwrap() = orig - h;
            let (ym, _) = mlp_forward(&p, &input).unwrap();
            *p.param_mut(idx).unwrap() = orig;
            let lp: f64 = 0.5 * yp.iter().map(|v| v * v).sum::<f64>();
            let lm: f64 = 0.5 * ym.iter().map(|v| v * v).sum::<f64>();
            let numeric = (lp - lm) / (2.0 * h);
            let analytic = flat_analytic[idx];
            let rel = (analytic - numeric).abs() / (numeric.abs() + 1e-8);
            assert!(
                rel <= 1e-4,
                "param {idx}: analytic {analytic} vs numeric {numeric} (rel {rel})"
            );
            checked += 1;
        }
        assert!(checked >= 100);
    }
}
