//! Fully connected rectifier networks with hand-written backpropagation,
//! Adam, and Polyak-averaged target copies.
//!
//! All parameters of a network live in one flat vector: for each layer the
//! row-major `out x in` weight matrix followed by the `out` biases. Gradients
//! and optimizer moments share that layout.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Serializes as an [`MlpCheckpoint`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "MlpCheckpoint", try_from = "MlpCheckpoint")]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
    init_seed: Option<u64>,
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    batch: usize,
    /// Input, then the post-activation output of every layer.
    activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("cache holds the input at least")
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

impl Mlp {
    /// Weights uniform in `±sqrt(6 / fan_in)`, biases zero.
    pub fn new(sizes: &[usize], seed: u64) -> Self {
        let mut net = Self::zeros(sizes);
        net.init_seed = Some(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in 0..net.num_layers() {
            let fan_in = sizes[l];
            let bound = (6.0 / fan_in as f64).sqrt();
            let (w, _) = net.layer_range(l);
            for p in &mut net.params[w] {
                *p = rng.gen_range(-bound..bound);
            }
        }
        net
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "network needs input and output sizes");
        assert!(sizes.iter().all(|&s| s > 0), "layer sizes must be positive");
        Self {
            sizes: sizes.to_vec(),
            params: vec![0.0; Self::param_count(sizes)],
            init_seed: None,
        }
    }

    /// `sum (fan_in + 1) * fan_out`.
    pub fn param_count(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("non-empty sizes")
    }

    pub fn init_seed(&self) -> Option<u64> {
        self.init_seed
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn offset(&self, layer: usize) -> usize {
        self.sizes[..=layer].windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }

    /// Ranges of the weight matrix and bias vector of `layer`.
    fn layer_range(&self, layer: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let start = self.offset(layer);
        let (fan_in, fan_out) = (self.sizes[layer], self.sizes[layer + 1]);
        let w_end = start + fan_in * fan_out;
        (start..w_end, w_end..w_end + fan_out)
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        &self.params[self.layer_range(layer).0]
    }

    pub fn weights_mut(&mut self, layer: usize) -> &mut [f64] {
        let r = self.layer_range(layer).0;
        &mut self.params[r]
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        &self.params[self.layer_range(layer).1]
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut [f64] {
        let r = self.layer_range(layer).1;
        &mut self.params[r]
    }

    fn check_input(&self, inputs: &[f64], batch: usize) -> Result<()> {
        if inputs.len() != batch * self.input_dim() {
            return Err(Error::Shape(format!(
                "{} input values for batch {batch} of width {}",
                inputs.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Row-major `batch x output_dim` outputs.
    pub fn forward(&self, inputs: &[f64], batch: usize) -> Result<Vec<f64>> {
        self.check_input(inputs, batch)?;
        let mut act = inputs.to_vec();
        for l in 0..self.num_layers() {
            act = self.layer_forward(l, &act, batch);
        }
        Ok(act)
    }

    pub fn forward_one(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.forward(input, 1)
    }

    pub fn forward_cached(&self, inputs: &[f64], batch: usize) -> Result<ForwardCache> {
        self.check_input(inputs, batch)?;
        let mut activations = Vec::with_capacity(self.sizes.len());
        activations.push(inputs.to_vec());
        for l in 0..self.num_layers() {
            let next = self.layer_forward(l, activations.last().expect("input pushed"), batch);
            activations.push(next);
        }
        Ok(ForwardCache { batch, activations })
    }

    fn layer_forward(&self, l: usize, input: &[f64], batch: usize) -> Vec<f64> {
        let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
        let bias = self.bias(l);
        let mut out = Vec::with_capacity(batch * fan_out);
        for _ in 0..batch {
            out.extend_from_slice(bias);
        }
        let w = self.weights(l);
        // out (batch x fan_out) += input (batch x fan_in) * W^T
        unsafe {
            matrixmultiply::dgemm(
                batch,
                fan_in,
                fan_out,
                1.0,
                input.as_ptr(),
                fan_in as isize,
                1,
                w.as_ptr(),
                1,
                fan_in as isize,
                1.0,
                out.as_mut_ptr(),
                fan_out as isize,
                1,
            );
        }
        if l + 1 < self.num_layers() {
            for v in &mut out {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        out
    }

    /// Gradient of `sum_{b,o} d_output[b,o] * output[b,o]` with respect to
    /// all parameters.
    pub fn backward(&self, cache: &ForwardCache, d_output: &[f64]) -> Result<Vec<f64>> {
        let batch = cache.batch;
        if d_output.len() != batch * self.output_dim() {
            return Err(Error::Shape(format!(
                "{} output gradients for batch {batch} of width {}",
                d_output.len(),
                self.output_dim()
            )));
        }
        let mut grad = vec![0.0; self.params.len()];
        let mut delta = d_output.to_vec();
        for l in (0..self.num_layers()).rev() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let input = &cache.activations[l];
            let (w_range, b_range) = self.layer_range(l);
            {
                let gw = &mut grad[w_range];
                // gW (fan_out x fan_in) = delta^T (fan_out x batch) * input (batch x fan_in)
                unsafe {
                    matrixmultiply::dgemm(
                        fan_out,
                        batch,
                        fan_in,
                        1.0,
                        delta.as_ptr(),
                        1,
                        fan_out as isize,
                        input.as_ptr(),
                        fan_in as isize,
                        1,
                        0.0,
                        gw.as_mut_ptr(),
                        fan_in as isize,
                        1,
                    );
                }
            }
            {
                let gb = &mut grad[b_range];
                for row in delta.chunks(fan_out) {
                    for (g, d) in gb.iter_mut().zip(row) {
                        *g += d;
                    }
                }
            }
            if l > 0 {
                let w = self.weights(l);
                let mut d_input = vec![0.0; batch * fan_in];
                // d_input (batch x fan_in) = delta (batch x fan_out) * W (fan_out x fan_in)
                unsafe {
                    matrixmultiply::dgemm(
                        batch,
                        fan_out,
                        fan_in,
                        1.0,
                        delta.as_ptr(),
                        fan_out as isize,
                        1,
                        w.as_ptr(),
                        fan_in as isize,
                        1,
                        0.0,
                        d_input.as_mut_ptr(),
                        fan_in as isize,
                        1,
                    );
                }
                for (d, a) in d_input.iter_mut().zip(input) {
                    if *a <= 0.0 {
                        *d = 0.0;
                    }
                }
                delta = d_input;
            }
        }
        Ok(grad)
    }

    /// Loss `(1/k) sum_b (out[b, selected[b]] - targets[b])^2` and its
    /// gradient.
    pub fn mse_grad(
        &self,
        inputs: &[f64],
        batch: usize,
        selected: &[usize],
        targets: &[f64],
    ) -> Result<(f64, Vec<f64>)> {
        if selected.len() != batch || targets.len() != batch {
            return Err(Error::Shape("one selected output and target per batch row".into()));
        }
        let out_dim = self.output_dim();
        if let Some(&bad) = selected.iter().find(|&&s| s >= out_dim) {
            return Err(Error::Shape(format!("selected output {bad} >= width {out_dim}")));
        }
        let cache = self.forward_cached(inputs, batch)?;
        let out = cache.output();
        let k = batch as f64;
        let mut loss = 0.0;
        let mut d_out = vec![0.0; out.len()];
        for b in 0..batch {
            let idx = b * out_dim + selected[b];
            let resid = out[idx] - targets[b];
            loss += resid * resid;
            d_out[idx] = 2.0 * resid / k;
        }
        let grad = self.backward(&cache, &d_out)?;
        Ok((loss / k, grad))
    }

    pub fn same_architecture(&self, other: &Mlp) -> bool {
        self.sizes == other.sizes
    }

    pub fn to_checkpoint(&self) -> MlpCheckpoint {
        MlpCheckpoint {
            format_version: CHECKPOINT_VERSION,
            layer_sizes: self.sizes.clone(),
            init_seed: self.init_seed,
            params: self.params.clone(),
        }
    }

    pub fn from_checkpoint(ck: MlpCheckpoint) -> Result<Self> {
        if ck.format_version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported network format version {}",
                ck.format_version
            )));
        }
        if ck.layer_sizes.len() < 2 || ck.layer_sizes.contains(&0) {
            return Err(Error::Checkpoint("invalid layer sizes".into()));
        }
        if ck.params.len() != Self::param_count(&ck.layer_sizes) {
            return Err(Error::Checkpoint(format!(
                "{} parameters for layer sizes {:?}",
                ck.params.len(),
                ck.layer_sizes
            )));
        }
        Ok(Self {
            sizes: ck.layer_sizes,
            params: ck.params,
            init_seed: ck.init_seed,
        })
    }
}

/// Serialized network: layer sizes, flat parameters, init seed, version.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpCheckpoint {
    pub format_version: u32,
    pub layer_sizes: Vec<usize>,
    pub init_seed: Option<u64>,
    pub params: Vec<f64>,
}

impl From<Mlp> for MlpCheckpoint {
    fn from(net: Mlp) -> Self {
        Self {
            format_version: CHECKPOINT_VERSION,
            layer_sizes: net.sizes,
            init_seed: net.init_seed,
            params: net.params,
        }
    }
}

impl TryFrom<MlpCheckpoint> for Mlp {
    type Error = Error;

    fn try_from(ck: MlpCheckpoint) -> Result<Self> {
        Mlp::from_checkpoint(ck)
    }
}

/// Bias-corrected Adam.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    first: Vec<f64>,
    second: Vec<f64>,
    steps: u64,
}

impl Adam {
    pub fn new(num_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            first: vec![0.0; num_params],
            second: vec![0.0; num_params],
            steps: 0,
        }
    }

    pub fn for_net(net: &Mlp, lr: f64) -> Self {
        Self::new(net.params().len(), lr)
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.first
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.second
    }

    pub fn step(&mut self, net: &mut Mlp, grad: &[f64]) -> Result<()> {
        if grad.len() != self.first.len() || net.params.len() != grad.len() {
            return Err(Error::Shape(format!(
                "gradient of length {} for {} parameters",
                grad.len(),
                net.params.len()
            )));
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient(i));
        }
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (((p, g), m), v) in net
            .params
            .iter_mut()
            .zip(grad)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// `target <- tau * online + (1 - tau) * target`.
pub fn polyak_update(target: &mut Mlp, online: &Mlp, tau: f64) -> Result<()> {
    if !target.same_architecture(online) {
        return Err(Error::Shape(format!(
            "polyak update between {:?} and {:?}",
            target.sizes, online.sizes
        )));
    }
    if tau == 1.0 {
        target.params.copy_from_slice(&online.params);
        return Ok(());
    }
    for (t, o) in target.params.iter_mut().zip(&online.params) {
        *t = tau * o + (1.0 - tau) * *t;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_inputs(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_weights_output_bias() {
        let mut net = Mlp::zeros(&[3, 5, 2]);
        net.bias_mut(1).copy_from_slice(&[0.25, -1.5]);
        let out = net.forward(&[1.0, 2.0, 3.0, -4.0, 0.0, 9.0], 2).unwrap();
        assert_eq!(out, vec![0.25, -1.5, 0.25, -1.5]);
    }

    #[test]
    fn single_affine_layer() {
        let mut net = Mlp::zeros(&[2, 2]);
        net.weights_mut(0).copy_from_slice(&[1.0, 2.0, -3.0, 0.5]);
        net.bias_mut(0).copy_from_slice(&[0.1, 0.2]);
        let out = net.forward_one(&[2.0, -1.0]).unwrap();
        assert!((out[0] - 0.1).abs() < 1e-15);
        assert!((out[1] - (-6.5 + 0.2)).abs() < 1e-15);
    }

    #[test]
    fn parameter_count() {
        let net = Mlp::new(&[3, 256, 128, 121], 0);
        assert_eq!(net.params().len(), 4 * 256 + 257 * 128 + 129 * 121);
        assert_eq!(Mlp::param_count(&[3, 256, 128, 121]), net.params().len());
    }

    #[test]
    fn width_mismatch_rejected() {
        let net = Mlp::new(&[3, 4, 2], 0);
        assert!(matches!(net.forward(&[1.0, 2.0], 1), Err(Error::Shape(_))));
    }

    #[test]
    fn batch_rows_are_independent() {
        let net = Mlp::new(&[3, 16, 8, 4], 9);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xs = random_inputs(&mut rng, 5 * 3);
        let out = net.forward(&xs, 5).unwrap();
        let perm = [3, 0, 4, 1, 2];
        let permuted: Vec<f64> = perm.iter().flat_map(|&r| xs[r * 3..r * 3 + 3].to_vec()).collect();
        let out_p = net.forward(&permuted, 5).unwrap();
        for (k, &r) in perm.iter().enumerate() {
            for o in 0..4 {
                assert!((out_p[k * 4 + o] - out[r * 4 + o]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mse_gradient_zero_at_targets() {
        let net = Mlp::new(&[2, 8, 3], 4);
        let xs = [0.3, -0.2, 0.9, 0.1];
        let out = net.forward(&xs, 2).unwrap();
        let (loss, grad) = net.mse_grad(&xs, 2, &[1, 2], &[out[1], out[5]]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn mse_gradient_scales_with_residual() {
        let net = Mlp::new(&[2, 8, 3], 4);
        let xs = [0.3, -0.2, 0.9, 0.1];
        let out = net.forward(&xs, 2).unwrap();
        let (_, g1) = net.mse_grad(&xs, 2, &[0, 2], &[out[0] - 1.0, out[5] + 0.5]).unwrap();
        let (_, g2) = net.mse_grad(&xs, 2, &[0, 2], &[out[0] - 2.0, out[5] + 1.0]).unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            assert!((2.0 * a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn adam_zero_gradient() {
        let mut net = Mlp::new(&[2, 4, 1], 3);
        let before = net.clone();
        let mut adam = Adam::for_net(&net, 1e-3);
        let g = vec![1.0; net.params().len()];
        adam.step(&mut net, &g).unwrap();
        let m_after_one = adam.first_moment()[0];
        let moved = net.clone();
        adam.step(&mut net, &vec![0.0; g.len()]).unwrap();
        assert!(adam.first_moment()[0].abs() < m_after_one.abs());
        // A zero gradient still moves along the decaying first moment; with no
        // history at all, nothing moves.
        let mut fresh = before.clone();
        let mut adam0 = Adam::for_net(&fresh, 1e-3);
        adam0.step(&mut fresh, &vec![0.0; g.len()]).unwrap();
        assert_eq!(fresh, before);
        assert_ne!(moved, before);
    }

    #[test]
    fn adam_first_step_is_lr_sign() {
        let mut net = Mlp::zeros(&[1, 1]);
        let mut adam = Adam::for_net(&net, 1e-3);
        adam.step(&mut net, &[0.37, -5.0]).unwrap();
        assert!((net.params()[0] + 1e-3).abs() < 1e-9);
        assert!((net.params()[1] - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn adam_constant_gradient_step_size() {
        let mut net = Mlp::zeros(&[1, 1]);
        let mut adam = Adam::for_net(&net, 1e-3);
        let mut last = 0.0;
        for _ in 0..5000 {
            last = net.params()[0];
            adam.step(&mut net, &[2.5, 0.0]).unwrap();
        }
        let step = net.params()[0] - last;
        assert!((step + 1e-3).abs() < 1e-8);
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut net = Mlp::zeros(&[1, 1]);
        let mut adam = Adam::for_net(&net, 1e-3);
        assert!(matches!(
            adam.step(&mut net, &[f64::NAN, 0.0]),
            Err(Error::NonFiniteGradient(0))
        ));
        assert_eq!(adam.steps(), 0);
    }

    #[test]
    fn polyak_endpoints_and_composition() {
        let online = Mlp::new(&[2, 3, 1], 1);
        let target0 = Mlp::new(&[2, 3, 1], 2);

        let mut t = target0.clone();
        polyak_update(&mut t, &online, 1.0).unwrap();
        assert_eq!(t.params(), online.params());

        let mut t = target0.clone();
        polyak_update(&mut t, &online, 0.0).unwrap();
        assert_eq!(t.params(), target0.params());

        let tau = 0.01;
        let mut twice = target0.clone();
        polyak_update(&mut twice, &online, tau).unwrap();
        polyak_update(&mut twice, &online, tau).unwrap();
        let mut once = target0.clone();
        polyak_update(&mut once, &online, 1.0 - (1.0 - tau) * (1.0 - tau)).unwrap();
        for (a, b) in twice.params().iter().zip(once.params()) {
            assert!((a - b).abs() < 1e-12);
        }

        let mut other = Mlp::new(&[2, 4, 1], 0);
        assert!(polyak_update(&mut other, &online, 0.5).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = Mlp::new(&[3, 7, 5], 42);
        let text = serde_json::to_string(&net.to_checkpoint()).unwrap();
        let back = Mlp::from_checkpoint(serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back, net);
        let xs = [0.1, 0.2, 0.3];
        assert_eq!(back.forward_one(&xs).unwrap(), net.forward_one(&xs).unwrap());

        let mut bad = net.to_checkpoint();
        bad.params.pop();
        assert!(Mlp::from_checkpoint(bad).is_err());
        let mut bad = net.to_checkpoint();
        bad.format_version = 99;
        assert!(Mlp::from_checkpoint(bad).is_err());

        let direct: Mlp = serde_json::from_str(&serde_json::to_string(&net).unwrap()).unwrap();
        assert_eq!(direct, net);
        let text = serde_json::to_string(&net).unwrap();
        assert!(text.contains("\"format_version\":1"));
    }

    #[test]
    fn training_is_deterministic() {
        let run = || {
            let mut net = Mlp::new(&[2, 16, 3], 5);
            let mut adam = Adam::for_net(&net, 1e-2);
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            for _ in 0..50 {
                let xs = random_inputs(&mut rng, 8 * 2);
                let sel: Vec<usize> = (0..8).map(|_| rng.gen_range(0..3)).collect();
                let ys = random_inputs(&mut rng, 8);
                let (_, g) = net.mse_grad(&xs, 8, &sel, &ys).unwrap();
                adam.step(&mut net, &g).unwrap();
            }
            net
        };
        let (a, b) = (run(), run());
        assert!(a.params().iter().zip(b.params()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
