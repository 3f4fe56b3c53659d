//! Small dense networks with hand-written backprop.
//!
//! Every learner in the crate is a stack of fully connected layers whose
//! parameters live in one flat `Vec<f64>`. Keeping them flat makes Adam,
//! Polyak averaging, checkpointing and finite-difference checks trivial.
//! Batches are row-major `batch × dim` slices.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, xs: &mut [f64]) {
        match self {
            Activation::Identity => {}
            Activation::Relu => xs.iter_mut().for_each(|x| *x = x.max(0.0)),
            Activation::Tanh => xs.iter_mut().for_each(|x| *x = x.tanh()),
        }
    }

    /// Multiplies `grad` by the derivative, expressed through the layer output.
    fn backprop(self, out: &[f64], grad: &mut [f64]) {
        match self {
            Activation::Identity => {}
            Activation::Relu => grad.iter_mut().zip(out).for_each(|(g, &y)| {
                if y <= 0.0 {
                    *g = 0.0
                }
            }),
            Activation::Tanh => grad
                .iter_mut()
                .zip(out)
                .for_each(|(g, &y)| *g *= 1.0 - y * y),
        }
    }
}

/// `c = a · b + beta · c` for strided row/column layouts.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(m == 0 || k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(k == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    debug_assert!(c.len() > (m - 1) * rsc + (n - 1) * csc);
    // SAFETY: the asserted extents above bound every index dgemm touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Multi-layer perceptron with a shared hidden activation.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    hidden: Activation,
    output: Activation,
    params: Vec<f64>,
}

/// Activations saved by [`Mlp::forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct Cache {
    batch: usize,
    acts: Vec<Vec<f64>>,
}

impl Cache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("cache holds at least the input")
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

impl Mlp {
    /// Layers `sizes[0] → sizes[1] → … → sizes[n]`, weights drawn uniformly
    /// from ±1/√fan_in.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs an input and an output size");
        let mut params = Vec::new();
        for pair in sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
            for _ in 0..(fan_in * fan_out + fan_out) {
                params.push(rng.random_range(-bound..=bound));
            }
        }
        Mlp {
            sizes: sizes.to_vec(),
            hidden,
            output,
            params,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.num_layers() {
            self.output
        } else {
            self.hidden
        }
    }

    /// Offsets of the weight matrix (`fan_in × fan_out`, row-major) and bias.
    fn offsets(&self, layer: usize) -> (usize, usize) {
        let mut off = 0;
        for l in 0..layer {
            off += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        (off, off + self.sizes[layer] * self.sizes[layer + 1])
    }

    /// Scales the last layer's weights and biases, e.g. to start policies
    /// near zero output.
    pub fn scale_output_layer(&mut self, factor: f64) {
        let last = self.num_layers() - 1;
        let (w, _) = self.offsets(last);
        self.params[w..].iter_mut().for_each(|p| *p *= factor);
    }

    /// Zeroes every weight matrix, leaving biases untouched.
    pub fn zero_weights(&mut self) {
        for layer in 0..self.num_layers() {
            let (w, b) = self.offsets(layer);
            self.params[w..b].iter_mut().for_each(|p| *p = 0.0);
        }
    }

    pub fn forward(&self, input: &[f64], batch: usize) -> Cache {
        assert_eq!(
            input.len(),
            batch * self.input_dim(),
            "input length does not match batch × input_dim"
        );
        let mut acts = Vec::with_capacity(self.sizes.len());
        acts.push(input.to_vec());
        for layer in 0..self.num_layers() {
            let (fan_in, fan_out) = (self.sizes[layer], self.sizes[layer + 1]);
            let (w_off, b_off) = self.offsets(layer);
            let weights = &self.params[w_off..b_off];
            let bias = &self.params[b_off..b_off + fan_out];
            let mut out = Vec::with_capacity(batch * fan_out);
            for _ in 0..batch {
                out.extend_from_slice(bias);
            }
            gemm(
                batch,
                fan_in,
                fan_out,
                &acts[layer],
                (fan_in, 1),
                weights,
                (fan_out, 1),
                1.0,
                &mut out,
                (fan_out, 1),
            );
            self.activation(layer).apply(&mut out);
            acts.push(out);
        }
        Cache { batch, acts }
    }

    pub fn predict(&self, input: &[f64], batch: usize) -> Vec<f64> {
        let mut cache = self.forward(input, batch);
        cache.acts.pop().unwrap()
    }

    /// Accumulates ∂L/∂θ into `grad` given ∂L/∂output, returning ∂L/∂input
    /// when `want_input_grad` is set (an empty vector otherwise).
    pub fn backward(
        &self,
        cache: &Cache,
        d_out: &[f64],
        grad: &mut [f64],
        want_input_grad: bool,
    ) -> Vec<f64> {
        let batch = cache.batch;
        assert_eq!(d_out.len(), batch * self.output_dim());
        assert_eq!(grad.len(), self.params.len());
        let mut delta = d_out.to_vec();
        for layer in (0..self.num_layers()).rev() {
            let (fan_in, fan_out) = (self.sizes[layer], self.sizes[layer + 1]);
            self.activation(layer)
                .backprop(&cache.acts[layer + 1], &mut delta);
            let (w_off, b_off) = self.offsets(layer);
            let input = &cache.acts[layer];
            // dW += Xᵀ · δ
            gemm(
                fan_in,
                batch,
                fan_out,
                input,
                (1, fan_in),
                &delta,
                (fan_out, 1),
                1.0,
                &mut grad[w_off..b_off],
                (fan_out, 1),
            );
            let gb = &mut grad[b_off..b_off + fan_out];
            for row in delta.chunks_exact(fan_out) {
                gb.iter_mut().zip(row).for_each(|(g, d)| *g += d);
            }
            if layer == 0 && !want_input_grad {
                return Vec::new();
            }
            // δ_prev = δ · Wᵀ
            let mut prev = vec![0.0; batch * fan_in];
            gemm(
                batch,
                fan_out,
                fan_in,
                &delta,
                (fan_out, 1),
                &self.params[w_off..b_off],
                (1, fan_out),
                0.0,
                &mut prev,
                (fan_in, 1),
            );
            delta = prev;
        }
        delta
    }

    /// `self ← tau · online + (1 − tau) · self`.
    pub fn soft_update_from(&mut self, online: &Mlp, tau: f64) {
        assert_eq!(self.params.len(), online.params.len());
        for (t, o) in self.params.iter_mut().zip(&online.params) {
            *t = tau * o + (1.0 - tau) * *t;
        }
    }
}

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
        }
    }
}

/// Adam optimizer over a flat parameter vector. Always minimizes.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    const EPS: f64 = 1e-8;

    pub fn new(num_params: usize, config: AdamConfig) -> Self {
        Adam {
            config,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        let AdamConfig { lr, beta1, beta2 } = self.config;
        self.t += 1;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * grad[i];
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + Self::EPS);
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }
}

pub fn all_finite(xs: &[f64]) -> bool {
    xs.iter().all(|x| x.is_finite())
}

/// Numerically stable log-softmax of one row.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

/// Writes one-hot(index) of width `n` into `out`.
pub fn one_hot_into(index: usize, n: usize, out: &mut Vec<f64>) {
    out.extend((0..n).map(|i| if i == index { 1.0 } else { 0.0 }));
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// ‖a − b‖ / max(‖a‖, ‖b‖, tiny).
    pub(crate) fn rel_error(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        diff / na.max(nb).max(1e-12)
    }

    fn loss(net: &Mlp, x: &[f64], batch: usize, target: &[f64]) -> f64 {
        net.predict(x, batch)
            .iter()
            .zip(target)
            .map(|(y, t)| 0.5 * (y - t).powi(2))
            .sum()
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::new(&[5, 7, 6, 3], Activation::Tanh, Activation::Identity, &mut rng);
        let batch = 4;
        let x: Vec<f64> = (0..batch * 5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let target: Vec<f64> = (0..batch * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cache = net.forward(&x, batch);
        let d_out: Vec<f64> = cache
            .output()
            .iter()
            .zip(&target)
            .map(|(y, t)| y - t)
            .collect();
        let mut grad = vec![0.0; net.num_params()];
        let d_in = net.backward(&cache, &d_out, &mut grad, true);

        let h = 1e-6;
        let mut fd = vec![0.0; net.num_params()];
        for i in 0..net.num_params() {
            let mut plus = net.clone();
            plus.params_mut()[i] += h;
            let mut minus = net.clone();
            minus.params_mut()[i] -= h;
            fd[i] = (loss(&plus, &x, batch, &target) - loss(&minus, &x, batch, &target)) / (2.0 * h);
        }
        assert!(rel_error(&grad, &fd) < 1e-6, "param grad mismatch");

        let mut fd_in = vec![0.0; x.len()];
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            fd_in[i] = (loss(&net, &xp, batch, &target) - loss(&net, &xm, batch, &target)) / (2.0 * h);
        }
        assert!(rel_error(&d_in, &fd_in) < 1e-6, "input grad mismatch");
    }

    #[test]
    fn relu_network_gradient_away_from_kinks() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = Mlp::new(&[3, 8, 2], Activation::Relu, Activation::Relu, &mut rng);
        let x = vec![0.3, -0.7, 0.9];
        let target = vec![0.5, -0.5];
        let cache = net.forward(&x, 1);
        let d_out: Vec<f64> = cache.output().iter().zip(&target).map(|(y, t)| y - t).collect();
        let mut grad = vec![0.0; net.num_params()];
        net.backward(&cache, &d_out, &mut grad, false);
        let h = 1e-7;
        for i in 0..net.num_params() {
            let mut p = net.clone();
            p.params_mut()[i] += h;
            let mut m = net.clone();
            m.params_mut()[i] -= h;
            let fd = (loss(&p, &x, 1, &target) - loss(&m, &x, 1, &target)) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-5, "param {i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut params = vec![3.0, -2.0];
        let mut adam = Adam::new(2, AdamConfig { lr: 0.05, ..Default::default() });
        for _ in 0..2000 {
            let grad: Vec<f64> = params.iter().map(|p| 2.0 * (p - 1.0)).collect();
            adam.step(&mut params, &grad);
        }
        assert!(params.iter().all(|p| (p - 1.0).abs() < 1e-3));
    }

    #[test]
    fn soft_update_is_convex_combination() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let online = Mlp::new(&[2, 3, 1], Activation::Relu, Activation::Identity, &mut rng);
        let mut target = Mlp::new(&[2, 3, 1], Activation::Relu, Activation::Identity, &mut rng);
        let before = target.clone();
        target.soft_update_from(&online, 0.25);
        for i in 0..online.num_params() {
            let expected = 0.25 * online.params()[i] + 0.75 * before.params()[i];
            assert!((target.params()[i] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn log_softmax_normalizes() {
        let ls = log_softmax(&[1000.0, 1001.0, -3.0]);
        let total: f64 = ls.iter().map(|l| l.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}
