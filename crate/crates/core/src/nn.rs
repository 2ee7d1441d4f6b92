//! Minimal dense-network substrate: forward/backward passes, double
//! backpropagation for the discriminator's input-gradient penalty, a
//! diagonal-Gaussian policy head, and an adaptive-moment optimizer.
//!
//! Everything is generic over the float type: `f32` is the production
//! arithmetic, `f64` the verification mode used by the gradient test suite.
//! Parameters live in one flat vector (per layer: row-major weights, then
//! biases) so optimizer state and checkpoints are trivial.

use crate::error::{Error, Result};
use crate::rng::standard_normal;
use num_traits::Float;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 1.0;

/// Fully-connected network, tanh hidden activations, identity output.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpNet<F: Float> {
    layer_sizes: Vec<usize>,
    params: Vec<F>,
}

fn param_count(layer_sizes: &[usize]) -> usize {
    layer_sizes
        .windows(2)
        .map(|w| (w[0] + 1) * w[1])
        .sum()
}

impl<F: Float> MlpNet<F> {
    /// Zero-initialized network.
    pub fn new(layer_sizes: &[usize]) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.iter().any(|&n| n == 0) {
            return Err(Error::contract("network needs >= 2 nonzero layer sizes"));
        }
        Ok(Self {
            params: vec![F::zero(); param_count(layer_sizes)],
            layer_sizes: layer_sizes.to_vec(),
        })
    }

    /// Xavier-uniform initialization; `gain` scales the usual limit (use a
    /// small gain on a policy output layer for near-zero initial actions).
    pub fn random(layer_sizes: &[usize], rng: &mut ChaCha8Rng, gain: f64) -> Result<Self> {
        let mut net = Self::new(layer_sizes)?;
        let mut off = 0;
        for w in layer_sizes.windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            let limit = gain * (6.0 / (n_in + n_out) as f64).sqrt();
            for p in &mut net.params[off..off + n_in * n_out] {
                *p = F::from(rng.gen_range(-limit..limit)).unwrap();
            }
            off += (n_in + 1) * n_out;
        }
        Ok(net)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn params(&self) -> &[F] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [F] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Rebuild from a flat parameter vector (checkpoint load path).
    pub fn from_params(layer_sizes: &[usize], params: Vec<F>) -> Result<Self> {
        let net = Self::new(layer_sizes)?;
        if params.len() != net.params.len() {
            return Err(Error::contract("parameter vector length mismatch"));
        }
        Ok(Self {
            layer_sizes: net.layer_sizes,
            params,
        })
    }

    /// Cast parameters to another float type (f32 <-> f64 verification).
    pub fn map_params<G: Float>(&self) -> MlpNet<G> {
        MlpNet {
            layer_sizes: self.layer_sizes.clone(),
            params: self
                .params
                .iter()
                .map(|p| G::from(p.to_f64().unwrap()).unwrap())
                .collect(),
        }
    }

    fn check_input(&self, input: &[F]) -> Result<()> {
        if input.len() != self.layer_sizes[0] {
            return Err(Error::contract("input length does not match first layer"));
        }
        Ok(())
    }

    /// Affine step for one layer starting at parameter offset `off`.
    fn affine(&self, off: usize, n_in: usize, n_out: usize, x: &[F], out: &mut Vec<F>) {
        out.clear();
        let weights = &self.params[off..off + n_in * n_out];
        let biases = &self.params[off + n_in * n_out..off + (n_in + 1) * n_out];
        for o in 0..n_out {
            let row = &weights[o * n_in..(o + 1) * n_in];
            let mut acc = biases[o];
            for (w, xi) in row.iter().zip(x) {
                acc = acc + *w * *xi;
            }
            out.push(acc);
        }
    }

    /// All layer activations: `h[0]` is the input, `h.last()` the output.
    fn forward_full(&self, input: &[F]) -> Result<Vec<Vec<F>>> {
        self.check_input(input)?;
        let n_layers = self.layer_sizes.len() - 1;
        let mut hs = Vec::with_capacity(n_layers + 1);
        hs.push(input.to_vec());
        let mut off = 0;
        let mut z = Vec::new();
        for l in 0..n_layers {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            self.affine(off, n_in, n_out, &hs[l], &mut z);
            off += (n_in + 1) * n_out;
            let h = if l + 1 < n_layers {
                z.iter().map(|v| v.tanh()).collect()
            } else {
                z.clone()
            };
            hs.push(h);
        }
        Ok(hs)
    }

    pub fn forward(&self, input: &[F]) -> Result<Vec<F>> {
        Ok(self.forward_full(input)?.pop().unwrap())
    }

    /// Forward over a row-major batch; result is row-major `n x output_dim`.
    pub fn forward_batch(&self, inputs: &[F], n: usize) -> Result<Vec<F>> {
        if inputs.len() != n * self.input_dim() {
            return Err(Error::contract("batch buffer length mismatch"));
        }
        let d = self.input_dim();
        let mut out = Vec::with_capacity(n * self.output_dim());
        for row in 0..n {
            out.extend(self.forward(&inputs[row * d..(row + 1) * d])?);
        }
        Ok(out)
    }

    /// Reverse-mode gradients of `upstream . output` with respect to all
    /// parameters and the input.
    pub fn backward(&self, input: &[F], upstream: &[F]) -> Result<(Vec<F>, Vec<F>)> {
        if upstream.len() != self.output_dim() {
            return Err(Error::contract("upstream length does not match output"));
        }
        let hs = self.forward_full(input)?;
        let n_layers = self.layer_sizes.len() - 1;
        let mut grads = vec![F::zero(); self.params.len()];
        // Offsets of each layer's parameter block.
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for w in self.layer_sizes.windows(2) {
            offsets.push(off);
            off += (w[0] + 1) * w[1];
        }

        let mut delta = upstream.to_vec();
        let mut input_grad = Vec::new();
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let off = offsets[l];
            let h_prev = &hs[l];
            // dL/dW[o][i] = delta[o] * h_prev[i]; dL/db[o] = delta[o].
            for o in 0..n_out {
                let g_row = &mut grads[off + o * n_in..off + (o + 1) * n_in];
                for (g, hp) in g_row.iter_mut().zip(h_prev) {
                    *g = *g + delta[o] * *hp;
                }
                grads[off + n_in * n_out + o] = delta[o];
            }
            // gamma = W^T delta, the gradient w.r.t. this layer's input.
            let weights = &self.params[off..off + n_in * n_out];
            let mut gamma = vec![F::zero(); n_in];
            for o in 0..n_out {
                let row = &weights[o * n_in..(o + 1) * n_in];
                for (g, w) in gamma.iter_mut().zip(row) {
                    *g = *g + *w * delta[o];
                }
            }
            if l == 0 {
                input_grad = gamma;
            } else {
                // Through the tanh of the previous hidden layer.
                delta = gamma
                    .iter()
                    .zip(&hs[l])
                    .map(|(g, h)| *g * (F::one() - *h * *h))
                    .collect();
            }
        }
        Ok((grads, input_grad))
    }

    /// Gradient with respect to the parameters of the input-gradient
    /// penalty `P = || d D / d x ||^2` of a scalar-output network.
    ///
    /// Double backpropagation, computed analytically: `dP/dtheta =
    /// 2 g^T (d/dtheta) (dD/dx)` with `g = dD/dx`, which equals the
    /// directional (forward-mode) derivative of the ordinary parameter
    /// gradient along the input direction `g`, scaled by 2.
    pub fn grad_penalty_backward(&self, input: &[F]) -> Result<Vec<F>> {
        if self.output_dim() != 1 {
            return Err(Error::contract("gradient penalty needs a scalar output"));
        }
        let hs = self.forward_full(input)?;
        let n_layers = self.layer_sizes.len() - 1;
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for w in self.layer_sizes.windows(2) {
            offsets.push(off);
            off += (w[0] + 1) * w[1];
        }

        // First reverse pass: deltas (gradient at each pre-activation) and
        // gammas (gradient at each layer input).
        let mut deltas = vec![Vec::new(); n_layers];
        let mut gammas = vec![Vec::new(); n_layers];
        let mut delta = vec![F::one()];
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            deltas[l] = delta.clone();
            let weights = &self.params[offsets[l]..offsets[l] + n_in * n_out];
            let mut gamma = vec![F::zero(); n_in];
            for o in 0..n_out {
                let row = &weights[o * n_in..(o + 1) * n_in];
                for (g, w) in gamma.iter_mut().zip(row) {
                    *g = *g + *w * delta[o];
                }
            }
            gammas[l] = gamma.clone();
            if l > 0 {
                delta = gamma
                    .iter()
                    .zip(&hs[l])
                    .map(|(g, h)| *g * (F::one() - *h * *h))
                    .collect();
            }
        }
        let g = gammas[0].clone(); // dD/dx

        // Tangent forward pass along direction g: h_dot per layer.
        let mut h_dots: Vec<Vec<F>> = Vec::with_capacity(n_layers + 1);
        h_dots.push(g);
        for l in 0..n_layers {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let weights = &self.params[offsets[l]..offsets[l] + n_in * n_out];
            let mut z_dot = vec![F::zero(); n_out];
            for o in 0..n_out {
                let row = &weights[o * n_in..(o + 1) * n_in];
                let mut acc = F::zero();
                for (w, xd) in row.iter().zip(&h_dots[l]) {
                    acc = acc + *w * *xd;
                }
                z_dot[o] = acc;
            }
            let h_dot = if l + 1 < n_layers {
                // d tanh(z) = (1 - h^2) dz
                z_dot
                    .iter()
                    .zip(&hs[l + 1])
                    .map(|(zd, h)| *zd * (F::one() - *h * *h))
                    .collect()
            } else {
                z_dot
            };
            h_dots.push(h_dot);
        }

        // Tangent reverse pass: delta_dot, and with it the directional
        // derivative of each parameter gradient.
        let mut pen_grads = vec![F::zero(); self.params.len()];
        let two = F::from(2.0).unwrap();
        let mut delta_dot = vec![F::zero(); 1];
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let off = offsets[l];
            // R{dD/dW[o][i]} = delta_dot[o] h[i] + delta[o] h_dot[i];
            // R{dD/db[o]} = delta_dot[o]. Final answer is 2 R{...}.
            for o in 0..n_out {
                let row = &mut pen_grads[off + o * n_in..off + (o + 1) * n_in];
                for i in 0..n_in {
                    row[i] = two * (delta_dot[o] * hs[l][i] + deltas[l][o] * h_dots[l][i]);
                }
                pen_grads[off + n_in * n_out + o] = two * delta_dot[o];
            }
            if l == 0 {
                break;
            }
            // gamma_dot = W^T delta_dot, then through the tanh tangent:
            // delta_dot_{l-1} = gamma_dot (1-h^2) + gamma d/dt{(1-h^2)}
            //                 = gamma_dot (1-h^2) - 2 gamma h h_dot.
            let weights = &self.params[off..off + n_in * n_out];
            let mut gamma_dot = vec![F::zero(); n_in];
            for o in 0..n_out {
                let row = &weights[o * n_in..(o + 1) * n_in];
                for (gd, w) in gamma_dot.iter_mut().zip(row) {
                    *gd = *gd + *w * delta_dot[o];
                }
            }
            delta_dot = (0..n_in)
                .map(|i| {
                    let h = hs[l][i];
                    let phi = F::one() - h * h;
                    gamma_dot[i] * phi - two * gammas[l][i] * h * h_dots[l][i]
                })
                .collect();
        }
        Ok(pen_grads)
    }
}

/// Adaptive-moment optimizer state for one flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F: Float> {
    pub m: Vec<F>,
    pub v: Vec<F>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<F: Float> AdamState<F> {
    pub fn new(param_count: usize, lr: f64) -> Self {
        Self {
            m: vec![F::zero(); param_count],
            v: vec![F::zero(); param_count],
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected adaptive-moment update, in place.
pub fn adam_step<F: Float>(
    params: &mut [F],
    grads: &[F],
    state: &mut AdamState<F>,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::contract("optimizer shape mismatch"));
    }
    if let Some(idx) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::contract(format!(
            "non-finite gradient at index {idx}: gradient explosion or invalid loss"
        )));
    }
    state.step += 1;
    let b1 = F::from(state.beta1).unwrap();
    let b2 = F::from(state.beta2).unwrap();
    let one = F::one();
    let lr = F::from(state.lr).unwrap();
    let eps = F::from(state.eps).unwrap();
    let corr1 = F::from(1.0 - state.beta1.powi(state.step as i32)).unwrap();
    let corr2 = F::from(1.0 - state.beta2.powi(state.step as i32)).unwrap();
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (one - b1) * g;
        state.v[i] = b2 * state.v[i] + (one - b2) * g * g;
        let m_hat = state.m[i] / corr1;
        let v_hat = state.v[i] / corr2;
        params[i] = params[i] - lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Diagonal-Gaussian policy: a mean network plus per-action log-std,
/// clamped to [`LOG_STD_MIN`, `LOG_STD_MAX`].
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy<F: Float> {
    pub mean_net: MlpNet<F>,
    pub log_std: Vec<F>,
}

impl<F: Float> GaussianPolicy<F> {
    pub fn new(mean_net: MlpNet<F>, initial_log_std: f64) -> Self {
        let dim = mean_net.output_dim();
        let mut p = Self {
            mean_net,
            log_std: vec![F::from(initial_log_std).unwrap(); dim],
        };
        p.clamp_log_std();
        p
    }

    pub fn action_dim(&self) -> usize {
        self.log_std.len()
    }

    pub fn clamp_log_std(&mut self) {
        let lo = F::from(LOG_STD_MIN).unwrap();
        let hi = F::from(LOG_STD_MAX).unwrap();
        for s in &mut self.log_std {
            *s = s.max(lo).min(hi);
        }
    }

    /// Sample an action and its log-probability.
    pub fn sample(&self, obs: &[F], rng: &mut ChaCha8Rng) -> Result<(Vec<F>, F)> {
        let mean = self.mean_net.forward(obs)?;
        let mut action = Vec::with_capacity(mean.len());
        for (m, ls) in mean.iter().zip(&self.log_std) {
            let sigma = ls.exp();
            let eps = F::from(standard_normal(rng)).unwrap();
            action.push(*m + sigma * eps);
        }
        let logp = gaussian_log_prob(&mean, &self.log_std, &action);
        Ok((action, logp))
    }

    /// Deterministic (mean) action, for evaluation.
    pub fn mean_action(&self, obs: &[F]) -> Result<Vec<F>> {
        self.mean_net.forward(obs)
    }

    pub fn log_prob(&self, obs: &[F], action: &[F]) -> Result<F> {
        let mean = self.mean_net.forward(obs)?;
        Ok(gaussian_log_prob(&mean, &self.log_std, action))
    }

    /// Differential entropy of the diagonal Gaussian.
    pub fn entropy(&self) -> F {
        let half_ln_2pi_e = F::from(0.5 * (std::f64::consts::TAU * std::f64::consts::E).ln()).unwrap();
        self.log_std
            .iter()
            .fold(F::zero(), |acc, ls| acc + *ls + half_ln_2pi_e)
    }
}

/// Log-density of a diagonal Gaussian at `action`.
pub fn gaussian_log_prob<F: Float>(mean: &[F], log_std: &[F], action: &[F]) -> F {
    let half = F::from(0.5).unwrap();
    let half_ln_2pi = F::from(0.5 * std::f64::consts::TAU.ln()).unwrap();
    let mut acc = F::zero();
    for i in 0..mean.len() {
        let sigma = log_std[i].exp();
        let z = (action[i] - mean[i]) / sigma;
        acc = acc - half * z * z - log_std[i] - half_ln_2pi;
    }
    acc
}

/// Per-dimension pieces of `d log pi / d mean` and `d log pi / d log_std`,
/// used by the policy-gradient update.
pub fn gaussian_log_prob_grads<F: Float>(
    mean: &[F],
    log_std: &[F],
    action: &[F],
) -> (Vec<F>, Vec<F>) {
    let one = F::one();
    let mut d_mean = Vec::with_capacity(mean.len());
    let mut d_log_std = Vec::with_capacity(mean.len());
    for i in 0..mean.len() {
        let sigma = log_std[i].exp();
        let z = (action[i] - mean[i]) / sigma;
        d_mean.push(z / sigma);
        d_log_std.push(z * z - one);
    }
    (d_mean, d_log_std)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;

    /// Loss used by the finite-difference oracles: upstream . output.
    fn scalar_loss<F: Float>(net: &MlpNet<F>, input: &[F], upstream: &[F]) -> F {
        net.forward(input)
            .unwrap()
            .iter()
            .zip(upstream)
            .fold(F::zero(), |acc, (y, u)| acc + *y * *u)
    }

    fn fd_param_grads(net: &MlpNet<f64>, input: &[f64], upstream: &[f64], h: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(net.param_count());
        for i in 0..net.param_count() {
            let mut plus = net.clone();
            plus.params_mut()[i] += h;
            let mut minus = net.clone();
            minus.params_mut()[i] -= h;
            out.push(
                (scalar_loss(&plus, input, upstream) - scalar_loss(&minus, input, upstream))
                    / (2.0 * h),
            );
        }
        out
    }

    fn assert_close_rel(a: &[f64], b: &[f64], tol: f64, what: &str) {
        for (i, (x, y)) in a.iter().zip(b).enumerate() {
            let scale = 1.0_f64.max(x.abs()).max(y.abs());
            assert!(
                (x - y).abs() <= tol * scale,
                "{what}[{i}]: {x} vs {y} (tol {tol})"
            );
        }
    }

    fn random_net(rng: &mut ChaCha8Rng, scalar_out: bool) -> MlpNet<f64> {
        let n_hidden = rng.gen_range(0..=2);
        let mut sizes = vec![rng.gen_range(1..=8)];
        for _ in 0..n_hidden {
            sizes.push(rng.gen_range(1..=32));
        }
        sizes.push(if scalar_out { 1 } else { rng.gen_range(1..=4) });
        MlpNet::random(&sizes, rng, 1.0).unwrap()
    }

    #[test]
    fn zero_net_maps_everything_to_zero() {
        let net = MlpNet::<f32>::new(&[5, 7, 3]).unwrap();
        let out = net.forward(&[1.0, -2.0, 0.5, 3.0, -1.0]).unwrap();
        assert!(out.iter().all(|y| *y == 0.0));
    }

    #[test]
    fn identity_linear_layer_passes_input_through() {
        let mut net = MlpNet::<f64>::new(&[3, 3]).unwrap();
        for i in 0..3 {
            net.params_mut()[i * 3 + i] = 1.0;
        }
        let x = [0.3, -1.2, 2.5];
        assert_eq!(net.forward(&x).unwrap(), x.to_vec());
    }

    #[test]
    fn shape_mismatch_is_a_contract_error() {
        let net = MlpNet::<f32>::new(&[4, 2]).unwrap();
        assert!(net.forward(&[1.0; 3]).is_err());
        assert!(net.backward(&[1.0; 4], &[1.0; 3]).is_err());
        assert!(net.grad_penalty_backward(&[1.0; 4]).is_err());
    }

    #[test]
    fn batch_forward_equals_per_sample_forward() {
        let mut rng = seeded_rng(41);
        let net = MlpNet::<f32>::random(&[6, 16, 3], &mut rng, 1.0).unwrap();
        let n = 32;
        let batch: Vec<f32> = (0..n * 6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let batched = net.forward_batch(&batch, n).unwrap();
        for row in 0..n {
            let single = net.forward(&batch[row * 6..(row + 1) * 6]).unwrap();
            for (a, b) in single.iter().zip(&batched[row * 3..(row + 1) * 3]) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn linear_backward_matches_the_outer_product() {
        // One linear layer: dL/dW = upstream (x) input, dL/db = upstream,
        // dL/dx = W^T upstream.
        let mut rng = seeded_rng(43);
        let net = MlpNet::<f64>::random(&[3, 2], &mut rng, 1.0).unwrap();
        let x = [0.5, -1.0, 2.0];
        let u = [2.0, -3.0];
        let (grads, input_grad) = net.backward(&x, &u).unwrap();
        for o in 0..2 {
            for i in 0..3 {
                assert!((grads[o * 3 + i] - u[o] * x[i]).abs() < 1e-12);
            }
            assert!((grads[6 + o] - u[o]).abs() < 1e-12);
        }
        for i in 0..3 {
            let expect = net.params()[i] * u[0] + net.params()[3 + i] * u[1];
            assert!((input_grad[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_match_finite_differences_in_f64() {
        let mut rng = seeded_rng(47);
        for _ in 0..25 {
            let net = random_net(&mut rng, false);
            let input: Vec<f64> = (0..net.input_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let upstream: Vec<f64> =
                (0..net.output_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (grads, input_grad) = net.backward(&input, &upstream).unwrap();
            let fd = fd_param_grads(&net, &input, &upstream, 1e-6);
            assert_close_rel(&grads, &fd, 1e-6, "param grad");
            let fd_input: Vec<f64> = (0..input.len())
                .map(|i| {
                    let mut plus = input.clone();
                    plus[i] += 1e-6;
                    let mut minus = input.clone();
                    minus[i] -= 1e-6;
                    (scalar_loss(&net, &plus, &upstream) - scalar_loss(&net, &minus, &upstream))
                        / 2e-6
                })
                .collect();
            assert_close_rel(&input_grad, &fd_input, 1e-6, "input grad");
        }
    }

    #[test]
    fn gradients_match_finite_differences_in_f32() {
        let mut rng = seeded_rng(53);
        for _ in 0..10 {
            let net64 = random_net(&mut rng, false);
            let net32: MlpNet<f32> = net64.map_params();
            let input: Vec<f32> = (0..net32.input_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let upstream: Vec<f32> =
                (0..net32.output_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (grads, _) = net32.backward(&input, &upstream).unwrap();
            // Finite differences on the f64 twin of the same parameters.
            let input64: Vec<f64> = input.iter().map(|x| *x as f64).collect();
            let upstream64: Vec<f64> = upstream.iter().map(|x| *x as f64).collect();
            let fd = fd_param_grads(&net64, &input64, &upstream64, 1e-3);
            let grads64: Vec<f64> = grads.iter().map(|g| *g as f64).collect();
            assert_close_rel(&grads64, &fd, 1e-3, "f32 param grad");
        }
    }

    #[test]
    fn linear_discriminator_penalty_gradient_is_two_w() {
        let mut rng = seeded_rng(59);
        let net = MlpNet::<f64>::random(&[4, 1], &mut rng, 1.0).unwrap();
        let x = [0.1, -0.2, 0.3, 0.4];
        let pen = net.grad_penalty_backward(&x).unwrap();
        for i in 0..4 {
            assert!((pen[i] - 2.0 * net.params()[i]).abs() < 1e-12);
        }
        assert_eq!(pen[4], 0.0, "bias does not enter the input gradient");
    }

    #[test]
    fn zero_net_has_zero_penalty_gradient() {
        let net = MlpNet::<f64>::new(&[4, 8, 1]).unwrap();
        let pen = net.grad_penalty_backward(&[0.5; 4]).unwrap();
        assert!(pen.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn penalty_gradient_matches_finite_differences() {
        // P(theta) = ||dD/dx||^2, evaluated through backward(); central
        // differences over every parameter.
        let mut rng = seeded_rng(61);
        for _ in 0..15 {
            let net = random_net(&mut rng, true);
            let input: Vec<f64> = (0..net.input_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let analytic = net.grad_penalty_backward(&input).unwrap();
            let penalty = |n: &MlpNet<f64>| -> f64 {
                let (_, g) = n.backward(&input, &[1.0]).unwrap();
                g.iter().map(|x| x * x).sum()
            };
            let h = 1e-6;
            let fd: Vec<f64> = (0..net.param_count())
                .map(|i| {
                    let mut plus = net.clone();
                    plus.params_mut()[i] += h;
                    let mut minus = net.clone();
                    minus.params_mut()[i] -= h;
                    (penalty(&plus) - penalty(&minus)) / (2.0 * h)
                })
                .collect();
            assert_close_rel(&analytic, &fd, 1e-6, "penalty grad");
        }
    }

    #[test]
    fn adam_first_step_is_the_closed_form() {
        let mut params = vec![1.0f64, -2.0, 0.0];
        let grads = vec![0.5, -0.25, 2.0];
        let mut state = AdamState::new(3, 1e-3);
        adam_step(&mut params, &grads, &mut state).unwrap();
        // At t=1, m_hat = g and v_hat = g^2, so the update is
        // -lr * g / (|g| + eps).
        for (i, g) in grads.iter().enumerate() {
            let expect = [1.0, -2.0, 0.0][i] - 1e-3 * g / (g.abs() + 1e-8);
            assert!((params[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn adam_zero_grad_keeps_params_and_decays_moments() {
        let mut params = vec![0.7f32];
        let mut state = AdamState::new(1, 1e-2);
        adam_step(&mut params, &[1.0], &mut state).unwrap();
        let after_one = params[0];
        adam_step(&mut params, &[0.0], &mut state).unwrap();
        // Zero gradient still moves parameters while momentum decays, but
        // the first moment must shrink.
        assert!(state.m[0].abs() < 0.1);
        assert!(params[0].is_finite() && (params[0] - after_one).abs() < 1e-2);
    }

    #[test]
    fn adam_is_deterministic_and_rejects_nan() {
        let run = || {
            let mut params = vec![0.1f64, 0.2];
            let mut state = AdamState::new(2, 1e-3);
            for k in 0..50 {
                let g = vec![(k as f64).sin(), (k as f64).cos()];
                adam_step(&mut params, &g, &mut state).unwrap();
            }
            params
        };
        assert_eq!(run(), run());
        let mut params = vec![0.0f64];
        let mut state = AdamState::new(1, 1e-3);
        let err = adam_step(&mut params, &[f64::NAN], &mut state).unwrap_err();
        assert!(err.to_string().contains("non-finite"));
    }

    #[test]
    fn gaussian_log_prob_matches_direct_density() {
        let mut rng = seeded_rng(67);
        for _ in 0..100 {
            let dim = rng.gen_range(1..=5);
            let mean: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let log_std: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..0.5)).collect();
            let action: Vec<f64> = (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let lp = gaussian_log_prob(&mean, &log_std, &action);
            let direct: f64 = (0..dim)
                .map(|i| {
                    let sigma = log_std[i].exp();
                    let density = (-0.5 * ((action[i] - mean[i]) / sigma).powi(2)).exp()
                        / (sigma * std::f64::consts::TAU.sqrt());
                    density.ln()
                })
                .sum();
            assert!((lp - direct).abs() < 1e-6, "{lp} vs {direct}");
        }
    }

    #[test]
    fn entropy_matches_closed_form_and_log_std_is_clamped() {
        let net = MlpNet::<f64>::new(&[3, 2]).unwrap();
        let mut policy = GaussianPolicy::new(net, -0.5);
        let expect: f64 = 2.0 * (-0.5 + 0.5 * (std::f64::consts::TAU * std::f64::consts::E).ln());
        assert!((policy.entropy() - expect).abs() < 1e-9);
        policy.log_std = vec![-10.0, 4.0];
        policy.clamp_log_std();
        assert_eq!(policy.log_std, vec![LOG_STD_MIN, LOG_STD_MAX]);
    }

    #[test]
    fn sampled_actions_have_finite_log_prob_and_track_sigma() {
        let mut rng = seeded_rng(71);
        let net = MlpNet::<f64>::random(&[4, 8, 2], &mut rng, 1.0).unwrap();
        let policy = GaussianPolicy::new(net, -1.0);
        let obs = [0.1, -0.4, 0.7, 0.2];
        let mean = policy.mean_action(&obs).unwrap();
        let mut sq = [0.0f64; 2];
        let n = 20_000;
        for _ in 0..n {
            let (a, lp) = policy.sample(&obs, &mut rng).unwrap();
            assert!(lp.is_finite());
            for d in 0..2 {
                sq[d] += (a[d] - mean[d]).powi(2);
            }
        }
        let sigma = (-1.0f64).exp();
        for s in sq {
            let emp = (s / n as f64).sqrt();
            assert!((emp - sigma).abs() / sigma < 0.05, "empirical sigma {emp}");
        }
    }

    #[test]
    fn log_prob_gradients_match_finite_differences() {
        let mean = vec![0.3f64, -0.7];
        let log_std = vec![-0.2f64, 0.1];
        let action = vec![0.5f64, -1.0];
        let (d_mean, d_ls) = gaussian_log_prob_grads(&mean, &log_std, &action);
        let h = 1e-6;
        for i in 0..2 {
            let mut mp = mean.clone();
            mp[i] += h;
            let mut mm = mean.clone();
            mm[i] -= h;
            let fd = (gaussian_log_prob(&mp, &log_std, &action)
                - gaussian_log_prob(&mm, &log_std, &action))
                / (2.0 * h);
            assert!((d_mean[i] - fd).abs() < 1e-6);
            let mut lp = log_std.clone();
            lp[i] += h;
            let mut lm = log_std.clone();
            lm[i] -= h;
            let fd = (gaussian_log_prob(&mean, &lp, &action)
                - gaussian_log_prob(&mean, &lm, &action))
                / (2.0 * h);
            assert!((d_ls[i] - fd).abs() < 1e-6);
        }
    }

    #[test]
    fn parameter_bytes_round_trip_bit_identically() {
        let mut rng = seeded_rng(73);
        let net = MlpNet::<f32>::random(&[7, 12, 3], &mut rng, 1.0).unwrap();
        let bytes: Vec<u8> = net.params().iter().flat_map(|p| p.to_le_bytes()).collect();
        let restored: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let twin = MlpNet::from_params(&[7, 12, 3], restored).unwrap();
        let x: Vec<f32> = (0..7).map(|_| rng.gen_range(-1.0..1.0)).collect();
        assert_eq!(net.forward(&x).unwrap(), twin.forward(&x).unwrap());
    }
}
