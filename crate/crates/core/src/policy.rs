//! Parametric policies and value functions.
//!
//! [`GaussianPolicy`] is a diagonal Gaussian whose mean comes from an MLP and
//! whose log standard deviation is a free, state-independent vector.
//! [`TabularPolicy`] is a softmax table used by the exact tabular oracle.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::Mlp;

/// Lower bound applied to log standard deviations after every update.
pub const LOG_STD_FLOOR: f64 = -20.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Diagonal Gaussian policy over continuous actions.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPolicy {
    pub mean_net: Mlp,
    pub log_std: Vec<f64>,
}

impl GaussianPolicy {
    /// Policy with `hidden` tanh layers, orthogonal init, final layer scaled
    /// by 0.01 and unit initial standard deviation.
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Self {
        let sizes = layer_sizes(state_dim, hidden, action_dim);
        Self {
            mean_net: Mlp::orthogonal_init(&sizes, 0.01, rng),
            log_std: vec![0.0; action_dim],
        }
    }

    pub fn state_dim(&self) -> usize {
        self.mean_net.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.log_std.len()
    }

    pub fn num_params(&self) -> usize {
        self.mean_net.num_params() + self.log_std.len()
    }

    /// Mean-network parameters followed by the log standard deviations.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = self.mean_net.flat();
        out.extend_from_slice(&self.log_std);
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Dimension {
                what: "policy parameter vector",
                expected: self.num_params(),
                got: flat.len(),
            });
        }
        let split = self.mean_net.num_params();
        self.mean_net.set_flat(&flat[..split])?;
        self.log_std.copy_from_slice(&flat[split..]);
        Ok(())
    }

    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        let mut out = self.clone();
        out.set_flat(flat)?;
        Ok(out)
    }

    pub fn floor_log_std(&mut self) {
        for v in &mut self.log_std {
            *v = v.max(LOG_STD_FLOOR);
        }
    }

    pub fn std(&self) -> Vec<f64> {
        self.log_std.iter().map(|l| l.exp()).collect()
    }

    pub fn mean(&self, states: &Array2<f64>) -> Array2<f64> {
        self.mean_net.forward(states)
    }

    fn log_density(&self, mean: &[f64], action: &[f64]) -> f64 {
        let mut ss = 0.0;
        let mut ls = 0.0;
        for ((&a, &m), &l) in action.iter().zip(mean).zip(&self.log_std) {
            let z = (a - m) * (-l).exp();
            ss += z * z;
            ls += l;
        }
        (ss * -0.5 - ls) + -(HALF_LN_2PI * self.action_dim() as f64)
    }

    /// Log-density of `action` at `state`.
    pub fn log_prob(&self, state: &[f64], action: &[f64]) -> f64 {
        assert_eq!(action.len(), self.action_dim(), "action width");
        let mean = self.mean_net.forward_one(state);
        self.log_density(&mean, action)
    }

    /// Row-wise log-densities; each row is computed exactly as in
    /// [`GaussianPolicy::log_prob`].
    pub fn log_probs(&self, states: &Array2<f64>, actions: &Array2<f64>) -> Vec<f64> {
        assert_eq!(actions.ncols(), self.action_dim(), "action width");
        let mean = self.mean(states);
        mean.rows()
            .into_iter()
            .zip(actions.rows())
            .map(|(m, a)| self.log_density(m.as_slice().unwrap(), &a.to_vec()))
            .collect()
    }

    /// `mean + std ⊙ ξ` with ξ standard normal.
    pub fn sample<R: Rng + ?Sized>(&self, state: &[f64], rng: &mut R) -> Vec<f64> {
        let mean = self.mean_net.forward_one(state);
        mean.iter()
            .zip(&self.log_std)
            .map(|(&m, &l)| {
                let xi: f64 = rng.sample(StandardNormal);
                m + l.exp() * xi
            })
            .collect()
    }

    /// Draw an action and return it with its log-density under this policy.
    pub fn sample_with_log_prob<R: Rng + ?Sized>(
        &self,
        state: &[f64],
        rng: &mut R,
    ) -> (Vec<f64>, f64) {
        let mean = self.mean_net.forward_one(state);
        let action: Vec<f64> = mean
            .iter()
            .zip(&self.log_std)
            .map(|(&m, &l)| {
                let xi: f64 = rng.sample(StandardNormal);
                m + l.exp() * xi
            })
            .collect();
        let lp = self.log_density(&mean, &action);
        (action, lp)
    }

    /// Record per-row log-densities (n×1) on `tape`. Returns the output node
    /// and parameter leaves in flat order.
    pub fn log_prob_tape(
        &self,
        tape: &mut Tape,
        states: &Array2<f64>,
        actions: &Array2<f64>,
    ) -> (Var, Vec<Var>) {
        let n = states.nrows();
        let x = tape.constant(states.clone());
        let (mu, mut params) = self.mean_net.forward_tape(tape, x);
        let ls = tape
            .leaf(Array2::from_shape_vec((1, self.action_dim()), self.log_std.clone()).unwrap());
        params.push(ls);
        let neg = tape.scale(ls, -1.0);
        let inv = tape.exp(neg);
        let inv_b = tape.broadcast_rows(inv, n);
        let a = tape.constant(actions.clone());
        let diff = tape.sub(a, mu);
        let z = tape.mul(diff, inv_b);
        let sq = tape.square(z);
        let ss = tape.sum_cols(sq);
        let quad = tape.scale(ss, -0.5);
        let ls_b = tape.broadcast_rows(ls, n);
        let ls_sum = tape.sum_cols(ls_b);
        let centered = tape.sub(quad, ls_sum);
        let c = tape.constant(Array2::from_elem(
            (n, 1),
            -(HALF_LN_2PI * self.action_dim() as f64),
        ));
        (tape.add(centered, c), params)
    }

    /// Gradient of `Σ coeff_i · log π(a_i | s_i)` with respect to the flat
    /// parameters.
    pub fn weighted_log_prob_grad(
        &self,
        states: &Array2<f64>,
        actions: &Array2<f64>,
        coeff: &[f64],
    ) -> Vec<f64> {
        let mut tape = Tape::new();
        let (logp, params) = self.log_prob_tape(&mut tape, states, actions);
        let c = Array2::from_shape_vec((coeff.len(), 1), coeff.to_vec()).unwrap();
        let out = tape.dot_const(logp, c);
        tape.backward(out).flatten(&params)
    }
}

pub(crate) fn layer_sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut sizes = Vec::with_capacity(hidden.len() + 2);
    sizes.push(input);
    sizes.extend_from_slice(hidden);
    sizes.push(output);
    sizes
}

/// Closed-form KL(p‖q) between two diagonal Gaussians per state.
pub fn kl_per_state(p: &GaussianPolicy, q: &GaussianPolicy, states: &Array2<f64>) -> Vec<f64> {
    assert_eq!(p.action_dim(), q.action_dim(), "action dimensions differ");
    let mp = p.mean(states);
    let mq = q.mean(states);
    let var_p: Vec<f64> = p.log_std.iter().map(|l| (2.0 * l).exp()).collect();
    let var_q: Vec<f64> = q.log_std.iter().map(|l| (2.0 * l).exp()).collect();
    mp.rows()
        .into_iter()
        .zip(mq.rows())
        .map(|(a, b)| {
            let mut kl = 0.0;
            for j in 0..p.action_dim() {
                let d = a[j] - b[j];
                kl += q.log_std[j] - p.log_std[j] + (var_p[j] + d * d) / (2.0 * var_q[j]) - 0.5;
            }
            kl.max(0.0)
        })
        .collect()
}

/// Batch-averaged KL(p‖q) between diagonal Gaussian policies.
pub fn kl_diag_gauss(p: &GaussianPolicy, q: &GaussianPolicy, states: &Array2<f64>) -> f64 {
    let kl = kl_per_state(p, q, states);
    kl.iter().sum::<f64>() / kl.len() as f64
}

/// State-value network.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueFunction {
    pub net: Mlp,
}

impl ValueFunction {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, hidden: &[usize], rng: &mut R) -> Self {
        Self {
            net: Mlp::orthogonal_init(&layer_sizes(state_dim, hidden, 1), 1.0, rng),
        }
    }

    pub fn from_net(net: Mlp) -> Self {
        assert_eq!(net.output_dim(), 1, "value network must be scalar");
        Self { net }
    }

    pub fn predict(&self, states: &Array2<f64>) -> Vec<f64> {
        self.net.forward(states).into_raw_vec_and_offset().0
    }

    pub fn flat(&self) -> Vec<f64> {
        self.net.flat()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        self.net.set_flat(flat)
    }

    pub fn num_params(&self) -> usize {
        self.net.num_params()
    }
}

/// Softmax policy over a finite action set.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularPolicy {
    pub logits: Array2<f64>,
}

impl TabularPolicy {
    pub fn new(logits: Array2<f64>) -> Self {
        Self { logits }
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        Self::new(Array2::zeros((num_states, num_actions)))
    }

    pub fn num_states(&self) -> usize {
        self.logits.nrows()
    }

    pub fn num_actions(&self) -> usize {
        self.logits.ncols()
    }

    /// Exact per-state action distributions (row-wise softmax).
    pub fn probs(&self) -> Array2<f64> {
        let mut out = self.logits.clone();
        for mut row in out.rows_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|v| (v - max).exp());
            let z = row.sum();
            row /= z;
        }
        out
    }
}

/// Shorthand for [`TabularPolicy::probs`].
pub fn tabular_exact(policy: &TabularPolicy) -> Array2<f64> {
    policy.probs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_policy(seed: u64) -> GaussianPolicy {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = GaussianPolicy::new(3, 2, &[6, 6], &mut rng);
        // Larger output weights so the gradient check is not dominated by
        // the 0.01 output scaling.
        let flat: Vec<f64> = p
            .flat()
            .iter()
            .enumerate()
            .map(|(i, v)| v * 20.0 + (i as f64 * 0.37).sin() * 0.1)
            .collect();
        p.set_flat(&flat).unwrap();
        p.log_std = vec![0.2, -0.3];
        p
    }

    #[test]
    fn standard_normal_at_mode() {
        let mut p = GaussianPolicy::new(1, 1, &[], &mut ChaCha8Rng::seed_from_u64(0));
        p.mean_net.set_flat(&[0.0, 0.0]).unwrap();
        let lp = p.log_prob(&[0.7], &[0.0]);
        assert!((lp + 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-15);
        assert!((lp + 0.9189).abs() < 1e-4);
    }

    #[test]
    fn density_is_positive_and_batch_matches_single() {
        let p = small_policy(1);
        let states = Array2::from_shape_fn((5, 3), |(i, j)| (i as f64 - j as f64) * 0.4);
        let actions = Array2::from_shape_fn((5, 2), |(i, j)| (i * 2 + j) as f64 * 0.3 - 1.0);
        let batch = p.log_probs(&states, &actions);
        for i in 0..5 {
            let single = p.log_prob(&states.row(i).to_vec(), &actions.row(i).to_vec());
            assert_eq!(single, batch[i]);
            assert!(single.exp() > 0.0);
        }
    }

    #[test]
    fn tape_log_prob_matches_fast_path_bitwise() {
        let p = small_policy(2);
        let states = Array2::from_shape_fn((4, 3), |(i, j)| ((i + j) as f64).cos());
        let actions = Array2::from_shape_fn((4, 2), |(i, j)| ((i * j) as f64).sin());
        let mut tape = Tape::new();
        let (lp, _) = p.log_prob_tape(&mut tape, &states, &actions);
        let fast = p.log_probs(&states, &actions);
        let taped: Vec<f64> = tape.value(lp).iter().copied().collect();
        assert_eq!(fast, taped);
    }

    #[test]
    fn log_prob_gradient_matches_central_differences() {
        let p = small_policy(4);
        let states = Array2::from_shape_fn((6, 3), |(i, j)| ((i * 3 + j) as f64 * 0.7).sin());
        let actions = Array2::from_shape_fn((6, 2), |(i, j)| ((i + 2 * j) as f64 * 0.5).cos());
        let coeff: Vec<f64> = (0..6).map(|i| 1.0 + i as f64 * 0.1).collect();
        let grad = p.weighted_log_prob_grad(&states, &actions, &coeff);
        let theta = p.flat();
        let f = |flat: &[f64]| -> f64 {
            let q = p.with_flat(flat).unwrap();
            q.log_probs(&states, &actions)
                .iter()
                .zip(&coeff)
                .map(|(l, c)| l * c)
                .sum()
        };
        let h = 1e-5;
        let fd: Vec<f64> = (0..theta.len())
            .map(|k| {
                let mut tp = theta.clone();
                tp[k] += h;
                let mut tm = theta.clone();
                tm[k] -= h;
                (f(&tp) - f(&tm)) / (2.0 * h)
            })
            .collect();
        let diff: f64 = fd
            .iter()
            .zip(&grad)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = fd.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(diff / norm <= 1e-4, "relative error {}", diff / norm);
    }

    #[test]
    fn degenerate_noise_returns_mean() {
        let mut p = small_policy(5);
        p.log_std = vec![(1e-9f64).ln(); 2];
        let s = [0.1, -0.2, 0.3];
        let mean = p.mean_net.forward_one(&s);
        let a = p.sample(&s, &mut ChaCha8Rng::seed_from_u64(11));
        for (x, m) in a.iter().zip(&mean) {
            assert!((x - m).abs() < 1e-6);
        }
    }

    #[test]
    fn sampling_is_seeded() {
        let p = small_policy(6);
        let s = [0.5, 0.5, 0.5];
        let a = p.sample(&s, &mut ChaCha8Rng::seed_from_u64(1));
        let b = p.sample(&s, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(a, b);
    }

    #[test]
    fn sample_variance_monte_carlo() {
        let mut p = GaussianPolicy::new(1, 1, &[], &mut ChaCha8Rng::seed_from_u64(0));
        p.mean_net.set_flat(&[0.0, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| p.sample(&[0.0], &mut rng)[0]).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var - 1.0).abs() < 0.05, "variance {var}");
    }

    #[test]
    fn kl_closed_form_cases() {
        let mut p = GaussianPolicy::new(1, 1, &[], &mut ChaCha8Rng::seed_from_u64(0));
        p.mean_net.set_flat(&[0.0, 0.0]).unwrap();
        let mut q = p.clone();
        let states = Array2::from_shape_vec((3, 1), vec![0.0, 1.0, -2.0]).unwrap();
        assert_eq!(kl_diag_gauss(&p, &q, &states), 0.0);
        q.mean_net.set_flat(&[0.0, 1.0]).unwrap();
        assert!((kl_diag_gauss(&p, &q, &states) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn kl_matches_quadrature() {
        // 1-D pair with different means and stds; trapezoid rule on a wide grid.
        let mut p = GaussianPolicy::new(1, 1, &[], &mut ChaCha8Rng::seed_from_u64(0));
        p.mean_net.set_flat(&[0.0, 0.3]).unwrap();
        p.log_std = vec![-0.2];
        let mut q = p.clone();
        q.mean_net.set_flat(&[0.0, -0.4]).unwrap();
        q.log_std = vec![0.35];
        let states = Array2::zeros((1, 1));
        let closed = kl_diag_gauss(&p, &q, &states);
        let dens = |x: f64, m: f64, s: f64| {
            (-0.5 * ((x - m) / s).powi(2)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt())
        };
        let (sp, sq) = ((-0.2f64).exp(), 0.35f64.exp());
        let (lo, hi, n) = (-15.0, 15.0, 200_000);
        let h = (hi - lo) / n as f64;
        let mut acc = 0.0;
        for k in 0..=n {
            let x = lo + k as f64 * h;
            let a = dens(x, 0.3, sp);
            let b = dens(x, -0.4, sq);
            let w = if k == 0 || k == n { 0.5 } else { 1.0 };
            if a > 0.0 {
                acc += w * a * (a / b).ln();
            }
        }
        assert!((acc * h - closed).abs() < 1e-3, "{} vs {closed}", acc * h);
    }

    #[test]
    fn tabular_softmax_properties() {
        let u = TabularPolicy::uniform(3, 4).probs();
        for v in u.iter() {
            assert!((v - 0.25).abs() < 1e-15);
        }
        let logits = Array2::from_shape_fn((2, 3), |(i, j)| (i * 3 + j) as f64 * 0.7 - 1.0);
        let p = TabularPolicy::new(logits.clone()).probs();
        let mut shifted = logits;
        shifted.row_mut(1).mapv_inplace(|v| v + 5.0);
        let q = tabular_exact(&TabularPolicy::new(shifted));
        for (a, b) in p.iter().zip(q.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }
}
