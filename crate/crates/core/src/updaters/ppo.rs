use ndarray::Array2;
use rand::Rng;

use super::{measured_tv, weighted_kl, UpdateReport};
use crate::autograd::Tape;
use crate::error::Result;
use crate::optim::{minibatch_indices, Adam};
use crate::planner::MixturePlan;
use crate::policy::GaussianPolicy;
use crate::replay::WeightedBatch;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClipConfig {
    pub epochs: usize,
    pub minibatches: usize,
}

impl Default for ClipConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            minibatches: 32,
        }
    }
}

/// Optimizer state that persists across updates, including the learning
/// rate that shrinks whenever an update overshoots its TV radius.
#[derive(Clone, Debug, PartialEq)]
pub struct LrState {
    pub lr: f64,
    /// Decay factor: the rate is divided by `1 + alpha` after an overshoot.
    pub alpha: f64,
    pub adaptive: bool,
    pub adam: Adam,
}

impl LrState {
    pub fn new(num_params: usize, lr: f64, alpha: f64) -> Self {
        Self {
            lr,
            alpha,
            adaptive: true,
            adam: Adam::new(num_params, lr),
        }
    }

    /// Record the TV measured after an update; returns whether the rate was
    /// decayed for the next update.
    pub fn observe(&mut self, measured_tv: f64, radius: f64) -> bool {
        if self.adaptive && measured_tv > radius {
            self.lr /= 1.0 + self.alpha;
            self.adam.lr = self.lr;
            true
        } else {
            false
        }
    }
}

/// `Σ w min(r A, clip(r, c − h, c + h) A) / Σ w` with `r = π/π_behavior`.
pub fn clipped_surrogate(
    policy: &GaussianPolicy,
    batch: &WeightedBatch,
    centers: &[f64],
    half_width: f64,
) -> f64 {
    let r = super::batch_ratios(policy, batch);
    let total: f64 = batch.weights.iter().sum();
    let mut s = 0.0;
    for i in 0..r.len() {
        let a = batch.advantages[i];
        let clipped = r[i]
            .max(centers[i] - half_width)
            .min(centers[i] + half_width);
        let t1 = r[i] * a;
        let t2 = clipped * a;
        s += batch.weights[i] * if t1 <= t2 { t1 } else { t2 };
    }
    s / total
}

/// Gradient of the clipped surrogate over the rows `idx`.
fn minibatch_gradient(
    policy: &GaussianPolicy,
    batch: &WeightedBatch,
    centers: &[f64],
    half_width: f64,
    idx: &[usize],
) -> Vec<f64> {
    let m = idx.len();
    let states = batch.states.select(ndarray::Axis(0), idx);
    let actions = batch.actions.select(ndarray::Axis(0), idx);
    let col = |f: &dyn Fn(usize) -> f64| Array2::from_shape_fn((m, 1), |(i, _)| f(idx[i]));
    let behavior = col(&|j| batch.behavior_logprob[j]);
    let adv = col(&|j| batch.advantages[j]);
    let lo = col(&|j| centers[j] - half_width);
    let hi = col(&|j| centers[j] + half_width);
    let total: f64 = idx.iter().map(|&j| batch.weights[j]).sum();
    let w = col(&|j| batch.weights[j] / total);

    let mut tape = Tape::new();
    let (logp, params) = policy.log_prob_tape(&mut tape, &states, &actions);
    let b = tape.constant(behavior);
    let log_ratio = tape.sub(logp, b);
    let ratio = tape.exp(log_ratio);
    let a = tape.constant(adv);
    let unclipped = tape.mul(ratio, a);
    let clipped_ratio = tape.clip(ratio, lo, hi);
    let clipped = tape.mul(clipped_ratio, a);
    let pess = tape.min(unclipped, clipped);
    let obj = tape.dot_const(pess, w);
    tape.backward(obj).flatten(&params)
}

/// Gradient of [`clipped_surrogate`] over the whole batch.
pub fn clipped_surrogate_grad(
    policy: &GaussianPolicy,
    batch: &WeightedBatch,
    centers: &[f64],
    half_width: f64,
) -> Vec<f64> {
    let all: Vec<usize> = (0..batch.len()).collect();
    minibatch_gradient(policy, batch, centers, half_width, &all)
}

/// Ascent on the clipped surrogate centred at `centers` with the given half width.
fn clipped_update<R: Rng + ?Sized>(
    batch: &WeightedBatch,
    policy: &GaussianPolicy,
    centers: &[f64],
    half_width: f64,
    lr_state: &mut LrState,
    cfg: &ClipConfig,
    rng: &mut R,
) -> Result<(GaussianPolicy, UpdateReport)> {
    let before = clipped_surrogate(policy, batch, centers, half_width);
    let lr = lr_state.lr;
    lr_state.adam.lr = lr;
    let mut current = policy.clone();
    let mut params = current.flat();
    for _ in 0..cfg.epochs {
        for mb in minibatch_indices(batch.len(), cfg.minibatches, rng) {
            let g = minibatch_gradient(&current, batch, centers, half_width, &mb);
            let neg: Vec<f64> = g.iter().map(|x| -x).collect();
            lr_state.adam.step(&mut params, &neg);
            current.set_flat(&params)?;
            current.floor_log_std();
            params = current.flat();
        }
    }
    let tv = measured_tv(&current, batch);
    let report = UpdateReport {
        surrogate_before: before,
        surrogate_after: clipped_surrogate(&current, batch, centers, half_width),
        measured_tv: tv,
        measured_kl: weighted_kl(policy, &current, &batch.states, &batch.weights),
        step_scale: None,
        dual_temperature: None,
        lr: Some(lr),
        accepted: true,
    };
    lr_state.observe(tv, half_width / 2.0);
    Ok((current, report))
}

/// Clipped-surrogate update on an on-policy batch with clip range `[1 − ε, 1 + ε]`.
pub fn ppo_update<R: Rng + ?Sized>(
    batch: &WeightedBatch,
    policy: &GaussianPolicy,
    eps: f64,
    lr_state: &mut LrState,
    cfg: &ClipConfig,
    rng: &mut R,
) -> Result<(GaussianPolicy, UpdateReport)> {
    let centers = vec![1.0; batch.len()];
    clipped_update(batch, policy, &centers, eps, lr_state, cfg, rng)
}

/// Clipped-surrogate update on a reused batch: each sample's ratio is
/// clipped to `π_k/π_behavior ± ε_gen`.
pub fn geppo_update<R: Rng + ?Sized>(
    batch: &WeightedBatch,
    policy: &GaussianPolicy,
    plan: &MixturePlan,
    lr_state: &mut LrState,
    cfg: &ClipConfig,
    rng: &mut R,
) -> Result<(GaussianPolicy, UpdateReport)> {
    clipped_update(
        batch,
        policy,
        &batch.ratios,
        plan.eps_gen,
        lr_state,
        cfg,
        rng,
    )
}
