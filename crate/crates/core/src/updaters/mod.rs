//! Policy updates: clipped surrogate (PPO), natural gradient with a KL trust
//! region (TRPO), and exponentiated-advantage projection (VMPO), each in a
//! plain and a sample-reusing form.
//!
//! The reusing forms take a [`WeightedBatch`](crate::replay::WeightedBatch)
//! assembled from several past policies and the radii of a
//! [`MixturePlan`](crate::planner::MixturePlan). The plain forms run the
//! same code on a batch from the current policy alone.

mod ppo;
mod trpo;
mod vmpo;

use ndarray::Array2;

use crate::autograd::Tape;
use crate::error::{Error, Result};
use crate::policy::{kl_per_state, GaussianPolicy};
use crate::replay::WeightedBatch;

pub use ppo::{
    clipped_surrogate, clipped_surrogate_grad, geppo_update, ppo_update, ClipConfig, LrState,
};
pub use trpo::{getrpo_update, trpo_update};
pub use vmpo::{
    gevmpo_update, vmpo_objective, vmpo_update, vmpo_weights, vmpo_weights_by, DualSolution,
    TEMPERATURE_RANGE,
};

/// Summary of one policy update.
#[derive(Clone, Debug, PartialEq)]
pub struct UpdateReport {
    pub surrogate_before: f64,
    pub surrogate_after: f64,
    /// `½ Σ w |π_new/π_behavior − π_k/π_behavior|`, the sample estimate of
    /// the expected one-step TV distance.
    pub measured_tv: f64,
    /// Weighted KL(π_k ‖ π_new) over the batch states.
    pub measured_kl: f64,
    /// Full natural-gradient step length before backtracking.
    pub step_scale: Option<f64>,
    pub dual_temperature: Option<f64>,
    /// Learning rate used for this update.
    pub lr: Option<f64>,
    pub accepted: bool,
}

/// Settings shared by the natural-gradient updaters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrustRegionConfig {
    pub cg_iters: usize,
    pub damping: f64,
    pub backtrack_factor: f64,
    pub max_backtracks: usize,
    /// Conjugate gradient stops once `‖r‖ ≤ cg_tol·‖g‖`.
    pub cg_tol: f64,
}

impl Default for TrustRegionConfig {
    fn default() -> Self {
        Self {
            cg_iters: 20,
            damping: 0.01,
            backtrack_factor: 0.5,
            max_backtracks: 10,
            cg_tol: 1e-10,
        }
    }
}

/// `π(a|s)/π_behavior(a|s)` for every batch row.
pub fn batch_ratios(policy: &GaussianPolicy, batch: &WeightedBatch) -> Vec<f64> {
    policy
        .log_probs(&batch.states, &batch.actions)
        .iter()
        .zip(&batch.behavior_logprob)
        .map(|(lp, b)| (lp - b).exp())
        .collect()
}

/// `½ Σ w |π/π_behavior − π_k/π_behavior|` normalized by the total weight.
pub fn measured_tv(policy: &GaussianPolicy, batch: &WeightedBatch) -> f64 {
    let r = batch_ratios(policy, batch);
    let total: f64 = batch.weights.iter().sum();
    0.5 * r
        .iter()
        .zip(&batch.ratios)
        .zip(&batch.weights)
        .map(|((r, c), w)| w * (r - c).abs())
        .sum::<f64>()
        / total
}

/// Weighted mean of KL(old ‖ new) over the batch states.
pub fn weighted_kl(
    old: &GaussianPolicy,
    new: &GaussianPolicy,
    states: &Array2<f64>,
    weights: &[f64],
) -> f64 {
    let kl = kl_per_state(old, new, states);
    let total: f64 = weights.iter().sum();
    kl.iter().zip(weights).map(|(k, w)| k * w).sum::<f64>() / total
}

/// Product of the damped Fisher matrix of the weighted forward KL at
/// `policy` with `v`:
/// `(Σ_s w_s J_sᵀ H_s J_s / Σ w + damping·I) v`, where `J_s` is the Jacobian
/// of (mean, log-std) at state `s` and `H_s` the KL Hessian in those
/// coordinates (`1/σ²` for means, 2 for log standard deviations).
pub fn fisher_vector_product(
    policy: &GaussianPolicy,
    states: &Array2<f64>,
    weights: &[f64],
    v: &[f64],
    damping: f64,
) -> Vec<f64> {
    let split = policy.mean_net.num_params();
    assert_eq!(v.len(), split + policy.action_dim(), "tangent length");
    let total: f64 = weights.iter().sum();
    let (_, jv) = policy.mean_net.jvp(states, &v[..split]);
    let inv_var: Vec<f64> = policy.log_std.iter().map(|l| (-2.0 * l).exp()).collect();
    let u = Array2::from_shape_fn(jv.dim(), |(s, j)| {
        weights[s] / total * inv_var[j] * jv[[s, j]]
    });
    let mut tape = Tape::new();
    let x = tape.constant(states.clone());
    let (out, params) = policy.mean_net.forward_tape(&mut tape, x);
    let dot = tape.dot_const(out, u);
    let mut fv = tape.backward(dot).flatten(&params);
    fv.extend(v[split..].iter().map(|x| 2.0 * x));
    for (f, x) in fv.iter_mut().zip(v) {
        *f += damping * x;
    }
    fv
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Result of a conjugate-gradient solve.
#[derive(Clone, Debug, PartialEq)]
pub struct CgSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// `‖b − A x‖ / ‖b‖` as tracked by the recursion.
    pub relative_residual: f64,
}

/// Solve `A x = b` for symmetric positive definite `A` given as a product.
pub fn conjugate_gradient(
    mut apply: impl FnMut(&[f64]) -> Vec<f64>,
    b: &[f64],
    max_iters: usize,
    tol: f64,
) -> Result<CgSolution> {
    let mut x = vec![0.0; b.len()];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let b_norm = dot(b, b).sqrt();
    let mut rr = dot(&r, &r);
    if b_norm == 0.0 {
        return Ok(CgSolution {
            x,
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut iters = 0;
    while iters < max_iters && rr.sqrt() > tol * b_norm {
        let ap = apply(&p);
        let alpha = rr / dot(&p, &ap);
        for i in 0..x.len() {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        iters += 1;
        if !rr_new.is_finite() || !alpha.is_finite() {
            return Err(Error::NonFiniteResidual { iters });
        }
        let beta = rr_new / rr;
        for i in 0..p.len() {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
    }
    Ok(CgSolution {
        x,
        iterations: iters,
        relative_residual: rr.sqrt() / b_norm,
    })
}

/// Outcome of a natural-gradient step with backtracking.
struct TrustStep {
    policy: GaussianPolicy,
    beta: f64,
    accepted: bool,
    kl: f64,
    objective: f64,
}

/// Step along the natural gradient of `objective` (with gradient `g` at
/// `policy`) so that the weighted KL from `policy` stays within `radius`.
/// Each backtracking trial must satisfy the constraint and not decrease
/// the objective; if none does, the policy is returned unchanged.
#[allow(clippy::too_many_arguments)]
fn natural_gradient_step(
    policy: &GaussianPolicy,
    states: &Array2<f64>,
    weights: &[f64],
    g: &[f64],
    radius: f64,
    objective: impl Fn(&GaussianPolicy) -> f64,
    cfg: &TrustRegionConfig,
) -> Result<TrustStep> {
    let obj_before = objective(policy);
    let unchanged = |beta| TrustStep {
        policy: policy.clone(),
        beta,
        accepted: false,
        kl: 0.0,
        objective: obj_before,
    };
    if g.iter().all(|&x| x == 0.0) {
        return Ok(unchanged(0.0));
    }
    let fvp = |v: &[f64]| fisher_vector_product(policy, states, weights, v, cfg.damping);
    let sol = conjugate_gradient(fvp, g, cfg.cg_iters, cfg.cg_tol)?;
    let v = sol.x;
    let vfv = dot(&v, &fvp(&v));
    if !(vfv > 0.0) || !vfv.is_finite() {
        return Err(Error::NonFiniteResidual {
            iters: sol.iterations,
        });
    }
    let beta = (2.0 * radius / vfv).sqrt();
    let theta = policy.flat();
    let mut scale = beta;
    for _ in 0..cfg.max_backtracks {
        let cand: Vec<f64> = theta.iter().zip(&v).map(|(t, d)| t + scale * d).collect();
        let mut next = policy.with_flat(&cand)?;
        next.floor_log_std();
        let kl = weighted_kl(policy, &next, states, weights);
        let obj = objective(&next);
        if kl <= radius && obj >= obj_before {
            return Ok(TrustStep {
                policy: next,
                beta,
                accepted: true,
                kl,
                objective: obj,
            });
        }
        scale *= cfg.backtrack_factor;
    }
    Ok(unchanged(beta))
}
