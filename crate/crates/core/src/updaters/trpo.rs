use super::{batch_ratios, measured_tv, natural_gradient_step, TrustRegionConfig, UpdateReport};
use crate::error::Result;
use crate::planner::MixturePlan;
use crate::policy::GaussianPolicy;
use crate::replay::WeightedBatch;

/// `Σ w (π/π_behavior) A / Σ w`.
fn surrogate(policy: &GaussianPolicy, batch: &WeightedBatch) -> f64 {
    let r = batch_ratios(policy, batch);
    let total: f64 = batch.weights.iter().sum();
    r.iter()
        .zip(&batch.advantages)
        .zip(&batch.weights)
        .map(|((r, a), w)| w * r * a)
        .sum::<f64>()
        / total
}

fn trust_region_update(
    batch: &WeightedBatch,
    policy: &GaussianPolicy,
    radius: f64,
    cfg: &TrustRegionConfig,
) -> Result<(GaussianPolicy, UpdateReport)> {
    let total: f64 = batch.weights.iter().sum();
    // d/dθ Σ w π_θ/π_b A = Σ w (π_k/π_b) A ∇log π at θ_k.
    let coeff: Vec<f64> = (0..batch.len())
        .map(|i| batch.weights[i] * batch.ratios[i] * batch.advantages[i] / total)
        .collect();
    let g = policy.weighted_log_prob_grad(&batch.states, &batch.actions, &coeff);
    let before = surrogate(policy, batch);
    let step = natural_gradient_step(
        policy,
        &batch.states,
        &batch.weights,
        &g,
        radius,
        |p| surrogate(p, batch),
        cfg,
    )?;
    let report = UpdateReport {
        surrogate_before: before,
        surrogate_after: step.objective,
        measured_tv: measured_tv(&step.policy, batch),
        measured_kl: step.kl,
        step_scale: Some(step.beta),
        dual_temperature: None,
        lr: None,
        accepted: step.accepted,
    };
    Ok((step.policy, report))
}

/// Natural-gradient step on the importance-weighted surrogate with forward
/// KL radius `delta`.
pub fn trpo_update(
    batch: &WeightedBatch,
    policy: &GaussianPolicy,
    delta: f64,
    cfg: &TrustRegionConfig,
) -> Result<(GaussianPolicy, UpdateReport)> {
    trust_region_update(batch, policy, delta, cfg)
}

/// As [`trpo_update`] on a reused batch, with radius `δ_gen` from the plan.
pub fn getrpo_update(
    batch: &WeightedBatch,
    policy: &GaussianPolicy,
    plan: &MixturePlan,
    cfg: &TrustRegionConfig,
) -> Result<(GaussianPolicy, UpdateReport)> {
    trust_region_update(batch, policy, plan.delta_gen, cfg)
}
