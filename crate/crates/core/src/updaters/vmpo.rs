use super::{measured_tv, natural_gradient_step, TrustRegionConfig, UpdateReport};
use crate::error::{Error, Result};
use crate::planner::MixturePlan;
use crate::policy::GaussianPolicy;
use crate::replay::WeightedBatch;

/// Bracket searched for the temperature.
pub const TEMPERATURE_RANGE: (f64, f64) = (1e-6, 1e3);
const GRID_POINTS: usize = 64;
const GOLDEN_TOL: f64 = 1e-8;

/// Optimal temperature and the resulting target weights.
#[derive(Clone, Debug, PartialEq)]
pub struct DualSolution {
    pub weights: Vec<f64>,
    pub temperature: f64,
    pub dual_value: f64,
}

/// `λδ + λ log Σ c exp(A/λ)` with `c` normalized, evaluated stably.
fn dual(advantages: &[f64], coeff: &[f64], max_adv: f64, delta: f64, lambda: f64) -> f64 {
    let z: f64 = advantages
        .iter()
        .zip(coeff)
        .map(|(a, c)| c * ((a - max_adv) / lambda).exp())
        .sum();
    lambda * delta + max_adv + lambda * z.ln()
}

/// Target weights `exp(A/λ*)/Z(λ*)` for equally weighted samples.
pub fn vmpo_weights(advantages: &[f64], delta: f64) -> Result<DualSolution> {
    let c = vec![1.0; advantages.len()];
    vmpo_weights_by(advantages, &c, delta)
}

/// Target weights with per-sample coefficients `c` in the normalizer:
/// `Z(λ) = Σ c exp(A/λ) / Σ c`, so that `Σ c w / Σ c = 1`.
///
/// The temperature minimizes the convex dual `λδ + λ log Z(λ)`: a log-spaced
/// grid over [`TEMPERATURE_RANGE`] locates the basin, then golden-section
/// search in `log λ` refines it.
pub fn vmpo_weights_by(advantages: &[f64], coeff: &[f64], delta: f64) -> Result<DualSolution> {
    if advantages.is_empty() {
        return Err(Error::Length(
            "temperature solve needs at least one advantage".into(),
        ));
    }
    if coeff.len() != advantages.len() {
        return Err(Error::Length(format!(
            "{} coefficients for {} advantages",
            coeff.len(),
            advantages.len()
        )));
    }
    if !(delta > 0.0) {
        return Err(Error::Config(format!("KL radius {delta} must be positive")));
    }
    let total: f64 = coeff.iter().sum();
    let c: Vec<f64> = coeff.iter().map(|x| x / total).collect();
    let max_adv = advantages.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let g = |log_l: f64| dual(advantages, &c, max_adv, delta, log_l.exp());

    let (lo, hi) = (TEMPERATURE_RANGE.0.ln(), TEMPERATURE_RANGE.1.ln());
    let (g_lo, g_hi) = (g(lo), g(hi));
    if !g_lo.is_finite() || !g_hi.is_finite() {
        return Err(Error::DualBracket {
            lo: TEMPERATURE_RANGE.0,
            hi: TEMPERATURE_RANGE.1,
            g_lo,
            g_hi,
        });
    }
    let grid: Vec<f64> = (0..GRID_POINTS)
        .map(|k| lo + (hi - lo) * k as f64 / (GRID_POINTS - 1) as f64)
        .collect();
    let vals: Vec<f64> = grid.iter().map(|&x| g(x)).collect();
    let best = (0..GRID_POINTS)
        .min_by(|&i, &j| {
            vals[i]
                .partial_cmp(&vals[j])
                .unwrap_or(std::cmp::Ordering::Equal)
        })
        .unwrap();
    let mut a = grid[best.saturating_sub(1)];
    let mut b = grid[(best + 1).min(GRID_POINTS - 1)];
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let (mut f1, mut f2) = (g(x1), g(x2));
    while b - a > GOLDEN_TOL {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = g(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = g(x2);
        }
    }
    let mut log_l = 0.5 * (a + b);
    let mut value = g(log_l);
    if vals[best] < value {
        log_l = grid[best];
        value = vals[best];
    }
    let lambda = log_l.exp();
    let e: Vec<f64> = advantages
        .iter()
        .map(|a| ((a - max_adv) / lambda).exp())
        .collect();
    let z: f64 = e.iter().zip(&c).map(|(e, c)| e * c).sum();
    Ok(DualSolution {
        weights: e.iter().map(|e| e / z).collect(),
        temperature: lambda,
        dual_value: value,
    })
}

/// `Σ c (w − 1) log π(a|s)`, the projection objective with its baseline.
pub fn vmpo_objective(policy: &GaussianPolicy, batch: &WeightedBatch, coeff: &[f64]) -> f64 {
    policy
        .log_probs(&batch.states, &batch.actions)
        .iter()
        .zip(coeff)
        .map(|(lp, c)| c * lp)
        .sum()
}

fn projection_update(
    batch: &WeightedBatch,
    policy: &GaussianPolicy,
    radius: f64,
    cfg: &TrustRegionConfig,
) -> Result<(GaussianPolicy, UpdateReport)> {
    let mix: Vec<f64> = batch
        .weights
        .iter()
        .zip(&batch.ratios)
        .map(|(w, r)| w * r)
        .collect();
    let sol = vmpo_weights_by(&batch.advantages, &mix, radius)?;
    let total: f64 = mix.iter().sum();
    let coeff: Vec<f64> = mix
        .iter()
        .zip(&sol.weights)
        .map(|(m, w)| m / total * (w - 1.0))
        .collect();
    let g = policy.weighted_log_prob_grad(&batch.states, &batch.actions, &coeff);
    let before = vmpo_objective(policy, batch, &coeff);
    let step = natural_gradient_step(
        policy,
        &batch.states,
        &batch.weights,
        &g,
        radius,
        |p| vmpo_objective(p, batch, &coeff),
        cfg,
    )?;
    let report = UpdateReport {
        surrogate_before: before,
        surrogate_after: step.objective,
        measured_tv: measured_tv(&step.policy, batch),
        measured_kl: step.kl,
        step_scale: Some(step.beta),
        dual_temperature: Some(sol.temperature),
        lr: None,
        accepted: step.accepted,
    };
    Ok((step.policy, report))
}

/// Exponentiated-advantage target projected back with a forward KL radius `delta`.
pub fn vmpo_update(
    batch: &WeightedBatch,
    policy: &GaussianPolicy,
    delta: f64,
    cfg: &TrustRegionConfig,
) -> Result<(GaussianPolicy, UpdateReport)> {
    projection_update(batch, policy, delta, cfg)
}

/// As [`vmpo_update`] on a reused batch: target weights are normalized
/// under the mixture- and ratio-weighted sample distribution and the
/// radius is `δ_gen`.
pub fn gevmpo_update(
    batch: &WeightedBatch,
    policy: &GaussianPolicy,
    plan: &MixturePlan,
    cfg: &TrustRegionConfig,
) -> Result<(GaussianPolicy, UpdateReport)> {
    projection_update(batch, policy, plan.delta_gen, cfg)
}
