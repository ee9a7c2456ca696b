//! Advantage and value-target estimation.
//!
//! [`gae`] is the usual backward recursion. [`vtrace`] is the same
//! recursion with every step after the first scaled by the truncated
//! importance ratio `c = min(c̄, π_k / π_behavior)`, which is the
//! λ-weighted average of the K-step V-trace estimates. With all ratios one
//! the two produce bitwise-identical outputs.

use ndarray::Array2;
use rand::Rng;

use crate::autograd::Tape;
use crate::env::{EpisodeEnd, Transition};
use crate::error::{Error, Result};
use crate::optim::{minibatch_indices, Adam};
use crate::policy::{GaussianPolicy, ValueFunction};

/// Standard deviation below which a batch counts as degenerate.
pub const DEGENERATE_STD: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct AdvantageEstimate {
    pub advantages: Vec<f64>,
    pub value_targets: Vec<f64>,
    /// `π_k(a|s) / π_behavior(a|s)`.
    pub ratios: Vec<f64>,
    /// `min(c̄, ratio)`.
    pub truncated_ratios: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EstimatorConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub cbar: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            gamma: 0.995,
            lambda: 0.97,
            cbar: 1.0,
        }
    }
}

fn check_lengths(what: &str, n: usize, others: &[usize]) -> Result<()> {
    if others.iter().any(|&m| m != n) {
        return Err(Error::Length(format!(
            "{what}: expected all inputs of length {n}, got {others:?}"
        )));
    }
    Ok(())
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Config(format!("{name} = {v} outside [0, 1]")));
    }
    Ok(())
}

/// One-step TD errors; terminal transitions bootstrap with zero.
fn td_errors(
    rewards: &[f64],
    values: &[f64],
    next_values: &[f64],
    ends: &[EpisodeEnd],
    gamma: f64,
) -> Vec<f64> {
    (0..rewards.len())
        .map(|t| {
            let boot = if ends[t] == EpisodeEnd::Terminated {
                0.0
            } else {
                next_values[t]
            };
            rewards[t] + gamma * boot - values[t]
        })
        .collect()
}

/// Generalized advantage estimation over a contiguous segment.
///
/// `next_values[t]` is `V(s_{t+1})`. The recursion restarts at every episode
/// boundary and at the end of the segment.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    next_values: &[f64],
    ends: &[EpisodeEnd],
    gamma: f64,
    lambda: f64,
) -> Result<AdvantageEstimate> {
    let n = rewards.len();
    check_lengths("gae", n, &[values.len(), next_values.len(), ends.len()])?;
    check_unit("gamma", gamma)?;
    check_unit("lambda", lambda)?;
    let delta = td_errors(rewards, values, next_values, ends, gamma);
    let gl = gamma * lambda;
    let mut adv = vec![0.0; n];
    let mut next = 0.0;
    for t in (0..n).rev() {
        if t + 1 == n || ends[t].is_boundary() {
            next = 0.0;
        }
        adv[t] = delta[t] + gl * next;
        next = adv[t];
    }
    let value_targets = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok(AdvantageEstimate {
        advantages: adv,
        value_targets,
        ratios: vec![1.0; n],
        truncated_ratios: vec![1.0; n],
    })
}

/// V-trace-corrected GAE from precomputed pieces.
#[allow(clippy::too_many_arguments)]
pub fn vtrace(
    rewards: &[f64],
    values: &[f64],
    next_values: &[f64],
    ends: &[EpisodeEnd],
    ratios: &[f64],
    gamma: f64,
    lambda: f64,
    cbar: f64,
) -> Result<AdvantageEstimate> {
    let n = rewards.len();
    check_lengths(
        "vtrace",
        n,
        &[values.len(), next_values.len(), ends.len(), ratios.len()],
    )?;
    check_unit("gamma", gamma)?;
    check_unit("lambda", lambda)?;
    if !(cbar > 0.0) {
        return Err(Error::Config(format!(
            "truncation level {cbar} must be positive"
        )));
    }
    let delta = td_errors(rewards, values, next_values, ends, gamma);
    let c: Vec<f64> = ratios.iter().map(|&r| r.min(cbar)).collect();
    let gl = gamma * lambda;
    let mut adv = vec![0.0; n];
    let mut next = 0.0;
    for t in (0..n).rev() {
        if t + 1 == n || ends[t].is_boundary() {
            next = 0.0;
        }
        adv[t] = delta[t] + gl * next;
        // The step before t sees this advantage through c_t.
        next = c[t] * adv[t];
    }
    let value_targets = values
        .iter()
        .zip(&c)
        .zip(&adv)
        .map(|((v, c), a)| v + c * a)
        .collect();
    Ok(AdvantageEstimate {
        advantages: adv,
        value_targets,
        ratios: ratios.to_vec(),
        truncated_ratios: c,
    })
}

/// Stack row slices into a matrix.
pub fn stack_rows<'a>(rows: impl ExactSizeIterator<Item = &'a [f64]>, width: usize) -> Array2<f64> {
    let n = rows.len();
    let mut data = Vec::with_capacity(n * width);
    for r in rows {
        assert_eq!(r.len(), width, "row width");
        data.extend_from_slice(r);
    }
    Array2::from_shape_vec((n, width), data).expect("stacked rows")
}

pub fn states_of(batch: &[Transition]) -> Array2<f64> {
    let w = batch.first().map_or(0, |t| t.state.len());
    stack_rows(batch.iter().map(|t| t.state.as_slice()), w)
}

pub fn next_states_of(batch: &[Transition]) -> Array2<f64> {
    let w = batch.first().map_or(0, |t| t.next_state.len());
    stack_rows(batch.iter().map(|t| t.next_state.as_slice()), w)
}

pub fn actions_of(batch: &[Transition]) -> Array2<f64> {
    let w = batch.first().map_or(0, |t| t.action.len());
    stack_rows(batch.iter().map(|t| t.action.as_slice()), w)
}

/// Importance ratios `π(a|s) / π_behavior(a|s)` for a contiguous batch.
/// `slot` only labels errors.
pub fn importance_ratios(
    batch: &[Transition],
    policy: &GaussianPolicy,
    slot: usize,
) -> Result<Vec<f64>> {
    let logp = policy.log_probs(&states_of(batch), &actions_of(batch));
    logp.iter()
        .zip(batch)
        .enumerate()
        .map(|(index, (lp, t))| {
            let log_ratio = lp - t.behavior_logprob;
            let r = log_ratio.exp();
            if r.is_finite() {
                Ok(r)
            } else {
                Err(Error::NonFiniteRatio {
                    slot,
                    index,
                    log_ratio,
                })
            }
        })
        .collect()
}

/// V-trace estimates for one contiguous batch collected by a single policy.
pub fn vtrace_advantages(
    batch: &[Transition],
    policy: &GaussianPolicy,
    value_fn: &ValueFunction,
    gamma: f64,
    lambda: f64,
    cbar: f64,
) -> Result<AdvantageEstimate> {
    vtrace_for_slot(
        batch,
        policy,
        value_fn,
        &EstimatorConfig {
            gamma,
            lambda,
            cbar,
        },
        0,
    )
}

pub(crate) fn vtrace_for_slot(
    batch: &[Transition],
    policy: &GaussianPolicy,
    value_fn: &ValueFunction,
    cfg: &EstimatorConfig,
    slot: usize,
) -> Result<AdvantageEstimate> {
    if batch.is_empty() {
        return Err(Error::Length("empty batch".into()));
    }
    let ratios = importance_ratios(batch, policy, slot)?;
    let values = value_fn.predict(&states_of(batch));
    let next_values = value_fn.predict(&next_states_of(batch));
    let rewards: Vec<f64> = batch.iter().map(|t| t.reward).collect();
    let ends: Vec<EpisodeEnd> = batch.iter().map(|t| t.end).collect();
    vtrace(
        &rewards,
        &values,
        &next_values,
        &ends,
        &ratios,
        cfg.gamma,
        cfg.lambda,
        cfg.cbar,
    )
}

/// Standardize `ratio · advantage` over the batch and return the
/// advantages rescaled so that `ratio · output` is the standardized value.
pub fn standardize_weighted(advantages: &[f64], ratios: &[f64]) -> Result<Vec<f64>> {
    let w = vec![1.0; advantages.len()];
    standardize_weighted_by(advantages, ratios, &w)
}

/// As [`standardize_weighted`], with per-sample weights in the mean and
/// standard deviation (population form). A batch whose weighted standard
/// deviation is below [`DEGENERATE_STD`] maps to zeros. A ratio that has
/// underflowed to zero gets a zero advantage, since neither that sample's
/// surrogate term nor its gradient depends on the advantage.
pub fn standardize_weighted_by(
    advantages: &[f64],
    ratios: &[f64],
    weights: &[f64],
) -> Result<Vec<f64>> {
    let n = advantages.len();
    check_lengths("standardize", n, &[ratios.len(), weights.len()])?;
    if n < 2 {
        return Err(Error::Length(format!(
            "standardization needs at least 2 samples, got {n}"
        )));
    }
    if ratios.iter().any(|&r| !(r >= 0.0) || !r.is_finite()) {
        return Err(Error::Config(
            "importance ratios must be non-negative and finite".into(),
        ));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Config(
            "standardization weights must have positive mass".into(),
        ));
    }
    let x: Vec<f64> = advantages.iter().zip(ratios).map(|(a, r)| a * r).collect();
    let mean = x.iter().zip(weights).map(|(x, w)| w * x).sum::<f64>() / total;
    let var = x
        .iter()
        .zip(weights)
        .map(|(x, w)| w * (x - mean).powi(2))
        .sum::<f64>()
        / total;
    let std = var.sqrt();
    if std < DEGENERATE_STD {
        log::warn!("degenerate advantage batch (std {std:e}); using zero advantages");
        return Ok(vec![0.0; n]);
    }
    Ok(x.iter()
        .zip(ratios)
        .map(|(x, &r)| if r > 0.0 { (x - mean) / std / r } else { 0.0 })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValueFitConfig {
    pub epochs: usize,
    pub minibatches: usize,
    pub lr: f64,
}

impl Default for ValueFitConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            minibatches: 32,
            lr: 3e-4,
        }
    }
}

/// Mean squared error of `value_fn` on `(states, targets)`.
pub fn value_loss(value_fn: &ValueFunction, states: &Array2<f64>, targets: &[f64]) -> f64 {
    let pred = value_fn.predict(states);
    pred.iter()
        .zip(targets)
        .map(|(p, t)| (p - t).powi(2))
        .sum::<f64>()
        / targets.len() as f64
}

/// Gradient of the mean squared error over the rows `idx`.
fn value_grad(
    value_fn: &ValueFunction,
    states: &Array2<f64>,
    targets: &[f64],
    idx: &[usize],
) -> Vec<f64> {
    let x = states.select(ndarray::Axis(0), idx);
    let y = Array2::from_shape_fn((idx.len(), 1), |(i, _)| targets[idx[i]]);
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let (out, params) = value_fn.net.forward_tape(&mut tape, xv);
    let yv = tape.constant(y);
    let err = tape.sub(out, yv);
    let sq = tape.square(err);
    let total = tape.sum(sq);
    let loss = tape.scale(total, 1.0 / idx.len() as f64);
    tape.backward(loss).flatten(&params)
}

/// Regress `value_fn` onto `targets` with Adam over shuffled minibatches.
pub fn fit_value<R: Rng + ?Sized>(
    value_fn: &ValueFunction,
    states: &Array2<f64>,
    targets: &[f64],
    cfg: &ValueFitConfig,
    rng: &mut R,
) -> Result<ValueFunction> {
    if targets.is_empty() {
        return Err(Error::Length("empty regression batch".into()));
    }
    check_lengths("fit_value", states.nrows(), &[targets.len()])?;
    let mut out = value_fn.clone();
    let mut params = out.flat();
    let mut opt = Adam::new(params.len(), cfg.lr);
    for _ in 0..cfg.epochs {
        for mb in minibatch_indices(targets.len(), cfg.minibatches, rng) {
            let g = value_grad(&out, states, targets, &mb);
            opt.step(&mut params, &g);
            out.set_flat(&params)?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Mlp;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ends_cont(n: usize) -> Vec<EpisodeEnd> {
        vec![EpisodeEnd::Continue; n]
    }

    #[test]
    fn lambda_zero_is_one_step() {
        let r = [1.0, 0.5, 0.2];
        let v = [0.3, 0.1, -0.2];
        let nv = [0.1, -0.2, 0.7];
        let est = gae(&r, &v, &nv, &ends_cont(3), 0.9, 0.0).unwrap();
        for t in 0..3 {
            assert!((est.advantages[t] - (r[t] + 0.9 * nv[t] - v[t])).abs() < 1e-15);
        }
    }

    #[test]
    fn lambda_one_zero_values_is_monte_carlo() {
        let r = [1.0, 0.0, 2.0, 0.5];
        let mut ends = ends_cont(4);
        ends[3] = EpisodeEnd::Terminated;
        let est = gae(&r, &[0.0; 4], &[0.0; 4], &ends, 0.9, 1.0).unwrap();
        for t in 0..4 {
            let mc: f64 = (t..4).map(|j| 0.9f64.powi((j - t) as i32) * r[j]).sum();
            assert!((est.advantages[t] - mc).abs() < 1e-12);
        }
    }

    #[test]
    fn terminal_does_not_bootstrap_but_truncation_does() {
        let mut ends = ends_cont(1);
        ends[0] = EpisodeEnd::Terminated;
        let term = gae(&[1.0], &[0.0], &[5.0], &ends, 0.5, 1.0).unwrap();
        assert_eq!(term.advantages[0], 1.0);
        ends[0] = EpisodeEnd::Truncated;
        let trunc = gae(&[1.0], &[0.0], &[5.0], &ends, 0.5, 1.0).unwrap();
        assert_eq!(trunc.advantages[0], 3.5);
    }

    #[test]
    fn length_mismatch_is_error() {
        assert!(gae(&[1.0, 2.0], &[0.0], &[0.0, 0.0], &ends_cont(2), 0.9, 0.9).is_err());
    }

    #[test]
    fn unit_ratios_reduce_vtrace_to_gae_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 50;
        let r: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
        let nv: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
        let mut ends = ends_cont(n);
        ends[20] = EpisodeEnd::Truncated;
        ends[35] = EpisodeEnd::Terminated;
        let g = gae(&r, &v, &nv, &ends, 0.99, 0.95).unwrap();
        let vt = vtrace(&r, &v, &nv, &ends, &vec![1.0; n], 0.99, 0.95, 1.0).unwrap();
        assert_eq!(g, vt);
        let vt2 = vtrace(&r, &v, &nv, &ends, &vec![1.0; n], 0.99, 0.95, 3.0).unwrap();
        assert_eq!(g.advantages, vt2.advantages);
    }

    #[test]
    fn standardization_properties() {
        let adv = [1.0, 2.0, 3.0, 4.0];
        let out = standardize_weighted(&adv, &[1.0; 4]).unwrap();
        let m: f64 = out.iter().sum::<f64>() / 4.0;
        let s = (out.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 4.0).sqrt();
        assert!(m.abs() < 1e-12 && (s - 1.0).abs() < 1e-12);
        assert_eq!(
            standardize_weighted(&[2.0; 5], &[1.0; 5]).unwrap(),
            vec![0.0; 5]
        );
        assert!(standardize_weighted(&[1.0], &[1.0]).is_err());
        assert!(standardize_weighted(&[1.0, 2.0], &[1.0, -1.0]).is_err());
        assert!(standardize_weighted(&[1.0, 2.0], &[1.0, f64::INFINITY]).is_err());
        let out = standardize_weighted(&[1.0, 2.0, 3.0], &[1.0, 0.0, 1.0]).unwrap();
        assert_eq!(out[1], 0.0);
        assert!(out.iter().all(|a| a.is_finite()));
    }

    #[test]
    fn ratio_weighted_mean_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let adv: Vec<f64> = (0..64).map(|_| rng.random::<f64>() * 3.0 - 1.0).collect();
        let ratios: Vec<f64> = (0..64).map(|_| 0.5 + rng.random::<f64>()).collect();
        let w: Vec<f64> = (0..64).map(|_| rng.random::<f64>()).collect();
        let out = standardize_weighted_by(&adv, &ratios, &w).unwrap();
        let total: f64 = w.iter().sum();
        let mean: f64 = out
            .iter()
            .zip(&ratios)
            .zip(&w)
            .map(|((a, r), w)| w * r * a)
            .sum::<f64>()
            / total;
        assert!(mean.abs() < 1e-12);
    }

    #[test]
    fn fit_value_lr_zero_keeps_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let vf = ValueFunction::new(2, &[8], &mut rng);
        let states = Array2::from_shape_fn((20, 2), |(i, j)| (i * 2 + j) as f64 * 0.1);
        let targets = vf.predict(&states);
        let cfg = ValueFitConfig {
            lr: 0.0,
            ..Default::default()
        };
        let out = fit_value(&vf, &states, &targets, &cfg, &mut rng).unwrap();
        assert!(value_loss(&out, &states, &targets) <= value_loss(&vf, &states, &targets));
        assert_eq!(out, vf);
    }

    #[test]
    fn fit_value_linear_target() {
        let vf = ValueFunction::from_net(Mlp::zeros(&[1, 1]));
        let states = Array2::from_shape_fn((64, 1), |(i, _)| i as f64 / 32.0 - 1.0);
        let targets: Vec<f64> = states.column(0).iter().map(|x| 2.0 * x - 0.5).collect();
        let cfg = ValueFitConfig {
            epochs: 200,
            minibatches: 8,
            lr: 0.01,
        };
        let out = fit_value(
            &vf,
            &states,
            &targets,
            &cfg,
            &mut ChaCha8Rng::seed_from_u64(4),
        )
        .unwrap();
        assert!(value_loss(&out, &states, &targets) <= 1e-3);
    }

    #[test]
    fn fit_value_deterministic_under_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let vf = ValueFunction::new(2, &[8], &mut rng);
        let states = Array2::from_shape_fn((40, 2), |(i, j)| ((i + 3 * j) as f64).sin());
        let targets: Vec<f64> = (0..40).map(|i| (i as f64).cos()).collect();
        let cfg = ValueFitConfig::default();
        let a = fit_value(
            &vf,
            &states,
            &targets,
            &cfg,
            &mut ChaCha8Rng::seed_from_u64(9),
        )
        .unwrap();
        let b = fit_value(
            &vf,
            &states,
            &targets,
            &cfg,
            &mut ChaCha8Rng::seed_from_u64(9),
        )
        .unwrap();
        assert_eq!(a, b);
    }
}
