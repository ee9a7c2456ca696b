//! Choice of mixture weights over the ages of reused batches.
//!
//! With `N = B·n` samples per on-policy update, the planner picks weights `ν`
//! over the last `M` policies that trade off effective sample size
//! (`n / Σν_i²`, larger is better) against how fast the policy is allowed to
//! move (`ε / E_ν[i+1]` per update, summed over `B` updates). The problem
//!
//! ```text
//! minimize   κ·Σν_i²/c_ess + (1−κ)·Σν_i(i+1)/c_tv
//! subject to Σν_i² ≤ 1/B,  Σν_i(i+1) ≤ B,  Σν_i = 1,  ν ≥ 0
//! ```
//!
//! is convex, and every KKT point lies on the one-parameter family
//! `ν_i = max(0, a − b(i+1))` with `a` fixed by normalization. Along that
//! family both `Σν_i²` and `E[i+1]` are continuous and monotone in the slope
//! `b`, so the solution is a closed form: find the slopes where each
//! constraint becomes active, then clamp the unconstrained minimizer
//! between them.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::policy::{kl_per_state, GaussianPolicy};

/// Slack allowed when checking the constraints of a finished plan.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// Mixture weights and the trust-region radii they imply.
#[derive(Clone, Debug, PartialEq)]
pub struct MixturePlan {
    /// Weight per policy age, `nu[0]` for the newest batch.
    pub nu: Vec<f64>,
    /// Number of nonzero weights.
    pub support: usize,
    pub b: usize,
    pub n: usize,
    pub kappa: f64,
    pub eps: f64,
    pub eps_gen: f64,
    pub delta_gen: f64,
    pub ess: f64,
    pub tv_total: f64,
}

/// `Σν_i²`.
pub fn sum_sq(nu: &[f64]) -> f64 {
    nu.iter().map(|v| v * v).sum()
}

/// `E_ν[i+1]`.
pub fn mean_age(nu: &[f64]) -> f64 {
    nu.iter().enumerate().map(|(i, v)| v * (i + 1) as f64).sum()
}

/// `ε / E_ν[i+1]`.
pub fn eps_gen_from(nu: &[f64], eps: f64) -> f64 {
    eps / mean_age(nu)
}

pub fn delta_gen_from(eps_gen: f64) -> f64 {
    eps_gen * eps_gen / 2.0
}

fn validate_nu(nu: &[f64]) -> Result<()> {
    if nu.is_empty() || nu.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::Config(
            "mixture weights must be finite and nonnegative".into(),
        ));
    }
    let s: f64 = nu.iter().sum();
    if (s - 1.0).abs() > FEASIBILITY_TOL {
        return Err(Error::Config(format!("mixture weights sum to {s}, not 1")));
    }
    Ok(())
}

impl MixturePlan {
    /// Build a plan from explicit weights, validating them as a distribution.
    /// Feasibility against the sample-size and step-size constraints is not
    /// required here; see [`MixturePlan::is_feasible`].
    pub fn from_weights(nu: Vec<f64>, b: usize, n: usize, eps: f64, kappa: f64) -> Result<Self> {
        validate_nu(&nu)?;
        if b == 0 || n == 0 {
            return Err(Error::Config("B and n must be positive".into()));
        }
        if !(eps > 0.0) {
            return Err(Error::Config(format!(
                "trust-region radius {eps} must be positive"
            )));
        }
        let mut nu = nu;
        while nu.len() > 1 && *nu.last().unwrap() == 0.0 {
            nu.pop();
        }
        let eps_gen = eps_gen_from(&nu, eps);
        Ok(Self {
            support: nu.iter().filter(|&&v| v > 0.0).count(),
            b,
            n,
            kappa,
            eps,
            eps_gen,
            delta_gen: delta_gen_from(eps_gen),
            ess: n as f64 / sum_sq(&nu),
            tv_total: b as f64 * eps_gen / 2.0,
            nu,
        })
    }

    /// The degenerate plan `ν = (1)`: plain on-policy learning with `n` samples.
    pub fn on_policy(n: usize, eps: f64) -> Result<Self> {
        Self::from_weights(vec![1.0], 1, n, eps, 1.0)
    }

    /// Uniform weights over the newest `m` policies.
    pub fn uniform(m: usize, b: usize, n: usize, eps: f64) -> Result<Self> {
        if m == 0 {
            return Err(Error::Config(
                "uniform plan needs at least one policy".into(),
            ));
        }
        Self::from_weights(vec![1.0 / m as f64; m], b, n, eps, f64::NAN)
    }

    /// Number of batches the replay window must hold.
    pub fn window_len(&self) -> usize {
        self.nu.len()
    }

    /// Relative gain in effective sample size over on-policy learning with `B·n` samples.
    pub fn ess_gain(&self) -> f64 {
        self.ess / (self.b * self.n) as f64 - 1.0
    }

    /// Relative gain in total movement per `B·n` samples over on-policy learning.
    pub fn tv_gain(&self) -> f64 {
        self.tv_total / (self.eps / 2.0) - 1.0
    }

    pub fn is_feasible(&self) -> bool {
        let b = self.b as f64;
        sum_sq(&self.nu) <= 1.0 / b + FEASIBILITY_TOL && mean_age(&self.nu) <= b + FEASIBILITY_TOL
    }
}

/// Support size of the water-filling curve at slope `b > 0`.
fn support_at(b: f64) -> usize {
    let mut m = 1usize;
    while 2.0 / (m * (m + 1)) as f64 > b {
        m += 1;
    }
    m
}

fn s_m(m: usize) -> f64 {
    let m = m as f64;
    m * (m * m - 1.0) / 12.0
}

fn segment(m: usize) -> (f64, f64) {
    let lo = 2.0 / (m * (m + 1)) as f64;
    let hi = if m == 1 {
        f64::INFINITY
    } else {
        2.0 / (m * (m - 1)) as f64
    };
    (lo, hi)
}

/// Weights on the curve `ν_i = max(0, a − b(i+1))`.
pub fn curve_weights(b: f64) -> Vec<f64> {
    assert!(b > 0.0, "slope must be positive");
    let m = support_at(b);
    let mf = m as f64;
    let mut nu: Vec<f64> = (0..m)
        .map(|i| (1.0 / mf + b * ((mf + 1.0) / 2.0 - (i + 1) as f64)).max(0.0))
        .collect();
    while nu.len() > 1 && *nu.last().unwrap() == 0.0 {
        nu.pop();
    }
    let s: f64 = nu.iter().sum();
    nu.iter_mut().for_each(|v| *v /= s);
    nu
}

/// The two constraint-active slopes for a given `B`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurveBounds {
    /// Smallest slope with `E[i+1] ≤ B`: the most spread-out feasible plan.
    pub b_min: f64,
    /// Largest slope with `Σν² ≤ 1/B`: the most recent-heavy feasible plan.
    pub b_max: f64,
}

pub fn curve_bounds(b: usize) -> Result<CurveBounds> {
    if b == 0 {
        return Err(Error::Config("B must be at least 1".into()));
    }
    if b == 1 {
        return Ok(CurveBounds {
            b_min: 1.0,
            b_max: 1.0,
        });
    }
    let bf = b as f64;
    // E on segment m is (m+1)/2 − b·S_m; solve E = B, smallest support first.
    let mut b_min = None;
    for m in 2..=4 * b {
        let (lo, hi) = segment(m);
        let cand = ((m as f64 + 1.0) / 2.0 - bf) / s_m(m);
        if cand >= lo * (1.0 - 1e-15) && cand <= hi * (1.0 + 1e-15) {
            b_min = Some(cand.clamp(lo, hi));
            break;
        }
    }
    // Σν² on segment m is 1/m + b²·S_m; solve Σν² = 1/B.
    let mut b_max = None;
    for m in b..=4 * b {
        let (lo, hi) = segment(m);
        let cand = ((1.0 / bf - 1.0 / m as f64) / s_m(m)).sqrt();
        if cand >= lo * (1.0 - 1e-15) && cand <= hi * (1.0 + 1e-15) {
            b_max = Some(cand.clamp(lo, hi));
            break;
        }
    }
    match (b_min, b_max) {
        (Some(b_min), Some(b_max)) if b_min <= b_max => Ok(CurveBounds { b_min, b_max }),
        _ => Err(Error::Config(format!(
            "no feasible slope found for B = {b}"
        ))),
    }
}

/// `(c_ess, c_tv)`: the spread of each objective term between the two extreme plans.
pub fn scaling_coefficients(b: usize) -> Result<(f64, f64)> {
    let cb = curve_bounds(b)?;
    if b == 1 {
        return Ok((0.0, 0.0));
    }
    let lo = curve_weights(cb.b_min);
    let hi = curve_weights(cb.b_max);
    Ok((sum_sq(&hi) - sum_sq(&lo), mean_age(&lo) - mean_age(&hi)))
}

/// Scaled objective of a candidate plan.
pub fn mixture_objective(nu: &[f64], kappa: f64, c_ess: f64, c_tv: f64) -> f64 {
    let mut obj = 0.0;
    if kappa > 0.0 {
        obj += kappa * sum_sq(nu) / c_ess;
    }
    if kappa < 1.0 {
        obj += (1.0 - kappa) * mean_age(nu) / c_tv;
    }
    obj
}

/// Optimal mixture for `N = B·n` samples per update and trade-off `κ`
/// (`κ = 1` maximizes effective sample size, `κ = 0` maximizes movement).
pub fn solve_mixture(b: usize, kappa: f64, n: usize, eps: f64) -> Result<MixturePlan> {
    if !(0.0..=1.0).contains(&kappa) {
        return Err(Error::Config(format!(
            "trade-off κ = {kappa} outside [0, 1]"
        )));
    }
    let cb = curve_bounds(b)?;
    if b == 1 {
        return MixturePlan::from_weights(vec![1.0], 1, n, eps, kappa);
    }
    let slope = if kappa == 1.0 {
        cb.b_min
    } else if kappa == 0.0 {
        cb.b_max
    } else {
        let (c_ess, c_tv) = scaling_coefficients(b)?;
        ((1.0 - kappa) * c_ess / (2.0 * kappa * c_tv)).clamp(cb.b_min, cb.b_max)
    };
    let plan = MixturePlan::from_weights(curve_weights(slope), b, n, eps, kappa)?;
    debug_assert!(
        plan.is_feasible(),
        "planner produced an infeasible plan: {plan:?}"
    );
    Ok(plan)
}

/// Radius that keeps the mixture-averaged total movement within `ε/2` given
/// the drift already measured between the current policy and each prior.
///
/// `policies[i]` is the policy `i` updates old (`policies[0]` is current).
/// Per-state TV is bounded through Pinsker: `min(1, sqrt(KL/2))`.
pub fn adaptive_eps_gen(
    policies: &[GaussianPolicy],
    nu: &[f64],
    eps: f64,
    probe_states: &Array2<f64>,
) -> Result<f64> {
    if probe_states.nrows() == 0 {
        return Err(Error::EmptyProbe);
    }
    validate_nu(nu)?;
    let current = policies
        .first()
        .ok_or_else(|| Error::Config("no current policy".into()))?;
    let mut drift = 0.0;
    for (i, &w) in nu.iter().enumerate() {
        if w == 0.0 || i == 0 {
            continue;
        }
        let prior = policies.get(i).ok_or_else(|| {
            Error::Config(format!(
                "mixture has weight at age {i} but only {} policies",
                policies.len()
            ))
        })?;
        let kl = kl_per_state(current, prior, probe_states);
        let tv = kl.iter().map(|k| (k / 2.0).sqrt().min(1.0)).sum::<f64>() / kl.len() as f64;
        drift += w * tv;
    }
    Ok(2.0 * (eps / 2.0 - drift).max(0.0))
}
