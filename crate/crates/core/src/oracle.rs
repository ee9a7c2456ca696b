//! Exact computations on finite MDPs and checks of the policy improvement
//! bounds built on them.
//!
//! Policies are given as `S × A` probability tables. Every expectation is a
//! finite sum and every linear system is solved directly, so the checks
//! here are exact up to floating-point rounding.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::env::TabularMdp;
use crate::error::{Error, Result};

/// Slack below which a bound counts as violated.
pub const BOUND_TOL: f64 = 1e-9;

fn check_policy(mdp: &TabularMdp, policy: &Array2<f64>) -> Result<()> {
    if policy.dim() != (mdp.num_states, mdp.num_actions) {
        return Err(Error::Config(format!(
            "policy table {:?} does not match MDP ({}, {})",
            policy.dim(),
            mdp.num_states,
            mdp.num_actions
        )));
    }
    Ok(())
}

/// State-to-state transition matrix under `policy`.
fn transition_under(mdp: &TabularMdp, policy: &Array2<f64>) -> DMatrix<f64> {
    let s = mdp.num_states;
    DMatrix::from_fn(s, s, |i, j| {
        (0..mdp.num_actions)
            .map(|a| policy[[i, a]] * mdp.transition[[i, a, j]])
            .sum()
    })
}

fn solve(a: DMatrix<f64>, b: DVector<f64>, what: &str) -> Result<DVector<f64>> {
    a.lu()
        .solve(&b)
        .ok_or_else(|| Error::Singular(what.to_string()))
}

/// Normalized discounted state visitation `(1−γ) Σ_t γ^t P(s_t = s)`.
pub fn visitation(mdp: &TabularMdp, policy: &Array2<f64>) -> Result<Array1<f64>> {
    check_policy(mdp, policy)?;
    let s = mdp.num_states;
    let g = mdp.discount;
    let p = transition_under(mdp, policy);
    let a = DMatrix::identity(s, s) - p.transpose() * g;
    let rho = DVector::from_iterator(s, mdp.initial_dist.iter().map(|x| (1.0 - g) * x));
    let d = solve(a, rho, "visitation system")?;
    Ok(Array1::from_iter(d.iter().copied()))
}

/// Exact value, action-value and advantage tables.
#[derive(Clone, Debug, PartialEq)]
pub struct Values {
    pub v: Array1<f64>,
    pub q: Array2<f64>,
    pub advantage: Array2<f64>,
}

pub fn values(mdp: &TabularMdp, policy: &Array2<f64>) -> Result<Values> {
    check_policy(mdp, policy)?;
    let (s, na) = (mdp.num_states, mdp.num_actions);
    let g = mdp.discount;
    let p = transition_under(mdp, policy);
    let r_pi = DVector::from_fn(s, |i, _| {
        (0..na).map(|a| policy[[i, a]] * mdp.reward[[i, a]]).sum()
    });
    let v = solve(DMatrix::identity(s, s) - p * g, r_pi, "Bellman system")?;
    let v = Array1::from_iter(v.iter().copied());
    let q = Array2::from_shape_fn((s, na), |(i, a)| {
        mdp.reward[[i, a]]
            + g * (0..s)
                .map(|j| mdp.transition[[i, a, j]] * v[j])
                .sum::<f64>()
    });
    let advantage = Array2::from_shape_fn((s, na), |(i, a)| q[[i, a]] - v[i]);
    Ok(Values { v, q, advantage })
}

/// Expected discounted return `ρ0 · V`.
pub fn performance(mdp: &TabularMdp, policy: &Array2<f64>) -> Result<f64> {
    Ok(mdp.initial_dist.dot(&values(mdp, policy)?.v))
}

/// Per-state `½ Σ_a |p − q|`.
pub fn tv_per_state(p: &Array2<f64>, q: &Array2<f64>) -> Array1<f64> {
    Array1::from_iter(p.rows().into_iter().zip(q.rows()).map(|(a, b)| {
        0.5 * a
            .iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>()
    }))
}

/// Per-state KL(p ‖ q).
pub fn kl_per_state(p: &Array2<f64>, q: &Array2<f64>) -> Array1<f64> {
    Array1::from_iter(p.rows().into_iter().zip(q.rows()).map(|(a, b)| {
        a.iter()
            .zip(b.iter())
            .map(|(&x, &y)| if x > 0.0 { x * (x / y).ln() } else { 0.0 })
            .sum::<f64>()
    }))
}

/// `½ Σ_s |d_p(s) − d_q(s)|`.
pub fn tv_between(d_p: &Array1<f64>, d_q: &Array1<f64>) -> f64 {
    0.5 * d_p.iter().zip(d_q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// `Σ_a π(a|s) A_k(s, a)` per state.
fn expected_advantage(pi: &Array2<f64>, adv: &Array2<f64>) -> Array1<f64> {
    Array1::from_iter(
        pi.rows()
            .into_iter()
            .zip(adv.rows())
            .map(|(p, a)| p.dot(&a)),
    )
}

/// Both sides of the performance difference identity
/// `J(π) − J(π_k) = E_{s∼d^π} E_{a∼π}[A_k(s,a)] / (1−γ)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PerformanceDifference {
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
}

pub fn performance_difference(
    mdp: &TabularMdp,
    pi: &Array2<f64>,
    pi_k: &Array2<f64>,
) -> Result<PerformanceDifference> {
    let lhs = performance(mdp, pi)? - performance(mdp, pi_k)?;
    let d = visitation(mdp, pi)?;
    let adv = values(mdp, pi_k)?.advantage;
    let rhs = d.dot(&expected_advantage(pi, &adv)) / (1.0 - mdp.discount);
    Ok(PerformanceDifference {
        lhs,
        rhs,
        gap: (lhs - rhs).abs(),
    })
}

/// Terms of a policy improvement lower bound.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundReport {
    /// `J(π) − J(π_k)`.
    pub lhs: f64,
    pub surrogate: f64,
    pub penalty: f64,
    /// `max_s |E_{a∼π}[A_k(s,a)]|`.
    pub c_const: f64,
    pub rhs: f64,
    pub margin: f64,
    pub holds: bool,
}

/// Lower bound with the current policy as the only reference.
pub fn check_bound_onpolicy(
    mdp: &TabularMdp,
    pi: &Array2<f64>,
    pi_k: &Array2<f64>,
) -> Result<BoundReport> {
    check_bound_generalized(mdp, pi, std::slice::from_ref(pi_k), &[1.0])
}

/// Lower bound with references drawn from `priors` by `nu`; `priors[0]` is
/// the current policy `π_k` and `priors[i]` the policy `i` updates older.
pub fn check_bound_generalized(
    mdp: &TabularMdp,
    pi: &Array2<f64>,
    priors: &[Array2<f64>],
    nu: &[f64],
) -> Result<BoundReport> {
    if priors.is_empty() || nu.len() > priors.len() {
        return Err(Error::Config(format!(
            "{} mixture weights for {} prior policies",
            nu.len(),
            priors.len()
        )));
    }
    let g = mdp.discount;
    let pi_k = &priors[0];
    let lhs = performance(mdp, pi)? - performance(mdp, pi_k)?;
    let adv = values(mdp, pi_k)?.advantage;
    let exp_adv = expected_advantage(pi, &adv);
    let c_const = exp_adv.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut surr = 0.0;
    let mut pen = 0.0;
    for (i, &w) in nu.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let d_ref = visitation(mdp, &priors[i])?;
        surr += w * d_ref.dot(&exp_adv);
        pen += w * d_ref.dot(&tv_per_state(pi, &priors[i]));
    }
    let surrogate = surr / (1.0 - g);
    let penalty = 2.0 * g * c_const / (1.0 - g).powi(2) * pen;
    let rhs = surrogate - penalty;
    let margin = lhs - rhs;
    Ok(BoundReport {
        lhs,
        surrogate,
        penalty,
        c_const,
        rhs,
        margin,
        holds: margin >= -BOUND_TOL,
    })
}

/// `TV(d^π, d^ref)` against `γ/(1−γ) · E_{s∼d^ref}[TV(π, ref)(s)]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VisitationTvReport {
    pub visitation_tv: f64,
    pub bound: f64,
    pub holds: bool,
}

pub fn check_visitation_tv(
    mdp: &TabularMdp,
    pi: &Array2<f64>,
    pi_ref: &Array2<f64>,
) -> Result<VisitationTvReport> {
    let d_pi = visitation(mdp, pi)?;
    let d_ref = visitation(mdp, pi_ref)?;
    let visitation_tv = tv_between(&d_pi, &d_ref);
    let g = mdp.discount;
    let bound = g / (1.0 - g) * d_ref.dot(&tv_per_state(pi, pi_ref));
    Ok(VisitationTvReport {
        visitation_tv,
        bound,
        holds: visitation_tv <= bound + BOUND_TOL,
    })
}

/// Expected TV in ratio form, `½ E_{s∼d^ref, a∼ref} |π/ref − π_k/ref|`, and
/// directly, `E_{s∼d^ref}[TV(π, π_k)(s)]`.
pub fn ratio_form_tv(
    mdp: &TabularMdp,
    pi: &Array2<f64>,
    pi_k: &Array2<f64>,
    pi_ref: &Array2<f64>,
) -> Result<(f64, f64)> {
    let d = visitation(mdp, pi_ref)?;
    let mut ratio_form = 0.0;
    for s in 0..mdp.num_states {
        let mut inner = 0.0;
        for a in 0..mdp.num_actions {
            let q = pi_ref[[s, a]];
            if q > 0.0 {
                inner += q * (pi[[s, a]] / q - pi_k[[s, a]] / q).abs();
            }
        }
        ratio_form += d[s] * 0.5 * inner;
    }
    let direct = d.dot(&tv_per_state(pi, pi_k));
    Ok((ratio_form, direct))
}

/// Outcome of checking that one-step radii `ε/E_ν[i+1]` keep the mixture
/// penalty within the on-policy budget `ε/2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRadiusReport {
    pub eps_gen: f64,
    /// Largest expected one-step TV over all steps and all reference visitations.
    pub max_step_tv: f64,
    pub assumption_holds: bool,
    /// `E_{i∼ν} E_{s∼d^{π_{k−i}}} TV(π_{k+1}, π_{k−i})(s)`.
    pub mixture_tv: f64,
    pub budget: f64,
    pub holds: bool,
}

/// `sequence[0]` is the new policy `π_{k+1}`, `sequence[1 + i]` is `π_{k−i}`.
pub fn check_step_radius(
    mdp: &TabularMdp,
    sequence: &[Array2<f64>],
    nu: &[f64],
    eps: f64,
) -> Result<StepRadiusReport> {
    if sequence.len() < nu.len() + 1 {
        return Err(Error::Config(format!(
            "{} mixture weights need {} policies, got {}",
            nu.len(),
            nu.len() + 1,
            sequence.len()
        )));
    }
    let mean_age: f64 = nu.iter().enumerate().map(|(i, w)| w * (i + 1) as f64).sum();
    let eps_gen = eps / mean_age;
    let visits: Vec<Array1<f64>> = (0..nu.len())
        .map(|i| visitation(mdp, &sequence[1 + i]))
        .collect::<Result<_>>()?;
    let mut max_step_tv: f64 = 0.0;
    // Step j moves from sequence[j + 1] to sequence[j].
    for j in 0..nu.len() {
        let tv = tv_per_state(&sequence[j], &sequence[j + 1]);
        for d in &visits {
            max_step_tv = max_step_tv.max(d.dot(&tv));
        }
    }
    let mut mixture_tv = 0.0;
    for (i, &w) in nu.iter().enumerate() {
        mixture_tv += w * visits[i].dot(&tv_per_state(&sequence[0], &sequence[1 + i]));
    }
    Ok(StepRadiusReport {
        eps_gen,
        max_step_tv,
        assumption_holds: max_step_tv <= eps_gen / 2.0 + BOUND_TOL,
        mixture_tv,
        budget: eps / 2.0,
        holds: mixture_tv <= eps / 2.0 + BOUND_TOL,
    })
}

/// Softmax over one row of logits.
pub fn softmax_row(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|x| x / z).collect()
}

/// Raise the logit of `action` until the softmax moves exactly `tv` in total
/// variation. The TV of such a move equals the probability gained by
/// `action`, which is monotone in the logit, so bisection finds it.
/// Returns `None` if `tv` is out of reach (at least `1 − p(action)`).
pub fn raise_logit_to_tv(logits: &[f64], action: usize, tv: f64) -> Option<Vec<f64>> {
    let p0 = softmax_row(logits)[action];
    if tv < 0.0 || tv >= 1.0 - p0 {
        return None;
    }
    let at = |delta: f64| {
        let mut l = logits.to_vec();
        l[action] += delta;
        l
    };
    let gain = |delta: f64| softmax_row(&at(delta))[action] - p0;
    let (mut lo, mut hi) = (0.0, 1.0);
    while gain(hi) < tv {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if gain(mid) < tv {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    Some(at(0.5 * (lo + hi)))
}

/// Row-wise softmax of a logit table.
pub fn softmax_table(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for (mut row, l) in out.rows_mut().into_iter().zip(logits.rows()) {
        let p = softmax_row(&l.to_vec());
        row.iter_mut().zip(p).for_each(|(x, v)| *x = v);
    }
    out
}

/// Gaussian logits with standard deviation `scale`.
pub fn random_logits<R: Rng + ?Sized>(
    states: usize,
    actions: usize,
    scale: f64,
    rng: &mut R,
) -> Array2<f64> {
    Array2::from_shape_fn((states, actions), |_| {
        scale * rng.sample::<f64, _>(StandardNormal)
    })
}

/// A chain of `steps + 1` softmax policies, newest first, where each policy
/// differs from the one before it by exactly `step_tv` in total variation at
/// every state. Each step raises the logit of a randomly chosen action that
/// can still absorb the move.
pub fn step_sequence<R: Rng + ?Sized>(
    oldest_logits: &Array2<f64>,
    steps: usize,
    step_tv: f64,
    rng: &mut R,
) -> Result<Vec<Array2<f64>>> {
    let mut logits = oldest_logits.clone();
    let mut chain = vec![softmax_table(&logits)];
    for _ in 0..steps {
        let mut next = logits.clone();
        for (s, row) in logits.rows().into_iter().enumerate() {
            let l = row.to_vec();
            let p = softmax_row(&l);
            let candidates: Vec<usize> = (0..l.len()).filter(|&a| 1.0 - p[a] > step_tv).collect();
            if candidates.is_empty() {
                return Err(Error::Config(format!(
                    "state {s} cannot move by {step_tv} in TV"
                )));
            }
            let a = candidates[rng.random_range(0..candidates.len())];
            let raised = raise_logit_to_tv(&l, a, step_tv).expect("reachable target");
            next.row_mut(s)
                .iter_mut()
                .zip(raised)
                .for_each(|(x, v)| *x = v);
        }
        logits = next;
        chain.push(softmax_table(&logits));
    }
    chain.reverse();
    Ok(chain)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array3};

    fn cycle() -> TabularMdp {
        let mut p = Array3::zeros((2, 1, 2));
        p[[0, 0, 1]] = 1.0;
        p[[1, 0, 0]] = 1.0;
        TabularMdp::new(p, Array2::zeros((2, 1)), array![1.0, 0.0], 0.5).unwrap()
    }

    #[test]
    fn two_state_cycle_visitation() {
        let d = visitation(&cycle(), &array![[1.0], [1.0]]).unwrap();
        assert!((d[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((d[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn single_state() {
        let p = Array3::from_elem((1, 2, 1), 1.0);
        let mdp = TabularMdp::new(p, array![[0.5, 1.0]], array![1.0], 0.9).unwrap();
        let pi = array![[0.3, 0.7]];
        assert_eq!(visitation(&mdp, &pi).unwrap(), array![1.0]);
        let v = values(&mdp, &pi).unwrap();
        assert!((v.v[0] - 0.85 / 0.1).abs() < 1e-10);
    }

    #[test]
    fn zero_rewards_zero_values() {
        let v = values(&cycle(), &array![[1.0], [1.0]]).unwrap();
        assert!(v
            .v
            .iter()
            .chain(v.q.iter())
            .chain(v.advantage.iter())
            .all(|&x| x == 0.0));
    }

    #[test]
    fn identical_policies_have_zero_gap() {
        let mdp = crate::env::make_random_tabular(4, 3, 0);
        let pi = Array2::from_elem((4, 3), 1.0 / 3.0);
        let r = check_bound_onpolicy(&mdp, &pi, &pi).unwrap();
        assert!(r.lhs.abs() < 1e-12 && r.penalty == 0.0 && r.surrogate.abs() < 1e-12);
        assert!(r.holds);
    }

    #[test]
    fn logit_raise_hits_target() {
        let logits = [0.3, -1.0, 2.0];
        let out = raise_logit_to_tv(&logits, 1, 0.05).unwrap();
        let p = softmax_row(&logits);
        let q = softmax_row(&out);
        let tv: f64 = 0.5 * p.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum::<f64>();
        assert!((tv - 0.05).abs() < 1e-12);
        assert!(raise_logit_to_tv(&logits, 2, 0.99).is_none());
    }
}
