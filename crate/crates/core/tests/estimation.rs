use gpi_core::env::{builtin_env, collect, EpisodeEnd};
use gpi_core::estimation::{gae, standardize_weighted, vtrace, vtrace_advantages};
use gpi_core::policy::{GaussianPolicy, ValueFunction};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// λ-weighted combination of K-step estimates evaluated term by term. Each
/// K-step estimate is `pre(t) · Σ_{j<K} γ^j (Π_{m=1..j} c_{t+m}) δ_{t+j}`;
/// `pre` is 1 for advantages and `c_t` for value corrections. Estimates stop
/// at the end of the episode or segment; the leftover weight goes to the
/// longest one.
fn brute_force(
    delta: &[f64],
    c: &[f64],
    stop: &[usize],
    gamma: f64,
    lambda: f64,
    value_form: bool,
) -> Vec<f64> {
    let n = delta.len();
    (0..n)
        .map(|t| {
            let len = stop[t] - t;
            let k_step = |k: usize| -> f64 {
                let mut s = 0.0;
                for j in 0..k {
                    let mut prod = 1.0;
                    for m in 1..=j {
                        prod *= c[t + m];
                    }
                    s += gamma.powi(j as i32) * prod * delta[t + j];
                }
                if value_form {
                    c[t] * s
                } else {
                    s
                }
            };
            let mut total = 0.0;
            for k in 1..len {
                total += (1.0 - lambda) * lambda.powi(k as i32 - 1) * k_step(k);
            }
            total + lambda.powi(len as i32 - 1) * k_step(len)
        })
        .collect()
}

fn stops(ends: &[EpisodeEnd]) -> Vec<usize> {
    let n = ends.len();
    let mut out = vec![n; n];
    let mut next = n;
    for t in (0..n).rev() {
        if ends[t].is_boundary() {
            next = t + 1;
        }
        out[t] = next;
    }
    out
}

struct Segment {
    r: Vec<f64>,
    v: Vec<f64>,
    nv: Vec<f64>,
    ends: Vec<EpisodeEnd>,
    ratios: Vec<f64>,
}

fn random_segment(n: usize, seed: u64) -> Segment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ends = (0..n)
        .map(|_| match rng.random_range(0..10) {
            0 => EpisodeEnd::Terminated,
            1 => EpisodeEnd::Truncated,
            _ => EpisodeEnd::Continue,
        })
        .collect();
    Segment {
        r: (0..n).map(|_| rng.random()).collect(),
        v: (0..n).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect(),
        nv: (0..n).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect(),
        ends,
        ratios: (0..n)
            .map(|_| (rng.random::<f64>() * 2.0 - 1.0).exp())
            .collect(),
    }
}

fn td(s: &Segment, gamma: f64) -> Vec<f64> {
    (0..s.r.len())
        .map(|t| {
            let boot = if s.ends[t] == EpisodeEnd::Terminated {
                0.0
            } else {
                s.nv[t]
            };
            s.r[t] + gamma * boot - s.v[t]
        })
        .collect()
}

#[test]
fn gae_matches_k_step_brute_force() {
    for seed in 0..20 {
        let s = random_segment(10, seed);
        let (g, l) = (0.97, 0.8);
        let est = gae(&s.r, &s.v, &s.nv, &s.ends, g, l).unwrap();
        let want = brute_force(&td(&s, g), &[1.0; 10], &stops(&s.ends), g, l, false);
        for (a, b) in est.advantages.iter().zip(&want) {
            assert!((a - b).abs() <= 1e-10, "seed {seed}: {a} vs {b}");
        }
    }
}

#[test]
fn vtrace_matches_literal_sums_off_policy() {
    for seed in 0..50 {
        let s = random_segment(8, 100 + seed);
        let (g, l, cbar) = (0.95, 0.9, 1.0);
        let est = vtrace(&s.r, &s.v, &s.nv, &s.ends, &s.ratios, g, l, cbar).unwrap();
        let c: Vec<f64> = s.ratios.iter().map(|r| r.min(cbar)).collect();
        let delta = td(&s, g);
        let st = stops(&s.ends);
        let adv = brute_force(&delta, &c, &st, g, l, false);
        let corr = brute_force(&delta, &c, &st, g, l, true);
        for t in 0..8 {
            assert!((est.advantages[t] - adv[t]).abs() <= 1e-10);
            assert!((est.value_targets[t] - (s.v[t] + corr[t])).abs() <= 1e-10);
            assert!(est.truncated_ratios[t] <= cbar && est.truncated_ratios[t] >= 0.0);
        }
    }
}

#[test]
fn one_step_estimate_has_no_ratio() {
    let s = random_segment(8, 7);
    let est = vtrace(&s.r, &s.v, &s.nv, &s.ends, &s.ratios, 0.9, 0.0, 1.0).unwrap();
    let delta = td(&s, 0.9);
    for t in 0..8 {
        assert_eq!(est.advantages[t], delta[t]);
    }
}

#[test]
fn on_policy_transitions_reduce_to_gae() {
    let env = builtin_env("pendulum_swingup").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let policy = GaussianPolicy::new(3, 1, &[16, 16], &mut rng);
    let vf = ValueFunction::new(3, &[16, 16], &mut rng);
    let batch = collect(&env, &policy, 1500, 3).unwrap();
    let vt = vtrace_advantages(&batch, &policy, &vf, 0.995, 0.97, 1.0).unwrap();
    let states = gpi_core::estimation::states_of(&batch);
    let next = gpi_core::estimation::next_states_of(&batch);
    let r: Vec<f64> = batch.iter().map(|t| t.reward).collect();
    let ends: Vec<EpisodeEnd> = batch.iter().map(|t| t.end).collect();
    let g = gae(
        &r,
        &vf.predict(&states),
        &vf.predict(&next),
        &ends,
        0.995,
        0.97,
    )
    .unwrap();
    assert!(vt.ratios.iter().all(|&x| x == 1.0));
    for (a, b) in vt.advantages.iter().zip(&g.advantages) {
        assert!((a - b).abs() <= 1e-10);
    }
    assert_eq!(vt.advantages, g.advantages);
}

#[test]
fn standardized_output_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let n = rng.random_range(2..200);
        let adv: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 10.0 - 3.0).collect();
        let out = standardize_weighted(&adv, &vec![1.0; n]).unwrap();
        let mean = out.iter().sum::<f64>() / n as f64;
        let std = (out.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!(mean.abs() <= 1e-10 && (std - 1.0).abs() <= 1e-10);
    }
}

proptest! {
    #[test]
    fn truncated_ratios_bounded(seed in 0u64..1000, cbar in 0.1f64..3.0) {
        let s = random_segment(30, seed);
        let est = vtrace(&s.r, &s.v, &s.nv, &s.ends, &s.ratios, 0.99, 0.95, cbar).unwrap();
        prop_assert!(est.truncated_ratios.iter().all(|&c| (0.0..=cbar).contains(&c)));
        prop_assert_eq!(est.advantages.len(), 30);
        prop_assert_eq!(est.value_targets.len(), 30);
    }

    #[test]
    fn ratio_weighted_standardized_mean_zero(seed in 0u64..1000) {
        let s = random_segment(40, seed);
        let out = standardize_weighted(&s.v, &s.ratios).unwrap();
        let ys: Vec<f64> = out.iter().zip(&s.ratios).map(|(a, r)| a * r).collect();
        let mean = ys.iter().sum::<f64>() / 40.0;
        let std = (ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / 40.0).sqrt();
        prop_assert!(mean.abs() <= 1e-10);
        prop_assert!((std - 1.0).abs() <= 1e-10);
    }
}
