use gpi_core::env::{make_random_tabular, TabularMdp};
use gpi_core::oracle::{
    check_bound_generalized, check_bound_onpolicy, check_step_radius, check_visitation_tv,
    kl_per_state, performance, performance_difference, random_logits, ratio_form_tv, softmax_table,
    step_sequence, tv_per_state, values, visitation,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SCALES: [f64; 4] = [0.01, 0.1, 1.0, 10.0];

/// Instance `k`: an MDP with 2–8 states and 2–4 actions plus a base policy
/// and a perturbed policy at one of several proximity scales.
fn instance(k: u64) -> (TabularMdp, Array2<f64>, Array2<f64>, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + k);
    let s = rng.random_range(2..=8);
    let a = rng.random_range(2..=4);
    let mdp = make_random_tabular(s, a, k);
    let base = random_logits(s, a, 1.0, &mut rng);
    let scale = SCALES[k as usize % SCALES.len()];
    let pert = &base + &random_logits(s, a, scale, &mut rng);
    (mdp, softmax_table(&pert), softmax_table(&base), rng)
}

#[test]
fn visitation_matches_power_series() {
    for k in 0..20 {
        let (mdp, pi, _, _) = instance(k);
        let d = visitation(&mdp, &pi).unwrap();
        assert!((d.sum() - 1.0).abs() < 1e-12);
        let s = mdp.num_states;
        let p = Array2::from_shape_fn((s, s), |(i, j)| {
            (0..mdp.num_actions)
                .map(|a| pi[[i, a]] * mdp.transition[[i, a, j]])
                .sum::<f64>()
        });
        let mut dist = mdp.initial_dist.clone();
        let mut acc = dist.clone() * (1.0 - mdp.discount);
        let mut disc = 1.0;
        for _ in 1..10_000 {
            dist = dist.dot(&p);
            disc *= mdp.discount;
            acc = acc + &dist * ((1.0 - mdp.discount) * disc);
        }
        for (a, b) in d.iter().zip(acc.iter()) {
            assert!((a - b).abs() <= 1e-10);
        }
    }
}

#[test]
fn advantages_average_to_zero_per_state() {
    for k in 0..20 {
        let (mdp, pi, _, _) = instance(k);
        let v = values(&mdp, &pi).unwrap();
        for s in 0..mdp.num_states {
            let e: f64 = (0..mdp.num_actions)
                .map(|a| pi[[s, a]] * v.advantage[[s, a]])
                .sum();
            assert!(e.abs() <= 1e-12);
        }
    }
}

#[test]
fn performance_matches_monte_carlo() {
    let (mdp, pi, _, mut rng) = instance(3);
    let j = performance(&mdp, &pi).unwrap();
    let episodes = 100_000;
    let samples: Vec<f64> = (0..episodes)
        .map(|_| mdp.sample_return(&pi, 250, &mut rng))
        .collect();
    let mean = samples.iter().sum::<f64>() / episodes as f64;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (episodes - 1) as f64;
    let se = (var / episodes as f64).sqrt();
    assert!(
        (mean - j).abs() <= 3.0 * se,
        "MC {mean} vs exact {j} (se {se})"
    );
}

#[test]
fn performance_difference_identity_holds() {
    let mut worst: f64 = 0.0;
    for k in 0..100 {
        let (mdp, pi, pi_k, _) = instance(k);
        worst = worst.max(performance_difference(&mdp, &pi, &pi_k).unwrap().gap);
        assert!(
            performance_difference(&mdp, &pi_k, &pi_k)
                .unwrap()
                .lhs
                .abs()
                < 1e-12
        );
    }
    assert!(worst <= 1e-9, "max gap {worst}");
}

#[test]
fn on_policy_bound_holds() {
    for k in 0..100 {
        let (mdp, pi, pi_k, _) = instance(k);
        let r = check_bound_onpolicy(&mdp, &pi, &pi_k).unwrap();
        assert!(r.holds, "instance {k}: {r:?}");
        let pen = 2.0 * mdp.discount * r.c_const / (1.0 - mdp.discount).powi(2)
            * visitation(&mdp, &pi_k)
                .unwrap()
                .dot(&tv_per_state(&pi, &pi_k));
        assert!((r.penalty - pen).abs() <= 1e-12 * pen.max(1.0));
    }
}

#[test]
fn generalized_bound_holds_and_reduces() {
    for k in 0..100 {
        let (mdp, pi, pi_k, mut rng) = instance(k);
        let on = check_bound_onpolicy(&mdp, &pi, &pi_k).unwrap();
        let gen1 = check_bound_generalized(&mdp, &pi, std::slice::from_ref(&pi_k), &[1.0]).unwrap();
        assert_eq!(on, gen1);
        let (s, a) = pi.dim();
        let mut priors = vec![pi_k.clone()];
        for _ in 0..3 {
            let scale = SCALES[rng.random_range(0..SCALES.len())];
            priors.push(softmax_table(&random_logits(s, a, scale, &mut rng)));
        }
        let raw: Vec<f64> = (0..4).map(|_| rng.random::<f64>()).collect();
        let total: f64 = raw.iter().sum();
        let nu: Vec<f64> = raw.iter().map(|x| x / total).collect();
        let r = check_bound_generalized(&mdp, &pi, &priors, &nu).unwrap();
        assert!(r.holds, "instance {k}: {r:?}");
    }
}

#[test]
fn visitation_tv_bound_holds() {
    for k in 0..100 {
        let (mdp, pi, pi_ref, _) = instance(k);
        let r = check_visitation_tv(&mdp, &pi, &pi_ref).unwrap();
        assert!(r.holds, "instance {k}: {r:?}");
    }
}

#[test]
fn pinsker_holds_pairwise() {
    for k in 0..100 {
        let (_, p, q, _) = instance(k);
        let tv = tv_per_state(&p, &q);
        let kl = kl_per_state(&p, &q);
        for (t, d) in tv.iter().zip(kl.iter()) {
            assert!(*t <= (d / 2.0).sqrt() + 1e-12);
        }
    }
}

#[test]
fn step_radius_keeps_mixture_within_budget() {
    let eps = 0.2;
    for k in 0..50 {
        let (mdp, _, _, mut rng) = instance(k);
        let m = rng.random_range(1..=5);
        let raw: Vec<f64> = (0..m).map(|_| rng.random::<f64>() + 0.01).collect();
        let total: f64 = raw.iter().sum();
        let nu: Vec<f64> = raw.iter().map(|x| x / total).collect();
        let mean_age: f64 = nu.iter().enumerate().map(|(i, w)| w * (i + 1) as f64).sum();
        let eps_gen = eps / mean_age;
        let oldest = random_logits(mdp.num_states, mdp.num_actions, 0.5, &mut rng);
        let seq = step_sequence(&oldest, m, eps_gen / 2.0, &mut rng).unwrap();
        let r = check_step_radius(&mdp, &seq, &nu, eps).unwrap();
        assert!(
            r.assumption_holds && (r.max_step_tv - eps_gen / 2.0).abs() < 1e-12,
            "{r:?}"
        );
        assert!(r.holds, "instance {k}: {r:?}");
    }
}

#[test]
fn identical_sequence_has_full_margin() {
    let (mdp, pi, _, _) = instance(0);
    let seq = vec![pi.clone(); 4];
    let r = check_step_radius(&mdp, &seq, &[0.5, 0.3, 0.2], 0.2).unwrap();
    assert_eq!(r.mixture_tv, 0.0);
    assert!((r.budget - r.mixture_tv - 0.1).abs() < 1e-15);
}

#[test]
fn ratio_form_tv_agrees_with_direct() {
    for k in 0..100 {
        let (mdp, pi, pi_k, mut rng) = instance(k);
        let (s, a) = pi.dim();
        let pi_ref = softmax_table(&random_logits(s, a, 1.0, &mut rng));
        let (ratio, direct) = ratio_form_tv(&mdp, &pi, &pi_k, &pi_ref).unwrap();
        assert!((ratio - direct).abs() <= 1e-12);
    }
}
