use gpi_core::planner::{
    adaptive_eps_gen, curve_bounds, delta_gen_from, eps_gen_from, mean_age, mixture_objective,
    scaling_coefficients, solve_mixture, sum_sq, MixturePlan, FEASIBILITY_TOL,
};
use gpi_core::policy::GaussianPolicy;
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

fn kappa_grid() -> Vec<f64> {
    (0..=100).map(|k| k as f64 / 100.0).collect()
}

/// Random feasible mixtures: a random distribution over up to `4B` ages,
/// blended toward uniform weights over `⌈1.5B⌉` ages just far enough to
/// satisfy both constraints. Returns `(Σν², E[i+1])` per sample.
fn feasible_samples(b: usize, count: usize, seed: u64) -> Vec<(f64, f64)> {
    let bf = b as f64;
    let m_u = (1.5 * bf).ceil() as usize;
    let u = vec![1.0 / m_u as f64; m_u];
    let (q_u, e_u) = (sum_sq(&u), mean_age(&u));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let m = rng.random_range(1..=4 * b);
        let mut x: Vec<f64> = (0..m).map(|_| Exp1.sample(&mut rng)).collect();
        let s: f64 = x.iter().sum();
        x.iter_mut().for_each(|v| *v /= s);
        if rng.random_bool(0.7) {
            x.sort_by(|a, b| b.partial_cmp(a).unwrap());
        }
        let len = m.max(m_u);
        let xv: Vec<f64> = (0..len).map(|i| x.get(i).copied().unwrap_or(0.0)).collect();
        let uv: Vec<f64> = (0..len).map(|i| u.get(i).copied().unwrap_or(0.0)).collect();
        // E is linear in the blend weight t, Σν² is a convex quadratic.
        let e_x = mean_age(&xv);
        let mut t_max: f64 = 1.0;
        if e_x > bf {
            t_max = t_max.min((bf - e_u) / (e_x - e_u));
        }
        let d: Vec<f64> = xv.iter().zip(&uv).map(|(a, b)| a - b).collect();
        let qa = sum_sq(&d);
        let qb = 2.0 * uv.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>();
        let qc = q_u - 1.0 / bf;
        if qa > 0.0 {
            let root = (-qb + (qb * qb - 4.0 * qa * qc).sqrt()) / (2.0 * qa);
            t_max = t_max.min(root);
        }
        let t = if rng.random_bool(0.5) {
            t_max
        } else {
            t_max * rng.random::<f64>()
        };
        let nu: Vec<f64> = uv.iter().zip(&d).map(|(a, b)| a + t * b).collect();
        let (q, e) = (sum_sq(&nu), mean_age(&nu));
        if q <= 1.0 / bf + 1e-12 && e <= bf + 1e-12 && (nu.iter().sum::<f64>() - 1.0).abs() < 1e-12
        {
            out.push((q, e));
        }
    }
    out
}

#[test]
fn planner_beats_random_feasible_mixtures() {
    for b in 2..=16 {
        let samples = feasible_samples(b, 1_000_000, b as u64);
        let (c_ess, c_tv) = scaling_coefficients(b).unwrap();
        for kappa in kappa_grid() {
            let plan = solve_mixture(b, kappa, 1024, 0.2).unwrap();
            assert!(plan.is_feasible(), "B={b} κ={kappa}: {plan:?}");
            let best = mixture_objective(&plan.nu, kappa, c_ess, c_tv);
            let sampled = samples
                .iter()
                .map(|&(q, e)| {
                    let mut o = 0.0;
                    if kappa > 0.0 {
                        o += kappa * q / c_ess;
                    }
                    if kappa < 1.0 {
                        o += (1.0 - kappa) * e / c_tv;
                    }
                    o
                })
                .fold(f64::INFINITY, f64::min);
            assert!(
                best <= sampled + 1e-9 * sampled.abs(),
                "B={b} κ={kappa}: {best} > {sampled}"
            );
        }
    }
}

#[test]
fn plans_satisfy_invariants_for_small_b() {
    for b in 1..=16 {
        for kappa in kappa_grid() {
            let p = solve_mixture(b, kappa, 1000, 0.2).unwrap();
            assert!((p.nu.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(p.nu.iter().all(|&v| v >= 0.0));
            assert!(sum_sq(&p.nu) <= 1.0 / b as f64 + FEASIBILITY_TOL);
            assert!(mean_age(&p.nu) <= b as f64 + FEASIBILITY_TOL);
            assert!(p.ess >= (b * 1000) as f64 * (1.0 - 1e-9));
            assert!(p.tv_total >= 0.1 * (1.0 - 1e-9));
            assert_eq!(p.eps_gen, 0.2 / mean_age(&p.nu));
            assert_eq!(p.delta_gen, p.eps_gen * p.eps_gen / 2.0);
            assert!(p.nu.len() < 4 * b.max(1), "support cap reached at B={b}");
            assert!(*p.nu.last().unwrap() > 0.0);
        }
    }
}

#[test]
fn trade_off_is_monotone() {
    for b in [2, 3, 5, 8, 16, 64] {
        let plans: Vec<MixturePlan> = kappa_grid()
            .into_iter()
            .map(|k| solve_mixture(b, k, 1, 0.2).unwrap())
            .collect();
        for w in plans.windows(2) {
            assert!(w[1].ess >= w[0].ess * (1.0 - 1e-12), "B={b}");
            assert!(w[1].tv_total <= w[0].tv_total * (1.0 + 1e-12), "B={b}");
        }
    }
}

#[test]
fn b2_supports_span_three_to_four() {
    for kappa in [0.0, 0.5, 1.0] {
        let p = solve_mixture(2, kappa, 1024, 0.2).unwrap();
        assert!((3..=4).contains(&p.support), "κ={kappa}: {:?}", p.nu);
    }
}

#[test]
fn curve_bounds_are_ordered() {
    for b in 1..=64 {
        let cb = curve_bounds(b).unwrap();
        assert!(cb.b_min <= cb.b_max);
    }
}

#[test]
fn adaptive_radius_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let p = GaussianPolicy::new(3, 1, &[8], &mut rng);
    let probes = Array2::from_shape_fn((10, 3), |(i, j)| ((i + j) as f64).sin());
    let same = vec![p.clone(), p.clone(), p.clone()];
    assert!((adaptive_eps_gen(&same, &[0.5, 0.3, 0.2], 0.2, &probes).unwrap() - 0.2).abs() < 1e-15);
    let mut far = p.clone();
    far.log_std = vec![3.0];
    let drifted = vec![p.clone(), far.clone(), far];
    assert_eq!(
        adaptive_eps_gen(&drifted, &[0.5, 0.3, 0.2], 0.2, &probes).unwrap(),
        0.0
    );
    assert_eq!(
        adaptive_eps_gen(&drifted, &[1.0], 0.2, &probes).unwrap(),
        0.2
    );
    assert!(adaptive_eps_gen(&drifted, &[1.0], 0.2, &Array2::zeros((0, 3))).is_err());
}

fn arb_nu() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, 1..12).prop_filter_map("positive mass", |v| {
        let s: f64 = v.iter().sum();
        (s > 1e-3).then(|| v.iter().map(|x| x / s).collect())
    })
}

proptest! {
    #[test]
    fn eps_gen_never_exceeds_eps(nu in arb_nu(), eps in 0.01f64..1.0) {
        let g = eps_gen_from(&nu, eps);
        prop_assert!(g <= eps * (1.0 + 1e-15));
        let on_policy = nu[0] > 1.0 - 1e-15;
        prop_assert_eq!((g - eps).abs() <= 1e-15 * eps, on_policy);
        prop_assert!((delta_gen_from(g) - g * g / 2.0).abs() == 0.0);
    }

    #[test]
    fn solver_plans_feasible(b in 1usize..40, kappa in 0.0f64..=1.0) {
        let p = solve_mixture(b, kappa, 100, 0.2).unwrap();
        prop_assert!(p.is_feasible());
    }
}
