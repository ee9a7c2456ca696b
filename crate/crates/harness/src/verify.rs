//! Exact checks of the improvement bounds on random tabular MDPs.

use std::fmt::Write as _;

use gpi_core::env::{make_random_tabular, TabularMdp};
use gpi_core::oracle::{
    check_bound_generalized, check_bound_onpolicy, check_step_radius, check_visitation_tv,
    kl_per_state, performance_difference, random_logits, softmax_table, step_sequence,
    tv_per_state, BOUND_TOL,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

/// Logit perturbation scales used to build nearby and distant policy pairs.
pub const PERTURBATION_SCALES: [f64; 4] = [0.01, 0.1, 1.0, 10.0];

/// Outcome of one family of checks.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckRow {
    pub name: &'static str,
    pub instances: usize,
    pub failures: usize,
    /// Worst value of the checked quantity: the smallest margin for bounds,
    /// the largest gap for identities.
    pub worst: f64,
    pub tolerance: f64,
}

impl CheckRow {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

struct Instance {
    mdp: TabularMdp,
    pi: Array2<f64>,
    pi_k: Array2<f64>,
    base_logits: Array2<f64>,
    rng: ChaCha8Rng,
}

fn instance(seed: u64, k: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1_000_003).wrapping_add(k));
    let s = rng.random_range(2..=8);
    let a = rng.random_range(2..=4);
    let mdp = make_random_tabular(s, a, rng.random());
    let base_logits = random_logits(s, a, 1.0, &mut rng);
    let scale = PERTURBATION_SCALES[k as usize % PERTURBATION_SCALES.len()];
    let pert = &base_logits + &random_logits(s, a, scale, &mut rng);
    Instance {
        pi: softmax_table(&pert),
        pi_k: softmax_table(&base_logits),
        mdp,
        base_logits,
        rng,
    }
}

fn random_nu(m: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let raw: Vec<f64> = (0..m).map(|_| rng.random::<f64>() + 0.01).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|x| x / total).collect()
}

struct Tally {
    row: CheckRow,
    lower_is_worse: bool,
}

impl Tally {
    fn margin(name: &'static str, tolerance: f64) -> Self {
        Self {
            row: CheckRow {
                name,
                instances: 0,
                failures: 0,
                worst: f64::INFINITY,
                tolerance,
            },
            lower_is_worse: true,
        }
    }

    fn gap(name: &'static str, tolerance: f64) -> Self {
        Self {
            row: CheckRow {
                name,
                instances: 0,
                failures: 0,
                worst: 0.0,
                tolerance,
            },
            lower_is_worse: false,
        }
    }

    fn record(&mut self, value: f64, ok: bool) {
        let r = &mut self.row;
        r.instances += 1;
        r.failures += usize::from(!ok);
        r.worst = if self.lower_is_worse {
            r.worst.min(value)
        } else {
            r.worst.max(value)
        };
    }
}

/// Run every check on `instances` random MDPs (the step-radius check on half
/// as many) derived from `seed`.
pub fn run_suite(instances: usize, seed: u64) -> Result<Vec<CheckRow>> {
    let mut onpolicy = Tally::margin("on-policy improvement bound", -BOUND_TOL);
    let mut generalized = Tally::margin("generalized improvement bound", -BOUND_TOL);
    let mut identity = Tally::gap("performance difference identity", BOUND_TOL);
    let mut visitation = Tally::margin("visitation TV bound", -BOUND_TOL);
    let mut pinsker = Tally::margin("Pinsker TV <= sqrt(KL/2)", -1e-12);
    let mut radius = Tally::margin("mixture step radius", -BOUND_TOL);
    let eps = 0.2;

    for k in 0..instances as u64 {
        let mut inst = instance(seed, k);
        let (mdp, pi, pi_k) = (&inst.mdp, &inst.pi, &inst.pi_k);

        let r = check_bound_onpolicy(mdp, pi, pi_k)?;
        onpolicy.record(r.margin, r.holds);

        let m = inst.rng.random_range(1..=4);
        let nu = random_nu(m, &mut inst.rng);
        let mut priors = vec![pi_k.clone()];
        for _ in 1..m {
            let scale = PERTURBATION_SCALES[inst.rng.random_range(0..PERTURBATION_SCALES.len())];
            let l = &inst.base_logits
                + &random_logits(mdp.num_states, mdp.num_actions, scale, &mut inst.rng);
            priors.push(softmax_table(&l));
        }
        let r = check_bound_generalized(mdp, pi, &priors, &nu)?;
        generalized.record(r.margin, r.holds);

        let r = performance_difference(mdp, pi, pi_k)?;
        identity.record(r.gap, r.gap <= BOUND_TOL);

        let r = check_visitation_tv(mdp, pi, pi_k)?;
        visitation.record(r.bound - r.visitation_tv, r.holds);

        let tv = tv_per_state(pi, pi_k);
        let kl = kl_per_state(pi, pi_k);
        for (t, d) in tv.iter().zip(kl.iter()) {
            let slack = (d / 2.0).sqrt() - t;
            pinsker.record(slack, slack >= -1e-12);
        }

        if (k as usize) < instances.div_ceil(2) {
            let m = inst.rng.random_range(1..=5);
            let nu = random_nu(m, &mut inst.rng);
            let mean_age: f64 = nu.iter().enumerate().map(|(i, w)| w * (i + 1) as f64).sum();
            let oldest = random_logits(mdp.num_states, mdp.num_actions, 0.5, &mut inst.rng);
            let seq = step_sequence(&oldest, m, eps / mean_age / 2.0, &mut inst.rng)?;
            let r = check_step_radius(mdp, &seq, &nu, eps)?;
            radius.record(r.budget - r.mixture_tv, r.holds && r.assumption_holds);
        }
    }
    Ok(
        [onpolicy, generalized, identity, visitation, pinsker, radius]
            .into_iter()
            .map(|t| t.row)
            .collect(),
    )
}

/// Fixed-width pass/fail table.
pub fn format_table(rows: &[CheckRow]) -> String {
    let mut out = format!(
        "{:<34} {:>9} {:>8} {:>14} {:>11}  result\n",
        "check", "instances", "failures", "worst", "tolerance"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<34} {:>9} {:>8} {:>14.6e} {:>11.1e}  {}",
            r.name,
            r.instances,
            r.failures,
            r.worst,
            r.tolerance,
            if r.passed() { "PASS" } else { "FAIL" }
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes() {
        let rows = run_suite(8, 3).unwrap();
        assert_eq!(rows.len(), 6);
        for r in &rows {
            assert!(r.passed(), "{r:?}");
        }
        assert_eq!(rows[0].instances, 8);
        assert_eq!(rows[5].instances, 4);
        let table = format_table(&rows);
        assert_eq!(table.lines().count(), 7);
    }
}
