use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{Error, Result};

const TOL: f64 = 1e-9;

/// Finite MDP `(S, A, P, r, ρ0, γ)` with rewards in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularMdp {
    pub num_states: usize,
    pub num_actions: usize,
    /// `transition[[s, a, s']] = P(s' | s, a)`.
    pub transition: Array3<f64>,
    pub reward: Array2<f64>,
    pub initial_dist: Array1<f64>,
    pub discount: f64,
}

impl TabularMdp {
    pub fn new(
        transition: Array3<f64>,
        reward: Array2<f64>,
        initial_dist: Array1<f64>,
        discount: f64,
    ) -> Result<Self> {
        let (s, a, s2) = transition.dim();
        let mdp = Self {
            num_states: s,
            num_actions: a,
            transition,
            reward,
            initial_dist,
            discount,
        };
        if s != s2 {
            return Err(Error::Dimension {
                what: "transition successor axis",
                expected: s,
                got: s2,
            });
        }
        mdp.validate()?;
        Ok(mdp)
    }

    /// Check every structural invariant.
    pub fn validate(&self) -> Result<()> {
        let (s, a) = (self.num_states, self.num_actions);
        if s == 0 || a == 0 {
            return Err(Error::Config("empty state or action set".into()));
        }
        if self.reward.dim() != (s, a) {
            return Err(Error::Config(format!(
                "reward shape {:?} != ({s}, {a})",
                self.reward.dim()
            )));
        }
        if self.initial_dist.len() != s {
            return Err(Error::Dimension {
                what: "initial distribution",
                expected: s,
                got: self.initial_dist.len(),
            });
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(Error::Config(format!(
                "discount {} outside (0, 1)",
                self.discount
            )));
        }
        for si in 0..s {
            for ai in 0..a {
                let row = self.transition.slice(ndarray::s![si, ai, ..]);
                if row.iter().any(|&p| p < 0.0) || (row.sum() - 1.0).abs() > TOL {
                    return Err(Error::Config(format!(
                        "transition row ({si}, {ai}) is not a distribution"
                    )));
                }
                let r = self.reward[[si, ai]];
                if !(0.0..=1.0).contains(&r) {
                    return Err(Error::Config(format!(
                        "reward {r} at ({si}, {ai}) outside [0, 1]"
                    )));
                }
            }
        }
        if self.initial_dist.iter().any(|&p| p < 0.0) || (self.initial_dist.sum() - 1.0).abs() > TOL
        {
            return Err(Error::Config(
                "initial distribution does not sum to 1".into(),
            ));
        }
        Ok(())
    }

    /// Sample one discounted return truncated at `horizon` steps.
    pub fn sample_return<R: Rng + ?Sized>(
        &self,
        policy: &Array2<f64>,
        horizon: usize,
        rng: &mut R,
    ) -> f64 {
        let pick = |probs: &[f64], rng: &mut R| -> usize {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (i, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    return i;
                }
            }
            probs.len() - 1
        };
        let mut s = pick(self.initial_dist.as_slice().unwrap(), rng);
        let mut ret = 0.0;
        let mut disc = 1.0;
        for _ in 0..horizon {
            let a = pick(&policy.row(s).to_vec(), rng);
            ret += disc * self.reward[[s, a]];
            disc *= self.discount;
            s = pick(&self.transition.slice(ndarray::s![s, a, ..]).to_vec(), rng);
        }
        ret
    }
}

fn dirichlet_row<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<f64> {
    let mut v: Vec<f64> = (0..len).map(|_| Exp1.sample(rng)).collect();
    let z: f64 = v.iter().sum();
    for x in &mut v {
        *x /= z;
    }
    v
}

/// Random MDP with Dirichlet(1) transition rows and initial distribution,
/// uniform rewards in `[0, 1]`, and discount 0.9.
pub fn make_random_tabular(num_states: usize, num_actions: usize, seed: u64) -> TabularMdp {
    make_random_tabular_with_discount(num_states, num_actions, 0.9, seed)
}

pub fn make_random_tabular_with_discount(
    num_states: usize,
    num_actions: usize,
    discount: f64,
    seed: u64,
) -> TabularMdp {
    assert!(
        num_states >= 2 && num_actions >= 2,
        "need at least two states and two actions"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut transition = Array3::zeros((num_states, num_actions, num_states));
    for s in 0..num_states {
        for a in 0..num_actions {
            for (k, p) in dirichlet_row(num_states, &mut rng).into_iter().enumerate() {
                transition[[s, a, k]] = p;
            }
        }
    }
    let reward = Array2::from_shape_fn((num_states, num_actions), |_| rng.random::<f64>());
    let initial_dist = Array1::from(dirichlet_row(num_states, &mut rng));
    TabularMdp::new(transition, reward, initial_dist, discount)
        .expect("random MDP satisfies invariants")
}
