//! Bounded window of recent per-policy batches.

use std::collections::VecDeque;

use ndarray::Array2;

use crate::env::Transition;
use crate::error::{Error, Result};
use crate::estimation::{
    actions_of, stack_rows, standardize_weighted_by, vtrace_for_slot, AdvantageEstimate,
    EstimatorConfig,
};
use crate::planner::MixturePlan;
use crate::policy::{GaussianPolicy, ValueFunction};

#[derive(Clone, Debug)]
struct Slot {
    policy: GaussianPolicy,
    transitions: Vec<Transition>,
}

/// The last `capacity` batches, each with the policy that collected it.
/// Slot 0 is the newest.
#[derive(Clone, Debug)]
pub struct ReplayWindow {
    n: usize,
    capacity: usize,
    slots: VecDeque<Slot>,
}

/// Everything an updater needs, flattened across slots in age order.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedBatch {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub behavior_logprob: Vec<f64>,
    pub ages: Vec<usize>,
    /// Per-transition mixture weight; sums to one over the batch.
    pub weights: Vec<f64>,
    /// `π_k / π_behavior` at the start of the update. This is also the
    /// centre of the generalized clipping range.
    pub ratios: Vec<f64>,
    /// Unstandardized V-trace advantages.
    pub raw_advantages: Vec<f64>,
    /// Advantages rescaled so that `ratio · advantage` is standardized
    /// under the mixture weights.
    pub advantages: Vec<f64>,
    pub value_targets: Vec<f64>,
}

impl WeightedBatch {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Total weight carried by transitions of each age.
    pub fn weight_by_age(&self) -> Vec<f64> {
        let ages = self.ages.iter().max().map_or(0, |m| m + 1);
        let mut out = vec![0.0; ages];
        for (&a, &w) in self.ages.iter().zip(&self.weights) {
            out[a] += w;
        }
        out
    }
}

impl ReplayWindow {
    pub fn new(n: usize, capacity: usize) -> Result<Self> {
        if n == 0 || capacity == 0 {
            return Err(Error::Config(
                "replay window needs positive batch size and capacity".into(),
            ));
        }
        Ok(Self {
            n,
            capacity,
            slots: VecDeque::with_capacity(capacity),
        })
    }

    /// Window sized for `plan`: one slot per age with nonzero weight.
    pub fn for_plan(plan: &MixturePlan) -> Result<Self> {
        Self::new(plan.n, plan.window_len())
    }

    pub fn batch_size(&self) -> usize {
        self.n
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn num_transitions(&self) -> usize {
        self.slots.iter().map(|s| s.transitions.len()).sum()
    }

    /// Transitions collected by the policy `age` updates ago.
    pub fn slot(&self, age: usize) -> Option<(&GaussianPolicy, &[Transition])> {
        self.slots
            .get(age)
            .map(|s| (&s.policy, s.transitions.as_slice()))
    }

    /// Add the newest batch; the oldest slot is dropped at capacity.
    pub fn push(&mut self, policy: GaussianPolicy, transitions: Vec<Transition>) -> Result<()> {
        if transitions.len() != self.n {
            return Err(Error::Length(format!(
                "replay slot expects {} transitions, got {}",
                self.n,
                transitions.len()
            )));
        }
        if self.slots.len() == self.capacity {
            self.slots.pop_back();
        }
        self.slots.push_front(Slot {
            policy,
            transitions,
        });
        Ok(())
    }

    /// Largest gap between stored behavior log-probs and a re-evaluation
    /// under each slot's snapshot.
    pub fn snapshot_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for slot in &self.slots {
            let lp = slot.policy.log_probs(
                &crate::estimation::states_of(&slot.transitions),
                &actions_of(&slot.transitions),
            );
            for (a, t) in lp.iter().zip(&slot.transitions) {
                worst = worst.max((a - t.behavior_logprob).abs());
            }
        }
        worst
    }

    /// Estimate advantages for every slot under `current` and weight the
    /// slots by `plan.nu`, renormalized over the ages present.
    pub fn assemble(
        &self,
        current: &GaussianPolicy,
        value_fn: &ValueFunction,
        plan: &MixturePlan,
        cfg: &EstimatorConfig,
    ) -> Result<WeightedBatch> {
        if self.slots.is_empty() {
            return Err(Error::Length("cannot assemble from an empty window".into()));
        }
        let ages = self.slots.len().min(plan.nu.len());
        let mass: f64 = plan.nu[..ages].iter().sum();
        let total = ages * self.n;
        let width = current.state_dim();
        let mut estimates: Vec<AdvantageEstimate> = Vec::with_capacity(ages);
        for (age, slot) in self.slots.iter().take(ages).enumerate() {
            estimates.push(vtrace_for_slot(
                &slot.transitions,
                current,
                value_fn,
                cfg,
                age,
            )?);
        }
        let mut ages_v = Vec::with_capacity(total);
        let mut weights = Vec::with_capacity(total);
        let mut behavior = Vec::with_capacity(total);
        let mut ratios = Vec::with_capacity(total);
        let mut raw = Vec::with_capacity(total);
        let mut targets = Vec::with_capacity(total);
        for (age, (slot, est)) in self.slots.iter().zip(&estimates).enumerate() {
            let w = plan.nu[age] / mass / self.n as f64;
            for t in &slot.transitions {
                ages_v.push(age);
                weights.push(w);
                behavior.push(t.behavior_logprob);
            }
            ratios.extend_from_slice(&est.ratios);
            raw.extend_from_slice(&est.advantages);
            targets.extend_from_slice(&est.value_targets);
        }
        let advantages = standardize_weighted_by(&raw, &ratios, &weights)?;
        let used = self.slots.iter().take(ages);
        let states = stack_rows(
            used.clone()
                .flat_map(|s| s.transitions.iter().map(|t| t.state.as_slice()))
                .collect::<Vec<_>>()
                .into_iter(),
            width,
        );
        let adim = current.action_dim();
        let actions = stack_rows(
            used.flat_map(|s| s.transitions.iter().map(|t| t.action.as_slice()))
                .collect::<Vec<_>>()
                .into_iter(),
            adim,
        );
        Ok(WeightedBatch {
            states,
            actions,
            behavior_logprob: behavior,
            ages: ages_v,
            weights,
            ratios,
            raw_advantages: raw,
            advantages,
            value_targets: targets,
        })
    }
}
