//! The training loop and its on-disk record.
//!
//! Every update appends one row to `metrics.csv`. Columns, in order:
//!
//! | column             | meaning                                                       |
//! |--------------------|---------------------------------------------------------------|
//! | `update`           | update index, from 1                                          |
//! | `step`             | environment steps collected so far                            |
//! | `episodes`         | finished episodes so far                                      |
//! | `mean_return`      | mean undiscounted return of the last 10 finished episodes     |
//! | `surrogate_before` | update objective at the starting policy                       |
//! | `surrogate_after`  | update objective at the new policy                            |
//! | `measured_tv`      | sample estimate of the expected one-step TV distance          |
//! | `measured_kl`      | weighted KL from the starting to the new policy               |
//! | `lr`               | learning rate used (clipped family)                           |
//! | `dual_temperature` | optimal temperature (projection family)                       |
//! | `step_scale`       | full natural-gradient step length (trust-region families)     |
//! | `accepted`         | 1 if the step was taken, else 0                               |
//! | `eps_gen`          | one-step TV radius in force                                   |
//! | `delta_gen`        | matching KL radius                                            |
//! | `ess`              | effective sample size of the weighted batch                   |
//! | `value_loss`       | value regression loss after fitting                           |
//!
//! Cells that do not apply to an algorithm, and `mean_return` before the
//! first episode ends, are empty.

use std::fs;
use std::path::{Path, PathBuf};

use gpi_core::checkpoint::Checkpoint;
use gpi_core::env::{builtin_env, Collector};
use gpi_core::estimation::{fit_value, value_loss, EstimatorConfig, ValueFitConfig};
use gpi_core::planner::{adaptive_eps_gen, delta_gen_from, solve_mixture, MixturePlan};
use gpi_core::policy::{GaussianPolicy, ValueFunction};
use gpi_core::replay::{ReplayWindow, WeightedBatch};
use gpi_core::updaters::{
    geppo_update, getrpo_update, gevmpo_update, ppo_update, trpo_update, vmpo_update, ClipConfig,
    LrState, TrustRegionConfig, UpdateReport,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{component_seed, Algo, RunConfig, Stream};
use crate::error::Result;

pub const METRIC_COLUMNS: [&str; 16] = [
    "update",
    "step",
    "episodes",
    "mean_return",
    "surrogate_before",
    "surrogate_after",
    "measured_tv",
    "measured_kl",
    "lr",
    "dual_temperature",
    "step_scale",
    "accepted",
    "eps_gen",
    "delta_gen",
    "ess",
    "value_loss",
];

/// Episodes averaged into `mean_return`.
pub const RETURN_WINDOW: usize = 10;

/// One row of `metrics.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct UpdateRow {
    pub update: usize,
    pub step: usize,
    pub episodes: usize,
    pub mean_return: Option<f64>,
    pub report: UpdateReport,
    pub eps_gen: f64,
    pub delta_gen: f64,
    pub ess: f64,
    pub value_loss: f64,
}

fn cell(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

impl UpdateRow {
    pub fn cells(&self) -> Vec<String> {
        let r = &self.report;
        vec![
            self.update.to_string(),
            self.step.to_string(),
            self.episodes.to_string(),
            cell(self.mean_return),
            r.surrogate_before.to_string(),
            r.surrogate_after.to_string(),
            r.measured_tv.to_string(),
            r.measured_kl.to_string(),
            cell(r.lr),
            cell(r.dual_temperature),
            cell(r.step_scale),
            u8::from(r.accepted).to_string(),
            self.eps_gen.to_string(),
            self.delta_gen.to_string(),
            self.ess.to_string(),
            self.value_loss.to_string(),
        ]
    }
}

/// Mixture plan for a configuration: `ν = (1)` over `b·n` samples for the
/// on-policy algorithms, the planner's optimum otherwise.
pub fn plan_for(cfg: &RunConfig) -> Result<MixturePlan> {
    Ok(if cfg.algo.reuses_samples() {
        solve_mixture(cfg.b, cfg.kappa, cfg.n, cfg.eps)?
    } else {
        MixturePlan::on_policy(cfg.b * cfg.n, cfg.eps)?
    })
}

/// Live state of one run.
pub struct Trainer {
    cfg: RunConfig,
    plan: MixturePlan,
    collector: Collector,
    window: ReplayWindow,
    policy: GaussianPolicy,
    value: ValueFunction,
    lr_state: LrState,
    policy_rng: ChaCha8Rng,
    value_rng: ChaCha8Rng,
    updates: usize,
    last_batch: Option<WeightedBatch>,
}

impl Trainer {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let env = builtin_env(&cfg.env)?;
        let plan = plan_for(&cfg)?;
        let mut init = ChaCha8Rng::seed_from_u64(component_seed(cfg.seed, Stream::PolicyInit));
        let policy = GaussianPolicy::new(env.state_dim, env.action_dim, &cfg.hidden, &mut init);
        let mut init = ChaCha8Rng::seed_from_u64(component_seed(cfg.seed, Stream::ValueInit));
        let value = ValueFunction::new(env.state_dim, &cfg.hidden, &mut init);
        let mut lr_state = LrState::new(policy.num_params(), cfg.lr, cfg.alpha);
        lr_state.adaptive = cfg.adaptive_lr;
        Ok(Self {
            window: ReplayWindow::for_plan(&plan)?,
            collector: Collector::new(env, component_seed(cfg.seed, Stream::Env)),
            policy_rng: ChaCha8Rng::seed_from_u64(component_seed(cfg.seed, Stream::PolicyShuffle)),
            value_rng: ChaCha8Rng::seed_from_u64(component_seed(cfg.seed, Stream::ValueShuffle)),
            plan,
            policy,
            value,
            lr_state,
            updates: 0,
            last_batch: None,
            cfg,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn plan(&self) -> &MixturePlan {
        &self.plan
    }

    pub fn policy(&self) -> &GaussianPolicy {
        &self.policy
    }

    pub fn value(&self) -> &ValueFunction {
        &self.value
    }

    pub fn lr_state(&self) -> &LrState {
        &self.lr_state
    }

    /// Batch used by the most recent update.
    pub fn last_batch(&self) -> Option<&WeightedBatch> {
        self.last_batch.as_ref()
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    pub fn steps(&self) -> usize {
        self.collector.total_steps()
    }

    pub fn completed_returns(&self) -> &[f64] {
        self.collector.completed_returns()
    }

    pub fn finished(&self) -> bool {
        self.steps() + self.plan.n > self.cfg.steps
    }

    /// Plan in force for the next update, with the radius shrunk by measured
    /// drift when `adaptive_radius` is set.
    fn effective_plan(&self, batch: &WeightedBatch) -> Result<MixturePlan> {
        let mut plan = self.plan.clone();
        if self.cfg.adaptive_radius {
            let policies: Vec<GaussianPolicy> = (0..self.window.len())
                .map(|age| self.window.slot(age).unwrap().0.clone())
                .collect();
            let ages = policies.len().min(plan.nu.len());
            let mass: f64 = plan.nu[..ages].iter().sum();
            let nu: Vec<f64> = plan.nu[..ages].iter().map(|v| v / mass).collect();
            plan.eps_gen = adaptive_eps_gen(&policies, &nu, plan.eps, &batch.states)?;
            plan.delta_gen = delta_gen_from(plan.eps_gen);
        }
        Ok(plan)
    }

    /// Collect one batch and update the policy and value function. Returns
    /// `None` once the step budget cannot fund another batch.
    pub fn step(&mut self) -> Result<Option<UpdateRow>> {
        if self.finished() {
            return Ok(None);
        }
        let fresh = self.collector.collect(&self.policy, self.plan.n)?;
        self.window.push(self.policy.clone(), fresh)?;
        let est = EstimatorConfig {
            gamma: self.cfg.gamma,
            lambda: self.cfg.lambda,
            cbar: self.cfg.cbar,
        };
        let batch = self
            .window
            .assemble(&self.policy, &self.value, &self.plan, &est)?;
        let plan = self.effective_plan(&batch)?;
        let (policy, report) = self.update_policy(&batch, &plan)?;

        let fit = ValueFitConfig {
            epochs: self.cfg.value_epochs,
            minibatches: self.cfg.value_minibatches.min(batch.len()),
            lr: self.cfg.value_lr,
        };
        self.value = fit_value(
            &self.value,
            &batch.states,
            &batch.value_targets,
            &fit,
            &mut self.value_rng,
        )?;
        self.policy = policy;
        self.updates += 1;
        let sum_sq: f64 = batch.weights.iter().map(|w| w * w).sum();
        let row = UpdateRow {
            update: self.updates,
            step: self.steps(),
            episodes: self.completed_returns().len(),
            mean_return: self.collector.recent_mean_return(RETURN_WINDOW),
            report,
            eps_gen: plan.eps_gen,
            delta_gen: plan.delta_gen,
            ess: 1.0 / sum_sq,
            value_loss: value_loss(&self.value, &batch.states, &batch.value_targets),
        };
        log::debug!(
            "{} update {} step {} return {:?}",
            self.cfg.algo,
            row.update,
            row.step,
            row.mean_return
        );
        self.last_batch = Some(batch);
        Ok(Some(row))
    }

    fn update_policy(
        &mut self,
        batch: &WeightedBatch,
        plan: &MixturePlan,
    ) -> Result<(GaussianPolicy, UpdateReport)> {
        if plan.eps_gen <= 0.0 {
            // Earlier policies already used the whole budget.
            let report = UpdateReport {
                surrogate_before: 0.0,
                surrogate_after: 0.0,
                measured_tv: 0.0,
                measured_kl: 0.0,
                step_scale: None,
                dual_temperature: None,
                lr: None,
                accepted: false,
            };
            return Ok((self.policy.clone(), report));
        }
        let clip = ClipConfig {
            epochs: self.cfg.epochs,
            minibatches: self.cfg.minibatches.min(batch.len()),
        };
        let tr = TrustRegionConfig {
            cg_iters: self.cfg.cg_iters,
            damping: self.cfg.damping,
            ..TrustRegionConfig::default()
        };
        let p = &self.policy;
        let out = match self.cfg.algo {
            Algo::Ppo => ppo_update(
                batch,
                p,
                plan.eps_gen,
                &mut self.lr_state,
                &clip,
                &mut self.policy_rng,
            )?,
            Algo::Geppo => geppo_update(
                batch,
                p,
                plan,
                &mut self.lr_state,
                &clip,
                &mut self.policy_rng,
            )?,
            Algo::Trpo => trpo_update(batch, p, plan.delta_gen, &tr)?,
            Algo::Getrpo => getrpo_update(batch, p, plan, &tr)?,
            Algo::Vmpo => vmpo_update(batch, p, plan.delta_gen, &tr)?,
            Algo::Gevmpo => gevmpo_update(batch, p, plan, &tr)?,
        };
        Ok(out)
    }
}

/// Directory name for a run: `<algo>-<env>-b<B>-k<kappa>-s<seed>`.
pub fn run_name(cfg: &RunConfig) -> String {
    format!(
        "{}-{}-b{}-k{}-s{}",
        cfg.algo, cfg.env, cfg.b, cfg.kappa, cfg.seed
    )
}

/// Result of [`train`].
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub rows: Vec<UpdateRow>,
    pub policy: GaussianPolicy,
    pub value: ValueFunction,
}

/// Run `cfg` to completion, writing `config.txt`, `metrics.csv`,
/// `policy.bin` and `value.bin` into `dir`.
pub fn train(cfg: &RunConfig, dir: &Path) -> Result<RunOutput> {
    let mut trainer = Trainer::new(cfg.clone())?;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.txt"), cfg.to_text())?;
    let mut csv = csv::Writer::from_path(dir.join("metrics.csv"))?;
    csv.write_record(METRIC_COLUMNS)?;
    let mut rows = Vec::with_capacity(cfg.num_updates());
    while let Some(row) = trainer.step()? {
        csv.write_record(row.cells())?;
        csv.flush()?;
        rows.push(row);
    }
    Checkpoint::from_policy(trainer.policy()).save(&dir.join("policy.bin"))?;
    Checkpoint::from_value(trainer.value()).save(&dir.join("value.bin"))?;
    Ok(RunOutput {
        dir: dir.to_path_buf(),
        rows,
        policy: trainer.policy().clone(),
        value: trainer.value().clone(),
    })
}
