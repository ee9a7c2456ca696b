//! Run configuration as flat `key = value` text.
//!
//! Blank lines and lines starting with `#` are ignored. Every key has a
//! default, so an empty file is a valid configuration. Keys:
//!
//! | key                 | default            | meaning                                        |
//! |---------------------|--------------------|------------------------------------------------|
//! | `algo`              | `geppo`            | ppo, geppo, trpo, getrpo, vmpo, gevmpo         |
//! | `env`               | `pendulum_swingup` | built-in environment name                      |
//! | `steps`             | `200000`           | environment steps to collect                   |
//! | `b`                 | `2`                | batches per on-policy update                   |
//! | `n`                 | `1024`             | samples per batch                              |
//! | `kappa`             | `0.5`              | ESS/TV trade-off for the mixture planner       |
//! | `eps`               | `0.2`              | on-policy TV radius                            |
//! | `gamma`             | `0.995`            | discount                                       |
//! | `lambda`            | `0.97`             | trace decay for advantage estimates            |
//! | `cbar`              | `1.0`              | truncation level for trace coefficients        |
//! | `seed`              | `0`                | master seed                                    |
//! | `lr`                | `0.0003`           | initial policy learning rate (clipped family)  |
//! | `alpha`             | `0.03`             | learning-rate decay factor                     |
//! | `adaptive_lr`       | `true`             | decay the learning rate after TV overshoots    |
//! | `epochs`            | `10`               | policy epochs per update (clipped family)      |
//! | `minibatches`       | `32`               | policy minibatches per epoch                   |
//! | `cg_iters`          | `20`               | conjugate-gradient iterations                  |
//! | `damping`           | `0.01`             | Fisher damping                                 |
//! | `value_epochs`      | `10`               | value regression epochs per update             |
//! | `value_minibatches` | `32`               | value minibatches per epoch                    |
//! | `value_lr`          | `0.0003`           | value learning rate                            |
//! | `hidden`            | `64,64`            | hidden widths of both networks                 |
//! | `adaptive_radius`   | `false`            | shrink the one-step radius by measured drift   |
//!
//! On-policy algorithms ignore `kappa` and update on `b·n` fresh samples.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{HarnessError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Algo {
    Ppo,
    Geppo,
    Trpo,
    Getrpo,
    Vmpo,
    Gevmpo,
}

pub const ALGOS: [Algo; 6] = [
    Algo::Ppo,
    Algo::Geppo,
    Algo::Trpo,
    Algo::Getrpo,
    Algo::Vmpo,
    Algo::Gevmpo,
];

impl Algo {
    pub fn name(self) -> &'static str {
        match self {
            Algo::Ppo => "ppo",
            Algo::Geppo => "geppo",
            Algo::Trpo => "trpo",
            Algo::Getrpo => "getrpo",
            Algo::Vmpo => "vmpo",
            Algo::Gevmpo => "gevmpo",
        }
    }

    /// Whether the algorithm reuses batches from earlier policies.
    pub fn reuses_samples(self) -> bool {
        matches!(self, Algo::Geppo | Algo::Getrpo | Algo::Gevmpo)
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algo {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        ALGOS.into_iter().find(|a| a.name() == s).ok_or_else(|| {
            HarnessError::Config(format!(
                "unknown algorithm `{s}` (expected one of ppo, geppo, trpo, getrpo, vmpo, gevmpo)"
            ))
        })
    }
}

/// Independent random streams derived from the master seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Env = 1,
    PolicyInit = 2,
    ValueInit = 3,
    PolicyShuffle = 4,
    ValueShuffle = 5,
}

/// Seed for one component: the first word of ChaCha8 keyed by the master
/// seed on stream `stream`.
pub fn component_seed(seed: u64, stream: Stream) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng.next_u64()
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub algo: Algo,
    pub env: String,
    pub steps: usize,
    pub b: usize,
    pub n: usize,
    pub kappa: f64,
    pub eps: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub cbar: f64,
    pub seed: u64,
    pub lr: f64,
    pub alpha: f64,
    pub adaptive_lr: bool,
    pub epochs: usize,
    pub minibatches: usize,
    pub cg_iters: usize,
    pub damping: f64,
    pub value_epochs: usize,
    pub value_minibatches: usize,
    pub value_lr: f64,
    pub hidden: Vec<usize>,
    pub adaptive_radius: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            algo: Algo::Geppo,
            env: "pendulum_swingup".into(),
            steps: 200_000,
            b: 2,
            n: 1024,
            kappa: 0.5,
            eps: 0.2,
            gamma: 0.995,
            lambda: 0.97,
            cbar: 1.0,
            seed: 0,
            lr: 3e-4,
            alpha: 0.03,
            adaptive_lr: true,
            epochs: 10,
            minibatches: 32,
            cg_iters: 20,
            damping: 0.01,
            value_epochs: 10,
            value_minibatches: 32,
            value_lr: 3e-4,
            hidden: vec![64, 64],
            adaptive_radius: false,
        }
    }
}

pub const KEYS: [&str; 23] = [
    "algo",
    "env",
    "steps",
    "b",
    "n",
    "kappa",
    "eps",
    "gamma",
    "lambda",
    "cbar",
    "seed",
    "lr",
    "alpha",
    "adaptive_lr",
    "epochs",
    "minibatches",
    "cg_iters",
    "damping",
    "value_epochs",
    "value_minibatches",
    "value_lr",
    "hidden",
    "adaptive_radius",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| HarnessError::Config(format!("cannot parse `{value}` for key `{key}`")))
}

impl RunConfig {
    /// Set one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "algo" => self.algo = value.parse()?,
            "env" => self.env = value.to_string(),
            "steps" => self.steps = parse(key, value)?,
            "b" | "B" => self.b = parse(key, value)?,
            "n" => self.n = parse(key, value)?,
            "kappa" => self.kappa = parse(key, value)?,
            "eps" => self.eps = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "cbar" => self.cbar = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "adaptive_lr" => self.adaptive_lr = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "minibatches" => self.minibatches = parse(key, value)?,
            "cg_iters" => self.cg_iters = parse(key, value)?,
            "damping" => self.damping = parse(key, value)?,
            "value_epochs" => self.value_epochs = parse(key, value)?,
            "value_minibatches" => self.value_minibatches = parse(key, value)?,
            "value_lr" => self.value_lr = parse(key, value)?,
            "hidden" => {
                self.hidden = if value.is_empty() {
                    Vec::new()
                } else {
                    value
                        .split(',')
                        .map(|w| parse("hidden", w.trim()))
                        .collect::<Result<_>>()?
                }
            }
            "adaptive_radius" => self.adaptive_radius = parse(key, value)?,
            other => return Err(HarnessError::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Apply every `key = value` line of `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                HarnessError::Config(format!("line {}: expected `key = value`", i + 1))
            })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "algo" => self.algo.to_string(),
            "env" => self.env.clone(),
            "steps" => self.steps.to_string(),
            "b" => self.b.to_string(),
            "n" => self.n.to_string(),
            "kappa" => self.kappa.to_string(),
            "eps" => self.eps.to_string(),
            "gamma" => self.gamma.to_string(),
            "lambda" => self.lambda.to_string(),
            "cbar" => self.cbar.to_string(),
            "seed" => self.seed.to_string(),
            "lr" => self.lr.to_string(),
            "alpha" => self.alpha.to_string(),
            "adaptive_lr" => self.adaptive_lr.to_string(),
            "epochs" => self.epochs.to_string(),
            "minibatches" => self.minibatches.to_string(),
            "cg_iters" => self.cg_iters.to_string(),
            "damping" => self.damping.to_string(),
            "value_epochs" => self.value_epochs.to_string(),
            "value_minibatches" => self.value_minibatches.to_string(),
            "value_lr" => self.value_lr.to_string(),
            "hidden" => self
                .hidden
                .iter()
                .map(|h| h.to_string())
                .collect::<Vec<_>>()
                .join(","),
            "adaptive_radius" => self.adaptive_radius.to_string(),
            _ => return None,
        })
    }

    /// Every key, one per line, in a form [`RunConfig::from_text`] reads back.
    pub fn to_text(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{k} = {}\n", self.get(k).unwrap()))
            .collect()
    }

    /// Samples consumed per policy update.
    pub fn update_batch(&self) -> usize {
        if self.algo.reuses_samples() {
            self.n
        } else {
            self.b * self.n
        }
    }

    /// Number of policy updates the run will perform.
    pub fn num_updates(&self) -> usize {
        self.steps / self.update_batch()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        gpi_core::env::builtin_env(&self.env)?;
        if self.b == 0 || self.n == 0 {
            return bad("b and n must be positive".into());
        }
        if self.steps < self.update_batch() {
            return bad(format!(
                "steps {} is less than one update batch of {}",
                self.steps,
                self.update_batch()
            ));
        }
        if !(0.0..=1.0).contains(&self.kappa) {
            return bad(format!("kappa {} outside [0, 1]", self.kappa));
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return bad(format!("eps {} outside (0, 1)", self.eps));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma {} outside (0, 1)", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda {} outside [0, 1]", self.lambda));
        }
        if !(self.cbar > 0.0) {
            return bad(format!("cbar {} must be positive", self.cbar));
        }
        if !(self.lr >= 0.0) || !(self.value_lr >= 0.0) || !(self.alpha >= 0.0) {
            return bad("learning rates and alpha must be nonnegative".into());
        }
        if !(self.damping >= 0.0) {
            return bad(format!("damping {} must be nonnegative", self.damping));
        }
        if self.epochs == 0
            || self.minibatches == 0
            || self.value_epochs == 0
            || self.value_minibatches == 0
        {
            return bad("epoch and minibatch counts must be positive".into());
        }
        if self.cg_iters == 0 {
            return bad("cg_iters must be positive".into());
        }
        if self.minibatches > self.update_batch() || self.value_minibatches > self.update_batch() {
            return bad("more minibatches than samples".into());
        }
        if self.adaptive_radius && !self.algo.reuses_samples() {
            return bad(format!(
                "adaptive_radius needs a sample-reusing algorithm, not {}",
                self.algo
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_text(&cfg.to_text()).unwrap(), cfg);
        assert_eq!(RunConfig::from_text("").unwrap(), cfg);
    }

    #[test]
    fn overrides_and_comments() {
        let cfg =
            RunConfig::from_text("# run\nalgo = trpo\n\nB=4\nhidden = 32\nkappa=1\n").unwrap();
        assert_eq!(cfg.algo, Algo::Trpo);
        assert_eq!(cfg.b, 4);
        assert_eq!(cfg.hidden, vec![32]);
        assert_eq!(cfg.update_batch(), 4096);
        assert_eq!(RunConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(RunConfig::from_text("algo = sac").is_err());
        assert!(RunConfig::from_text("colour = red").is_err());
        assert!(RunConfig::from_text("env = walker").is_err());
        assert!(RunConfig::from_text("kappa = 2").is_err());
        assert!(RunConfig::from_text("steps = 10").is_err());
        assert!(RunConfig::from_text("eps").is_err());
        assert!(RunConfig::from_text("algo = ppo\nadaptive_radius = true").is_err());
    }

    #[test]
    fn component_seeds_differ() {
        let s: Vec<u64> = [
            Stream::Env,
            Stream::PolicyInit,
            Stream::ValueInit,
            Stream::PolicyShuffle,
            Stream::ValueShuffle,
        ]
        .into_iter()
        .map(|st| component_seed(7, st))
        .collect();
        for i in 0..s.len() {
            for j in 0..i {
                assert_ne!(s[i], s[j]);
            }
        }
        assert_eq!(component_seed(7, Stream::Env), s[0]);
        assert_ne!(component_seed(8, Stream::Env), s[0]);
    }
}
