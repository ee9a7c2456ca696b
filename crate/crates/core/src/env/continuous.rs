use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::policy::GaussianPolicy;

/// Default episode length for the built-in tasks.
pub const DEFAULT_HORIZON: usize = 1000;

/// Names accepted by [`builtin_env`].
pub const BUILTIN_ENVS: [&str; 3] = [
    "pendulum_swingup",
    "cartpole_swingup_sparse",
    "pointmass_easy",
];

/// Pendulum constants. Angle is measured from upright.
pub mod pendulum {
    pub const GRAVITY: f64 = 10.0;
    pub const MASS: f64 = 1.0;
    pub const LENGTH: f64 = 1.0;
    pub const MAX_TORQUE: f64 = 5.0;
    pub const DAMPING: f64 = 0.1;
    pub const MAX_SPEED: f64 = 8.0;
    pub const DT: f64 = 0.05;
}

/// Cart-pole constants. Pole angle is measured from upright.
pub mod cartpole {
    pub const GRAVITY: f64 = 9.81;
    pub const CART_MASS: f64 = 1.0;
    pub const POLE_MASS: f64 = 0.1;
    pub const HALF_LENGTH: f64 = 0.5;
    pub const MAX_FORCE: f64 = 10.0;
    pub const RAIL_LIMIT: f64 = 2.0;
    pub const DT: f64 = 0.02;
    /// Reward is 1 while the pole is within this angle of upright.
    pub const UPRIGHT_DEGREES: f64 = 15.0;
}

/// Point-mass constants. The target sits at the origin.
pub mod pointmass {
    pub const MASS: f64 = 1.0;
    pub const MAX_FORCE: f64 = 1.0;
    pub const FRICTION: f64 = 0.5;
    pub const ARENA: f64 = 1.0;
    pub const TARGET_RADIUS: f64 = 0.25;
    pub const DT: f64 = 0.05;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnvKind {
    PendulumSwingup,
    CartpoleSwingupSparse,
    PointMassEasy,
}

/// Deterministic continuous-control task with rewards in `[0, 1]`.
///
/// The observation is the full simulator state, so [`ContinuousEnv::step_state`]
/// is a pure function of the stored observation and action. Actions are
/// clipped to `[-1, 1]` per dimension before they reach the dynamics.
#[derive(Clone, Debug, PartialEq)]
pub struct ContinuousEnv {
    pub name: &'static str,
    pub kind: EnvKind,
    pub state_dim: usize,
    pub action_dim: usize,
    pub horizon: usize,
}

/// How a transition ended its episode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EpisodeEnd {
    Continue,
    /// Horizon reached; the tail is bootstrapped from the value function.
    Truncated,
    /// True termination; the tail is worth zero.
    Terminated,
}

impl EpisodeEnd {
    pub fn is_boundary(self) -> bool {
        self != EpisodeEnd::Continue
    }
}

/// One environment step together with its sampling metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    /// The unclipped sampled action.
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub end: EpisodeEnd,
    pub behavior_logprob: f64,
    pub policy_age: usize,
}

/// Look up a built-in environment by name.
pub fn builtin_env(name: &str) -> Result<ContinuousEnv> {
    let (kind, state_dim, action_dim, name) = match name {
        "pendulum_swingup" => (EnvKind::PendulumSwingup, 3, 1, "pendulum_swingup"),
        "cartpole_swingup_sparse" => (
            EnvKind::CartpoleSwingupSparse,
            5,
            1,
            "cartpole_swingup_sparse",
        ),
        "pointmass_easy" => (EnvKind::PointMassEasy, 4, 2, "pointmass_easy"),
        other => {
            return Err(Error::Config(format!(
                "unknown environment `{other}`; valid names: {}",
                BUILTIN_ENVS.join(", ")
            )))
        }
    };
    Ok(ContinuousEnv {
        name,
        kind,
        state_dim,
        action_dim,
        horizon: DEFAULT_HORIZON,
    })
}

fn wrap_angle(theta: f64) -> f64 {
    let mut t = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if t <= -PI {
        t += 2.0 * PI;
    }
    t
}

impl ContinuousEnv {
    pub fn with_horizon(mut self, horizon: usize) -> Self {
        assert!(horizon > 0);
        self.horizon = horizon;
        self
    }

    /// Draw an initial state.
    pub fn reset_state<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self.kind {
            EnvKind::PendulumSwingup => {
                let theta: f64 = rng.random_range(-PI..PI);
                let omega: f64 = rng.random_range(-1.0..1.0);
                vec![theta.cos(), theta.sin(), omega]
            }
            EnvKind::CartpoleSwingupSparse => {
                let x: f64 = rng.random_range(-0.1..0.1);
                let theta = PI + rng.random_range(-0.1..0.1);
                vec![x, theta.cos(), theta.sin(), 0.0, 0.0]
            }
            EnvKind::PointMassEasy => {
                let a = pointmass::ARENA;
                vec![rng.random_range(-a..a), rng.random_range(-a..a), 0.0, 0.0]
            }
        }
    }

    /// Deterministic dynamics: semi-implicit Euler with a fixed timestep.
    pub fn step_state(&self, state: &[f64], action: &[f64]) -> Vec<f64> {
        assert_eq!(state.len(), self.state_dim, "state width");
        assert_eq!(action.len(), self.action_dim, "action width");
        let u: Vec<f64> = action.iter().map(|a| a.clamp(-1.0, 1.0)).collect();
        match self.kind {
            EnvKind::PendulumSwingup => {
                use pendulum::*;
                let theta = state[1].atan2(state[0]);
                let omega = state[2];
                let torque = u[0] * MAX_TORQUE;
                let accel = GRAVITY / LENGTH * theta.sin() + torque / (MASS * LENGTH * LENGTH)
                    - DAMPING * omega;
                let omega = (omega + accel * DT).clamp(-MAX_SPEED, MAX_SPEED);
                let theta = wrap_angle(theta + omega * DT);
                vec![theta.cos(), theta.sin(), omega]
            }
            EnvKind::CartpoleSwingupSparse => {
                use cartpole::*;
                let (x, cos_t, sin_t, x_dot, theta_dot) =
                    (state[0], state[1], state[2], state[3], state[4]);
                let theta = sin_t.atan2(cos_t);
                let force = u[0] * MAX_FORCE;
                let total = CART_MASS + POLE_MASS;
                let (s, c) = theta.sin_cos();
                let temp = (force + POLE_MASS * HALF_LENGTH * theta_dot * theta_dot * s) / total;
                let theta_acc = (GRAVITY * s - c * temp)
                    / (HALF_LENGTH * (4.0 / 3.0 - POLE_MASS * c * c / total));
                let x_acc = temp - POLE_MASS * HALF_LENGTH * theta_acc * c / total;
                let mut x_dot = x_dot + x_acc * DT;
                let theta_dot = theta_dot + theta_acc * DT;
                let mut x = x + x_dot * DT;
                if x.abs() > RAIL_LIMIT {
                    x = x.clamp(-RAIL_LIMIT, RAIL_LIMIT);
                    x_dot = 0.0;
                }
                let theta = wrap_angle(theta + theta_dot * DT);
                vec![x, theta.cos(), theta.sin(), x_dot, theta_dot]
            }
            EnvKind::PointMassEasy => {
                use pointmass::*;
                let mut next = state.to_vec();
                for d in 0..2 {
                    let acc = u[d] * MAX_FORCE / MASS - FRICTION * state[2 + d];
                    let mut v = state[2 + d] + acc * DT;
                    let mut p = state[d] + v * DT;
                    if p.abs() > ARENA {
                        p = p.clamp(-ARENA, ARENA);
                        v = 0.0;
                    }
                    next[d] = p;
                    next[2 + d] = v;
                }
                next
            }
        }
    }

    /// Reward of arriving in `next_state`; always within `[0, 1]`.
    pub fn reward(&self, next_state: &[f64]) -> f64 {
        let r = match self.kind {
            EnvKind::PendulumSwingup => 0.5 * (1.0 + next_state[0]),
            EnvKind::CartpoleSwingupSparse => {
                if next_state[1] >= cartpole::UPRIGHT_DEGREES.to_radians().cos() {
                    1.0
                } else {
                    0.0
                }
            }
            EnvKind::PointMassEasy => {
                let dist = next_state[0].hypot(next_state[1]);
                (1.0 - dist / pointmass::TARGET_RADIUS).max(0.0)
            }
        };
        r.clamp(0.0, 1.0)
    }

    /// None of the built-in tasks terminate before the horizon.
    pub fn is_terminal(&self, _state: &[f64]) -> bool {
        false
    }
}

/// Stateful sampler that keeps an episode running across batches.
#[derive(Clone, Debug)]
pub struct Collector {
    env: ContinuousEnv,
    rng: ChaCha8Rng,
    state: Vec<f64>,
    t: usize,
    episode_return: f64,
    completed: Vec<f64>,
    total_steps: usize,
}

impl Collector {
    pub fn new(env: ContinuousEnv, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = env.reset_state(&mut rng);
        Self {
            env,
            rng,
            state,
            t: 0,
            episode_return: 0.0,
            completed: Vec::new(),
            total_steps: 0,
        }
    }

    pub fn env(&self) -> &ContinuousEnv {
        &self.env
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    /// Undiscounted returns of every finished episode, oldest first.
    pub fn completed_returns(&self) -> &[f64] {
        &self.completed
    }

    /// Mean return over the last `k` finished episodes.
    pub fn recent_mean_return(&self, k: usize) -> Option<f64> {
        if self.completed.is_empty() {
            return None;
        }
        let tail = &self.completed[self.completed.len().saturating_sub(k)..];
        Some(tail.iter().sum::<f64>() / tail.len() as f64)
    }

    /// Run `policy` for exactly `n` steps, resetting at episode boundaries.
    pub fn collect(&mut self, policy: &GaussianPolicy, n: usize) -> Result<Vec<Transition>> {
        if n == 0 {
            return Err(Error::Config("sample count must be positive".into()));
        }
        if policy.state_dim() != self.env.state_dim {
            return Err(Error::Dimension {
                what: "policy state width",
                expected: self.env.state_dim,
                got: policy.state_dim(),
            });
        }
        if policy.action_dim() != self.env.action_dim {
            return Err(Error::Dimension {
                what: "policy action width",
                expected: self.env.action_dim,
                got: policy.action_dim(),
            });
        }
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let (action, logp) = policy.sample_with_log_prob(&self.state, &mut self.rng);
            let next = self.env.step_state(&self.state, &action);
            let reward = self.env.reward(&next);
            self.t += 1;
            self.episode_return += reward;
            let end = if self.env.is_terminal(&next) {
                EpisodeEnd::Terminated
            } else if self.t >= self.env.horizon {
                EpisodeEnd::Truncated
            } else {
                EpisodeEnd::Continue
            };
            out.push(Transition {
                state: std::mem::take(&mut self.state),
                action,
                reward,
                next_state: next.clone(),
                end,
                behavior_logprob: logp,
                policy_age: 0,
            });
            if end.is_boundary() {
                self.completed.push(self.episode_return);
                self.episode_return = 0.0;
                self.t = 0;
                self.state = self.env.reset_state(&mut self.rng);
            } else {
                self.state = next;
            }
        }
        self.total_steps += n;
        Ok(out)
    }
}

/// Collect `n` transitions from a fresh episode seeded with `seed`.
pub fn collect(
    env: &ContinuousEnv,
    policy: &GaussianPolicy,
    n: usize,
    seed: u64,
) -> Result<Vec<Transition>> {
    Collector::new(env.clone(), seed).collect(policy, n)
}
