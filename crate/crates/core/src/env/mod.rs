//! Environments: finite MDPs for exact checks and small continuous-control tasks.

mod continuous;
mod tabular;

pub use continuous::{
    builtin_env, cartpole, collect, pendulum, pointmass, Collector, ContinuousEnv, EnvKind,
    EpisodeEnd, Transition, BUILTIN_ENVS, DEFAULT_HORIZON,
};
pub use tabular::{make_random_tabular, make_random_tabular_with_discount, TabularMdp};
