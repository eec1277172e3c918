pub mod approx;
pub mod error;
pub mod mdp;
pub mod rng;
pub mod rollout;
pub mod mcts;
pub mod pool;
pub mod driver;
pub mod baselines;
pub mod diagnostics;
pub mod harness;
