//! MDP abstraction, benchmark environments and the exact finite-MDP oracle.
//!
//! Everything is infinite-horizon and discounted. Absorption is encoded with
//! zero-reward self-loops rather than terminal flags.

mod dist;
mod finite;
pub mod oracle;
mod puddle;

pub use dist::{SamplingDistributions, StateDistribution};
pub use finite::{chain_mdp, random_finite_mdp, Embedding, FiniteMdp, FiniteMdpFile, CHAIN_LEFT, CHAIN_RIGHT};
pub use oracle::{
    apply_bellman, apply_policy_op, greedy_policy, occupancy_measure, policy_value, q_values,
    value_iteration, OracleSolution, DEFAULT_VI_TOL,
};
pub use puddle::{puddle_nav_mdp, PuddleNav};

use serde::{Deserialize, Serialize};

use crate::error::{FbtsError, Result};
use crate::rng::RngStream;

/// A point in the (possibly continuous) state space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateVec(pub Vec<f64>);

impl StateVec {
    pub fn new(coords: Vec<f64>) -> Self {
        StateVec(coords)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

/// Index of a discrete action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionId(pub usize);

impl ActionId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Generative model of a discounted MDP with a finite action set.
///
/// Implementations must be pure given the rng stream: `sample_next` may only
/// consume randomness from the stream it is handed.
pub trait Mdp: Send + Sync {
    fn dimension(&self) -> usize;
    fn action_count(&self) -> usize;
    fn gamma(&self) -> f64;
    fn r_max(&self) -> f64;

    fn v_max(&self) -> f64 {
        self.r_max() / (1.0 - self.gamma())
    }

    /// Reward in `[0, r_max]`.
    fn reward(&self, s: &StateVec, a: ActionId) -> f64;

    fn sample_next(&self, s: &StateVec, a: ActionId, rng: &mut RngStream) -> StateVec;

    /// Discrete identity of a state, if the model has one. Tree search merges
    /// successors with equal keys.
    fn state_key(&self, _s: &StateVec) -> Option<u64> {
        None
    }

    fn as_finite(&self) -> Option<&FiniteMdp> {
        None
    }

    fn describe(&self) -> String;
}

pub(crate) fn check_gamma(gamma: f64) -> Result<()> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(FbtsError::InvalidParameter(format!(
            "gamma must lie in [0, 1), got {gamma}"
        )));
    }
    Ok(())
}

pub(crate) fn check_state<M: Mdp + ?Sized>(mdp: &M, s: &StateVec) -> Result<()> {
    if s.dim() != mdp.dimension() {
        return Err(FbtsError::DimensionMismatch {
            expected: mdp.dimension(),
            got: s.dim(),
        });
    }
    if !s.is_finite() {
        return Err(FbtsError::InvalidParameter("state has non-finite coordinates".into()));
    }
    Ok(())
}

pub(crate) fn check_action<M: Mdp + ?Sized>(mdp: &M, a: ActionId) -> Result<()> {
    if a.0 >= mdp.action_count() {
        return Err(FbtsError::ActionOutOfRange {
            action: a.0,
            count: mdp.action_count(),
        });
    }
    Ok(())
}

/// Closed set of environments the harness knows how to build.
#[derive(Debug, Clone)]
pub enum Environment {
    Finite(FiniteMdp),
    Puddle(PuddleNav),
}

impl Mdp for Environment {
    fn dimension(&self) -> usize {
        match self {
            Environment::Finite(m) => m.dimension(),
            Environment::Puddle(m) => m.dimension(),
        }
    }
    fn action_count(&self) -> usize {
        match self {
            Environment::Finite(m) => m.action_count(),
            Environment::Puddle(m) => m.action_count(),
        }
    }
    fn gamma(&self) -> f64 {
        match self {
            Environment::Finite(m) => m.gamma(),
            Environment::Puddle(m) => m.gamma(),
        }
    }
    fn r_max(&self) -> f64 {
        match self {
            Environment::Finite(m) => m.r_max(),
            Environment::Puddle(m) => m.r_max(),
        }
    }
    fn reward(&self, s: &StateVec, a: ActionId) -> f64 {
        match self {
            Environment::Finite(m) => m.reward(s, a),
            Environment::Puddle(m) => m.reward(s, a),
        }
    }
    fn sample_next(&self, s: &StateVec, a: ActionId, rng: &mut RngStream) -> StateVec {
        match self {
            Environment::Finite(m) => m.sample_next(s, a, rng),
            Environment::Puddle(m) => m.sample_next(s, a, rng),
        }
    }
    fn state_key(&self, s: &StateVec) -> Option<u64> {
        match self {
            Environment::Finite(m) => m.state_key(s),
            Environment::Puddle(m) => m.state_key(s),
        }
    }
    fn as_finite(&self) -> Option<&FiniteMdp> {
        match self {
            Environment::Finite(m) => Some(m),
            Environment::Puddle(_) => None,
        }
    }
    fn describe(&self) -> String {
        match self {
            Environment::Finite(m) => m.describe(),
            Environment::Puddle(m) => m.describe(),
        }
    }
}
