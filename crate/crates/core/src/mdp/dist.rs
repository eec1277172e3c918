use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ActionId, Mdp, StateVec};
use crate::error::{invalid, FbtsError, Result};
use crate::rng::RngStream;

/// A sampling distribution over states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StateDistribution {
    /// Explicit probabilities over the state indices of a finite MDP.
    Categorical { probs: Vec<f64> },
    /// Uniform over the finite MDP's states.
    UniformFinite,
    /// Independent uniform coordinates in `[lo, hi]`.
    UniformBox { lo: f64, hi: f64 },
    Point { coords: Vec<f64> },
    /// Start from `start`, then take uniformly random actions for a uniformly
    /// random number of steps in `0..=max_steps`.
    Trajectory { start: Box<StateDistribution>, max_steps: usize },
    /// The `i`-th draw of a batch is finite state `i mod n`: exhaustive
    /// coverage instead of i.i.d. draws.
    Sweep,
}

impl StateDistribution {
    /// Draw number `i` of a batch. Only [`StateDistribution::Sweep`] depends on `i`.
    pub fn sample_nth<M: Mdp + ?Sized>(&self, mdp: &M, i: usize, rng: &mut RngStream) -> Result<StateVec> {
        match self {
            StateDistribution::Sweep => {
                let finite =
                    mdp.as_finite().ok_or_else(|| FbtsError::Unsupported("sweep needs a finite MDP".into()))?;
                Ok(finite.embed(i % finite.n_states()))
            }
            _ => self.sample(mdp, rng),
        }
    }

    pub fn sample<M: Mdp + ?Sized>(&self, mdp: &M, rng: &mut RngStream) -> Result<StateVec> {
        match self {
            StateDistribution::Sweep => self.sample_nth(mdp, 0, rng),
            StateDistribution::Categorical { probs } => {
                let finite = mdp
                    .as_finite()
                    .ok_or_else(|| FbtsError::Unsupported("categorical distribution needs a finite MDP".into()))?;
                super::oracle::check_distribution(probs, finite.n_states())?;
                Ok(finite.embed(sample_categorical(probs, rng)))
            }
            StateDistribution::UniformFinite => {
                let finite = mdp
                    .as_finite()
                    .ok_or_else(|| FbtsError::Unsupported("uniform_finite needs a finite MDP".into()))?;
                Ok(finite.embed(rng.random_range(0..finite.n_states())))
            }
            StateDistribution::UniformBox { lo, hi } => {
                if !(lo < hi) {
                    return Err(invalid(format!("empty box [{lo}, {hi}]")));
                }
                Ok(StateVec((0..mdp.dimension()).map(|_| rng.random_range(*lo..*hi)).collect()))
            }
            StateDistribution::Point { coords } => {
                if coords.len() != mdp.dimension() {
                    return Err(FbtsError::DimensionMismatch { expected: mdp.dimension(), got: coords.len() });
                }
                Ok(StateVec(coords.clone()))
            }
            StateDistribution::Trajectory { start, max_steps } => {
                let mut s = start.sample(mdp, rng)?;
                let steps = rng.random_range(0..=*max_steps);
                for _ in 0..steps {
                    let a = ActionId(rng.random_range(0..mdp.action_count()));
                    s = mdp.sample_next(&s, a, rng);
                }
                Ok(s)
            }
        }
    }

    /// Probability vector over finite states, when the distribution has one.
    pub fn probabilities(&self, n_states: usize) -> Option<Vec<f64>> {
        match self {
            StateDistribution::Categorical { probs } if probs.len() == n_states => Some(probs.clone()),
            StateDistribution::UniformFinite | StateDistribution::Sweep => {
                Some(vec![1.0 / n_states as f64; n_states])
            }
            _ => None,
        }
    }
}

pub(crate) fn sample_categorical(probs: &[f64], rng: &mut RngStream) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// The three state distributions of the algorithm: ρ0 for regression states,
/// ρ1 for tree-search states, ν for evaluating suboptimality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingDistributions {
    pub rho0: StateDistribution,
    pub rho1: StateDistribution,
    pub nu: StateDistribution,
}

impl SamplingDistributions {
    pub fn uniform_finite() -> Self {
        SamplingDistributions {
            rho0: StateDistribution::UniformFinite,
            rho1: StateDistribution::UniformFinite,
            nu: StateDistribution::UniformFinite,
        }
    }
}
