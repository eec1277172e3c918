//! Monte-Carlo estimators: rollout regression targets, leaf evaluation, and
//! one-step action values.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::approx::{PolicyModel, Vfa};
use crate::error::{invalid, FbtsError, Result};
use crate::mdp::{check_action, check_state, ActionId, Mdp, StateVec};
use crate::rng::{fork, RngStream};

/// Absorbing rollouts longer than this signal a broken rng.
pub const ABSORB_STEP_LIMIT: u64 = 10_000_000;
/// Truncation error target used by [`default_t_max`].
pub const DEFAULT_TRUNCATION_EPS: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum HorizonMode {
    /// Sum the first `t_max` discounted rewards; bias at most `γ^t_max·v_max`.
    Truncate { t_max: usize },
    /// Stop after each step with probability `1 − γ` and sum undiscounted
    /// rewards; unbiased for the discounted value.
    Absorb,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RolloutConfig {
    /// Rollouts per regression state.
    pub m0: usize,
    pub horizon: HorizonMode,
    /// Leaf rollout length.
    pub h: usize,
    /// Successor samples per `(s, a)` for `Q̂`.
    pub l1: usize,
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m0 == 0 || self.l1 == 0 {
            return Err(invalid("m0 and l1 must be at least 1"));
        }
        if let HorizonMode::Truncate { t_max } = self.horizon {
            if t_max == 0 {
                return Err(invalid("t_max must be at least 1"));
            }
        }
        Ok(())
    }
}

/// `⌈log(ε(1−γ)/r_max) / log γ⌉`, the horizon after which the discounted tail
/// is below `ε`; 1 when `γ = 0`.
pub fn default_t_max(gamma: f64, r_max: f64, eps: f64) -> usize {
    if gamma <= 0.0 {
        return 1;
    }
    let t = ((eps * (1.0 - gamma) / r_max).ln() / gamma.ln()).ceil();
    t.max(1.0) as usize
}

/// Truncation bias bound `γ^t_max · v_max`.
pub fn truncation_bias_bound(gamma: f64, v_max: f64, t_max: usize) -> f64 {
    gamma.powi(t_max as i32) * v_max
}

/// Continues following `pi` from `s`, returning the discounted return.
fn rollout_from<M: Mdp + ?Sized>(
    mdp: &M,
    pi: &PolicyModel,
    first_action: Option<ActionId>,
    s: &StateVec,
    horizon: HorizonMode,
    rng: &mut RngStream,
) -> Result<f64> {
    let gamma = mdp.gamma();
    let mut state = s.clone();
    let mut total = 0.0;
    match horizon {
        HorizonMode::Truncate { t_max } => {
            let mut discount = 1.0;
            for t in 0..t_max {
                let a = match (t, first_action) {
                    (0, Some(a)) => a,
                    _ => pi.act(&state),
                };
                total += discount * mdp.reward(&state, a);
                discount *= gamma;
                if t + 1 < t_max {
                    state = mdp.sample_next(&state, a, rng);
                }
            }
        }
        HorizonMode::Absorb => {
            let mut steps = 0u64;
            loop {
                let a = match (steps, first_action) {
                    (0, Some(a)) => a,
                    _ => pi.act(&state),
                };
                total += mdp.reward(&state, a);
                steps += 1;
                if rng.random::<f64>() >= gamma {
                    break;
                }
                if steps >= ABSORB_STEP_LIMIT {
                    return Err(FbtsError::NonTermination(steps));
                }
                state = mdp.sample_next(&state, a, rng);
            }
        }
    }
    Ok(total)
}

/// Mean of `m0` independent returns of `pi` from `s`. Rollout `j` uses its own
/// stream forked from `rng`.
pub fn estimate_policy_value<M: Mdp + ?Sized>(
    mdp: &M,
    pi: &PolicyModel,
    s: &StateVec,
    cfg: &RolloutConfig,
    rng: &mut RngStream,
) -> Result<f64> {
    cfg.validate()?;
    check_state(mdp, s)?;
    mean_of_rollouts(cfg.m0, rng, |r| rollout_from(mdp, pi, None, s, cfg.horizon, r))
}

/// Mean of `m` returns that take `a` first and then follow `pi`: a rollout
/// estimate of `Q^π(s, a)`.
pub fn estimate_action_value<M: Mdp + ?Sized>(
    mdp: &M,
    pi: &PolicyModel,
    s: &StateVec,
    a: ActionId,
    m: usize,
    horizon: HorizonMode,
    rng: &mut RngStream,
) -> Result<f64> {
    check_state(mdp, s)?;
    check_action(mdp, a)?;
    if m == 0 {
        return Err(invalid("rollout count must be at least 1"));
    }
    mean_of_rollouts(m, rng, |r| rollout_from(mdp, pi, Some(a), s, horizon, r))
}

fn mean_of_rollouts(
    m: usize,
    rng: &mut RngStream,
    mut one: impl FnMut(&mut RngStream) -> Result<f64>,
) -> Result<f64> {
    let mut base = fork(rng, 0);
    let mut sum = 0.0;
    for j in 0..m {
        let mut r = fork(&mut base, j as u64);
        sum += one(&mut r)?;
    }
    Ok(sum / m as f64)
}

/// The leaf evaluator `J_k`: `h` steps of `policy`, then `γ^h·V_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafEvaluator {
    pub policy: PolicyModel,
    pub vfa: Vfa,
    pub h: usize,
}

/// One unbiased sample of `J(s) = E[Σ_{t<h} γ^t r(s_t, π(s_t)) + γ^h V(s_h)]`.
pub fn leaf_eval<M: Mdp + ?Sized>(mdp: &M, ev: &LeafEvaluator, s: &StateVec, rng: &mut RngStream) -> f64 {
    let gamma = mdp.gamma();
    let mut state = s.clone();
    let mut total = 0.0;
    let mut discount = 1.0;
    for _ in 0..ev.h {
        let a = ev.policy.act(&state);
        total += discount * mdp.reward(&state, a);
        discount *= gamma;
        state = mdp.sample_next(&state, a, rng);
    }
    total + discount * ev.vfa.predict(&state)
}

/// `Q̂(s, a) = r(s, a) + γ·mean of V at l1 sampled successors`.
pub fn estimate_q<M: Mdp + ?Sized>(
    mdp: &M,
    vfa: &Vfa,
    s: &StateVec,
    a: ActionId,
    l1: usize,
    rng: &mut RngStream,
) -> Result<f64> {
    check_state(mdp, s)?;
    check_action(mdp, a)?;
    if l1 == 0 {
        return Err(invalid("l1 must be at least 1"));
    }
    let mean: f64 = (0..l1).map(|_| vfa.predict(&mdp.sample_next(s, a, rng))).sum::<f64>() / l1 as f64;
    Ok(mdp.reward(s, a) + mdp.gamma() * mean)
}
