//! The iterative search-and-fit loop: sample, regress, search, estimate,
//! classify.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::approx::{
    fit_policy_classifier, fit_vfa_lad, initial_policy, ClassificationSample, LabeledValueSample, PolicyFamily,
    PolicyModel, Vfa, VfaFamily,
};
use crate::error::{invalid, FbtsError, Result};
use crate::mcts::{run_mcts, MctsConfig, RootResult};
use crate::mdp::{ActionId, Mdp, SamplingDistributions, StateVec};
use crate::pool::WorkerPool;
use crate::rng::{phase, stream};
use crate::rollout::{estimate_policy_value, estimate_q, LeafEvaluator, RolloutConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FbtsConfig {
    /// Number of iterations.
    pub k: usize,
    pub n0: usize,
    pub n1: usize,
    pub rollout: RolloutConfig,
    pub mcts: MctsConfig,
    pub distributions: SamplingDistributions,
    pub vfa_family: VfaFamily,
    pub policy_family: PolicyFamily,
    pub master_seed: u64,
}

impl FbtsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n0 == 0 || self.n1 == 0 {
            return Err(invalid("n0 and n1 must be at least 1"));
        }
        self.rollout.validate()?;
        self.mcts.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationArtifacts {
    pub k: usize,
    /// `V_k`.
    pub vfa: Vfa,
    /// `π_{k+1}`.
    pub policy: PolicyModel,
    pub regression_loss: f64,
    pub classification_loss: f64,
    pub regression_degenerate: bool,
    pub regression_set: Vec<LabeledValueSample>,
    pub classification_set: Vec<ClassificationSample>,
    pub search: Vec<RootResult>,
    pub timings: PhaseTimings,
}

/// Wall-clock seconds per phase. Timings never take part in equality, so two
/// runs compare equal whenever their numerical outputs do.
#[derive(Debug, Clone, Copy, Default)]
pub struct PhaseTimings {
    pub regression: f64,
    pub search: f64,
    pub q_estimate: f64,
    pub classification: f64,
}

impl PartialEq for PhaseTimings {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

impl PhaseTimings {
    pub const PHASES: [&'static str; 4] = ["regression", "search", "q_estimate", "classification"];

    pub fn values(&self) -> [f64; 4] {
        [self.regression, self.search, self.q_estimate, self.classification]
    }
}

impl IterationArtifacts {
    pub fn mean_u_hat(&self) -> f64 {
        self.search.iter().map(|r| r.u_hat).sum::<f64>() / self.search.len().max(1) as f64
    }
}

pub fn initial_fbts_policy<M: Mdp + ?Sized>(mdp: &M, cfg: &FbtsConfig) -> PolicyModel {
    initial_policy(&cfg.policy_family, mdp.action_count(), cfg.master_seed)
}

/// One pass of the loop from `π_k`, producing `V_k` and `π_{k+1}`.
pub fn run_iteration<M: Mdp + ?Sized>(
    mdp: &M,
    cfg: &FbtsConfig,
    pi_k: &PolicyModel,
    k: usize,
    pool: &WorkerPool,
) -> Result<IterationArtifacts> {
    iteration_inner(mdp, cfg, pi_k, k, pool).map_err(|e| FbtsError::Iteration { k, source: Box::new(e) })
}

fn iteration_inner<M: Mdp + ?Sized>(
    mdp: &M,
    cfg: &FbtsConfig,
    pi_k: &PolicyModel,
    k: usize,
    pool: &WorkerPool,
) -> Result<IterationArtifacts> {
    cfg.validate()?;
    if pi_k.action_count() != mdp.action_count() {
        return Err(FbtsError::DimensionMismatch { expected: mdp.action_count(), got: pi_k.action_count() });
    }
    let seed = cfg.master_seed;
    let kk = k as u64;
    let na = mdp.action_count();

    let mut timings = PhaseTimings::default();
    let clock = Instant::now();
    let s0 = draw_states(mdp, &cfg.distributions.rho0, cfg.n0, seed, kk, phase::SAMPLE_RHO0)?;
    let s1 = draw_states(mdp, &cfg.distributions.rho1, cfg.n1, seed, kk, phase::SAMPLE_RHO1)?;

    let y_hat = pool.execute(cfg.n0, |i| {
        let mut rng = stream(seed, &[kk, phase::ROLLOUT, i as u64]);
        estimate_policy_value(mdp, pi_k, &s0[i], &cfg.rollout, &mut rng)
    })?;
    let regression_set: Vec<LabeledValueSample> =
        s0.into_iter().zip(y_hat).map(|(state, target)| LabeledValueSample { state, target }).collect();
    let lad = fit_vfa_lad(&regression_set, &cfg.vfa_family, mdp.v_max())?;
    timings.regression = clock.elapsed().as_secs_f64();
    let clock = Instant::now();

    let ev = LeafEvaluator { policy: pi_k.clone(), vfa: lad.vfa.clone(), h: cfg.rollout.h };
    let search = pool.execute(cfg.n1, |i| {
        let mut rng = stream(seed, &[kk, phase::MCTS, i as u64]);
        run_mcts(mdp, &ev, &s1[i], &cfg.mcts, &mut rng)
    })?;
    timings.search = clock.elapsed().as_secs_f64();
    let clock = Instant::now();

    let q_flat = pool.execute(cfg.n1 * na, |j| {
        let (i, a) = (j / na, j % na);
        let mut rng = stream(seed, &[kk, phase::Q_HAT, i as u64, a as u64]);
        estimate_q(mdp, &lad.vfa, &s1[i], ActionId(a), cfg.rollout.l1, &mut rng)
    })?;
    timings.q_estimate = clock.elapsed().as_secs_f64();
    let clock = Instant::now();

    let classification_set: Vec<ClassificationSample> = s1
        .into_iter()
        .enumerate()
        .map(|(i, state)| ClassificationSample {
            state,
            u_hat: search[i].u_hat,
            q_hat: q_flat[i * na..(i + 1) * na].to_vec(),
            preference: Some(search[i].action_values.clone()),
        })
        .collect();
    let fit = fit_policy_classifier(&classification_set, &cfg.policy_family, na, Some(pi_k))?;
    timings.classification = clock.elapsed().as_secs_f64();

    Ok(IterationArtifacts {
        k,
        vfa: lad.vfa,
        policy: fit.policy,
        regression_loss: lad.loss,
        classification_loss: fit.loss,
        regression_degenerate: lad.degenerate,
        regression_set,
        classification_set,
        search,
        timings,
    })
}

pub(crate) fn draw_states<M: Mdp + ?Sized>(
    mdp: &M,
    dist: &crate::mdp::StateDistribution,
    n: usize,
    seed: u64,
    k: u64,
    tag: u64,
) -> Result<Vec<StateVec>> {
    (0..n)
        .map(|i| {
            let mut rng = stream(seed, &[k, tag, i as u64]);
            dist.sample_nth(mdp, i, &mut rng)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRun {
    /// `π_0, …, π_K` (or from the resume point).
    pub policies: Vec<PolicyModel>,
    pub iterations: Vec<IterationArtifacts>,
}

impl TrainingRun {
    pub fn final_policy(&self) -> &PolicyModel {
        self.policies.last().expect("training run always holds π_0")
    }
}

/// Runs all `K` iterations from `π_0`. `observe` sees every completed
/// iteration before the next starts, so callers can persist progress.
pub fn run_training<M: Mdp + ?Sized>(
    mdp: &M,
    cfg: &FbtsConfig,
    pool: &WorkerPool,
    observe: &mut dyn FnMut(&IterationArtifacts) -> Result<()>,
) -> Result<TrainingRun> {
    let pi0 = initial_fbts_policy(mdp, cfg);
    resume_training(mdp, cfg, pool, 0, pi0, observe)
}

/// Continues a run at iteration `start` with `π_start`.
pub fn resume_training<M: Mdp + ?Sized>(
    mdp: &M,
    cfg: &FbtsConfig,
    pool: &WorkerPool,
    start: usize,
    pi_start: PolicyModel,
    observe: &mut dyn FnMut(&IterationArtifacts) -> Result<()>,
) -> Result<TrainingRun> {
    cfg.validate()?;
    let mut policies = vec![pi_start];
    let mut iterations = Vec::new();
    for k in start..cfg.k {
        let art = run_iteration(mdp, cfg, policies.last().unwrap(), k, pool)?;
        observe(&art)?;
        policies.push(art.policy.clone());
        iterations.push(art);
    }
    Ok(TrainingRun { policies, iterations })
}
