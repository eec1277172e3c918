//! Comparison agents sharing the approximators: direct policy iteration (rollout
//! action values, then classification) and approximate value iteration
//! (one-step Bellman targets, then regression).

use serde::{Deserialize, Serialize};

use crate::approx::{
    fit_policy_classifier, fit_vfa_lad, initial_policy, ClassificationSample, LabeledValueSample, PolicyFamily,
    PolicyModel, Vfa, VfaFamily,
};
use crate::driver::draw_states;
use crate::error::{invalid, FbtsError, Result};
use crate::mdp::{oracle, ActionId, FiniteMdp, Mdp, SamplingDistributions, StateVec};
use crate::pool::WorkerPool;
use crate::rng::{phase, stream};
use crate::rollout::{estimate_action_value, estimate_q, HorizonMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineAlgorithm {
    Dpi,
    Avi,
}

impl std::str::FromStr for BaselineAlgorithm {
    type Err = FbtsError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dpi" => Ok(BaselineAlgorithm::Dpi),
            "avi" => Ok(BaselineAlgorithm::Avi),
            other => Err(invalid(format!("unknown baseline algorithm `{other}`"))),
        }
    }
}

/// `Exact` replaces every sampled expectation with the finite-MDP oracle and
/// uses every state instead of sampled ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateMode {
    #[default]
    Sampled,
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub algorithm: BaselineAlgorithm,
    pub k: usize,
    /// AVI regression states per iteration.
    pub n0: usize,
    /// DPI classification states per iteration; AVI greedy-policy states.
    pub n1: usize,
    /// DPI rollouts per `(s, a)`.
    pub m0: usize,
    pub horizon: HorizonMode,
    /// AVI successor samples per `(s, a)`.
    pub l1: usize,
    pub distributions: SamplingDistributions,
    pub vfa_family: VfaFamily,
    pub policy_family: PolicyFamily,
    pub master_seed: u64,
    #[serde(default)]
    pub mode: EstimateMode,
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n0 == 0 || self.n1 == 0 || self.m0 == 0 || self.l1 == 0 {
            return Err(invalid("baseline budgets must be positive"));
        }
        if let HorizonMode::Truncate { t_max: 0 } = self.horizon {
            return Err(invalid("t_max must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineIteration {
    pub k: usize,
    pub regression_loss: Option<f64>,
    pub classification_loss: Option<f64>,
    /// Mean regression target (AVI) or mean `max_a Q̂` (DPI).
    pub mean_target: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineRun {
    /// DPI: `π_0..π_K`. AVI: the final greedy policy only.
    pub policies: Vec<PolicyModel>,
    /// AVI: `V_0..V_K`. DPI: empty.
    pub vfas: Vec<Vfa>,
    pub iterations: Vec<BaselineIteration>,
}

impl BaselineRun {
    pub fn final_policy(&self) -> &PolicyModel {
        self.policies.last().expect("baseline run always holds a policy")
    }
}

pub fn run_baseline<M: Mdp + ?Sized>(mdp: &M, cfg: &BaselineConfig, pool: &WorkerPool) -> Result<BaselineRun> {
    match cfg.algorithm {
        BaselineAlgorithm::Dpi => dpi_train(mdp, cfg, pool),
        BaselineAlgorithm::Avi => avi_train(mdp, cfg, pool),
    }
}

fn finite_of<M: Mdp + ?Sized>(mdp: &M) -> Result<&FiniteMdp> {
    mdp.as_finite().ok_or_else(|| FbtsError::Unsupported("exact mode needs a finite MDP".into()))
}

fn all_states(m: &FiniteMdp) -> Vec<StateVec> {
    (0..m.n_states()).map(|i| m.embed(i)).collect()
}

fn greedy_samples(states: Vec<StateVec>, q: Vec<Vec<f64>>) -> Vec<ClassificationSample> {
    states
        .into_iter()
        .zip(q)
        .map(|(state, q_hat)| {
            let u_hat = q_hat.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            ClassificationSample { state, u_hat, q_hat, preference: None }
        })
        .collect()
}

/// Direct policy iteration: no value function, no search.
pub fn dpi_train<M: Mdp + ?Sized>(mdp: &M, cfg: &BaselineConfig, pool: &WorkerPool) -> Result<BaselineRun> {
    cfg.validate()?;
    let na = mdp.action_count();
    let mut policies = vec![initial_policy(&cfg.policy_family, na, cfg.master_seed)];
    let mut iterations = Vec::new();
    for k in 0..cfg.k {
        let step = || -> Result<(PolicyModel, BaselineIteration)> {
            let pi = policies.last().unwrap();
            let (states, q) = match cfg.mode {
                EstimateMode::Exact => {
                    let m = finite_of(mdp)?;
                    let v = oracle::policy_value(m, &pi.table(m))?;
                    let q = oracle::q_values(m, &v);
                    (all_states(m), q.chunks(na).map(|c| c.to_vec()).collect())
                }
                EstimateMode::Sampled => {
                    let kk = k as u64;
                    let states = draw_states(mdp, &cfg.distributions.rho1, cfg.n1, cfg.master_seed, kk, phase::SAMPLE_RHO1)?;
                    let flat = pool.execute(states.len() * na, |j| {
                        let (i, a) = (j / na, j % na);
                        let mut rng = stream(cfg.master_seed, &[kk, phase::BASELINE, i as u64, a as u64]);
                        estimate_action_value(mdp, pi, &states[i], ActionId(a), cfg.m0, cfg.horizon, &mut rng)
                    })?;
                    (states, flat.chunks(na).map(|c| c.to_vec()).collect())
                }
            };
            let samples = greedy_samples(states, q);
            let mean_target = samples.iter().map(|s| s.u_hat).sum::<f64>() / samples.len() as f64;
            let fit = fit_policy_classifier(&samples, &cfg.policy_family, na, Some(pi))?;
            let it = BaselineIteration { k, regression_loss: None, classification_loss: Some(fit.loss), mean_target };
            Ok((fit.policy, it))
        };
        let (next, it) = step().map_err(|e| FbtsError::Iteration { k, source: Box::new(e) })?;
        policies.push(next);
        iterations.push(it);
    }
    Ok(BaselineRun { policies, vfas: Vec::new(), iterations })
}

/// Approximate value iteration from `V_0 ≡ 0`, then one greedy classification
/// step against `V_K`.
pub fn avi_train<M: Mdp + ?Sized>(mdp: &M, cfg: &BaselineConfig, pool: &WorkerPool) -> Result<BaselineRun> {
    cfg.validate()?;
    let na = mdp.action_count();
    let mut vfas = vec![Vfa::zero(cfg.vfa_family.clone(), mdp.v_max())];
    let mut iterations = Vec::new();
    for k in 0..cfg.k {
        let step = || -> Result<(Vfa, BaselineIteration)> {
            let v = vfas.last().unwrap();
            let kk = k as u64;
            let (states, q) = backup_values(mdp, cfg, v, kk, phase::SAMPLE_RHO0, cfg.n0, &cfg.distributions.rho0, pool)?;
            let samples: Vec<LabeledValueSample> = states
                .into_iter()
                .zip(q)
                .map(|(state, qs)| LabeledValueSample { state, target: qs.iter().cloned().fold(f64::NEG_INFINITY, f64::max) })
                .collect();
            let mean_target = samples.iter().map(|s| s.target).sum::<f64>() / samples.len() as f64;
            let fit = fit_vfa_lad(&samples, &cfg.vfa_family, mdp.v_max())?;
            let it = BaselineIteration { k, regression_loss: Some(fit.loss), classification_loss: None, mean_target };
            Ok((fit.vfa, it))
        };
        let (next, it) = step().map_err(|e| FbtsError::Iteration { k, source: Box::new(e) })?;
        vfas.push(next);
        iterations.push(it);
    }
    let last = vfas.last().unwrap();
    let kk = cfg.k as u64;
    let (states, q) = backup_values(mdp, cfg, last, kk, phase::GREEDY, cfg.n1, &cfg.distributions.rho1, pool)?;
    let fit = fit_policy_classifier(&greedy_samples(states, q), &cfg.policy_family, na, None)?;
    Ok(BaselineRun { policies: vec![fit.policy], vfas, iterations })
}

/// States and their one-step action values `r + γ·E V(s')` (exact or sampled).
#[allow(clippy::too_many_arguments)]
fn backup_values<M: Mdp + ?Sized>(
    mdp: &M,
    cfg: &BaselineConfig,
    v: &Vfa,
    k: u64,
    tag: u64,
    n: usize,
    dist: &crate::mdp::StateDistribution,
    pool: &WorkerPool,
) -> Result<(Vec<StateVec>, Vec<Vec<f64>>)> {
    let na = mdp.action_count();
    match cfg.mode {
        EstimateMode::Exact => {
            let m = finite_of(mdp)?;
            let q = oracle::q_values(m, &v.table(m));
            Ok((all_states(m), q.chunks(na).map(|c| c.to_vec()).collect()))
        }
        EstimateMode::Sampled => {
            let states = draw_states(mdp, dist, n, cfg.master_seed, k, tag)?;
            let flat = pool.execute(states.len() * na, |j| {
                let (i, a) = (j / na, j % na);
                let mut rng = stream(cfg.master_seed, &[k, phase::BASELINE, tag, i as u64, a as u64]);
                estimate_q(mdp, v, &states[i], ActionId(a), cfg.l1, &mut rng)
            })?;
            Ok((states, flat.chunks(na).map(|c| c.to_vec()).collect()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approx::{fit_call_counts, TabularIndex};
    use crate::mdp::{chain_mdp, random_finite_mdp};

    fn tabular_cfg(m: &FiniteMdp, algorithm: BaselineAlgorithm, k: usize, seed: u64) -> BaselineConfig {
        BaselineConfig {
            algorithm,
            k,
            n0: 2 * m.n_states(),
            n1: 2 * m.n_states(),
            m0: 32,
            horizon: HorizonMode::Truncate { t_max: 88 },
            l1: 16,
            distributions: SamplingDistributions::uniform_finite(),
            vfa_family: VfaFamily::Tabular(TabularIndex::for_mdp(m)),
            policy_family: PolicyFamily::Tabular(TabularIndex::for_mdp(m)),
            master_seed: seed,
            mode: EstimateMode::Sampled,
        }
    }

    #[test]
    fn exact_avi_is_value_iteration() {
        let mut rng = stream(4, &[]);
        let m = random_finite_mdp(5, 3, 0.9, &mut rng).unwrap();
        let cfg = BaselineConfig { mode: EstimateMode::Exact, ..tabular_cfg(&m, BaselineAlgorithm::Avi, 50, 0) };
        let run = avi_train(&m, &cfg, &WorkerPool::serial()).unwrap();
        let mut v = vec![0.0; 5];
        for k in 1..=50 {
            v = oracle::apply_bellman(&m, &v, 1).unwrap();
            assert!(oracle::sup_norm_diff(&run.vfas[k].table(&m), &v) <= 1e-9);
        }
    }

    #[test]
    fn exact_avi_contracts_to_optimum() {
        let m = chain_mdp(5, 0.9).unwrap();
        let cfg = BaselineConfig { mode: EstimateMode::Exact, ..tabular_cfg(&m, BaselineAlgorithm::Avi, 50, 0) };
        let run = avi_train(&m, &cfg, &WorkerPool::serial()).unwrap();
        let vs = oracle::value_iteration(&m, oracle::DEFAULT_VI_TOL).unwrap();
        let gap = oracle::sup_norm_diff(&run.vfas[50].table(&m), &vs.v_star);
        assert!(gap <= 0.9f64.powi(50) * m.v_max());
        assert_eq!(run.final_policy().table(&m), vs.pi_star);
    }

    #[test]
    fn avi_with_zero_discount_stops_after_one_sweep() {
        let mut rng = stream(1, &[]);
        let m = random_finite_mdp(4, 2, 0.0, &mut rng).unwrap();
        let best: Vec<f64> = (0..4).map(|s| m.r(s, 0).max(m.r(s, 1))).collect();
        for mode in [EstimateMode::Exact, EstimateMode::Sampled] {
            let cfg = BaselineConfig { mode, n0: 40, ..tabular_cfg(&m, BaselineAlgorithm::Avi, 3, 0) };
            let run = avi_train(&m, &cfg, &WorkerPool::serial()).unwrap();
            for k in 1..=3 {
                assert_eq!(run.vfas[k].table(&m), best);
            }
        }
    }

    #[test]
    fn exact_dpi_is_policy_improvement() {
        let mut rng = stream(9, &[]);
        for _ in 0..5 {
            let m = random_finite_mdp(5, 3, 0.8, &mut rng).unwrap();
            let cfg = BaselineConfig { mode: EstimateMode::Exact, ..tabular_cfg(&m, BaselineAlgorithm::Dpi, 1, 3) };
            let run = dpi_train(&m, &cfg, &WorkerPool::serial()).unwrap();
            let v0 = oracle::policy_value(&m, &run.policies[0].table(&m)).unwrap();
            assert_eq!(run.policies[1].table(&m), oracle::greedy_policy(&m, &v0));
        }
    }

    #[test]
    fn sampled_dpi_solves_short_chain() {
        let m = chain_mdp(3, 0.9).unwrap();
        let vs = oracle::value_iteration(&m, oracle::DEFAULT_VI_TOL).unwrap();
        let hits = (0..10)
            .filter(|&seed| {
                let cfg = tabular_cfg(&m, BaselineAlgorithm::Dpi, 4, seed);
                let run = dpi_train(&m, &cfg, &WorkerPool::serial()).unwrap();
                run.final_policy().table(&m) == vs.pi_star
            })
            .count();
        assert!(hits >= 8, "{hits}/10");
    }

    #[test]
    fn zero_iterations() {
        let m = chain_mdp(3, 0.9).unwrap();
        let run = dpi_train(&m, &tabular_cfg(&m, BaselineAlgorithm::Dpi, 0, 2), &WorkerPool::serial()).unwrap();
        assert_eq!(run.policies.len(), 1);
        assert_eq!(run.policies[0], initial_policy(&PolicyFamily::Tabular(TabularIndex::for_mdp(&m)), 2, 2));
    }

    #[test]
    fn baselines_use_shared_fitters() {
        let m = chain_mdp(3, 0.9).unwrap();
        let (l0, c0) = fit_call_counts();
        avi_train(&m, &tabular_cfg(&m, BaselineAlgorithm::Avi, 2, 0), &WorkerPool::serial()).unwrap();
        dpi_train(&m, &tabular_cfg(&m, BaselineAlgorithm::Dpi, 2, 0), &WorkerPool::serial()).unwrap();
        let (l1, c1) = fit_call_counts();
        assert!(l1 - l0 >= 2);
        assert!(c1 - c0 >= 3);
    }

    #[test]
    fn width_independent() {
        let m = chain_mdp(4, 0.9).unwrap();
        for alg in [BaselineAlgorithm::Dpi, BaselineAlgorithm::Avi] {
            let cfg = tabular_cfg(&m, alg, 2, 7);
            let a = run_baseline(&m, &cfg, &WorkerPool::serial()).unwrap();
            let b = run_baseline(&m, &cfg, &WorkerPool::new(8).unwrap()).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn algorithm_names() {
        assert_eq!("dpi".parse::<BaselineAlgorithm>().unwrap(), BaselineAlgorithm::Dpi);
        assert!("sl".parse::<BaselineAlgorithm>().is_err());
    }
}
