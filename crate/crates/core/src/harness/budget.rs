//! Transition accounting for matched-budget comparisons.
//!
//! A transition is one call to `sample_next`. Counts below are exact for
//! finite environments under truncated horizons; absorbing horizons use the
//! expected rollout length.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::baselines::{BaselineAlgorithm, BaselineConfig};
use crate::driver::FbtsConfig;
use crate::error::{invalid, Result};
use crate::mdp::{ActionId, FiniteMdp, Mdp, StateVec};
use crate::rng::RngStream;
use crate::rollout::HorizonMode;

/// Wraps a model and counts `sample_next` calls across threads.
#[derive(Debug)]
pub struct CountingMdp<'a, M: Mdp + ?Sized> {
    inner: &'a M,
    count: AtomicU64,
}

impl<'a, M: Mdp + ?Sized> CountingMdp<'a, M> {
    pub fn new(inner: &'a M) -> Self {
        CountingMdp { inner, count: AtomicU64::new(0) }
    }

    pub fn transitions(&self) -> u64 {
        self.count.load(Ordering::Relaxed)
    }
}

impl<M: Mdp + ?Sized> Mdp for CountingMdp<'_, M> {
    fn dimension(&self) -> usize {
        self.inner.dimension()
    }
    fn action_count(&self) -> usize {
        self.inner.action_count()
    }
    fn gamma(&self) -> f64 {
        self.inner.gamma()
    }
    fn r_max(&self) -> f64 {
        self.inner.r_max()
    }
    fn reward(&self, s: &StateVec, a: ActionId) -> f64 {
        self.inner.reward(s, a)
    }
    fn sample_next(&self, s: &StateVec, a: ActionId, rng: &mut RngStream) -> StateVec {
        self.count.fetch_add(1, Ordering::Relaxed);
        self.inner.sample_next(s, a, rng)
    }
    fn state_key(&self, s: &StateVec) -> Option<u64> {
        self.inner.state_key(s)
    }
    fn as_finite(&self) -> Option<&FiniteMdp> {
        self.inner.as_finite()
    }
    fn describe(&self) -> String {
        self.inner.describe()
    }
}

/// Transitions per full-horizon rollout.
pub fn rollout_transitions(horizon: HorizonMode, gamma: f64) -> f64 {
    match horizon {
        HorizonMode::Truncate { t_max } => t_max.saturating_sub(1) as f64,
        HorizonMode::Absorb => gamma / (1.0 - gamma),
    }
}

/// `n0·m0·(t_max−1) + n1·m1·(d+h) + n1·|A|·l1` per iteration, times `K`.
pub fn fbts_transitions<M: Mdp + ?Sized>(cfg: &FbtsConfig, mdp: &M) -> Result<u64> {
    let na = mdp.action_count() as f64;
    let r = &cfg.rollout;
    let per = cfg.n0 as f64 * r.m0 as f64 * rollout_transitions(r.horizon, mdp.gamma())
        + cfg.n1 as f64 * cfg.mcts.m1 as f64 * (cfg.mcts.d + r.h) as f64
        + cfg.n1 as f64 * na * r.l1 as f64;
    Ok((per * cfg.k as f64).round() as u64)
}

/// DPI: `n1·|A|·m0·(t_max−1)` per iteration. AVI: `n0·|A|·l1` per iteration
/// plus `n1·|A|·l1` for the final greedy classification.
pub fn baseline_transitions<M: Mdp + ?Sized>(cfg: &BaselineConfig, mdp: &M) -> u64 {
    let na = mdp.action_count() as f64;
    let k = cfg.k as f64;
    let total = match cfg.algorithm {
        BaselineAlgorithm::Dpi => k * cfg.n1 as f64 * na * cfg.m0 as f64 * rollout_transitions(cfg.horizon, mdp.gamma()),
        BaselineAlgorithm::Avi => {
            k * cfg.n0 as f64 * na * cfg.l1 as f64 + if cfg.k > 0 { cfg.n1 as f64 * na * cfg.l1 as f64 } else { 0.0 }
        }
    };
    total.round() as u64
}

/// Resizes the free sample count of a baseline (DPI: `n1`, AVI: `n0`) so its
/// total is as close to `target` as integer sizes allow.
pub fn match_baseline<M: Mdp + ?Sized>(cfg: &mut BaselineConfig, mdp: &M, target: u64) -> Result<()> {
    if cfg.k == 0 {
        return Ok(());
    }
    let na = mdp.action_count() as f64;
    let k = cfg.k as f64;
    let target = target as f64;
    match cfg.algorithm {
        BaselineAlgorithm::Dpi => {
            let per_state = k * na * cfg.m0 as f64 * rollout_transitions(cfg.horizon, mdp.gamma());
            if per_state <= 0.0 {
                return Err(invalid("DPI rollouts make no transitions; cannot match a budget"));
            }
            cfg.n1 = ((target / per_state).round() as usize).max(1);
        }
        BaselineAlgorithm::Avi => {
            let greedy = cfg.n1 as f64 * na * cfg.l1 as f64;
            let per_state = k * na * cfg.l1 as f64;
            cfg.n0 = (((target - greedy) / per_state).round().max(1.0)) as usize;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approx::{PolicyFamily, TabularIndex, VfaFamily};
    use crate::baselines::{run_baseline, EstimateMode};
    use crate::driver::run_training;
    use crate::mcts::MctsConfig;
    use crate::mdp::{chain_mdp, SamplingDistributions};
    use crate::pool::WorkerPool;
    use crate::rollout::RolloutConfig;

    fn setup() -> (FiniteMdp, FbtsConfig, BaselineConfig) {
        let m = chain_mdp(4, 0.9).unwrap();
        let idx = TabularIndex::for_mdp(&m);
        let horizon = HorizonMode::Truncate { t_max: 20 };
        let f = FbtsConfig {
            k: 2,
            n0: 3,
            n1: 4,
            rollout: RolloutConfig { m0: 5, horizon, h: 2, l1: 6 },
            mcts: MctsConfig::new(30, 2, m.v_max()),
            distributions: SamplingDistributions::uniform_finite(),
            vfa_family: VfaFamily::Tabular(idx.clone()),
            policy_family: PolicyFamily::Tabular(idx.clone()),
            master_seed: 5,
        };
        let b = BaselineConfig {
            algorithm: BaselineAlgorithm::Dpi,
            k: 2,
            n0: 3,
            n1: 4,
            m0: 5,
            horizon,
            l1: 6,
            distributions: SamplingDistributions::uniform_finite(),
            vfa_family: VfaFamily::Tabular(idx.clone()),
            policy_family: PolicyFamily::Tabular(idx),
            master_seed: 5,
            mode: EstimateMode::Sampled,
        };
        (m, f, b)
    }

    #[test]
    fn formulas_match_counted_transitions() {
        let (m, f, mut b) = setup();
        let counted = CountingMdp::new(&m);
        run_training(&counted, &f, &WorkerPool::new(3).unwrap(), &mut |_| Ok(())).unwrap();
        assert_eq!(counted.transitions(), fbts_transitions(&f, &m).unwrap());
        for alg in [BaselineAlgorithm::Dpi, BaselineAlgorithm::Avi] {
            b.algorithm = alg;
            let counted = CountingMdp::new(&m);
            run_baseline(&counted, &b, &WorkerPool::serial()).unwrap();
            assert_eq!(counted.transitions(), baseline_transitions(&b, &m), "{alg:?}");
        }
    }

    #[test]
    fn matching_lands_near_target() {
        let (m, f, mut b) = setup();
        let target = fbts_transitions(&f, &m).unwrap();
        for alg in [BaselineAlgorithm::Dpi, BaselineAlgorithm::Avi] {
            b.algorithm = alg;
            match_baseline(&mut b, &m, target).unwrap();
            let got = baseline_transitions(&b, &m) as f64;
            let unit = match alg {
                BaselineAlgorithm::Dpi => 2.0 * 2.0 * 5.0 * 19.0,
                BaselineAlgorithm::Avi => 2.0 * 2.0 * 6.0,
            };
            assert!((got - target as f64).abs() <= unit / 2.0 + 1e-9, "{alg:?}: {got} vs {target}");
        }
    }
}
