//! Deterministic policy families and cost-sensitive classification.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::sync::atomic::Ordering;

use super::vfa::dot;
use super::{FeatureMap, TabularIndex, CLASSIFY_CALLS};
use crate::error::{invalid, FbtsError, Result};
use crate::mdp::{ActionId, FiniteMdp, StateVec};
use crate::rng::{phase, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum PolicyFamily {
    Tabular(TabularIndex),
    LinearScores { features: FeatureMap },
}

/// A deterministic policy. Linear scores pick the highest-scoring action with
/// ties to the lowest index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum PolicyModel {
    Tabular { index: TabularIndex, actions: Vec<ActionId>, action_count: usize },
    LinearScores { features: FeatureMap, weights: Vec<Vec<f64>> },
}

impl PolicyModel {
    pub fn act(&self, s: &StateVec) -> ActionId {
        match self {
            PolicyModel::Tabular { index, actions, .. } => actions[index.index(s)],
            PolicyModel::LinearScores { features, weights } => {
                let phi = features.apply(s);
                ActionId(argmax_scores(weights, &phi))
            }
        }
    }

    pub fn action_count(&self) -> usize {
        match self {
            PolicyModel::Tabular { action_count, .. } => *action_count,
            PolicyModel::LinearScores { weights, .. } => weights.len(),
        }
    }

    pub fn family(&self) -> PolicyFamily {
        match self {
            PolicyModel::Tabular { index, .. } => PolicyFamily::Tabular(index.clone()),
            PolicyModel::LinearScores { features, .. } => PolicyFamily::LinearScores { features: features.clone() },
        }
    }

    /// The action taken at each embedded state of a finite MDP.
    pub fn table(&self, mdp: &FiniteMdp) -> Vec<ActionId> {
        (0..mdp.n_states()).map(|i| self.act(&mdp.embed(i))).collect()
    }

    pub fn tabular(index: TabularIndex, actions: Vec<ActionId>, action_count: usize) -> Result<Self> {
        if actions.len() != index.n_states {
            return Err(FbtsError::DimensionMismatch { expected: index.n_states, got: actions.len() });
        }
        if let Some(a) = actions.iter().find(|a| a.0 >= action_count) {
            return Err(FbtsError::ActionOutOfRange { action: a.0, count: action_count });
        }
        Ok(PolicyModel::Tabular { index, actions, action_count })
    }
}

fn argmax_scores(weights: &[Vec<f64>], phi: &[f64]) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (a, w) in weights.iter().enumerate() {
        let score = dot(w, phi);
        if score > best_score {
            best_score = score;
            best = a;
        }
    }
    best
}

/// π₀: a uniformly random table for tabular families (seeded), zero scores
/// (action 0 everywhere) for linear ones.
pub fn initial_policy(family: &PolicyFamily, action_count: usize, seed: u64) -> PolicyModel {
    match family {
        PolicyFamily::Tabular(index) => {
            let mut rng = stream(seed, &[phase::INIT_POLICY]);
            let actions = (0..index.n_states).map(|_| ActionId(rng.random_range(0..action_count))).collect();
            PolicyModel::Tabular { index: index.clone(), actions, action_count }
        }
        PolicyFamily::LinearScores { features } => PolicyModel::LinearScores {
            features: features.clone(),
            weights: vec![vec![0.0; features.dim_out()]; action_count],
        },
    }
}

/// One classification example: the tree-search value `Û(s)`, the one-step
/// estimates `Q̂(s, ·)`, and optionally the search's per-action root values
/// used only to order actions whose costs tie.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationSample {
    pub state: StateVec,
    pub u_hat: f64,
    pub q_hat: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preference: Option<Vec<f64>>,
}

impl ClassificationSample {
    pub fn cost(&self, a: usize) -> f64 {
        (self.u_hat - self.q_hat[a]).abs()
    }
}

#[derive(Debug, Clone)]
pub struct ClassifierFit {
    pub policy: PolicyModel,
    /// Mean cost `(1/N) Σ |Û(s) − Q̂(s, π(s))|`.
    pub loss: f64,
}

/// Minimizes the empirical cost over the family.
///
/// Costs equal up to a relative `1e-9` count as ties; tied actions are ordered
/// by the sample preference (higher first), then by lowest index. For tabular
/// families, states with no samples keep the incumbent's action when one is
/// given, else action 0.
pub fn fit_policy_classifier(
    samples: &[ClassificationSample],
    family: &PolicyFamily,
    action_count: usize,
    incumbent: Option<&PolicyModel>,
) -> Result<ClassifierFit> {
    CLASSIFY_CALLS.fetch_add(1, Ordering::Relaxed);
    if samples.is_empty() {
        return Err(FbtsError::EmptySamples("policy classification"));
    }
    if action_count == 0 {
        return Err(invalid("action_count must be positive"));
    }
    for s in samples {
        if s.q_hat.len() != action_count {
            return Err(FbtsError::DimensionMismatch { expected: action_count, got: s.q_hat.len() });
        }
        if let Some(p) = &s.preference {
            if p.len() != action_count {
                return Err(FbtsError::DimensionMismatch { expected: action_count, got: p.len() });
            }
        }
        if !s.u_hat.is_finite() || s.q_hat.iter().any(|q| !q.is_finite()) {
            return Err(invalid("classification sample has non-finite values"));
        }
    }
    let policy = match family {
        PolicyFamily::Tabular(index) => fit_tabular(samples, index, action_count, incumbent),
        PolicyFamily::LinearScores { features } => fit_linear(samples, features, action_count)?,
    };
    let loss = empirical_loss(samples, &policy);
    Ok(ClassifierFit { policy, loss })
}

pub fn empirical_loss(samples: &[ClassificationSample], policy: &PolicyModel) -> f64 {
    samples.iter().map(|s| s.cost(policy.act(&s.state).0)).sum::<f64>() / samples.len() as f64
}

fn tie_tol(scale: f64) -> f64 {
    1e-9 * (1.0 + scale.abs())
}

/// Lexicographic choice: lowest cost, then highest preference, then lowest index.
fn choose(costs: &[f64], prefs: Option<&[f64]>) -> usize {
    let min = costs.iter().cloned().fold(f64::INFINITY, f64::min);
    let tol = tie_tol(min);
    let mut best: Option<usize> = None;
    for a in 0..costs.len() {
        if costs[a] > min + tol {
            continue;
        }
        best = match (best, prefs) {
            (None, _) => Some(a),
            (Some(b), Some(p)) if p[a] > p[b] + tie_tol(p[b]) => Some(a),
            (b, _) => b,
        };
    }
    best.unwrap_or(0)
}

fn fit_tabular(
    samples: &[ClassificationSample],
    index: &TabularIndex,
    action_count: usize,
    incumbent: Option<&PolicyModel>,
) -> PolicyModel {
    let n = index.n_states;
    let mut costs = vec![vec![0.0; action_count]; n];
    let mut prefs = vec![vec![0.0; action_count]; n];
    let mut has_pref = vec![false; n];
    let mut seen = vec![false; n];
    for s in samples {
        let i = index.index(&s.state);
        seen[i] = true;
        for a in 0..action_count {
            costs[i][a] += s.cost(a);
        }
        if let Some(p) = &s.preference {
            has_pref[i] = true;
            for a in 0..action_count {
                prefs[i][a] += p[a];
            }
        }
    }
    let actions = (0..n)
        .map(|i| {
            if seen[i] {
                ActionId(choose(&costs[i], has_pref[i].then_some(prefs[i].as_slice())))
            } else {
                match incumbent {
                    Some(pi) if pi.action_count() == action_count => {
                        let x = match &index.points {
                            None => {
                                let mut v = vec![0.0; n];
                                v[i] = 1.0;
                                StateVec(v)
                            }
                            Some(p) => StateVec(p[i].clone()),
                        };
                        pi.act(&x)
                    }
                    _ => ActionId(0),
                }
            }
        })
        .collect();
    PolicyModel::Tabular { index: index.clone(), actions, action_count }
}

/// Total cost and total preference of the actions a weight matrix selects.
fn evaluate(weights: &[Vec<f64>], phis: &[Vec<f64>], samples: &[ClassificationSample]) -> (f64, f64) {
    let mut cost = 0.0;
    let mut pref = 0.0;
    for (phi, s) in phis.iter().zip(samples) {
        let a = argmax_scores(weights, phi);
        cost += s.cost(a);
        if let Some(p) = &s.preference {
            pref += p[a];
        }
    }
    (cost, pref)
}

fn better(a: (f64, f64), b: (f64, f64)) -> bool {
    let tol = tie_tol(b.0);
    a.0 < b.0 - tol || (a.0 <= b.0 + tol && a.1 > b.1 + tie_tol(b.1))
}

/// Least-squares per-action score regression onto negative costs (plus a
/// small preference term), refined by coordinate search on the exact
/// empirical cost with a halving step grid.
fn fit_linear(
    samples: &[ClassificationSample],
    features: &FeatureMap,
    action_count: usize,
) -> Result<PolicyModel> {
    let phis: Vec<Vec<f64>> = samples.iter().map(|s| features.apply(&s.state)).collect();
    let p = features.dim_out();
    if let Some(dim) = features.dim_in() {
        if let Some(bad) = samples.iter().find(|s| s.state.dim() != dim) {
            return Err(FbtsError::DimensionMismatch { expected: dim, got: bad.state.dim() });
        }
    }
    let design = DMatrix::from_fn(phis.len(), p, |i, j| phis[i][j]);
    let svd = design.svd(true, true);
    let cost_scale = samples
        .iter()
        .flat_map(|s| (0..action_count).map(move |a| s.cost(a)))
        .fold(0.0f64, f64::max)
        .max(1e-12);
    let regress = |with_pref: bool| -> Result<Vec<Vec<f64>>> {
        (0..action_count)
            .map(|a| {
                let targets = DVector::from_iterator(
                    samples.len(),
                    samples.iter().map(|s| {
                        let mut t = -s.cost(a);
                        if with_pref {
                            if let Some(pr) = &s.preference {
                                let span = pr.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-12);
                                t += 1e-3 * cost_scale * pr[a] / span;
                            }
                        }
                        t
                    }),
                );
                svd.solve(&targets, 1e-10)
                    .map(|w| w.iter().copied().collect())
                    .map_err(|e| FbtsError::Solver(e.to_string()))
            })
            .collect()
    };
    let mut weights = regress(false)?;
    let mut best = evaluate(&weights, &phis, samples);
    let alt = regress(true)?;
    let alt_score = evaluate(&alt, &phis, samples);
    if better(alt_score, best) {
        weights = alt;
        best = alt_score;
    }
    let magnitude = weights.iter().flatten().fold(0.0f64, |m, w| m.max(w.abs()));
    let mut step = if magnitude > 0.0 { magnitude } else { 1.0 };
    let min_step = step * 1e-6;
    const MULTIPLIERS: [f64; 8] = [-2.0, -1.0, -0.5, -0.25, 0.25, 0.5, 1.0, 2.0];
    let mut passes = 0;
    while step >= min_step && passes < 400 && best.0 > 0.0 {
        passes += 1;
        let mut improved = false;
        for a in 0..action_count {
            for j in 0..p {
                let original = weights[a][j];
                let mut local_best: Option<(f64, (f64, f64))> = None;
                for m in MULTIPLIERS {
                    weights[a][j] = original + m * step;
                    let score = evaluate(&weights, &phis, samples);
                    let reference = local_best.map(|l| l.1).unwrap_or(best);
                    if better(score, reference) {
                        local_best = Some((weights[a][j], score));
                    }
                }
                match local_best {
                    Some((w, score)) => {
                        weights[a][j] = w;
                        best = score;
                        improved = true;
                    }
                    None => weights[a][j] = original,
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    Ok(PolicyModel::LinearScores { features: features.clone(), weights })
}
