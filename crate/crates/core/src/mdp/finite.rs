use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use super::{check_gamma, ActionId, Mdp, StateVec};
use crate::error::{invalid, FbtsError, Result};
use crate::rng::RngStream;

pub const CHAIN_LEFT: ActionId = ActionId(0);
pub const CHAIN_RIGHT: ActionId = ActionId(1);

const ROW_SUM_TOL: f64 = 1e-12;

/// How tabular state indices are embedded in the vector state space.
#[derive(Debug, Clone, PartialEq)]
pub enum Embedding {
    OneHot,
    Points(Vec<Vec<f64>>),
}

/// Tabular MDP with explicit transition tensor and reward matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMdp {
    n_states: usize,
    action_count: usize,
    gamma: f64,
    r_max: f64,
    /// `P[a][s][s']`, flattened row-major.
    transition: Vec<f64>,
    /// `R[s][a]`, flattened row-major.
    reward: Vec<f64>,
    embedding: Embedding,
    label: String,
}

/// On-disk layout of a [`FiniteMdp`].
///
/// ```toml
/// n_states = 2
/// action_count = 2
/// gamma = 0.9
/// r_max = 1.0                      # optional, defaults to the largest reward (or 1)
/// reward = [[0.0, 0.0], [0.0, 1.0]]            # reward[state][action]
/// transition = [[[1.0, 0.0], [1.0, 0.0]],      # transition[action][state][next]
///               [[0.0, 1.0], [0.0, 1.0]]]
/// embedding = [[1.0, 0.0], [0.0, 1.0]]         # optional, defaults to one-hot
/// ```
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiniteMdpFile {
    pub n_states: usize,
    pub action_count: usize,
    pub gamma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_max: Option<f64>,
    pub reward: Vec<Vec<f64>>,
    pub transition: Vec<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl FiniteMdp {
    /// Builds and validates a finite MDP from nested `transition[a][s][s']` and
    /// `reward[s][a]` tables.
    pub fn new(
        transition: Vec<Vec<Vec<f64>>>,
        reward: Vec<Vec<f64>>,
        gamma: f64,
        r_max: f64,
        embedding: Embedding,
    ) -> Result<Self> {
        check_gamma(gamma)?;
        if !(r_max > 0.0 && r_max.is_finite()) {
            return Err(invalid(format!("r_max must be positive and finite, got {r_max}")));
        }
        let action_count = transition.len();
        if action_count == 0 {
            return Err(invalid("at least one action required"));
        }
        let n_states = reward.len();
        if n_states == 0 {
            return Err(invalid("at least one state required"));
        }
        let mut flat_p = Vec::with_capacity(action_count * n_states * n_states);
        for (a, rows) in transition.iter().enumerate() {
            if rows.len() != n_states {
                return Err(FbtsError::DimensionMismatch { expected: n_states, got: rows.len() });
            }
            for (s, row) in rows.iter().enumerate() {
                if row.len() != n_states {
                    return Err(FbtsError::DimensionMismatch { expected: n_states, got: row.len() });
                }
                if row.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
                    return Err(invalid(format!("P[{a}][{s}] has a negative or non-finite entry")));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > ROW_SUM_TOL {
                    return Err(invalid(format!("P[{a}][{s}] sums to {sum}, not 1")));
                }
                flat_p.extend_from_slice(row);
            }
        }
        let mut flat_r = Vec::with_capacity(n_states * action_count);
        for (s, row) in reward.iter().enumerate() {
            if row.len() != action_count {
                return Err(FbtsError::DimensionMismatch { expected: action_count, got: row.len() });
            }
            for (a, &r) in row.iter().enumerate() {
                if !(0.0..=r_max).contains(&r) {
                    return Err(invalid(format!("R[{s}][{a}] = {r} outside [0, {r_max}]")));
                }
            }
            flat_r.extend_from_slice(row);
        }
        if let Embedding::Points(points) = &embedding {
            if points.len() != n_states {
                return Err(FbtsError::DimensionMismatch { expected: n_states, got: points.len() });
            }
            let dim = points[0].len();
            if dim == 0 || points.iter().any(|p| p.len() != dim || p.iter().any(|x| !x.is_finite())) {
                return Err(invalid("embedding points must share a positive dimension and be finite"));
            }
            for i in 0..n_states {
                for j in 0..i {
                    if points[i] == points[j] {
                        return Err(invalid(format!("embedding is not injective: states {j} and {i}")));
                    }
                }
            }
        }
        Ok(FiniteMdp {
            n_states,
            action_count,
            gamma,
            r_max,
            transition: flat_p,
            reward: flat_r,
            embedding,
            label: format!("finite(n={n_states}, a={action_count}, gamma={gamma})"),
        })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn embedding(&self) -> &Embedding {
        &self.embedding
    }

    #[inline]
    pub fn p(&self, a: usize, s: usize, next: usize) -> f64 {
        self.transition[(a * self.n_states + s) * self.n_states + next]
    }

    #[inline]
    pub fn row(&self, a: usize, s: usize) -> &[f64] {
        let start = (a * self.n_states + s) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    #[inline]
    pub fn r(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.action_count + a]
    }

    pub fn embed(&self, index: usize) -> StateVec {
        match &self.embedding {
            Embedding::OneHot => {
                let mut v = vec![0.0; self.n_states];
                v[index] = 1.0;
                StateVec(v)
            }
            Embedding::Points(points) => StateVec(points[index].clone()),
        }
    }

    /// Nearest-embedding decoding; for one-hot this is the largest coordinate
    /// (lowest index on ties).
    pub fn decode(&self, s: &StateVec) -> usize {
        match &self.embedding {
            Embedding::OneHot => argmax_lowest(s.coords()),
            Embedding::Points(points) => {
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for (i, p) in points.iter().enumerate() {
                    let d: f64 = p.iter().zip(s.coords()).map(|(x, y)| (x - y) * (x - y)).sum();
                    if d < best_d {
                        best_d = d;
                        best = i;
                    }
                }
                best
            }
        }
    }

    pub fn sample_index(&self, s: usize, a: usize, rng: &mut RngStream) -> usize {
        let u: f64 = rng.random();
        let row = self.row(a, s);
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (next, &p) in row.iter().enumerate() {
            if p > 0.0 {
                acc += p;
                last_positive = next;
                if u < acc {
                    return next;
                }
            }
        }
        last_positive
    }

    /// Returns true when every transition row places all mass on one successor.
    pub fn is_deterministic(&self) -> bool {
        self.transition
            .chunks(self.n_states)
            .all(|row| row.iter().any(|&p| p == 1.0))
    }

    pub fn to_file(&self) -> FiniteMdpFile {
        let transition = (0..self.action_count)
            .map(|a| (0..self.n_states).map(|s| self.row(a, s).to_vec()).collect())
            .collect();
        let reward = (0..self.n_states)
            .map(|s| (0..self.action_count).map(|a| self.r(s, a)).collect())
            .collect();
        FiniteMdpFile {
            n_states: self.n_states,
            action_count: self.action_count,
            gamma: self.gamma,
            r_max: Some(self.r_max),
            reward,
            transition,
            embedding: match &self.embedding {
                Embedding::OneHot => None,
                Embedding::Points(p) => Some(p.clone()),
            },
            label: Some(self.label.clone()),
        }
    }

    pub fn from_file(file: FiniteMdpFile) -> Result<Self> {
        if file.reward.len() != file.n_states {
            return Err(FbtsError::DimensionMismatch { expected: file.n_states, got: file.reward.len() });
        }
        if file.transition.len() != file.action_count {
            return Err(FbtsError::DimensionMismatch {
                expected: file.action_count,
                got: file.transition.len(),
            });
        }
        let r_max = file.r_max.unwrap_or_else(|| {
            let m = file.reward.iter().flatten().cloned().fold(0.0, f64::max);
            if m > 0.0 {
                m
            } else {
                1.0
            }
        });
        let embedding = match file.embedding {
            None => Embedding::OneHot,
            Some(p) => Embedding::Points(p),
        };
        let mdp = FiniteMdp::new(file.transition, file.reward, file.gamma, r_max, embedding)?;
        Ok(match file.label {
            Some(l) => mdp.with_label(l),
            None => mdp,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(&self.to_file()).expect("finite MDP tables always serialize")
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: FiniteMdpFile = toml::from_str(text).map_err(|e| FbtsError::Parse {
            context: "finite MDP".into(),
            message: e.to_string(),
        })?;
        Self::from_file(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string())?;
        Ok(())
    }
}

pub(crate) fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

impl Mdp for FiniteMdp {
    fn dimension(&self) -> usize {
        match &self.embedding {
            Embedding::OneHot => self.n_states,
            Embedding::Points(p) => p[0].len(),
        }
    }

    fn action_count(&self) -> usize {
        self.action_count
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }

    fn r_max(&self) -> f64 {
        self.r_max
    }

    fn reward(&self, s: &StateVec, a: ActionId) -> f64 {
        self.r(self.decode(s), a.0)
    }

    fn sample_next(&self, s: &StateVec, a: ActionId, rng: &mut RngStream) -> StateVec {
        let next = self.sample_index(self.decode(s), a.0, rng);
        self.embed(next)
    }

    fn state_key(&self, s: &StateVec) -> Option<u64> {
        Some(self.decode(s) as u64)
    }

    fn as_finite(&self) -> Option<&FiniteMdp> {
        Some(self)
    }

    fn describe(&self) -> String {
        self.label.clone()
    }
}

/// Deterministic line of `n_states` cells with actions left (0) and right (1).
/// Taking right in the last cell pays 1 and stays; every other reward is 0.
pub fn chain_mdp(n_states: usize, gamma: f64) -> Result<FiniteMdp> {
    if n_states < 2 {
        return Err(invalid(format!("chain needs at least 2 states, got {n_states}")));
    }
    check_gamma(gamma)?;
    let n = n_states;
    let mut left = vec![vec![0.0; n]; n];
    let mut right = vec![vec![0.0; n]; n];
    for s in 0..n {
        left[s][s.saturating_sub(1)] = 1.0;
        right[s][(s + 1).min(n - 1)] = 1.0;
    }
    let mut reward = vec![vec![0.0; 2]; n];
    reward[n - 1][CHAIN_RIGHT.0] = 1.0;
    Ok(FiniteMdp::new(vec![left, right], reward, gamma, 1.0, Embedding::OneHot)?
        .with_label(format!("chain(n={n}, gamma={gamma})")))
}

/// Random finite MDP with rewards uniform in `[0, 1]` and transition rows drawn
/// from normalized uniform weights, a random subset of which is zeroed.
pub fn random_finite_mdp(
    n_states: usize,
    action_count: usize,
    gamma: f64,
    rng: &mut RngStream,
) -> Result<FiniteMdp> {
    if n_states == 0 || action_count == 0 {
        return Err(invalid("random MDP needs at least one state and one action"));
    }
    let transition = (0..action_count)
        .map(|_| {
            (0..n_states)
                .map(|_| {
                    let mut w: Vec<f64> = (0..n_states)
                        .map(|_| if rng.random_bool(0.6) { rng.random::<f64>() } else { 0.0 })
                        .collect();
                    let keep = rng.random_range(0..n_states);
                    w[keep] += 0.05 + rng.random::<f64>();
                    normalize(&mut w);
                    w
                })
                .collect()
        })
        .collect();
    let reward = (0..n_states)
        .map(|_| (0..action_count).map(|_| rng.random::<f64>()).collect())
        .collect();
    FiniteMdp::new(transition, reward, gamma, 1.0, Embedding::OneHot)
}

/// Normalizes in place so the entries sum to 1 to within a few ulps; the
/// residual is folded into the largest entry.
pub(crate) fn normalize(w: &mut [f64]) {
    let total: f64 = w.iter().sum();
    for x in w.iter_mut() {
        *x /= total;
    }
    let sum: f64 = w.iter().sum();
    let big = argmax_lowest(w);
    w[big] += 1.0 - sum;
}
