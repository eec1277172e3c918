use serde::{Deserialize, Serialize};

use crate::mdp::{FiniteMdp, StateVec};
use crate::mdp::Embedding;

/// Deterministic feature map from states to real vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureMap {
    /// `[1]`: the constant family.
    Constant,
    /// `x`
    Raw { dim: usize },
    /// `[1, x]`
    Affine { dim: usize },
    /// `[1, x, x_i·x_j for i ≤ j]`
    Quadratic { dim: usize },
    /// `[1, x, σ·Mx]` where `M` is a fixed `extra × dim` matrix with entries in
    /// `[-1, 1]` generated from `seed`. Over one-hot states this is a one-hot
    /// code perturbed by per-state noise columns.
    OneHotNoise { dim: usize, extra: usize, sigma: f64, seed: u64 },
}

impl FeatureMap {
    pub fn dim_in(&self) -> Option<usize> {
        match self {
            FeatureMap::Constant => None,
            FeatureMap::Raw { dim }
            | FeatureMap::Affine { dim }
            | FeatureMap::Quadratic { dim }
            | FeatureMap::OneHotNoise { dim, .. } => Some(*dim),
        }
    }

    pub fn dim_out(&self) -> usize {
        match self {
            FeatureMap::Constant => 1,
            FeatureMap::Raw { dim } => *dim,
            FeatureMap::Affine { dim } => dim + 1,
            FeatureMap::Quadratic { dim } => 1 + dim + dim * (dim + 1) / 2,
            FeatureMap::OneHotNoise { dim, extra, .. } => 1 + dim + extra,
        }
    }

    pub fn apply(&self, s: &StateVec) -> Vec<f64> {
        let x = s.coords();
        match self {
            FeatureMap::Constant => vec![1.0],
            FeatureMap::Raw { .. } => x.to_vec(),
            FeatureMap::Affine { .. } => std::iter::once(1.0).chain(x.iter().copied()).collect(),
            FeatureMap::Quadratic { .. } => {
                let mut out = Vec::with_capacity(self.dim_out());
                out.push(1.0);
                out.extend_from_slice(x);
                for i in 0..x.len() {
                    for j in i..x.len() {
                        out.push(x[i] * x[j]);
                    }
                }
                out
            }
            FeatureMap::OneHotNoise { extra, sigma, seed, .. } => {
                let mut out = Vec::with_capacity(self.dim_out());
                out.push(1.0);
                out.extend_from_slice(x);
                for row in 0..*extra {
                    let proj: f64 = x
                        .iter()
                        .enumerate()
                        .map(|(col, xi)| xi * noise_entry(*seed, row, col))
                        .sum();
                    out.push(sigma * proj);
                }
                out
            }
        }
    }
}

fn noise_entry(seed: u64, row: usize, col: usize) -> f64 {
    let bytes = crate::rng::derive_seed(seed, &[row as u64, col as u64]);
    let bits = u64::from_le_bytes(bytes[..8].try_into().unwrap());
    (bits >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

/// Maps states of a finite MDP back to table indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularIndex {
    pub n_states: usize,
    /// Embedding points; `None` means one-hot (index of the largest coordinate).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<Vec<f64>>>,
}

impl TabularIndex {
    pub fn one_hot(n_states: usize) -> Self {
        TabularIndex { n_states, points: None }
    }

    pub fn for_mdp(mdp: &FiniteMdp) -> Self {
        match mdp.embedding() {
            Embedding::OneHot => Self::one_hot(mdp.n_states()),
            Embedding::Points(p) => TabularIndex { n_states: mdp.n_states(), points: Some(p.clone()) },
        }
    }

    pub fn dim_in(&self) -> usize {
        match &self.points {
            None => self.n_states,
            Some(p) => p[0].len(),
        }
    }

    pub fn index(&self, s: &StateVec) -> usize {
        let x = s.coords();
        match &self.points {
            None => {
                let mut best = 0;
                for i in 1..x.len().min(self.n_states) {
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                best
            }
            Some(points) => {
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for (i, p) in points.iter().enumerate() {
                    let d: f64 = p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
                    if d < best_d {
                        best_d = d;
                        best = i;
                    }
                }
                best
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_lengths_are_constant() {
        let maps = [
            FeatureMap::Constant,
            FeatureMap::Raw { dim: 3 },
            FeatureMap::Affine { dim: 3 },
            FeatureMap::Quadratic { dim: 3 },
            FeatureMap::OneHotNoise { dim: 3, extra: 2, sigma: 0.1, seed: 4 },
        ];
        for m in &maps {
            for x in [vec![0.0, 0.0, 1.0], vec![0.3, -2.0, 5.0]] {
                assert_eq!(m.apply(&StateVec(x)).len(), m.dim_out());
            }
        }
    }

    #[test]
    fn noise_features_are_deterministic() {
        let m = FeatureMap::OneHotNoise { dim: 4, extra: 3, sigma: 0.5, seed: 9 };
        let s = StateVec(vec![0.0, 1.0, 0.0, 0.0]);
        assert_eq!(m.apply(&s), m.apply(&s));
        let f = m.apply(&s);
        assert_eq!(&f[..5], &[1.0, 0.0, 1.0, 0.0, 0.0]);
        assert!(f[5..].iter().all(|x| x.abs() <= 0.5));
    }

    #[test]
    fn one_hot_index() {
        let t = TabularIndex::one_hot(4);
        assert_eq!(t.index(&StateVec(vec![0.0, 0.0, 1.0, 0.0])), 2);
    }
}
