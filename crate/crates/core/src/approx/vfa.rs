//! Value-function approximation and least-absolute-deviation fitting.

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::sync::atomic::Ordering;

use super::{FeatureMap, TabularIndex, LAD_CALLS};
use crate::error::{invalid, FbtsError, Result};
use crate::mdp::{FiniteMdp, StateVec};

/// Largest linear feature dimension solved exactly as a linear program.
pub const LP_MAX_DIM: usize = 64;
/// Iterations of the subgradient fallback above [`LP_MAX_DIM`].
pub const SUBGRADIENT_ITERS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum VfaFamily {
    Tabular(TabularIndex),
    Linear { features: FeatureMap },
}

impl VfaFamily {
    pub fn param_len(&self) -> usize {
        match self {
            VfaFamily::Tabular(t) => t.n_states,
            VfaFamily::Linear { features } => features.dim_out(),
        }
    }

    fn dim_in(&self) -> Option<usize> {
        match self {
            VfaFamily::Tabular(t) => Some(t.dim_in()),
            VfaFamily::Linear { features } => features.dim_in(),
        }
    }
}

/// A member of the value family; predictions are clipped to `[0, v_max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vfa {
    pub family: VfaFamily,
    pub params: Vec<f64>,
    pub v_max: f64,
}

impl Vfa {
    pub fn zero(family: VfaFamily, v_max: f64) -> Self {
        let params = vec![0.0; family.param_len()];
        Vfa { family, params, v_max }
    }

    /// Unclipped family output.
    pub fn raw(&self, s: &StateVec) -> f64 {
        match &self.family {
            VfaFamily::Tabular(t) => self.params[t.index(s)],
            VfaFamily::Linear { features } => {
                features.apply(s).iter().zip(&self.params).map(|(f, w)| f * w).sum()
            }
        }
    }

    pub fn predict(&self, s: &StateVec) -> f64 {
        let v = self.raw(s);
        if v.is_nan() {
            return 0.0;
        }
        v.clamp(0.0, self.v_max)
    }

    /// Predictions at every embedded state of a finite MDP.
    pub fn table(&self, mdp: &FiniteMdp) -> Vec<f64> {
        (0..mdp.n_states()).map(|i| self.predict(&mdp.embed(i))).collect()
    }
}

pub fn predict_value(vfa: &Vfa, s: &StateVec) -> f64 {
    vfa.predict(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledValueSample {
    pub state: StateVec,
    pub target: f64,
}

#[derive(Debug, Clone)]
pub struct LadFit {
    pub vfa: Vfa,
    /// Weighted mean absolute deviation of the unclipped fit.
    pub loss: f64,
    /// Linear design matrix was rank-deficient; the minimizer is not unique.
    pub degenerate: bool,
}

/// Least-absolute-deviation regression with equal sample weights.
pub fn fit_vfa_lad(samples: &[LabeledValueSample], family: &VfaFamily, v_max: f64) -> Result<LadFit> {
    let states: Vec<&StateVec> = samples.iter().map(|s| &s.state).collect();
    let targets: Vec<f64> = samples.iter().map(|s| s.target).collect();
    let n = samples.len().max(1) as f64;
    let weights = vec![1.0 / n; samples.len()];
    fit_lad_weighted(&states, &targets, &weights, family, v_max)
}

/// Minimizes `Σ w_i·|f(s_i) − y_i|` over the family.
pub fn fit_lad_weighted(
    states: &[&StateVec],
    targets: &[f64],
    weights: &[f64],
    family: &VfaFamily,
    v_max: f64,
) -> Result<LadFit> {
    LAD_CALLS.fetch_add(1, Ordering::Relaxed);
    if states.is_empty() {
        return Err(FbtsError::EmptySamples("value regression"));
    }
    if targets.len() != states.len() || weights.len() != states.len() {
        return Err(invalid("states, targets and weights must have equal length"));
    }
    if targets.iter().chain(weights).any(|x| !x.is_finite()) || weights.iter().any(|&w| w < 0.0) {
        return Err(invalid("targets and weights must be finite; weights non-negative"));
    }
    if let Some(dim) = family.dim_in() {
        if let Some(bad) = states.iter().find(|s| s.dim() != dim) {
            return Err(FbtsError::DimensionMismatch { expected: dim, got: bad.dim() });
        }
    }
    let (params, degenerate) = match family {
        VfaFamily::Tabular(index) => (fit_tabular(states, targets, weights, index), false),
        VfaFamily::Linear { features } => {
            let rows: Vec<Vec<f64>> = states.iter().map(|s| features.apply(s)).collect();
            let p = features.dim_out();
            let design = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
            let degenerate = design.rank(1e-10) < p;
            let params = if p <= LP_MAX_DIM {
                lad_linear_program(&rows, targets, weights)?
            } else {
                lad_subgradient(&rows, targets, weights)
            };
            (params, degenerate)
        }
    };
    let vfa = Vfa { family: family.clone(), params, v_max };
    let loss = states
        .iter()
        .zip(targets)
        .zip(weights)
        .map(|((s, y), w)| w * (vfa.raw(s) - y).abs())
        .sum();
    Ok(LadFit { vfa, loss, degenerate })
}

/// Per-state weighted median. States without samples do not affect the loss;
/// they get the pooled weighted median of all targets (the best constant fit).
fn fit_tabular(states: &[&StateVec], targets: &[f64], weights: &[f64], index: &TabularIndex) -> Vec<f64> {
    let mut groups: Vec<Vec<(f64, f64)>> = vec![Vec::new(); index.n_states];
    let mut pooled = Vec::with_capacity(targets.len());
    for ((s, &y), &w) in states.iter().zip(targets).zip(weights) {
        groups[index.index(s)].push((y, w));
        pooled.push((y, w));
    }
    let fallback = weighted_median(pooled).unwrap_or(0.0);
    groups.into_iter().map(|g| weighted_median(g).unwrap_or(fallback)).collect()
}

/// Midpoint of the median interval, so even-sized equal-weight sets give the
/// average of the two central values.
pub(crate) fn weighted_median(mut pts: Vec<(f64, f64)>) -> Option<f64> {
    pts.retain(|p| p.1 > 0.0);
    if pts.is_empty() {
        return None;
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pts.iter().map(|p| p.1).sum();
    let half = total / 2.0;
    let eps = 1e-12 * total;
    let mut acc = 0.0;
    for i in 0..pts.len() {
        acc += pts[i].1;
        if (acc - half).abs() <= eps && i + 1 < pts.len() {
            return Some(0.5 * (pts[i].0 + pts[i + 1].0));
        }
        if acc > half {
            return Some(pts[i].0);
        }
    }
    pts.last().map(|p| p.0)
}

/// `min Σ w_i e_i` s.t. `e_i ≥ ±(φ_i·θ − y_i)` with free `θ`.
fn lad_linear_program(rows: &[Vec<f64>], targets: &[f64], weights: &[f64]) -> Result<Vec<f64>> {
    let p = rows[0].len();
    let mut problem = Problem::new(OptimizationDirection::Minimize);
    let theta: Vec<_> = (0..p).map(|_| problem.add_var(0.0, (f64::NEG_INFINITY, f64::INFINITY))).collect();
    for ((row, &y), &w) in rows.iter().zip(targets).zip(weights) {
        let e = problem.add_var(w, (0.0, f64::INFINITY));
        let mut upper: Vec<_> = theta.iter().zip(row).map(|(&v, &c)| (v, -c)).collect();
        upper.push((e, 1.0));
        problem.add_constraint(upper.as_slice(), ComparisonOp::Ge, -y);
        let mut lower: Vec<_> = theta.iter().zip(row).map(|(&v, &c)| (v, c)).collect();
        lower.push((e, 1.0));
        problem.add_constraint(lower.as_slice(), ComparisonOp::Ge, y);
    }
    let solution = problem.solve().map_err(|e| FbtsError::Solver(e.to_string()))?;
    Ok(theta.iter().map(|&v| solution[v]).collect())
}

/// Subgradient descent with step `η_t = η₀/√(t+1)`, `η₀ = (1 + max|y|)/max‖φ‖²`,
/// returning the best iterate seen.
fn lad_subgradient(rows: &[Vec<f64>], targets: &[f64], weights: &[f64]) -> Vec<f64> {
    let p = rows[0].len();
    let max_norm2 = rows
        .iter()
        .map(|r| r.iter().map(|x| x * x).sum::<f64>())
        .fold(1e-12, f64::max);
    let y_scale = 1.0 + targets.iter().fold(0.0f64, |m, y| m.max(y.abs()));
    let eta0 = y_scale / max_norm2;
    let objective = |theta: &[f64]| -> f64 {
        rows.iter()
            .zip(targets)
            .zip(weights)
            .map(|((r, y), w)| w * (dot(r, theta) - y).abs())
            .sum()
    };
    let mut theta = vec![0.0; p];
    let mut best = theta.clone();
    let mut best_obj = objective(&theta);
    let mut grad = vec![0.0; p];
    for t in 0..SUBGRADIENT_ITERS {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for ((r, y), w) in rows.iter().zip(targets).zip(weights) {
            let sign = (dot(r, &theta) - y).signum();
            for (g, x) in grad.iter_mut().zip(r) {
                *g += w * sign * x;
            }
        }
        let eta = eta0 / ((t + 1) as f64).sqrt();
        for (th, g) in theta.iter_mut().zip(&grad) {
            *th -= eta * g;
        }
        let obj = objective(&theta);
        if obj < best_obj {
            best_obj = obj;
            best.copy_from_slice(&theta);
        }
    }
    best
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::chain_mdp;
    use proptest::prelude::*;

    fn constant_samples(targets: &[f64]) -> Vec<LabeledValueSample> {
        targets
            .iter()
            .map(|&t| LabeledValueSample { state: StateVec(vec![0.0]), target: t })
            .collect()
    }

    fn constant_family() -> VfaFamily {
        VfaFamily::Linear { features: FeatureMap::Constant }
    }

    /// Brute-force L1 minimum of a constant over a fine grid.
    fn grid_min(targets: &[f64]) -> (f64, f64) {
        let lo = targets.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = targets.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut best = (lo, f64::INFINITY);
        for k in 0..=100_000 {
            let c = lo + (hi - lo) * k as f64 / 100_000.0;
            let loss = targets.iter().map(|t| (t - c).abs()).sum::<f64>() / targets.len() as f64;
            if loss < best.1 {
                best = (c, loss);
            }
        }
        best
    }

    #[test]
    fn constant_family_picks_median() {
        let (grid_c, grid_loss) = grid_min(&[1.0, 2.0, 9.0]);
        assert!((grid_c - 2.0).abs() < 1e-3);
        assert!((grid_loss - 8.0 / 3.0).abs() < 1e-9);
        let fit = fit_vfa_lad(&constant_samples(&[1.0, 2.0, 9.0]), &constant_family(), 100.0).unwrap();
        assert!((fit.vfa.params[0] - 2.0).abs() < 1e-9);
        assert!((fit.loss - 8.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn single_sample_has_zero_loss() {
        let fit = fit_vfa_lad(&constant_samples(&[4.5]), &constant_family(), 10.0).unwrap();
        assert!(fit.loss.abs() < 1e-12);
        let m = chain_mdp(4, 0.9).unwrap();
        let fam = VfaFamily::Linear { features: FeatureMap::Affine { dim: 4 } };
        let samples = vec![LabeledValueSample { state: m.embed(2), target: 3.0 }];
        let fit = fit_vfa_lad(&samples, &fam, 10.0).unwrap();
        assert!(fit.loss.abs() < 1e-9);
        assert!(fit.degenerate);
    }

    #[test]
    fn tabular_interpolates() {
        let m = chain_mdp(4, 0.9).unwrap();
        let fam = VfaFamily::Tabular(TabularIndex::for_mdp(&m));
        let samples: Vec<_> = (0..4)
            .map(|i| LabeledValueSample { state: m.embed(i), target: i as f64 * 1.5 })
            .collect();
        let fit = fit_vfa_lad(&samples, &fam, 10.0).unwrap();
        assert_eq!(fit.loss, 0.0);
        assert_eq!(fit.vfa.table(&m), vec![0.0, 1.5, 3.0, 4.5]);
    }

    #[test]
    fn empty_and_mismatched_inputs_error() {
        assert!(fit_vfa_lad(&[], &constant_family(), 1.0).is_err());
        let fam = VfaFamily::Linear { features: FeatureMap::Affine { dim: 3 } };
        let bad = vec![LabeledValueSample { state: StateVec(vec![1.0]), target: 1.0 }];
        assert!(matches!(
            fit_vfa_lad(&bad, &fam, 1.0),
            Err(FbtsError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn predictions_are_clipped() {
        let fam = VfaFamily::Linear { features: FeatureMap::Affine { dim: 1 } };
        let vfa = Vfa { family: fam.clone(), params: vec![0.0, 50.0], v_max: 10.0 };
        assert_eq!(vfa.predict(&StateVec(vec![1.0])), 10.0);
        assert_eq!(vfa.predict(&StateVec(vec![-1.0])), 0.0);
        assert_eq!(Vfa::zero(fam, 10.0).predict(&StateVec(vec![3.0])), 0.0);
    }

    #[test]
    fn linear_lp_matches_brute_force_line() {
        // y = 2x + 1 with one outlier: LAD ignores it.
        let fam = VfaFamily::Linear { features: FeatureMap::Affine { dim: 1 } };
        let xs = [0.0, 1.0, 2.0, 3.0, 4.0];
        let mut samples: Vec<_> = xs
            .iter()
            .map(|&x| LabeledValueSample { state: StateVec(vec![x]), target: 2.0 * x + 1.0 })
            .collect();
        samples[2].target = 40.0;
        let fit = fit_vfa_lad(&samples, &fam, 100.0).unwrap();
        assert!((fit.vfa.params[0] - 1.0).abs() < 1e-6 && (fit.vfa.params[1] - 2.0).abs() < 1e-6);
        assert!((fit.loss - 35.0 / 5.0).abs() < 1e-6);
        assert!(!fit.degenerate);
    }

    #[test]
    fn subgradient_fallback_approaches_lp() {
        let rows: Vec<Vec<f64>> = (0..30).map(|i| vec![1.0, i as f64 / 30.0]).collect();
        let targets: Vec<f64> = rows.iter().map(|r| 0.5 + 3.0 * r[1] + if r[1] > 0.8 { 2.0 } else { 0.0 }).collect();
        let w = vec![1.0 / 30.0; 30];
        let lp = lad_linear_program(&rows, &targets, &w).unwrap();
        let sg = lad_subgradient(&rows, &targets, &w);
        let obj = |t: &[f64]| -> f64 { rows.iter().zip(&targets).map(|(r, y)| (dot(r, t) - y).abs() / 30.0).sum() };
        assert!(obj(&sg) - obj(&lp) < 1e-2, "{} vs {}", obj(&sg), obj(&lp));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn constant_fit_shifts_with_targets(ts in prop::collection::vec(0.0f64..10.0, 1..9), c in -5.0f64..5.0) {
            let base = fit_vfa_lad(&constant_samples(&ts), &constant_family(), 100.0).unwrap();
            let shifted: Vec<f64> = ts.iter().map(|t| t + c).collect();
            let moved = fit_vfa_lad(&constant_samples(&shifted), &constant_family(), 100.0).unwrap();
            prop_assert!((moved.loss - base.loss).abs() < 1e-9);
            // With an even count any point of the median interval is optimal;
            // the loss identity above is the invariant, and the tabular
            // median rule shifts exactly.
            let tab = VfaFamily::Tabular(TabularIndex::one_hot(1));
            let st = |v: &[f64]| v.iter().map(|&t| LabeledValueSample { state: StateVec(vec![1.0]), target: t }).collect::<Vec<_>>();
            let a = fit_vfa_lad(&st(&ts), &tab, 100.0).unwrap();
            let b = fit_vfa_lad(&st(&shifted), &tab, 100.0).unwrap();
            prop_assert!((b.vfa.params[0] - a.vfa.params[0] - c).abs() < 1e-9);
        }

        #[test]
        fn tabular_fit_is_coordinatewise_optimal(
            idx in prop::collection::vec(0usize..4, 1..20),
            ys in prop::collection::vec(0.0f64..5.0, 20),
            delta in prop::sample::select(vec![-0.1, -0.01, 0.01, 0.1]),
        ) {
            let index = TabularIndex::one_hot(4);
            let fam = VfaFamily::Tabular(index);
            let samples: Vec<_> = idx.iter().zip(&ys).map(|(&i, &y)| {
                let mut x = vec![0.0; 4];
                x[i] = 1.0;
                LabeledValueSample { state: StateVec(x), target: y }
            }).collect();
            let fit = fit_vfa_lad(&samples, &fam, 100.0).unwrap();
            for k in 0..4 {
                let mut perturbed = fit.vfa.clone();
                perturbed.params[k] += delta;
                let loss: f64 = samples.iter().map(|s| (perturbed.raw(&s.state) - s.target).abs()).sum::<f64>() / samples.len() as f64;
                prop_assert!(loss >= fit.loss - 1e-12);
            }
        }

        #[test]
        fn predictions_stay_in_codomain(w in prop::collection::vec(-100.0f64..100.0, 3), x in prop::collection::vec(-10.0f64..10.0, 2)) {
            let vfa = Vfa { family: VfaFamily::Linear { features: FeatureMap::Affine { dim: 2 } }, params: w, v_max: 7.5 };
            let v = vfa.predict(&StateVec(x));
            prop_assert!((0.0..=7.5).contains(&v));
        }
    }
}
