//! Exact, oracle-backed quantities of the performance analysis on finite MDPs:
//! true loss, suboptimality, the loss-to-performance bound, concentrability
//! coefficients, inherent-error terms and the assembled final bound.

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::approx::{fit_lad_weighted, FeatureMap, PolicyFamily, VfaFamily};
use crate::error::{invalid, FbtsError, Result};
use crate::mdp::oracle::{
    self, apply_bellman, apply_policy_op, check_distribution, check_policy, enumerate_policies, greedy_policy,
    occupancy_measure, policy_value, value_iteration, weighted_l1,
};
use crate::mdp::{ActionId, FiniteMdp, Mdp, StateVec};
use crate::rng::stream;

/// Bound slack used when comparing both sides.
pub const BOUND_TOL: f64 = 1e-9;
/// Largest policy count enumerated for inherent-error terms.
pub const POLICY_ENUMERATION_LIMIT: u64 = 4096;
/// Default truncation of `Σ_m (m+1)γ^m A_m`.
pub const DEFAULT_TAIL_N: usize = 50;

/// `Σ_s ρ1(s)·|(T^d V^{π_k})(s) − (T_{π_next} V^{π_k})(s)|`.
pub fn true_loss(mdp: &FiniteMdp, pi_k: &[ActionId], pi_next: &[ActionId], d: usize, rho1: &[f64]) -> Result<f64> {
    check_policy(mdp, pi_next)?;
    check_distribution(rho1, mdp.n_states())?;
    let v = policy_value(mdp, pi_k)?;
    let td = apply_bellman(mdp, &v, d)?;
    let tp = apply_policy_op(mdp, pi_next, &v, 1)?;
    Ok(weighted_l1(&td, &tp, rho1))
}

/// `Σ_s ν(s)·(V*(s) − V^π(s))`.
pub fn suboptimality(mdp: &FiniteMdp, pi: &[ActionId], nu: &[f64]) -> Result<f64> {
    check_distribution(nu, mdp.n_states())?;
    let vs = value_iteration(mdp, oracle::DEFAULT_VI_TOL)?.v_star;
    let v = policy_value(mdp, pi)?;
    Ok(vs.iter().zip(&v).zip(nu).map(|((a, b), w)| w * (a - b).max(0.0)).sum())
}

/// The idealized update: greedy with respect to `T^{d−1} V^{π_k}`, ties to the
/// lowest index.
pub fn exact_iteration(mdp: &FiniteMdp, pi_k: &[ActionId], d: usize) -> Result<Vec<ActionId>> {
    if d == 0 {
        return Err(invalid("search depth d must be at least 1"));
    }
    let v = policy_value(mdp, pi_k)?;
    let w = if d == 1 { v } else { apply_bellman(mdp, &v, d - 1)? };
    Ok(greedy_policy(mdp, &w))
}

/// `π_0, …, π_K` under [`exact_iteration`].
pub fn exact_iteration_sequence(mdp: &FiniteMdp, pi0: &[ActionId], d: usize, k: usize) -> Result<Vec<Vec<ActionId>>> {
    let mut seq = vec![pi0.to_vec()];
    for _ in 0..k {
        let next = exact_iteration(mdp, seq.last().unwrap(), d)?;
        seq.push(next);
    }
    Ok(seq)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundTerm {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub lhs: f64,
    pub terms: Vec<BoundTerm>,
    pub rhs: f64,
    pub satisfied: bool,
    /// False when any right-hand-side component is an estimate; the verdict is
    /// then only "consistent" or "inconsistent".
    pub exact: bool,
}

impl BoundReport {
    fn new(lhs: f64, terms: Vec<BoundTerm>, rhs: f64, exact: bool) -> Self {
        BoundReport { lhs, terms, rhs, satisfied: lhs <= rhs + BOUND_TOL, exact }
    }

    pub fn slack(&self) -> f64 {
        self.rhs - self.lhs
    }

    pub fn term(&self, name: &str) -> Option<f64> {
        self.terms.iter().find(|t| t.name == name).map(|t| t.value)
    }

    pub fn verdict(&self) -> &'static str {
        match (self.exact, self.satisfied) {
            (true, true) => "satisfied",
            (true, false) => "violated",
            (false, true) => "consistent",
            (false, false) => "inconsistent",
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("verdict = \"{}\"\n", self.verdict()));
        out.push_str(&toml::to_string(self).expect("bound report serializes"));
        out
    }
}

fn term(name: impl Into<String>, value: f64) -> BoundTerm {
    BoundTerm { name: name.into(), value }
}

/// Loss-to-performance bound for a policy sequence `π_0..π_K`:
/// `‖V* − V^{π_K}‖_{1,ν} ≤ γ^{Kd}‖V* − V^{π_0}‖_∞ + Σ_k γ^{(K−k)d}‖T^dV^{π_{k−1}} − T_{π_k}V^{π_{k−1}}‖_{1,Λ_{ν,k}}`
/// with `Λ_{ν,k} = ν P_{π*}^{(K−k)d} (I − γP_{π_k})^{-1}`.
pub fn performance_bound_check(mdp: &FiniteMdp, policies: &[Vec<ActionId>], nu: &[f64], d: usize) -> Result<BoundReport> {
    if policies.is_empty() {
        return Err(invalid("need at least π_0"));
    }
    if d == 0 {
        return Err(invalid("search depth d must be at least 1"));
    }
    check_distribution(nu, mdp.n_states())?;
    let gamma = mdp.gamma();
    let k_total = policies.len() - 1;
    let opt = value_iteration(mdp, oracle::DEFAULT_VI_TOL)?;
    let v_last = policy_value(mdp, &policies[k_total])?;
    let lhs: f64 = opt.v_star.iter().zip(&v_last).zip(nu).map(|((a, b), w)| w * (a - b).max(0.0)).sum();
    let v0 = policy_value(mdp, &policies[0])?;
    let initial = gamma.powi((k_total * d) as i32) * oracle::sup_norm_diff(&opt.v_star, &v0);
    let mut terms = vec![term("initial_term", initial)];
    let mut rhs = initial;
    for k in 1..=k_total {
        let v_prev = policy_value(mdp, &policies[k - 1])?;
        let td = apply_bellman(mdp, &v_prev, d)?;
        let tp = apply_policy_op(mdp, &policies[k], &v_prev, 1)?;
        let lambda = occupancy_measure(mdp, nu, &opt.pi_star, &policies[k], (k_total - k) * d)?;
        let loss = weighted_l1(&td, &tp, &lambda);
        let weighted = gamma.powi(((k_total - k) * d) as i32) * loss;
        terms.push(term(format!("loss_{k}"), weighted));
        rhs += weighted;
    }
    terms.push(term("total", rhs));
    Ok(BoundReport::new(lhs, terms, rhs, true))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ConcentrabilityMode {
    /// Brute force over all deterministic policy sequences (small instances).
    ExactEnumeration,
    /// Backward dynamic program over the horizon; exact for any size.
    ExactDynamicProgram,
    /// Maximum over random policy sequences: a lower bound.
    Sampled { sequences: usize, seed: u64 },
}

impl ConcentrabilityMode {
    pub fn is_exact(&self) -> bool {
        !matches!(self, ConcentrabilityMode::Sampled { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrabilityReport {
    pub m: usize,
    /// `A_m` (start `ν`, reference `ρ1`).
    pub a_m: f64,
    /// `A′_m` (start `ρ1`, reference `ρ0`).
    pub a_prime_m: f64,
    pub mode: ConcentrabilityMode,
    pub lower_bound: bool,
}

pub const ENUMERATION_MAX_STATES: usize = 6;
pub const ENUMERATION_MAX_ACTIONS: usize = 3;
pub const ENUMERATION_MAX_STEPS: usize = 2;

pub fn concentrability(
    mdp: &FiniteMdp,
    nu: &[f64],
    rho0: &[f64],
    rho1: &[f64],
    m: usize,
    mode: ConcentrabilityMode,
) -> Result<ConcentrabilityReport> {
    Ok(ConcentrabilityReport {
        m,
        a_m: coefficient(mdp, nu, rho1, m, mode)?,
        a_prime_m: coefficient(mdp, rho1, rho0, m, mode)?,
        mode,
        lower_bound: !mode.is_exact(),
    })
}

/// `sup_{μ_1..μ_m} max_s (start P_{μ_1}⋯P_{μ_m})(s) / reference(s)`.
pub fn coefficient(
    mdp: &FiniteMdp,
    start: &[f64],
    reference: &[f64],
    m: usize,
    mode: ConcentrabilityMode,
) -> Result<f64> {
    let n = mdp.n_states();
    check_distribution(start, n)?;
    check_distribution(reference, n)?;
    if reference.iter().any(|&r| r <= 0.0) {
        return Err(invalid("reference distribution must be strictly positive"));
    }
    let ratio = |row: &[f64]| row.iter().zip(reference).map(|(p, r)| p / r).fold(0.0, f64::max);
    match mode {
        ConcentrabilityMode::ExactEnumeration => {
            if n > ENUMERATION_MAX_STATES || mdp.action_count() > ENUMERATION_MAX_ACTIONS || m > ENUMERATION_MAX_STEPS {
                return Err(FbtsError::Unsupported(format!(
                    "enumeration limited to {ENUMERATION_MAX_STATES} states, {ENUMERATION_MAX_ACTIONS} actions, \
                     {ENUMERATION_MAX_STEPS} steps"
                )));
            }
            let policies: Vec<Vec<ActionId>> = enumerate_policies(n, mdp.action_count()).collect();
            let mut best = 0.0f64;
            enumerate_rows(mdp, &policies, start.to_vec(), m, &mut |row| best = best.max(ratio(row)));
            Ok(best)
        }
        ConcentrabilityMode::ExactDynamicProgram => {
            let mut best = 0.0f64;
            for target in 0..n {
                let mut w: Vec<f64> = (0..n).map(|s| if s == target { 1.0 } else { 0.0 }).collect();
                for _ in 0..m {
                    w = (0..n)
                        .map(|s| {
                            (0..mdp.action_count())
                                .map(|a| mdp.row(a, s).iter().zip(&w).map(|(p, x)| p * x).sum::<f64>())
                                .fold(0.0, f64::max)
                        })
                        .collect();
                }
                let mass: f64 = start.iter().zip(&w).map(|(a, b)| a * b).sum();
                best = best.max(mass / reference[target]);
            }
            Ok(best)
        }
        ConcentrabilityMode::Sampled { sequences, seed } => {
            if sequences == 0 {
                return Err(invalid("need at least one sampled sequence"));
            }
            let mut rng = stream(seed, &[m as u64]);
            let mut best = 0.0f64;
            for _ in 0..sequences {
                let mut row = start.to_vec();
                for _ in 0..m {
                    let pi: Vec<ActionId> = (0..n).map(|_| ActionId(rng.random_range(0..mdp.action_count()))).collect();
                    row = push_forward(mdp, &row, &pi);
                }
                best = best.max(ratio(&row));
            }
            Ok(best)
        }
    }
}

fn push_forward(mdp: &FiniteMdp, row: &[f64], pi: &[ActionId]) -> Vec<f64> {
    let n = mdp.n_states();
    let mut out = vec![0.0; n];
    for (s, &mass) in row.iter().enumerate() {
        if mass == 0.0 {
            continue;
        }
        for (t, p) in mdp.row(pi[s].0, s).iter().enumerate() {
            out[t] += mass * p;
        }
    }
    out
}

fn enumerate_rows(mdp: &FiniteMdp, policies: &[Vec<ActionId>], row: Vec<f64>, left: usize, visit: &mut dyn FnMut(&[f64])) {
    if left == 0 {
        visit(&row);
        return;
    }
    for pi in policies {
        enumerate_rows(mdp, policies, push_forward(mdp, &row, pi), left - 1, visit);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BCoefficients {
    /// `A_0..A_N`.
    pub a: Vec<f64>,
    pub a_prime_1: f64,
    pub a_prime_dh: f64,
    /// `Σ_{m ≤ N} (m+1) γ^m A_m`.
    pub b_gamma_truncated: f64,
    /// Upper bound on the remainder `Σ_{m > N} (m+1) γ^m A_m`.
    pub b_gamma_tail: f64,
    pub n_tail: usize,
    /// `γ A′_1 + γ^{d+h} A′_{d+h}`.
    pub b_gamma_prime: f64,
}

impl BCoefficients {
    /// Truncated sum plus tail bound: an upper bound on `B_γ`.
    pub fn b_gamma_upper(&self) -> f64 {
        self.b_gamma_truncated + self.b_gamma_tail
    }
}

/// `Σ_{m > n}(m+1)γ^m = γ^{n+1}[(n+2) − (n+1)γ] / (1−γ)²`.
pub fn weighted_geometric_tail(gamma: f64, n: usize) -> f64 {
    let nf = n as f64;
    gamma.powi(n as i32 + 1) * ((nf + 2.0) - (nf + 1.0) * gamma) / (1.0 - gamma).powi(2)
}

#[allow(clippy::too_many_arguments)]
pub fn b_coefficients(
    mdp: &FiniteMdp,
    nu: &[f64],
    rho0: &[f64],
    rho1: &[f64],
    d: usize,
    h: usize,
    n_tail: usize,
) -> Result<BCoefficients> {
    let mode = ConcentrabilityMode::ExactDynamicProgram;
    let gamma = mdp.gamma();
    let a: Vec<f64> = (0..=n_tail).map(|m| coefficient(mdp, nu, rho1, m, mode)).collect::<Result<_>>()?;
    let b_gamma_truncated = a.iter().enumerate().map(|(m, am)| (m as f64 + 1.0) * gamma.powi(m as i32) * am).sum();
    let sup_a = 1.0 / rho1.iter().cloned().fold(f64::INFINITY, f64::min);
    let b_gamma_tail = weighted_geometric_tail(gamma, n_tail) * sup_a;
    let a_prime_1 = coefficient(mdp, rho1, rho0, 1, mode)?;
    let a_prime_dh = coefficient(mdp, rho1, rho0, d + h, mode)?;
    let b_gamma_prime = gamma * a_prime_1 + gamma.powi((d + h) as i32) * a_prime_dh;
    Ok(BCoefficients { a, a_prime_1, a_prime_dh, b_gamma_truncated, b_gamma_tail, n_tail, b_gamma_prime })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationReport {
    pub part_a_lhs: f64,
    pub part_a_rhs: f64,
    pub part_b_lhs: f64,
    pub part_b_rhs: f64,
    pub a_prime_1: f64,
    pub a_prime_dh: f64,
}

impl PropagationReport {
    pub fn holds(&self) -> bool {
        self.part_a_lhs <= self.part_a_rhs + BOUND_TOL && self.part_b_lhs <= self.part_b_rhs + BOUND_TOL
    }
}

/// VFA-error propagation for a fixed `μ` and `V`, with the supremum over
/// all deterministic policies in part (a):
/// (a) `sup_π ‖T_πV − T_πV^μ‖_{1,ρ1} ≤ γA′_1‖V − V^μ‖_{1,ρ0}`;
/// (b) `‖T^d(T_μ^h V) − T^dV^μ‖_{1,ρ1} ≤ γ^{d+h}A′_{d+h}‖V − V^μ‖_{1,ρ0}`.
#[allow(clippy::too_many_arguments)]
pub fn propagation_check(
    mdp: &FiniteMdp,
    mu: &[ActionId],
    v: &[f64],
    d: usize,
    h: usize,
    rho0: &[f64],
    rho1: &[f64],
    mode: ConcentrabilityMode,
) -> Result<PropagationReport> {
    if d == 0 {
        return Err(invalid("search depth d must be at least 1"));
    }
    let gamma = mdp.gamma();
    let n = mdp.n_states();
    let v_mu = policy_value(mdp, mu)?;
    let err: Vec<f64> = v.iter().zip(&v_mu).map(|(a, b)| a - b).collect();
    let base = weighted_l1(v, &v_mu, rho0);
    let part_a_lhs: f64 = (0..n)
        .map(|s| {
            let worst = (0..mdp.action_count())
                .map(|a| (gamma * mdp.row(a, s).iter().zip(&err).map(|(p, e)| p * e).sum::<f64>()).abs())
                .fold(0.0, f64::max);
            rho1[s] * worst
        })
        .sum();
    let j = apply_policy_op(mdp, mu, v, h)?;
    let part_b_lhs = weighted_l1(&apply_bellman(mdp, &j, d)?, &apply_bellman(mdp, &v_mu, d)?, rho1);
    let a_prime_1 = coefficient(mdp, rho1, rho0, 1, mode)?;
    let a_prime_dh = coefficient(mdp, rho1, rho0, d + h, mode)?;
    Ok(PropagationReport {
        part_a_lhs,
        part_a_rhs: gamma * a_prime_1 * base,
        part_b_lhs,
        part_b_rhs: gamma.powi((d + h) as i32) * a_prime_dh * base,
        a_prime_1,
        a_prime_dh,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InherentErrors {
    pub d0: f64,
    pub d1: f64,
    /// True when computed over the full policy class; false when the class was
    /// too large and a random subset was used (a lower estimate of the max).
    pub exact: bool,
    pub policies_considered: usize,
}

/// Deterministic tabular policies realizable by the family, or `None` when
/// there are more than [`POLICY_ENUMERATION_LIMIT`] candidates.
pub fn realizable_policies(mdp: &FiniteMdp, family: &PolicyFamily) -> Result<Option<Vec<Vec<ActionId>>>> {
    let n = mdp.n_states();
    let na = mdp.action_count();
    let total = (na as u64).checked_pow(n as u32).unwrap_or(u64::MAX);
    if total > POLICY_ENUMERATION_LIMIT {
        return Ok(None);
    }
    let all = enumerate_policies(n, na);
    Ok(Some(match family {
        PolicyFamily::Tabular(_) => all.collect(),
        PolicyFamily::LinearScores { features } => {
            let feats: Vec<Vec<f64>> = (0..n).map(|s| features.apply(&mdp.embed(s))).collect();
            let mut out = Vec::new();
            for pi in all {
                if linear_realizable(&feats, &pi, na)? {
                    out.push(pi);
                }
            }
            out
        }
    }))
}

/// Feasibility of `w_{π(s)}·φ(s) ≥ w_a·φ(s) + [a < π(s)]` for all `s, a ≠ π(s)`;
/// by scaling, this is exactly "argmax with lowest-index ties equals π".
fn linear_realizable(feats: &[Vec<f64>], pi: &[ActionId], na: usize) -> Result<bool> {
    let p = feats[0].len();
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let vars: Vec<Vec<minilp::Variable>> =
        (0..na).map(|_| (0..p).map(|_| lp.add_var(0.0, (f64::NEG_INFINITY, f64::INFINITY))).collect()).collect();
    for (s, phi) in feats.iter().enumerate() {
        let b = pi[s].0;
        for a in 0..na {
            if a == b {
                continue;
            }
            let mut expr = Vec::with_capacity(2 * p);
            for j in 0..p {
                if phi[j] != 0.0 {
                    expr.push((vars[b][j], phi[j]));
                    expr.push((vars[a][j], -phi[j]));
                }
            }
            let rhs = if a < b { 1.0 } else { 0.0 };
            if expr.is_empty() {
                if rhs > 0.0 {
                    return Ok(false);
                }
                continue;
            }
            lp.add_constraint(&expr[..], ComparisonOp::Ge, rhs);
        }
    }
    match lp.solve() {
        Ok(_) => Ok(true),
        Err(minilp::Error::Infeasible) => Ok(false),
        Err(e) => Err(FbtsError::Solver(e.to_string())),
    }
}

/// `𝔻₀ = max_π min_f ‖f − V^π‖_{1,ρ0}` and
/// `𝔻₁^d = max_π min_{π'} ‖T^dV^π − T_{π'}V^π‖_{1,ρ1}` over the families.
pub fn inherent_errors(
    mdp: &FiniteMdp,
    vfa_family: &VfaFamily,
    policy_family: &PolicyFamily,
    d: usize,
    rho0: &[f64],
    rho1: &[f64],
    seed: u64,
) -> Result<InherentErrors> {
    let n = mdp.n_states();
    let na = mdp.action_count();
    let (candidates, exact) = match realizable_policies(mdp, policy_family)? {
        Some(p) => (p, true),
        None => {
            let mut rng = stream(seed, &[crate::rng::phase::INIT_POLICY, 0xD1]);
            let mut sample: Vec<Vec<ActionId>> = (0..POLICY_ENUMERATION_LIMIT)
                .map(|_| (0..n).map(|_| ActionId(rng.random_range(0..na))).collect())
                .collect();
            if let PolicyFamily::LinearScores { features } = policy_family {
                let feats: Vec<Vec<f64>> = (0..n).map(|s| features.apply(&mdp.embed(s))).collect();
                let mut kept = Vec::new();
                for pi in sample {
                    if linear_realizable(&feats, &pi, na)? {
                        kept.push(pi);
                    }
                }
                sample = kept;
            }
            (sample, false)
        }
    };
    let states: Vec<StateVec> = (0..n).map(|s| mdp.embed(s)).collect();
    let refs: Vec<&StateVec> = states.iter().collect();
    let tabular_pi = matches!(policy_family, PolicyFamily::Tabular(_));
    let mut d0 = 0.0f64;
    let mut d1 = 0.0f64;
    for pi in &candidates {
        let v = policy_value(mdp, pi)?;
        if !matches!(vfa_family, VfaFamily::Tabular(_)) {
            let fit = fit_lad_weighted(&refs, &v, rho0, vfa_family, mdp.v_max())?;
            let pred = fit.vfa.table(mdp);
            d0 = d0.max(weighted_l1(&pred, &v, rho0));
        }
        let td = apply_bellman(mdp, &v, d)?;
        let q = oracle::q_values(mdp, &v);
        let inner = if tabular_pi {
            (0..n)
                .map(|s| rho1[s] * (0..na).map(|a| (td[s] - q[s * na + a]).abs()).fold(f64::INFINITY, f64::min))
                .sum()
        } else {
            candidates
                .iter()
                .map(|alt| (0..n).map(|s| rho1[s] * (td[s] - q[s * na + alt[s].0]).abs()).sum::<f64>())
                .fold(f64::INFINITY, f64::min)
        };
        d1 = d1.max(inner);
    }
    let exact = exact && matches!(vfa_family, VfaFamily::Tabular(_));
    Ok(InherentErrors { d0, d1, exact, policies_considered: candidates.len() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub nu: Vec<f64>,
    pub rho0: Vec<f64>,
    pub rho1: Vec<f64>,
    pub d: usize,
    pub h: usize,
    /// Estimation slack `ε` added to the bound.
    pub eps: f64,
    pub n_tail: usize,
}

/// Assembles `B_γ[B′_γ 𝔻₀ + 𝔻₁^d] + γ^{Kd}‖V* − V^{π_0}‖_∞ + ε` and compares it
/// with the measured suboptimality of `π_K`.
pub fn final_bound_report(
    mdp: &FiniteMdp,
    policies: &[Vec<ActionId>],
    vfa_family: &VfaFamily,
    policy_family: &PolicyFamily,
    inputs: &BoundInputs,
    seed: u64,
) -> Result<BoundReport> {
    if policies.is_empty() {
        return Err(invalid("need at least π_0"));
    }
    let k = policies.len() - 1;
    let gamma = mdp.gamma();
    let opt = value_iteration(mdp, oracle::DEFAULT_VI_TOL)?;
    let lhs = suboptimality(mdp, &policies[k], &inputs.nu)?;
    let v0 = policy_value(mdp, &policies[0])?;
    let initial = gamma.powi((k * inputs.d) as i32) * oracle::sup_norm_diff(&opt.v_star, &v0);
    let b = b_coefficients(mdp, &inputs.nu, &inputs.rho0, &inputs.rho1, inputs.d, inputs.h, inputs.n_tail)?;
    let inherent = inherent_errors(mdp, vfa_family, policy_family, inputs.d, &inputs.rho0, &inputs.rho1, seed)?;
    let b_gamma = b.b_gamma_upper();
    let approx = b_gamma * (b.b_gamma_prime * inherent.d0 + inherent.d1);
    let rhs = approx + initial + inputs.eps;
    let terms = vec![
        term("initial_term", initial),
        term("b_gamma_truncated", b.b_gamma_truncated),
        term("b_gamma_tail", b.b_gamma_tail),
        term("b_gamma_prime", b.b_gamma_prime),
        term("d0", inherent.d0),
        term("d1", inherent.d1),
        term("approximation_term", approx),
        term("eps", inputs.eps),
        term("total", rhs),
    ];
    Ok(BoundReport::new(lhs, terms, rhs, inherent.exact))
}

/// Lowest-index tie-breaking feature check used by diagnostics on linear
/// families: true when the map separates every pair of states.
pub fn features_distinguish_states(mdp: &FiniteMdp, features: &FeatureMap) -> bool {
    let rows: Vec<Vec<f64>> = (0..mdp.n_states()).map(|s| features.apply(&mdp.embed(s))).collect();
    rows.iter().enumerate().all(|(i, a)| rows[i + 1..].iter().all(|b| a != b))
}
