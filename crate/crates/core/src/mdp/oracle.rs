//! Exact dynamic-programming operators on a [`FiniteMdp`].
//!
//! Value vectors are indexed by state; policies are one [`ActionId`] per state.

use nalgebra::{DMatrix, DVector};

use super::finite::argmax_lowest;
use super::{ActionId, FiniteMdp, Mdp};
use crate::error::{invalid, FbtsError, Result};

pub const DEFAULT_VI_TOL: f64 = 1e-10;

/// Optimal value function, a greedy optimal policy and the Bellman residual of
/// the returned values.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub v_star: Vec<f64>,
    pub pi_star: Vec<ActionId>,
    pub residual: f64,
}

pub fn check_policy(mdp: &FiniteMdp, pi: &[ActionId]) -> Result<()> {
    if pi.len() != mdp.n_states() {
        return Err(FbtsError::DimensionMismatch { expected: mdp.n_states(), got: pi.len() });
    }
    if let Some(a) = pi.iter().find(|a| a.0 >= mdp.action_count()) {
        return Err(FbtsError::ActionOutOfRange { action: a.0, count: mdp.action_count() });
    }
    Ok(())
}

fn check_values(mdp: &FiniteMdp, v: &[f64]) -> Result<()> {
    if v.len() != mdp.n_states() {
        return Err(FbtsError::DimensionMismatch { expected: mdp.n_states(), got: v.len() });
    }
    Ok(())
}

/// `(T_a v)(s)` for one action.
pub fn action_value(mdp: &FiniteMdp, v: &[f64], s: usize, a: usize) -> f64 {
    let ev: f64 = mdp.row(a, s).iter().zip(v).map(|(p, x)| p * x).sum();
    mdp.r(s, a) + mdp.gamma() * ev
}

/// `Q[s][a] = (T_a v)(s)`, flattened as `s * |A| + a`.
pub fn q_values(mdp: &FiniteMdp, v: &[f64]) -> Vec<f64> {
    let na = mdp.action_count();
    let mut q = vec![0.0; mdp.n_states() * na];
    for s in 0..mdp.n_states() {
        for a in 0..na {
            q[s * na + a] = action_value(mdp, v, s, a);
        }
    }
    q
}

/// `T_a v` as a vector over states.
pub fn apply_action_op(mdp: &FiniteMdp, a: ActionId, v: &[f64]) -> Vec<f64> {
    (0..mdp.n_states()).map(|s| action_value(mdp, v, s, a.0)).collect()
}

fn bellman(mdp: &FiniteMdp, v: &[f64]) -> Vec<f64> {
    let na = mdp.action_count();
    (0..mdp.n_states())
        .map(|s| (0..na).map(|a| action_value(mdp, v, s, a)).fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

/// Greedy policy with respect to `v`, ties to the lowest action index.
pub fn greedy_policy(mdp: &FiniteMdp, v: &[f64]) -> Vec<ActionId> {
    let na = mdp.action_count();
    let q = q_values(mdp, v);
    q.chunks(na).map(|row| ActionId(argmax_lowest(row))).collect()
}

pub fn sup_norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// `Σ_s w(s)·|a(s) − b(s)|`.
pub fn weighted_l1(a: &[f64], b: &[f64], w: &[f64]) -> f64 {
    a.iter().zip(b).zip(w).map(|((x, y), p)| p * (x - y).abs()).sum()
}

pub fn value_iteration(mdp: &FiniteMdp, tol: f64) -> Result<OracleSolution> {
    if !(tol > 0.0) {
        return Err(invalid(format!("tolerance must be positive, got {tol}")));
    }
    let mut v = vec![0.0; mdp.n_states()];
    loop {
        let next = bellman(mdp, &v);
        let residual = sup_norm_diff(&next, &v);
        v = next;
        if residual <= tol {
            break;
        }
    }
    let residual = sup_norm_diff(&bellman(mdp, &v), &v);
    let pi_star = greedy_policy(mdp, &v);
    Ok(OracleSolution { v_star: v, pi_star, residual })
}

/// Dense `P_π` with rows indexed by state.
pub fn policy_matrix(mdp: &FiniteMdp, pi: &[ActionId]) -> DMatrix<f64> {
    let n = mdp.n_states();
    DMatrix::from_fn(n, n, |s, t| mdp.p(pi[s].0, s, t))
}

pub fn policy_reward(mdp: &FiniteMdp, pi: &[ActionId]) -> Vec<f64> {
    pi.iter().enumerate().map(|(s, a)| mdp.r(s, a.0)).collect()
}

/// Solves `(I − γ P_π) V = r_π` directly.
pub fn policy_value(mdp: &FiniteMdp, pi: &[ActionId]) -> Result<Vec<f64>> {
    check_policy(mdp, pi)?;
    let n = mdp.n_states();
    let lhs = DMatrix::<f64>::identity(n, n) - policy_matrix(mdp, pi) * mdp.gamma();
    let rhs = DVector::from_vec(policy_reward(mdp, pi));
    let sol = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| FbtsError::Solver("I - gamma P_pi is singular".into()))?;
    let v_max = mdp.v_max();
    Ok(sol.iter().map(|&x| x.clamp(0.0, v_max)).collect())
}

/// `T^d v` by `d` max-over-action sweeps.
pub fn apply_bellman(mdp: &FiniteMdp, v: &[f64], d: usize) -> Result<Vec<f64>> {
    check_values(mdp, v)?;
    if d == 0 {
        return Err(invalid("Bellman composition depth must be at least 1"));
    }
    let mut out = v.to_vec();
    for _ in 0..d {
        out = bellman(mdp, &out);
    }
    Ok(out)
}

/// `T_π^h v`; `h = 0` is the identity.
pub fn apply_policy_op(mdp: &FiniteMdp, pi: &[ActionId], v: &[f64], h: usize) -> Result<Vec<f64>> {
    check_policy(mdp, pi)?;
    check_values(mdp, v)?;
    let mut out = v.to_vec();
    for _ in 0..h {
        out = (0..mdp.n_states()).map(|s| action_value(mdp, &out, s, pi[s].0)).collect();
    }
    Ok(out)
}

/// `ν (P_{π*})^steps [I − γ P_{π_k}]^{-1}` as a row vector. Not normalized:
/// its total mass is `1/(1−γ)`.
pub fn occupancy_measure(
    mdp: &FiniteMdp,
    nu: &[f64],
    pi_star: &[ActionId],
    pi_k: &[ActionId],
    steps: usize,
) -> Result<Vec<f64>> {
    check_policy(mdp, pi_star)?;
    check_policy(mdp, pi_k)?;
    check_distribution(nu, mdp.n_states())?;
    let n = mdp.n_states();
    let p_star = policy_matrix(mdp, pi_star);
    let mut row = DVector::from_column_slice(nu);
    for _ in 0..steps {
        row = p_star.tr_mul(&row);
    }
    let lhs = (DMatrix::<f64>::identity(n, n) - policy_matrix(mdp, pi_k) * mdp.gamma()).transpose();
    let sol = lhs
        .lu()
        .solve(&row)
        .ok_or_else(|| FbtsError::Solver("I - gamma P_pi is singular".into()))?;
    Ok(sol.iter().map(|&x| x.max(0.0)).collect())
}

pub fn check_distribution(p: &[f64], n: usize) -> Result<()> {
    if p.len() != n {
        return Err(FbtsError::DimensionMismatch { expected: n, got: p.len() });
    }
    if p.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
        return Err(invalid("distribution has negative or non-finite mass"));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(invalid(format!("distribution sums to {total}, not 1")));
    }
    Ok(())
}

pub fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

/// Every deterministic policy, in lexicographic order with state 0 varying
/// slowest. Caller is responsible for keeping `|A|^n` small.
pub fn enumerate_policies(n_states: usize, action_count: usize) -> impl Iterator<Item = Vec<ActionId>> {
    let total = (action_count as u64).checked_pow(n_states as u32).unwrap_or(u64::MAX);
    (0..total).map(move |mut code| {
        let mut pi = vec![ActionId(0); n_states];
        for s in (0..n_states).rev() {
            pi[s] = ActionId((code % action_count as u64) as usize);
            code /= action_count as u64;
        }
        pi
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{chain_mdp, random_finite_mdp, Embedding, CHAIN_LEFT, CHAIN_RIGHT};
    use crate::rng::stream;
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && sup_norm_diff(a, b) <= tol
    }

    #[test]
    fn chain3_optimal_values() {
        let m = chain_mdp(3, 0.9).unwrap();
        let sol = value_iteration(&m, DEFAULT_VI_TOL).unwrap();
        // V*(2) = 1/(1-0.9), then discounted back one step at a time.
        assert!(close(&sol.v_star, &[8.1, 9.0, 10.0], 1e-9), "{:?}", sol.v_star);
        assert_eq!(sol.pi_star, vec![CHAIN_RIGHT; 3]);
        assert!(sol.residual <= DEFAULT_VI_TOL);
    }

    #[test]
    fn chain_gamma_zero_is_one_step_reward() {
        let m = chain_mdp(3, 0.0).unwrap();
        let sol = value_iteration(&m, DEFAULT_VI_TOL).unwrap();
        assert_eq!(sol.v_star, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn chain2_half_discount() {
        let m = chain_mdp(2, 0.5).unwrap();
        let sol = value_iteration(&m, DEFAULT_VI_TOL).unwrap();
        assert!(close(&sol.v_star, &[1.0, 2.0], 1e-9));
    }

    #[test]
    fn value_iteration_rejects_nonpositive_tol() {
        let m = chain_mdp(3, 0.9).unwrap();
        assert!(value_iteration(&m, 0.0).is_err());
    }

    #[test]
    fn single_action_vstar_is_policy_value() {
        let mut rng = stream(11, &[]);
        let m = random_finite_mdp(4, 1, 0.8, &mut rng).unwrap();
        let sol = value_iteration(&m, DEFAULT_VI_TOL).unwrap();
        let vp = policy_value(&m, &[ActionId(0); 4]).unwrap();
        assert!(close(&sol.v_star, &vp, 1e-8));
    }

    #[test]
    fn policy_values_on_chain() {
        let m = chain_mdp(3, 0.9).unwrap();
        let right = policy_value(&m, &[CHAIN_RIGHT; 3]).unwrap();
        assert!(close(&right, &[8.1, 9.0, 10.0], 1e-9));
        let left = policy_value(&m, &[CHAIN_LEFT; 3]).unwrap();
        assert_eq!(left, vec![0.0; 3]);
        let m0 = chain_mdp(3, 0.0).unwrap();
        let v = policy_value(&m0, &[CHAIN_RIGHT, CHAIN_LEFT, CHAIN_RIGHT]).unwrap();
        assert_eq!(v, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn policy_value_validates_policy() {
        let m = chain_mdp(3, 0.9).unwrap();
        assert!(policy_value(&m, &[CHAIN_RIGHT; 2]).is_err());
        assert!(policy_value(&m, &[ActionId(2); 3]).is_err());
    }

    #[test]
    fn bellman_fixed_point_and_two_sweeps() {
        let m = chain_mdp(3, 0.9).unwrap();
        let sol = value_iteration(&m, 1e-13).unwrap();
        let t = apply_bellman(&m, &sol.v_star, 4).unwrap();
        assert!(close(&t, &sol.v_star, 1e-12));
        let t2 = apply_bellman(&m, &[0.0; 3], 2).unwrap();
        // Hand computation: T0 = (0, 0, 1), T(T0) = (0, 0.9, 1.9).
        assert!(close(&t2, &[0.0, 0.9, 1.9], 1e-12));
        let m0 = chain_mdp(3, 0.0).unwrap();
        assert_eq!(apply_bellman(&m0, &[5.0, 5.0, 5.0], 1).unwrap(), vec![0.0, 0.0, 1.0]);
        assert!(apply_bellman(&m, &[0.0; 3], 0).is_err());
    }

    #[test]
    fn policy_operator_identity_and_limit() {
        let mut rng = stream(5, &[]);
        let m = random_finite_mdp(5, 2, 0.7, &mut rng).unwrap();
        let pi = vec![ActionId(1), ActionId(0), ActionId(1), ActionId(1), ActionId(0)];
        let v = vec![0.3, 1.0, 2.0, 0.0, 3.3];
        assert_eq!(apply_policy_op(&m, &pi, &v, 0).unwrap(), v);
        let t50 = apply_policy_op(&m, &pi, &v, 50).unwrap();
        let vp = policy_value(&m, &pi).unwrap();
        assert!(sup_norm_diff(&t50, &vp) <= 0.7f64.powi(50) * m.v_max());
        let m0 = chain_mdp(3, 0.0).unwrap();
        let one = apply_policy_op(&m0, &[CHAIN_RIGHT; 3], &[4.0; 3], 1).unwrap();
        assert_eq!(one, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn occupancy_identity_cases() {
        let m = chain_mdp(3, 0.0).unwrap();
        let nu = vec![0.2, 0.3, 0.5];
        let lam = occupancy_measure(&m, &nu, &[CHAIN_RIGHT; 3], &[CHAIN_LEFT; 3], 0).unwrap();
        assert!(close(&lam, &nu, 1e-15));

        // P_{π_k} = I: the solve is diagonal with factor 1/(1−γ).
        let p = vec![
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![vec![0.0, 1.0], vec![1.0, 0.0]],
        ];
        let r = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
        let m = FiniteMdp::new(p, r, 0.6, 1.0, Embedding::OneHot).unwrap();
        let nu = vec![0.25, 0.75];
        let lam = occupancy_measure(&m, &nu, &[ActionId(1); 2], &[ActionId(0); 2], 3).unwrap();
        // Three swaps of the permutation move the mass to the other state.
        assert!(close(&lam, &[0.75 / 0.4, 0.25 / 0.4], 1e-12));
    }

    #[test]
    fn enumerate_policies_counts() {
        let all: Vec<_> = enumerate_policies(3, 2).collect();
        assert_eq!(all.len(), 8);
        assert_eq!(all[0], vec![ActionId(0); 3]);
        assert_eq!(all[1], vec![ActionId(0), ActionId(0), ActionId(1)]);
        assert_eq!(all[7], vec![ActionId(1); 3]);
    }

    fn arb_case() -> impl Strategy<Value = (u64, usize, usize, f64)> {
        (any::<u64>(), 1usize..6, 1usize..4, 0.0f64..0.99)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn bellman_is_a_contraction((seed, n, na, gamma) in arb_case(), scale in 0.1f64..10.0) {
            let mut rng = stream(seed, &[]);
            let m = random_finite_mdp(n, na, gamma, &mut rng).unwrap();
            let sample = |k: u64| -> Vec<f64> {
                let mut r = stream(seed, &[k]);
                (0..n).map(|_| rand::Rng::random::<f64>(&mut r) * scale).collect()
            };
            let v = sample(1);
            let w = sample(2);
            let gap = sup_norm_diff(&v, &w);
            let tv = apply_bellman(&m, &v, 1).unwrap();
            let tw = apply_bellman(&m, &w, 1).unwrap();
            prop_assert!(sup_norm_diff(&tv, &tw) <= gamma * gap + 1e-12);
            let pi: Vec<ActionId> = (0..n).map(|s| ActionId(s % na)).collect();
            let pv = apply_policy_op(&m, &pi, &v, 1).unwrap();
            let pw = apply_policy_op(&m, &pi, &w, 1).unwrap();
            prop_assert!(sup_norm_diff(&pv, &pw) <= gamma * gap + 1e-12);
        }

        #[test]
        fn bellman_is_monotone((seed, n, na, gamma) in arb_case()) {
            let mut rng = stream(seed, &[9]);
            let m = random_finite_mdp(n, na, gamma, &mut rng).unwrap();
            let v: Vec<f64> = (0..n).map(|_| rand::Rng::random::<f64>(&mut rng)).collect();
            let w: Vec<f64> = v.iter().map(|x| x + rand::Rng::random::<f64>(&mut rng)).collect();
            let tv = apply_bellman(&m, &v, 1).unwrap();
            let tw = apply_bellman(&m, &w, 1).unwrap();
            prop_assert!(tv.iter().zip(&tw).all(|(a, b)| *a <= *b + 1e-12));
        }

        #[test]
        fn greedy_policy_is_near_optimal((seed, n, na, gamma) in arb_case()) {
            let mut rng = stream(seed, &[3]);
            let m = random_finite_mdp(n, na, gamma, &mut rng).unwrap();
            let tol = 1e-8;
            let sol = value_iteration(&m, tol).unwrap();
            let vg = policy_value(&m, &sol.pi_star).unwrap();
            let bound = 2.0 * tol * gamma / (1.0 - gamma);
            prop_assert!(sup_norm_diff(&vg, &sol.v_star) <= bound + 1e-9);
        }

        #[test]
        fn occupancy_mass_is_geometric((seed, n, na, gamma) in arb_case(), steps in 0usize..7) {
            let mut rng = stream(seed, &[4]);
            let m = random_finite_mdp(n, na, gamma, &mut rng).unwrap();
            let mut nu: Vec<f64> = (0..n).map(|_| rand::Rng::random::<f64>(&mut rng) + 0.01).collect();
            let total: f64 = nu.iter().sum();
            nu.iter_mut().for_each(|x| *x /= total);
            let pi_a: Vec<ActionId> = (0..n).map(|s| ActionId(s % na)).collect();
            let pi_b: Vec<ActionId> = (0..n).map(|s| ActionId((s + 1) % na)).collect();
            let lam = occupancy_measure(&m, &nu, &pi_a, &pi_b, steps).unwrap();
            prop_assert!(lam.iter().all(|x| *x >= 0.0));
            let mass: f64 = lam.iter().sum();
            prop_assert!((mass - 1.0 / (1.0 - gamma)).abs() <= 1e-9);
        }
    }
}
