//! Browser bindings. Each export takes the flat TOML config used by the
//! command line and returns JSON. The `*_json` functions hold the logic and
//! are what the native tests call; the exported wrappers only convert errors.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use fbts::approx::{PolicyModel, TabularIndex, Vfa, VfaFamily};
use fbts::diagnostics::suboptimality;
use fbts::driver::run_training;
use fbts::harness::config::EnvKind;
use fbts::harness::{fbts_transitions, Algorithm, ExperimentConfig};
use fbts::mcts::{exact_search_target, run_mcts};
use fbts::mdp::{oracle, ActionId, Environment, FiniteMdp, Mdp};
use fbts::pool::WorkerPool;
use fbts::rng::stream;
use fbts::rollout::LeafEvaluator;

/// A single page should not stall the tab for minutes.
pub const MAX_DEMO_TRANSITIONS: u64 = 5_000_000;

fn finite_env(config: &str) -> Result<(ExperimentConfig, FiniteMdp), String> {
    let cfg = ExperimentConfig::from_toml_str(config, &[]).map_err(|e| e.to_string())?;
    if cfg.env == Some(EnvKind::File) {
        return Err("the browser demo cannot read files; use env = \"chain\" or \"random\"".into());
    }
    match cfg.build_environment().map_err(|e| e.to_string())? {
        Environment::Finite(m) => Ok((cfg, m)),
        Environment::Puddle(_) => Err("the browser demo only runs finite environments".into()),
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

fn actions(pi: &[ActionId]) -> Vec<usize> {
    pi.iter().map(|a| a.0).collect()
}

#[derive(Serialize)]
struct Solution {
    v_star: Vec<f64>,
    pi_star: Vec<usize>,
    v_max: f64,
}

pub fn solve_json(config: &str) -> Result<String, String> {
    let (_, m) = finite_env(config)?;
    let sol = oracle::value_iteration(&m, oracle::DEFAULT_VI_TOL).map_err(|e| e.to_string())?;
    to_json(&Solution { v_star: sol.v_star, pi_star: actions(&sol.pi_star), v_max: m.v_max() })
}

#[derive(Serialize)]
struct IterationView {
    k: usize,
    regression_loss: f64,
    classification_loss: f64,
    mean_u_hat: f64,
    policy: Vec<usize>,
    suboptimality: f64,
}

#[derive(Serialize)]
struct TrainView {
    transitions: u64,
    initial_policy: Vec<usize>,
    iterations: Vec<IterationView>,
    pi_star: Vec<usize>,
}

pub fn train_json(config: &str) -> Result<String, String> {
    let (cfg, m) = finite_env(config)?;
    if cfg.algorithm != Algorithm::Fbts {
        return Err("the browser demo trains the tree-search agent only".into());
    }
    let env = Environment::Finite(m.clone());
    let fb = cfg.fbts_config(&env).map_err(|e| e.to_string())?;
    let budget = fbts_transitions(&fb, &env).map_err(|e| e.to_string())?;
    if budget > MAX_DEMO_TRANSITIONS {
        return Err(format!("config needs {budget} transitions; the demo allows {MAX_DEMO_TRANSITIONS}"));
    }
    let nu = fb.distributions.nu.probabilities(m.n_states()).ok_or("nu has no exact probabilities")?;
    let run = run_training(&m, &fb, &WorkerPool::serial(), &mut |_| Ok(())).map_err(|e| e.to_string())?;
    let mut iterations = Vec::new();
    for it in &run.iterations {
        let table = it.policy.table(&m);
        iterations.push(IterationView {
            k: it.k,
            regression_loss: it.regression_loss,
            classification_loss: it.classification_loss,
            mean_u_hat: it.mean_u_hat(),
            suboptimality: suboptimality(&m, &table, &nu).map_err(|e| e.to_string())?,
            policy: actions(&table),
        });
    }
    let sol = oracle::value_iteration(&m, oracle::DEFAULT_VI_TOL).map_err(|e| e.to_string())?;
    to_json(&TrainView {
        transitions: budget,
        initial_policy: actions(&run.policies[0].table(&m)),
        iterations,
        pi_star: actions(&sol.pi_star),
    })
}

#[derive(Serialize)]
struct SearchView {
    u_hat: f64,
    exact_target: f64,
    action_values: Vec<f64>,
    visit_counts: Vec<u64>,
}

/// One tree search from `state` whose leaves use `policy` and its exact
/// value; compares the root estimate with the exact depth-`d` target.
pub fn search_json(config: &str, state: usize, policy: &[usize]) -> Result<String, String> {
    let (cfg, m) = finite_env(config)?;
    if state >= m.n_states() {
        return Err(format!("state {state} out of range for {} states", m.n_states()));
    }
    let pi: Vec<ActionId> = policy.iter().map(|&a| ActionId(a)).collect();
    let v = oracle::policy_value(&m, &pi).map_err(|e| e.to_string())?;
    let index = TabularIndex::for_mdp(&m);
    let model = PolicyModel::tabular(index.clone(), pi, m.action_count()).map_err(|e| e.to_string())?;
    let ev = LeafEvaluator { policy: model, vfa: Vfa { family: VfaFamily::Tabular(index), params: v, v_max: m.v_max() }, h: cfg.h };
    let env = Environment::Finite(m.clone());
    let mcts = cfg.fbts_config(&env).map_err(|e| e.to_string())?.mcts;
    let mut rng = stream(cfg.seed, &[fbts::rng::phase::MCTS, state as u64]);
    let root = run_mcts(&m, &ev, &m.embed(state), &mcts, &mut rng).map_err(|e| e.to_string())?;
    let exact_target = exact_search_target(&m, &ev, state, cfg.d).map_err(|e| e.to_string())?;
    to_json(&SearchView { u_hat: root.u_hat, exact_target, action_values: root.action_values, visit_counts: root.visit_counts })
}

#[wasm_bindgen]
pub fn solve(config: &str) -> Result<String, JsError> {
    solve_json(config).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn train(config: &str) -> Result<String, JsError> {
    train_json(config).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn search(config: &str, state: usize, policy: Vec<usize>) -> Result<String, JsError> {
    search_json(config, state, &policy).map_err(|e| JsError::new(&e))
}
