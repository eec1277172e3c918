//! Run directories: training, baselines, resume, diagnosis and sweeps.
//!
//! Layout of a run directory:
//!
//! ```text
//! config.toml        resolved configuration
//! manifest.toml      RunManifest, rewritten after every iteration
//! metrics.csv        see `metrics`
//! timings.csv
//! checkpoints/       policy_NNNN.toml, vfa_NNNN.toml
//! ```

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::time::Instant;

use super::budget::CountingMdp;
use super::config::{Algorithm, ExperimentConfig};
use super::metrics::{metrics_csv, timings_csv, MetricsRow, TimingRow};
use crate::approx::{Checkpoint, PolicyModel};
use crate::baselines::run_baseline;
use crate::diagnostics::{performance_bound_check, suboptimality, final_bound_report, true_loss, BoundReport, BoundInputs};
use crate::driver::{initial_fbts_policy, resume_training, IterationArtifacts, PhaseTimings};
use crate::error::{invalid, FbtsError, Result};
use crate::mdp::{Environment, FiniteMdp, Mdp, StateDistribution};
use crate::pool::WorkerPool;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "FBTS_OUT_DIR";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const METRICS_FILE: &str = "metrics.csv";
pub const TIMINGS_FILE: &str = "timings.csv";
pub const CONFIG_FILE: &str = "config.toml";
pub const PERFORMANCE_BOUND_FILE: &str = "performance_bound.toml";
pub const FINAL_BOUND_FILE: &str = "final_bound.toml";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
const FORMAT_VERSION: u32 = 1;
/// Largest state count for which `diagnose` assembles the full bound.
const FINAL_BOUND_MAX_STATES: usize = 64;

pub fn default_out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub kind: String,
    pub iteration: usize,
    /// Relative to the run directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub algorithm: Algorithm,
    pub master_seed: u64,
    pub environment: String,
    pub finite: bool,
    pub overrides: Vec<String>,
    pub completed_iterations: usize,
    pub finished: bool,
    /// `sample_next` calls made so far.
    pub transitions: u64,
    pub config: ExperimentConfig,
    pub checkpoints: Vec<CheckpointEntry>,
    pub metrics: Vec<MetricsRow>,
    pub timings: Vec<TimingRow>,
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path)?;
        toml::from_str(&text).map_err(|e| FbtsError::Parse { context: path.display().to_string(), message: e.to_string() })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("manifest always serializes")
    }

    pub fn policy_entries(&self) -> Vec<&CheckpointEntry> {
        let mut v: Vec<_> = self.checkpoints.iter().filter(|c| c.kind == "policy").collect();
        v.sort_by_key(|c| c.iteration);
        v
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Write-then-rename so readers never see a half-written file.
fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads a checkpoint and checks it against its recorded digest.
pub fn load_verified_checkpoint(dir: &Path, entry: &CheckpointEntry) -> Result<Checkpoint> {
    let path = dir.join(&entry.path);
    let integrity = |reason: String| FbtsError::Integrity { path: path.display().to_string(), reason };
    let bytes = std::fs::read(&path).map_err(|e| integrity(e.to_string()))?;
    let digest = sha256_hex(&bytes);
    if digest != entry.sha256 {
        return Err(integrity(format!("sha256 {digest} does not match recorded {}", entry.sha256)));
    }
    let text = String::from_utf8(bytes).map_err(|e| integrity(e.to_string()))?;
    Checkpoint::from_toml_str(&text).map_err(|e| integrity(e.to_string()))
}

fn finite_probs(dist: &StateDistribution, m: &FiniteMdp) -> Result<Vec<f64>> {
    dist.probabilities(m.n_states())
        .ok_or_else(|| invalid("distribution has no exact probabilities on this environment"))
}

struct Recorder {
    dir: PathBuf,
    manifest: RunManifest,
    nu: Option<Vec<f64>>,
}

impl Recorder {
    fn checkpoint(&mut self, ckpt: &Checkpoint) -> Result<()> {
        let (kind, iteration) = match ckpt {
            Checkpoint::Policy { iteration, .. } => ("policy", *iteration),
            Checkpoint::Vfa { iteration, .. } => ("vfa", *iteration),
        };
        let rel = format!("checkpoints/{kind}_{iteration:04}.toml");
        let text = ckpt.to_toml_string();
        write_atomic(&self.dir.join(&rel), &text)?;
        let entry = CheckpointEntry { kind: kind.into(), iteration, path: rel, sha256: sha256_hex(text.as_bytes()) };
        self.manifest.checkpoints.retain(|c| !(c.kind == entry.kind && c.iteration == iteration));
        self.manifest.checkpoints.push(entry);
        Ok(())
    }

    fn suboptimality(&self, env: &Environment, pi: &PolicyModel) -> Result<Option<f64>> {
        match (env.as_finite(), &self.nu) {
            (Some(m), Some(nu)) => Ok(Some(suboptimality(m, &pi.table(m), nu)?)),
            _ => Ok(None),
        }
    }

    fn flush(&self) -> Result<()> {
        write_atomic(&self.dir.join(METRICS_FILE), &metrics_csv(&self.manifest.metrics)?)?;
        write_atomic(&self.dir.join(TIMINGS_FILE), &timings_csv(&self.manifest.timings)?)?;
        write_atomic(&self.dir.join(MANIFEST_FILE), &self.manifest.to_toml_string())
    }
}

fn nu_probs(cfg: &ExperimentConfig, env: &Environment) -> Result<Option<Vec<f64>>> {
    match env.as_finite() {
        Some(m) => Ok(Some(finite_probs(&cfg.distributions(env)?.nu, m)?)),
        None => Ok(None),
    }
}

/// Runs the configured algorithm into `dir`. All validation happens before
/// anything is written. Progress is persisted after every iteration.
pub fn run_experiment(cfg: &ExperimentConfig, overrides: &[String], dir: &Path, pool: &WorkerPool) -> Result<RunManifest> {
    let env = cfg.build_environment()?;
    // Fail on configuration problems before touching the filesystem.
    match cfg.algorithm {
        Algorithm::Fbts => drop(cfg.fbts_config(&env)?),
        _ => drop(cfg.baseline_config(&env)?),
    }
    let nu = nu_probs(cfg, &env)?;
    std::fs::create_dir_all(dir.join("checkpoints"))?;
    write_atomic(&dir.join(CONFIG_FILE), &cfg.to_toml_string())?;
    let manifest = RunManifest {
        format_version: FORMAT_VERSION,
        algorithm: cfg.algorithm,
        master_seed: cfg.seed,
        environment: env.describe(),
        finite: env.as_finite().is_some(),
        overrides: overrides.to_vec(),
        completed_iterations: 0,
        finished: false,
        transitions: 0,
        config: cfg.clone(),
        checkpoints: Vec::new(),
        metrics: Vec::new(),
        timings: Vec::new(),
    };
    let mut rec = Recorder { dir: dir.to_path_buf(), manifest, nu };
    match cfg.algorithm {
        Algorithm::Fbts => {
            let fb = cfg.fbts_config(&env)?;
            let pi0 = initial_fbts_policy(&env, &fb);
            rec.checkpoint(&Checkpoint::Policy { iteration: 0, model: pi0.clone() })?;
            rec.flush()?;
            continue_fbts(&env, rec, pi0, pool)
        }
        Algorithm::Dpi | Algorithm::Avi => run_baseline_into(&env, cfg, rec, pool),
    }
}

fn continue_fbts(env: &Environment, mut rec: Recorder, pi_start: PolicyModel, pool: &WorkerPool) -> Result<RunManifest> {
    let fb = rec.manifest.config.fbts_config(env)?;
    let start = rec.manifest.completed_iterations;
    let base = rec.manifest.transitions;
    let counted = CountingMdp::new(env);
    let mut observe = |art: &IterationArtifacts| -> Result<()> {
        rec.checkpoint(&Checkpoint::Vfa { iteration: art.k, model: art.vfa.clone() })?;
        rec.checkpoint(&Checkpoint::Policy { iteration: art.k + 1, model: art.policy.clone() })?;
        let row = MetricsRow {
            k: art.k,
            regression_loss: Some(art.regression_loss),
            classification_loss: Some(art.classification_loss),
            suboptimality: rec.suboptimality(env, &art.policy)?,
            mean_u_hat: Some(art.mean_u_hat()),
        };
        rec.manifest.metrics.retain(|r| r.k < art.k);
        rec.manifest.metrics.push(row);
        rec.manifest.timings.retain(|t| t.k < art.k);
        for (phase, seconds) in PhaseTimings::PHASES.iter().zip(art.timings.values()) {
            rec.manifest.timings.push(TimingRow { k: art.k, phase: phase.to_string(), seconds });
        }
        rec.manifest.completed_iterations = art.k + 1;
        rec.manifest.transitions = base + counted.transitions();
        rec.flush()
    };
    resume_training(&counted, &fb, pool, start, pi_start, &mut observe)?;
    rec.manifest.finished = true;
    rec.manifest.transitions = base + counted.transitions();
    rec.flush()?;
    Ok(rec.manifest)
}

fn run_baseline_into(env: &Environment, cfg: &ExperimentConfig, mut rec: Recorder, pool: &WorkerPool) -> Result<RunManifest> {
    let bc = cfg.baseline_config(env)?;
    let counted = CountingMdp::new(env);
    let clock = Instant::now();
    let run = run_baseline(&counted, &bc, pool)?;
    let elapsed = clock.elapsed().as_secs_f64();
    // DPI keeps π_0..π_K; AVI only its final greedy policy, filed under K.
    let first = bc.k + 1 - run.policies.len();
    for (i, pi) in run.policies.iter().enumerate() {
        rec.checkpoint(&Checkpoint::Policy { iteration: first + i, model: pi.clone() })?;
    }
    for (i, v) in run.vfas.iter().enumerate() {
        rec.checkpoint(&Checkpoint::Vfa { iteration: i, model: v.clone() })?;
    }
    for it in &run.iterations {
        let produced = it.k + 1;
        let pi = produced.checked_sub(first).and_then(|j| run.policies.get(j));
        let sub = match pi {
            Some(p) => rec.suboptimality(env, p)?,
            None => None,
        };
        rec.manifest.metrics.push(MetricsRow {
            k: it.k,
            regression_loss: it.regression_loss,
            classification_loss: it.classification_loss,
            suboptimality: sub,
            mean_u_hat: None,
        });
    }
    rec.manifest.timings.push(TimingRow { k: bc.k, phase: "total".into(), seconds: elapsed });
    rec.manifest.completed_iterations = bc.k;
    rec.manifest.finished = true;
    rec.manifest.transitions = counted.transitions();
    rec.flush()?;
    Ok(rec.manifest)
}

/// Continues an interrupted training run from its last completed iteration.
/// Finished runs are returned unchanged.
pub fn resume_experiment(dir: &Path, pool: &WorkerPool) -> Result<RunManifest> {
    let manifest = RunManifest::load(dir)?;
    if manifest.finished {
        return Ok(manifest);
    }
    if manifest.algorithm != Algorithm::Fbts {
        return Err(FbtsError::Unsupported("only training runs can be resumed".into()));
    }
    for entry in &manifest.checkpoints {
        load_verified_checkpoint(dir, entry)?;
    }
    let done = manifest.completed_iterations;
    let entry = manifest
        .policy_entries()
        .into_iter()
        .find(|c| c.iteration == done)
        .cloned()
        .ok_or_else(|| FbtsError::Integrity { path: dir.display().to_string(), reason: format!("no policy checkpoint for iteration {done}") })?;
    let pi = match load_verified_checkpoint(dir, &entry)? {
        Checkpoint::Policy { model, .. } => model,
        Checkpoint::Vfa { .. } => {
            return Err(FbtsError::Integrity { path: entry.path.clone(), reason: "expected a policy checkpoint".into() })
        }
    };
    let env = manifest.config.build_environment()?;
    let nu = nu_probs(&manifest.config, &env)?;
    let rec = Recorder { dir: dir.to_path_buf(), manifest, nu };
    continue_fbts(&env, rec, pi, pool)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRow {
    pub k: usize,
    /// True loss of the step `π_{k−1} → π_k` under `ρ1`.
    pub true_loss: f64,
    /// The same step's term in the loss-to-performance bound.
    pub weighted_loss: f64,
    pub suboptimality: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnosis {
    pub performance_bound: BoundReport,
    pub final_bound: Option<BoundReport>,
    pub rows: Vec<DiagnosticsRow>,
}

/// Exact diagnostics of a finished (or partial) run on a finite environment.
/// Writes the two bound reports and `diagnostics.csv` into `dir`.
pub fn diagnose_run(dir: &Path) -> Result<Diagnosis> {
    let manifest = RunManifest::load(dir)?;
    let cfg = &manifest.config;
    let env = cfg.build_environment()?;
    let Some(mdp) = env.as_finite() else {
        return Err(FbtsError::NoOracle(format!(
            "{} is a continuous environment; exact diagnostics need a finite MDP",
            env.describe()
        )));
    };
    let mut policies = Vec::new();
    for entry in manifest.policy_entries() {
        match load_verified_checkpoint(dir, entry)? {
            Checkpoint::Policy { model, .. } => policies.push(model.table(mdp)),
            Checkpoint::Vfa { .. } => unreachable!("filtered to policy entries"),
        }
    }
    if policies.is_empty() {
        return Err(FbtsError::Integrity { path: dir.display().to_string(), reason: "no policy checkpoints".into() });
    }
    let dists = cfg.distributions(&env)?;
    let nu = finite_probs(&dists.nu, mdp)?;
    let rho0 = finite_probs(&dists.rho0, mdp)?;
    let rho1 = finite_probs(&dists.rho1, mdp)?;
    // DPI improves by one-step lookahead.
    let d = if manifest.algorithm == Algorithm::Fbts { cfg.d } else { 1 };
    let performance_bound = performance_bound_check(mdp, &policies, &nu, d)?;
    let mut rows = Vec::new();
    for k in 1..policies.len() {
        rows.push(DiagnosticsRow {
            k,
            true_loss: true_loss(mdp, &policies[k - 1], &policies[k], d, &rho1)?,
            weighted_loss: performance_bound.term(&format!("loss_{k}")).unwrap_or(0.0),
            suboptimality: suboptimality(mdp, &policies[k], &nu)?,
        });
    }
    let final_bound = if mdp.n_states() <= FINAL_BOUND_MAX_STATES && rho0.iter().chain(&rho1).all(|&p| p > 0.0) {
        let (vf, pf) = cfg.families(&env)?;
        let h = if manifest.algorithm == Algorithm::Fbts { cfg.h } else { 0 };
        let inputs = BoundInputs { nu, rho0, rho1, d, h, eps: cfg.bound_eps, n_tail: crate::diagnostics::DEFAULT_TAIL_N };
        Some(final_bound_report(mdp, &policies, &vf, &pf, &inputs, cfg.seed)?)
    } else {
        None
    };
    write_atomic(&dir.join(PERFORMANCE_BOUND_FILE), &performance_bound.to_text())?;
    if let Some(t) = &final_bound {
        write_atomic(&dir.join(FINAL_BOUND_FILE), &t.to_text())?;
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        w.serialize(r)?;
    }
    let mut text = String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("utf-8");
    if rows.is_empty() {
        text = "k,true_loss,weighted_loss,suboptimality\n".into();
    }
    write_atomic(&dir.join(DIAGNOSTICS_FILE), &text)?;
    Ok(Diagnosis { performance_bound, final_bound, rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub point: usize,
    pub settings: String,
    pub seed: u64,
    pub final_suboptimality: Option<f64>,
    pub final_classification_loss: Option<f64>,
    pub transitions: u64,
}

/// Parses `key=v1,v2,...`.
pub fn parse_grid_axis(raw: &str) -> Result<(String, Vec<String>)> {
    let (k, vs) = raw.split_once('=').ok_or_else(|| invalid(format!("grid axis {raw:?} is not key=v1,v2,...")))?;
    let values: Vec<String> = vs.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
    if k.trim().is_empty() || values.is_empty() {
        return Err(invalid(format!("grid axis {raw:?} needs a key and at least one value")));
    }
    Ok((k.trim().to_string(), values))
}

fn grid_points(axes: &[(String, Vec<String>)]) -> Vec<Vec<String>> {
    let mut points = vec![Vec::new()];
    for (k, values) in axes {
        points = points
            .into_iter()
            .flat_map(|p| values.iter().map(move |v| {
                let mut q = p.clone();
                q.push(format!("{k}={v}"));
                q
            }))
            .collect();
    }
    points
}

/// Runs every grid point for every seed under `dir/point_PPP/seed_S` and
/// writes `dir/sweep.csv`. All points are validated before any run starts.
pub fn run_sweep(
    base: &ExperimentConfig,
    axes: &[(String, Vec<String>)],
    seeds: &[u64],
    dir: &Path,
    pool: &WorkerPool,
) -> Result<Vec<SweepRow>> {
    if seeds.is_empty() {
        return Err(invalid("sweep needs at least one seed"));
    }
    let base_text = base.to_toml_string();
    let mut plans = Vec::new();
    for (p, settings) in grid_points(axes).into_iter().enumerate() {
        for &seed in seeds {
            let mut ov = settings.clone();
            ov.push(format!("seed={seed}"));
            let cfg = ExperimentConfig::from_toml_str(&base_text, &ov)?;
            let env = cfg.build_environment()?;
            match cfg.algorithm {
                Algorithm::Fbts => drop(cfg.fbts_config(&env)?),
                _ => drop(cfg.baseline_config(&env)?),
            }
            plans.push((p, settings.join(";"), seed, cfg, ov));
        }
    }
    std::fs::create_dir_all(dir)?;
    let mut rows = Vec::new();
    for (p, settings, seed, cfg, ov) in plans {
        let sub = dir.join(format!("point_{p:03}")).join(format!("seed_{seed}"));
        let m = run_experiment(&cfg, &ov, &sub, pool)?;
        let last = m.metrics.last();
        rows.push(SweepRow {
            point: p,
            settings,
            seed,
            final_suboptimality: last.and_then(|r| r.suboptimality),
            final_classification_loss: last.and_then(|r| r.classification_loss),
            transitions: m.transitions,
        });
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        w.serialize(r)?;
    }
    let text = String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("utf-8");
    write_atomic(&dir.join("sweep.csv"), &text)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain_cfg(extra: &[&str]) -> ExperimentConfig {
        let ov: Vec<String> = extra.iter().map(|s| s.to_string()).collect();
        ExperimentConfig::from_toml_str(
            "env = \"chain\"\nstates = 3\nk = 2\nn0 = 3\nn1 = 3\nm0 = 8\nm1 = 60\nl1 = 8\nrho0 = \"sweep\"\nrho1 = \"sweep\"",
            &ov,
        )
        .unwrap()
    }

    #[test]
    fn training_run_writes_everything() {
        let dir = tempfile::tempdir().unwrap();
        let m = run_experiment(&chain_cfg(&[]), &[], dir.path(), &WorkerPool::serial()).unwrap();
        assert!(m.finished);
        assert_eq!(m.completed_iterations, 2);
        assert_eq!(m.metrics.len(), 2);
        assert_eq!(m.policy_entries().len(), 3);
        assert!(m.metrics.iter().all(|r| r.suboptimality.is_some()));
        assert_eq!(m.timings.len(), 8);
        assert!(m.transitions > 0);
        for f in [MANIFEST_FILE, METRICS_FILE, TIMINGS_FILE, CONFIG_FILE] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        assert_eq!(RunManifest::load(dir.path()).unwrap(), m);
    }

    #[test]
    fn manifest_replays_bit_for_bit() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let m = run_experiment(&chain_cfg(&[]), &[], a.path(), &WorkerPool::serial()).unwrap();
        run_experiment(&m.config, &[], b.path(), &WorkerPool::new(4).unwrap()).unwrap();
        let read = |d: &Path| std::fs::read(d.join(METRICS_FILE)).unwrap();
        assert_eq!(read(a.path()), read(b.path()));
        for e in &m.checkpoints {
            assert_eq!(std::fs::read(a.path().join(&e.path)).unwrap(), std::fs::read(b.path().join(&e.path)).unwrap());
        }
    }

    #[test]
    fn resume_after_abort_matches_uninterrupted() {
        let full = tempfile::tempdir().unwrap();
        let cut = tempfile::tempdir().unwrap();
        let cfg = chain_cfg(&["k=3"]);
        run_experiment(&cfg, &[], full.path(), &WorkerPool::serial()).unwrap();
        // Simulate a crash after one iteration: rewind the manifest.
        run_experiment(&cfg, &[], cut.path(), &WorkerPool::serial()).unwrap();
        let mut m = RunManifest::load(cut.path()).unwrap();
        m.finished = false;
        m.completed_iterations = 1;
        m.metrics.truncate(1);
        m.timings.retain(|t| t.k < 1);
        m.checkpoints.retain(|c| c.iteration <= 1);
        std::fs::write(cut.path().join(MANIFEST_FILE), m.to_toml_string()).unwrap();
        std::fs::write(cut.path().join(METRICS_FILE), metrics_csv(&m.metrics).unwrap()).unwrap();
        let resumed = resume_experiment(cut.path(), &WorkerPool::serial()).unwrap();
        assert!(resumed.finished);
        assert_eq!(resumed.completed_iterations, 3);
        let read = |d: &Path| std::fs::read(d.join(METRICS_FILE)).unwrap();
        assert_eq!(read(full.path()), read(cut.path()));
    }

    #[test]
    fn validation_failure_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let cfg = ExperimentConfig::from_toml_str("k = 1", &[]).unwrap();
        assert!(matches!(run_experiment(&cfg, &[], &out, &WorkerPool::serial()), Err(FbtsError::InvalidParameter(_))));
        assert!(!out.exists());
    }

    #[test]
    fn baselines_record_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let m = run_experiment(&chain_cfg(&["algorithm=dpi", "k=0"]), &[], dir.path(), &WorkerPool::serial()).unwrap();
        assert_eq!(m.checkpoints.len(), 1);
        assert_eq!(m.checkpoints[0].iteration, 0);
        assert!(m.metrics.is_empty());
        let dir = tempfile::tempdir().unwrap();
        let m = run_experiment(&chain_cfg(&["algorithm=avi"]), &[], dir.path(), &WorkerPool::serial()).unwrap();
        assert_eq!(m.policy_entries().len(), 1);
        assert_eq!(m.policy_entries()[0].iteration, 2);
        assert_eq!(m.metrics.len(), 2);
        assert!(m.metrics[0].suboptimality.is_none() && m.metrics[1].suboptimality.is_some());
        let dir = tempfile::tempdir().unwrap();
        let m = run_experiment(&chain_cfg(&["algorithm=dpi", "matched_budget=true"]), &[], dir.path(), &WorkerPool::serial())
            .unwrap();
        assert!(m.transitions > 0);
    }

    #[test]
    fn diagnose_and_integrity() {
        let dir = tempfile::tempdir().unwrap();
        run_experiment(&chain_cfg(&[]), &[], dir.path(), &WorkerPool::serial()).unwrap();
        let diag = diagnose_run(dir.path()).unwrap();
        assert!(diag.performance_bound.satisfied);
        assert_eq!(diag.rows.len(), 2);
        assert!(diag.final_bound.is_some());
        assert!(dir.path().join(PERFORMANCE_BOUND_FILE).exists());
        let text = std::fs::read_to_string(dir.path().join(DIAGNOSTICS_FILE)).unwrap();
        assert!(text.starts_with("k,true_loss,weighted_loss,suboptimality\n"));
        let p = dir.path().join("checkpoints/policy_0001.toml");
        let mut body = std::fs::read_to_string(&p).unwrap();
        body.push('\n');
        std::fs::write(&p, body).unwrap();
        assert!(matches!(diagnose_run(dir.path()), Err(FbtsError::Integrity { .. })));
    }

    #[test]
    fn continuous_runs_refuse_diagnosis() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::from_toml_str(
            "env = \"puddle\"\nvfa = \"linear\"\npolicy = \"linear\"\nk = 1\nn0 = 2\nn1 = 2\nm0 = 2\nm1 = 10\nl1 = 2\nt_max = 5",
            &[],
        )
        .unwrap();
        let m = run_experiment(&cfg, &[], dir.path(), &WorkerPool::serial()).unwrap();
        assert!(!m.finite && m.metrics[0].suboptimality.is_none());
        assert!(matches!(diagnose_run(dir.path()), Err(FbtsError::NoOracle(_))));
    }

    #[test]
    fn sweep_runs_the_grid() {
        let dir = tempfile::tempdir().unwrap();
        let axes = vec![parse_grid_axis("m1=20,40").unwrap()];
        let rows = run_sweep(&chain_cfg(&["k=1"]), &axes, &[1, 2], dir.path(), &WorkerPool::serial()).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[3].settings, "m1=40");
        assert!(dir.path().join("point_001/seed_2/metrics.csv").exists());
        assert!(dir.path().join("sweep.csv").exists());
        assert!(parse_grid_axis("m1=").is_err());
        assert!(run_sweep(&chain_cfg(&[]), &[parse_grid_axis("bogus=1").unwrap()], &[0], dir.path(), &WorkerPool::serial())
            .is_err());
    }
}
