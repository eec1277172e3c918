//! Flat key-value experiment configuration.
//!
//! ```toml
//! env = "chain"
//! states = 5
//! gamma = 0.9
//! algorithm = "fbts"
//! k = 3
//! m1 = 2000
//! ```
//!
//! Every key is optional except `env`; unknown keys are rejected. Command-line
//! overrides `key=value` are parsed as TOML values, falling back to a bare
//! string, and applied on top of the file.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::approx::{FeatureMap, PolicyFamily, TabularIndex, VfaFamily};
use crate::baselines::{BaselineAlgorithm, BaselineConfig, EstimateMode};
use crate::driver::FbtsConfig;
use crate::error::{invalid, FbtsError, Result};
use crate::mcts::{MctsConfig, RootRule};
use crate::mdp::{
    chain_mdp, puddle_nav_mdp, random_finite_mdp, Environment, FiniteMdp, Mdp, SamplingDistributions,
    StateDistribution,
};
use crate::rng::stream;
use crate::rollout::{default_t_max, HorizonMode, RolloutConfig, DEFAULT_TRUNCATION_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Chain,
    Random,
    File,
    Puddle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Fbts,
    Dpi,
    Avi,
}

impl std::str::FromStr for Algorithm {
    type Err = FbtsError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fbts" => Ok(Algorithm::Fbts),
            "dpi" => Ok(Algorithm::Dpi),
            "avi" => Ok(Algorithm::Avi),
            other => Err(invalid(format!("unknown algorithm {other:?} (expected fbts, dpi or avi)"))),
        }
    }
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Fbts => "fbts",
            Algorithm::Dpi => "dpi",
            Algorithm::Avi => "avi",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HorizonKind {
    Truncate,
    Absorb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RootRuleKind {
    MaxQGuarded,
    VisitWeightedMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistKind {
    Uniform,
    /// Deterministic pass over finite states in index order.
    Sweep,
    /// Uniform over `[box_lo, box_hi]^dim`.
    Box,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    Tabular,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Constant,
    Raw,
    Affine,
    Quadratic,
    OnehotNoise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: Option<EnvKind>,
    /// Chain length or random-MDP size.
    pub states: usize,
    /// Random-MDP action count.
    pub actions: usize,
    pub gamma: f64,
    pub env_seed: u64,
    /// FiniteMdp file for `env = "file"`, relative to the config file.
    pub mdp_file: String,
    pub puddle_noise: f64,

    pub algorithm: Algorithm,
    pub seed: u64,
    pub k: usize,
    pub n0: usize,
    pub n1: usize,
    pub m0: usize,
    pub m1: usize,
    pub l1: usize,
    pub d: usize,
    pub h: usize,
    pub horizon: HorizonKind,
    /// 0 derives the horizon from `gamma` and `r_max`.
    pub t_max: usize,

    pub c_ucb: f64,
    /// Softmax temperature as a fraction of `v_max`.
    pub softmax_temp: f64,
    pub dpw_alpha: f64,
    pub dpw_c: f64,
    pub root_rule: RootRuleKind,
    /// 0 uses the default guard.
    pub root_min_visits: u64,

    pub rho0: DistKind,
    pub rho1: DistKind,
    pub nu: DistKind,
    pub box_lo: f64,
    pub box_hi: f64,

    pub vfa: FamilyKind,
    pub policy: FamilyKind,
    pub features: FeatureKind,
    pub noise_extra: usize,
    pub noise_sigma: f64,
    pub noise_seed: u64,

    /// Baselines only: oracle expectations instead of sampling.
    pub exact: bool,
    /// Baselines only: resize sample counts to the FBTS transition budget of
    /// the same config.
    pub matched_budget: bool,
    /// Explicit transition target for `matched_budget`; 0 uses the FBTS total.
    pub budget: u64,
    /// Estimation slack added to the final bound in `diagnose`.
    pub bound_eps: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            env: None,
            states: 5,
            actions: 2,
            gamma: 0.9,
            env_seed: 0,
            mdp_file: String::new(),
            puddle_noise: 0.01,
            algorithm: Algorithm::Fbts,
            seed: 0,
            k: 3,
            n0: 5,
            n1: 5,
            m0: 64,
            m1: 2000,
            l1: 32,
            d: 2,
            h: 2,
            horizon: HorizonKind::Truncate,
            t_max: 0,
            c_ucb: 1.0,
            softmax_temp: 0.1,
            dpw_alpha: 0.5,
            dpw_c: 1.0,
            root_rule: RootRuleKind::MaxQGuarded,
            root_min_visits: 0,
            rho0: DistKind::Uniform,
            rho1: DistKind::Uniform,
            nu: DistKind::Uniform,
            box_lo: 0.0,
            box_hi: 1.0,
            vfa: FamilyKind::Tabular,
            policy: FamilyKind::Tabular,
            features: FeatureKind::Affine,
            noise_extra: 2,
            noise_sigma: 0.25,
            noise_seed: 0,
            exact: false,
            matched_budget: false,
            budget: 0,
            bound_eps: 0.0,
        }
    }
}

fn parse_err(context: &str, e: impl std::fmt::Display) -> FbtsError {
    FbtsError::Parse { context: context.into(), message: e.to_string() }
}

/// Parses `key=value`; the value is read as TOML and otherwise kept as a string.
pub fn parse_override(raw: &str) -> Result<(String, toml::Value)> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| invalid(format!("override {raw:?} is not of the form key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(invalid(format!("override {raw:?} has an empty key")));
    }
    let value = value.trim();
    let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    Ok((key.to_string(), parsed))
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| parse_err("config", e))?;
        for raw in overrides {
            let (k, v) = parse_override(raw)?;
            table.insert(k, v);
        }
        let cfg: ExperimentConfig = table.try_into().map_err(|e| parse_err("config", e))?;
        Ok(cfg)
    }

    /// Loads a config file; a relative `mdp_file` is resolved against the
    /// file's directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| parse_err(&path.display().to_string(), e))?;
        let mut cfg = Self::from_toml_str(&text, overrides)?;
        if !cfg.mdp_file.is_empty() {
            let p = Path::new(&cfg.mdp_file);
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    cfg.mdp_file = dir.join(p).display().to_string();
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    /// Static checks that need no environment.
    pub fn validate(&self) -> Result<()> {
        let env = self.env.ok_or_else(|| invalid("missing environment name (set env = chain|random|file|puddle)"))?;
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(invalid(format!("gamma must lie in [0, 1), got {}", self.gamma)));
        }
        if env == EnvKind::File && self.mdp_file.is_empty() {
            return Err(invalid("env = \"file\" needs mdp_file"));
        }
        if matches!(env, EnvKind::Chain | EnvKind::Random) && self.states == 0 {
            return Err(invalid("states must be at least 1"));
        }
        if env == EnvKind::Puddle && (self.vfa == FamilyKind::Tabular || self.policy == FamilyKind::Tabular) {
            return Err(invalid("the continuous environment needs linear families (vfa = policy = \"linear\")"));
        }
        if self.n0 == 0 || self.n1 == 0 || self.m0 == 0 || self.m1 == 0 || self.l1 == 0 || self.d == 0 {
            return Err(invalid("n0, n1, m0, m1, l1 and d must be positive"));
        }
        if !(self.softmax_temp > 0.0) || !(self.c_ucb >= 0.0) {
            return Err(invalid("softmax_temp must be positive and c_ucb non-negative"));
        }
        if self.matched_budget && self.exact {
            return Err(invalid("matched_budget and exact are mutually exclusive"));
        }
        Ok(())
    }

    pub fn build_environment(&self) -> Result<Environment> {
        self.validate()?;
        Ok(match self.env.expect("validated") {
            EnvKind::Chain => Environment::Finite(chain_mdp(self.states, self.gamma)?),
            EnvKind::Random => {
                let mut rng = stream(self.env_seed, &[]);
                Environment::Finite(random_finite_mdp(self.states, self.actions, self.gamma, &mut rng)?)
            }
            EnvKind::File => Environment::Finite(FiniteMdp::load(Path::new(&self.mdp_file))?),
            EnvKind::Puddle => Environment::Puddle(puddle_nav_mdp(self.puddle_noise, self.gamma)?),
        })
    }

    pub fn horizon_mode(&self, env: &Environment) -> HorizonMode {
        match self.horizon {
            HorizonKind::Absorb => HorizonMode::Absorb,
            HorizonKind::Truncate => HorizonMode::Truncate {
                t_max: if self.t_max > 0 {
                    self.t_max
                } else {
                    default_t_max(env.gamma(), env.r_max(), DEFAULT_TRUNCATION_EPS)
                },
            },
        }
    }

    fn feature_map(&self, env: &Environment) -> FeatureMap {
        let dim = env.dimension();
        match self.features {
            FeatureKind::Constant => FeatureMap::Constant,
            FeatureKind::Raw => FeatureMap::Raw { dim },
            FeatureKind::Affine => FeatureMap::Affine { dim },
            FeatureKind::Quadratic => FeatureMap::Quadratic { dim },
            FeatureKind::OnehotNoise => FeatureMap::OneHotNoise {
                dim,
                extra: self.noise_extra,
                sigma: self.noise_sigma,
                seed: self.noise_seed,
            },
        }
    }

    fn tabular_index(env: &Environment) -> Result<TabularIndex> {
        env.as_finite()
            .map(TabularIndex::for_mdp)
            .ok_or_else(|| invalid("tabular families need a finite environment"))
    }

    pub fn families(&self, env: &Environment) -> Result<(VfaFamily, PolicyFamily)> {
        let vfa = match self.vfa {
            FamilyKind::Tabular => VfaFamily::Tabular(Self::tabular_index(env)?),
            FamilyKind::Linear => VfaFamily::Linear { features: self.feature_map(env) },
        };
        let policy = match self.policy {
            FamilyKind::Tabular => PolicyFamily::Tabular(Self::tabular_index(env)?),
            FamilyKind::Linear => PolicyFamily::LinearScores { features: self.feature_map(env) },
        };
        Ok((vfa, policy))
    }

    fn distribution(&self, kind: DistKind, env: &Environment) -> Result<StateDistribution> {
        let finite = env.as_finite().is_some();
        match kind {
            DistKind::Uniform if finite => Ok(StateDistribution::UniformFinite),
            DistKind::Uniform | DistKind::Box => Ok(StateDistribution::UniformBox { lo: self.box_lo, hi: self.box_hi }),
            DistKind::Sweep if finite => Ok(StateDistribution::Sweep),
            DistKind::Sweep => Err(invalid("sweep distributions need a finite environment")),
        }
    }

    pub fn distributions(&self, env: &Environment) -> Result<SamplingDistributions> {
        Ok(SamplingDistributions {
            rho0: self.distribution(self.rho0, env)?,
            rho1: self.distribution(self.rho1, env)?,
            nu: self.distribution(self.nu, env)?,
        })
    }

    pub fn fbts_config(&self, env: &Environment) -> Result<FbtsConfig> {
        self.validate()?;
        let (vfa_family, policy_family) = self.families(env)?;
        let mut mcts = MctsConfig::new(self.m1, self.d, env.v_max());
        mcts.c_ucb = self.c_ucb;
        mcts.softmax_temp = self.softmax_temp * env.v_max();
        mcts.dpw_alpha = self.dpw_alpha;
        mcts.dpw_c = self.dpw_c;
        mcts.root_rule = match self.root_rule {
            RootRuleKind::MaxQGuarded => {
                RootRule::MaxQGuarded { min_visits: (self.root_min_visits > 0).then_some(self.root_min_visits) }
            }
            RootRuleKind::VisitWeightedMean => RootRule::VisitWeightedMean,
        };
        let cfg = FbtsConfig {
            k: self.k,
            n0: self.n0,
            n1: self.n1,
            rollout: RolloutConfig { m0: self.m0, horizon: self.horizon_mode(env), h: self.h, l1: self.l1 },
            mcts,
            distributions: self.distributions(env)?,
            vfa_family,
            policy_family,
            master_seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Baseline settings; with `matched_budget` the per-iteration sample
    /// counts are resized so total transitions match FBTS on this config.
    pub fn baseline_config(&self, env: &Environment) -> Result<BaselineConfig> {
        self.validate()?;
        let algorithm = match self.algorithm {
            Algorithm::Dpi => BaselineAlgorithm::Dpi,
            Algorithm::Avi => BaselineAlgorithm::Avi,
            Algorithm::Fbts => return Err(invalid("baseline needs algorithm dpi or avi")),
        };
        let (vfa_family, policy_family) = self.families(env)?;
        let mut cfg = BaselineConfig {
            algorithm,
            k: self.k,
            n0: self.n0,
            n1: self.n1,
            m0: self.m0,
            horizon: self.horizon_mode(env),
            l1: self.l1,
            distributions: self.distributions(env)?,
            vfa_family,
            policy_family,
            master_seed: self.seed,
            mode: if self.exact { EstimateMode::Exact } else { EstimateMode::Sampled },
        };
        if self.matched_budget {
            let target = match self.budget {
                0 => super::budget::fbts_transitions(&self.fbts_config(env)?, env)?,
                b => b,
            };
            super::budget::match_baseline(&mut cfg, env, target)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
