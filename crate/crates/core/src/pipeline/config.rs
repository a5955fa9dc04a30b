use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grpo::GrpoConfig;
use crate::il::IlConfig;
use crate::metrics::MetricsConfig;
use crate::rng::derive_seed;
use crate::rwm::{RwmConfig, SelectionPolicy};
use crate::sampler::{GroupConfig, SamplerConfig};
use crate::sim::SimConfig;

/// Planners that can appear in an evaluation roster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Agent {
    /// The scenario's own demonstration.
    Human,
    IlOnly,
    PairDrive,
    /// Best of several planning passes under the simulator score.
    PairDriveBestof6,
}

impl Agent {
    pub const ALL: [Agent; 4] = [Agent::Human, Agent::IlOnly, Agent::PairDrive, Agent::PairDriveBestof6];

    pub fn name(self) -> &'static str {
        match self {
            Agent::Human => "human",
            Agent::IlOnly => "il_only",
            Agent::PairDrive => "pair_drive",
            Agent::PairDriveBestof6 => "pair_drive_bestof6",
        }
    }

    pub fn needs_checkpoints(self) -> bool {
        self != Agent::Human
    }
}

impl fmt::Display for Agent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Agent {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Agent::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown agent '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    pub train_per_family: usize,
    pub eval_per_family: usize,
    /// Share of scenarios whose demonstration is corrupted.
    pub corrupt_fraction: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            train_per_family: 40,
            eval_per_family: 10,
            corrupt_fraction: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanConfig {
    pub group: GroupConfig,
    pub policy: SelectionPolicy,
    /// Passes for the best-of-N agent.
    pub n_bestof: usize,
}

impl Default for PlanConfig {
    fn default() -> Self {
        PlanConfig {
            group: GroupConfig::default(),
            policy: SelectionPolicy::Reward,
            n_bestof: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub roster: Vec<Agent>,
    pub svg: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            roster: Agent::ALL.to_vec(),
            svg: true,
        }
    }
}

/// Artifact locations. Unset entries default to fixed names inside the run
/// directory given on the command line.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub suite: Option<PathBuf>,
    pub il_ckpt: Option<PathBuf>,
    pub sampler_ckpt: Option<PathBuf>,
    pub rwm_ckpt: Option<PathBuf>,
}

impl PathsConfig {
    fn or(p: &Option<PathBuf>, out: &Path, name: &str) -> PathBuf {
        p.clone().unwrap_or_else(|| out.join(name))
    }

    pub fn suite(&self, out: &Path) -> PathBuf {
        Self::or(&self.suite, out, "suite")
    }

    pub fn il_ckpt(&self, out: &Path) -> PathBuf {
        Self::or(&self.il_ckpt, out, "il.ckpt")
    }

    pub fn sampler_ckpt(&self, out: &Path) -> PathBuf {
        Self::or(&self.sampler_ckpt, out, "sampler.ckpt")
    }

    pub fn rwm_ckpt(&self, out: &Path) -> PathBuf {
        Self::or(&self.rwm_ckpt, out, "rwm.ckpt")
    }
}

/// Everything one experiment needs. Sub-config seeds are derived from the
/// top-level seed by [`ExperimentConfig::with_seed`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    pub suite: SuiteConfig,
    pub sim: SimConfig,
    pub metrics: MetricsConfig,
    pub il: IlConfig,
    pub sampler: SamplerConfig,
    pub grpo: GrpoConfig,
    pub rwm: RwmConfig,
    pub plan: PlanConfig,
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ExperimentConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::Parse { path: path.to_path_buf(), message: e.to_string() })?
        } else {
            toml::from_str(&text).map_err(|e| Error::Parse { path: path.to_path_buf(), message: e.to_string() })?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// Sets the top-level seed and re-derives every component seed from it.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.il.seed = derive_seed(seed, "il");
        self.grpo.seed = derive_seed(seed, "grpo");
        self.rwm.seed = derive_seed(seed, "rwm");
        self
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.il.feature_dim;
        let horizon = self.sim.horizon;
        let dt = self.sim.dt;
        let dims = [self.sampler.feature_dim, self.rwm.feature_dim];
        if dims.iter().any(|&d| d != dim) {
            return Err(Error::Config(format!(
                "feature_dim must agree across il, sampler and rwm (il {dim}, sampler {}, rwm {})",
                dims[0], dims[1]
            )));
        }
        if [self.il.horizon, self.sampler.horizon, self.rwm.horizon].iter().any(|&h| h != horizon) {
            return Err(Error::Config(format!("every component horizon must equal sim.horizon {horizon}")));
        }
        if [self.il.dt, self.sampler.dt, self.rwm.dt].iter().any(|&d| d != dt) {
            return Err(Error::Config(format!("every component dt must equal sim.dt {dt}")));
        }
        if !(0.0..=1.0).contains(&self.suite.corrupt_fraction) {
            return Err(Error::Config("corrupt_fraction must lie in [0, 1]".into()));
        }
        if self.plan.n_bestof == 0 {
            return Err(Error::Config("n_bestof must be at least 1".into()));
        }
        self.sampler.validate()?;
        self.grpo.validate()
    }

    /// Short digest of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
