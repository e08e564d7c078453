//! Experiment configuration: one JSON document per run, with command-line
//! overrides applied field by field.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use wmlr::em::{GemConfig, SigmaX};
use wmlr::fedsim::FederatedConfig;
use wmlr::model::{ClusterMode, GenConfig};
use wmlr::wmlr::WmlrConfig;

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Centralized,
    Federated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Wmlr,
    Em,
    Gem,
    FWmlr,
    FEm,
    FGem,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] =
        [Algorithm::Wmlr, Algorithm::Em, Algorithm::Gem, Algorithm::FWmlr, Algorithm::FEm, Algorithm::FGem];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Wmlr => "wmlr",
            Algorithm::Em => "em",
            Algorithm::Gem => "gem",
            Algorithm::FWmlr => "f-wmlr",
            Algorithm::FEm => "f-em",
            Algorithm::FGem => "f-gem",
        }
    }

    pub fn scenario(self) -> Scenario {
        match self {
            Algorithm::Wmlr | Algorithm::Em | Algorithm::Gem => Scenario::Centralized,
            _ => Scenario::Federated,
        }
    }

    fn solver_kind(self) -> SolverKind {
        match self {
            Algorithm::Wmlr | Algorithm::FWmlr => SolverKind::Wmlr,
            Algorithm::Gem | Algorithm::FGem | Algorithm::FEm => SolverKind::Gem,
            Algorithm::Em => SolverKind::Em,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown algorithm {s:?}; expected one of wmlr, em, gem, f-wmlr, f-em, f-gem"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SolverKind {
    Wmlr,
    Gem,
    Em,
}

/// Closed-form EM settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmSettings {
    pub iters: usize,
    #[serde(default)]
    pub sigma_x: SigmaX,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverConfig {
    Wmlr(WmlrConfig),
    /// Step size for gradient EM; also the inner ascent step of federated EM.
    Gem(GemConfig),
    Em(EmSettings),
}

impl SolverConfig {
    fn kind(&self) -> SolverKind {
        match self {
            SolverConfig::Wmlr(_) => SolverKind::Wmlr,
            SolverConfig::Gem(_) => SolverKind::Gem,
            SolverConfig::Em(_) => SolverKind::Em,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FedSettings {
    pub agents: usize,
    pub per_agent_n: usize,
    #[serde(default)]
    pub clusters: ClusterMode,
    pub config: FederatedConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub algorithm: Algorithm,
    /// Data generation. In federated runs `gen.n` is unused; the sample count is
    /// `agents * per_agent_n`.
    pub gen: GenConfig,
    #[serde(default)]
    pub fed: Option<FedSettings>,
    pub solver: SolverConfig,
    /// Dataset CSV to load instead of generating (centralized runs only).
    #[serde(default)]
    pub data: Option<PathBuf>,
    /// JSON array holding the ground truth for a loaded dataset.
    #[serde(default)]
    pub eval_against: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Seed of every solver-side stream (initialization, model noise, agent
    /// sampling). Seeds nested in `solver` and `fed` are replaced by it.
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Validation(m));
        if self.scenario != self.algorithm.scenario() {
            return bad(format!("algorithm {} does not run in the {:?} scenario", self.algorithm, self.scenario));
        }
        if self.solver.kind() != self.algorithm.solver_kind() {
            return bad(format!("solver settings do not match algorithm {}", self.algorithm));
        }
        match (self.scenario, &self.fed) {
            (Scenario::Federated, None) => return bad("federated scenario requires fed settings".into()),
            (Scenario::Centralized, Some(_)) => return bad("fed settings given for a centralized run".into()),
            (Scenario::Federated, Some(f)) => {
                if f.agents == 0 || f.per_agent_n == 0 {
                    return bad("agents and per_agent_n must be >= 1".into());
                }
                f.config.validate().map_err(|e| HarnessError::Validation(e.to_string()))?;
                if self.data.is_some() {
                    return bad("federated runs generate their own data".into());
                }
            }
            (Scenario::Centralized, None) => {}
        }
        if self.eval_against.is_some() && self.data.is_none() {
            return bad("eval_against needs a loaded dataset".into());
        }
        let v = match &self.solver {
            SolverConfig::Wmlr(c) => c.validate(),
            SolverConfig::Gem(c) => c.validate(),
            SolverConfig::Em(_) => Ok(()),
        };
        v.map_err(|e| HarnessError::Validation(e.to_string()))?;
        if self.data.is_none() {
            let mut g = self.gen.clone();
            if let Some(f) = &self.fed {
                g.n = f.agents * f.per_agent_n;
            }
            g.validate().map_err(|e| HarnessError::Validation(e.to_string()))?;
        }
        Ok(())
    }

    /// Minimax settings with the experiment seed applied.
    pub fn wmlr(&self) -> Option<WmlrConfig> {
        match &self.solver {
            SolverConfig::Wmlr(c) => Some(WmlrConfig { seed: self.seed, ..c.clone() }),
            _ => None,
        }
    }

    /// Federated settings with the experiment seed applied.
    pub fn federated(&self) -> Option<FederatedConfig> {
        self.fed.as_ref().map(|f| FederatedConfig { seed: self.seed, ..f.config.clone() })
    }

    /// Iteration budget: solver iterations, or rounds for federated runs.
    pub fn budget(&self) -> usize {
        if let Some(f) = &self.fed {
            return f.config.rounds;
        }
        match &self.solver {
            SolverConfig::Wmlr(c) => c.iters,
            SolverConfig::Gem(c) => c.iters,
            SolverConfig::Em(c) => c.iters,
        }
    }

    pub fn set_budget(&mut self, iters: usize) {
        if let Some(f) = &mut self.fed {
            f.config.rounds = iters;
            return;
        }
        match &mut self.solver {
            SolverConfig::Wmlr(c) => c.iters = iters,
            SolverConfig::Gem(c) => c.iters = iters,
            SolverConfig::Em(c) => c.iters = iters,
        }
    }

    /// Sets the nominal `lambda`: stored penalty `lambda / 2` with heuristic
    /// steps for `lambda` (see [`WmlrConfig::half_penalty`]).
    pub fn set_lambda(&mut self, lambda: f64) -> Result<()> {
        match &mut self.solver {
            SolverConfig::Wmlr(c) => {
                let h = WmlrConfig::half_penalty(lambda, c.iters, c.seed);
                c.lambda = h.lambda;
                c.alpha_max = h.alpha_max;
                c.alpha_min = h.alpha_min;
                Ok(())
            }
            _ => Err(HarnessError::Validation(format!("--lambda does not apply to {}", self.algorithm))),
        }
    }

    pub fn set_alpha(&mut self, alpha: f64) -> Result<()> {
        match &mut self.solver {
            SolverConfig::Gem(c) => {
                c.alpha = alpha;
                Ok(())
            }
            _ => Err(HarnessError::Validation(format!("--alpha does not apply to {}", self.algorithm))),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| HarnessError::Validation(format!("config: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Validation(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

/// Command-line overrides, applied in a fixed order after the file or preset.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub algorithm: Option<Algorithm>,
    pub snr: Option<f64>,
    pub n: Option<usize>,
    pub agents: Option<usize>,
    pub lambda: Option<f64>,
    pub alpha: Option<f64>,
    pub iters: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        if let Some(s) = self.snr {
            cfg.gen.snr = s;
        }
        if let Some(a) = self.algorithm {
            if a != cfg.algorithm {
                crate::presets::switch_algorithm(cfg, a);
            }
        }
        if let Some(n) = self.n {
            cfg.gen.n = n;
        }
        if let Some(m) = self.agents {
            match &mut cfg.fed {
                Some(f) => f.agents = m,
                None => return Err(HarnessError::Validation("--agents needs a federated algorithm".into())),
            }
        }
        if let Some(l) = self.lambda {
            cfg.set_lambda(l)?;
        }
        if let Some(a) = self.alpha {
            cfg.set_alpha(a)?;
        }
        if let Some(t) = self.iters {
            cfg.set_budget(t);
        }
        cfg.validate()
    }
}
