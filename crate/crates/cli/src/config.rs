//! Run configuration files.
//!
//! A run file is TOML with a few top-level switches and one section per
//! component:
//!
//! ```toml
//! fde = true
//! faults = true
//! alert_limit = 6.0
//! seed = 3                      # overrides scenario.seed
//! scenario_file = "base.toml"   # or an inline [scenario] table
//!
//! [window]
//! capacity = 10
//!
//! [detection]
//! p_fa = 1e-5
//!
//! [budget]
//! p_hmi_total = 1e-7
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use givint_core::pipeline::PipelineConfig;
use givint_core::{BudgetInputs, DetectionConfig, ScenarioConfig, WindowConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Overrides the scenario seed when set.
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub fde: bool,
    /// Apply the scenario's fault schedule.
    pub faults: bool,
    /// Horizontal alert limit (m).
    pub alert_limit: f64,
    pub perturb_initial: bool,
    pub readmit_after: usize,
    /// Scenario file, relative to the run file.
    pub scenario_file: Option<PathBuf>,
    pub scenario: Option<ScenarioConfig>,
    pub window: WindowConfig,
    pub detection: DetectionConfig,
    pub budget: BudgetInputs,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = PipelineConfig::default();
        Self {
            seed: None,
            out: None,
            fde: p.fde,
            faults: true,
            alert_limit: p.alert_limit,
            perturb_initial: p.perturb_initial,
            readmit_after: p.readmit_after,
            scenario_file: None,
            scenario: None,
            window: p.window,
            detection: p.detection,
            budget: p.budget,
        }
    }
}

impl RunConfig {
    /// Parses a run file and inlines its scenario file.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(file) = cfg.scenario_file.take() {
            if cfg.scenario.is_some() {
                return Err(CliError::Config("give either scenario_file or [scenario], not both".into()));
            }
            let file = path.parent().unwrap_or(Path::new(".")).join(file);
            let text = fs::read_to_string(&file).map_err(|e| CliError::Io(format!("{}: {e}", file.display())))?;
            cfg.scenario = Some(ScenarioConfig::from_toml(&text).map_err(|e| CliError::Config(e.to_string()))?);
        }
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.pipeline().validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            window: self.window,
            detection: self.detection,
            budget: self.budget,
            alert_limit: self.alert_limit,
            fde: self.fde,
            perturb_initial: self.perturb_initial,
            readmit_after: self.readmit_after,
        }
    }

    /// Scenario with the seed override and fault switch applied.
    pub fn resolved_scenario(&self) -> ScenarioConfig {
        let mut s = self.scenario.clone().unwrap_or_default();
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        if !self.faults {
            s.faults.clear();
        }
        s
    }
}

/// Run settings and scenario that fully determine a run's outputs.
#[derive(Serialize)]
struct Resolved<'a> {
    fde: bool,
    alert_limit: f64,
    perturb_initial: bool,
    readmit_after: usize,
    window: &'a WindowConfig,
    detection: &'a DetectionConfig,
    budget: &'a BudgetInputs,
    scenario: &'a ScenarioConfig,
}

/// SHA-256 of the canonical JSON of the settings and scenario.
pub fn config_hash(run: &RunConfig, scenario: &ScenarioConfig) -> String {
    let r = Resolved {
        fde: run.fde,
        alert_limit: run.alert_limit,
        perturb_initial: run.perturb_initial,
        readmit_after: run.readmit_after,
        window: &run.window,
        detection: &run.detection,
        budget: &run.budget,
        scenario,
    };
    let json = serde_json::to_string(&r).expect("run config serializes");
    hex::encode(Sha256::digest(json.as_bytes()))
}
