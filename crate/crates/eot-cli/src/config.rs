//! Run configuration: scenario, model, filter, Monte-Carlo, and metric
//! settings, with the shipped presets and JSON loading.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use eot::sim::ScenarioConfig;
use eot::types::ModelParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSettings {
    /// Particle count per Bernoulli component.
    pub particles: usize,
    /// Parallel message-passing rounds per scan.
    pub bp_iterations: usize,
    /// Components below this existence are dropped after each update.
    pub prune_threshold: f64,
    /// Components above this existence produce a state estimate.
    pub extract_threshold: f64,
    /// Relative association-message floor (0 disables censoring).
    pub censor_floor: f64,
    /// Deterministic measurement reordering before each update.
    pub reorder: bool,
    /// Run the mismatched full-detection baseline: detection probability
    /// forced to 1 with the birth rate prior scaled accordingly.
    pub ppp_mode: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunsSettings {
    pub count: usize,
    pub base_seed: u64,
    /// Regenerate the ground truth per run instead of fixing it per
    /// scenario seed.
    pub resample_truth: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GospaSettings {
    pub cutoff: f64,
    pub order: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub model: ModelParams,
    pub filter: FilterSettings,
    pub runs: RunsSettings,
    pub gospa: GospaSettings,
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for ConfigError {}

pub const PRESET_NAMES: [&str; 4] = ["pd09g10", "pd09g05", "pd08g10", "desk"];

impl RunConfig {
    /// Full-scale presets mirror the benchmark setup (10 objects, 100
    /// steps, 5000 particles, 100 runs); `desk` is the scaled-down variant
    /// (6 objects, 80 m circle, 60 steps, 1000 particles, 10 runs).
    pub fn preset(name: &str) -> Option<Self> {
        let full = |p_detect: f64, rate: f64| RunConfig {
            scenario: ScenarioConfig::standard(rate, 1),
            model: ModelParams::standard(p_detect, rate),
            filter: FilterSettings {
                particles: 5000,
                bp_iterations: 3,
                prune_threshold: 1e-3,
                extract_threshold: 0.5,
                censor_floor: 0.0,
                reorder: false,
                ppp_mode: false,
            },
            runs: RunsSettings { count: 100, base_seed: 1000, resample_truth: false },
            gospa: GospaSettings { cutoff: 20.0, order: 1.0, alpha: 2.0 },
        };
        match name {
            "pd09g10" => Some(full(0.9, 10.0)),
            "pd09g05" => Some(full(0.9, 5.0)),
            "pd08g10" => Some(full(0.8, 10.0)),
            "desk" => {
                let mut cfg = full(0.9, 10.0);
                cfg.scenario = ScenarioConfig::desk(10.0, 1);
                cfg.filter.particles = 1000;
                cfg.runs.count = 10;
                Some(cfg)
            }
            _ => None,
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| ConfigError(format!("malformed config {}: {e}", path.display())))?;
        cfg.validate().map_err(|e| ConfigError(format!("invalid config {}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| ConfigError(format!("serialize config: {e}")))?;
        std::fs::write(path, text)
            .map_err(|e| ConfigError(format!("cannot write {}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), eot::EotError> {
        self.scenario.validate()?;
        self.model.validate()?;
        if self.filter.particles == 0 || self.filter.bp_iterations == 0 {
            return Err(eot::EotError::InvalidParameter(
                "particles and bp_iterations must be >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.filter.prune_threshold)
            || !(0.0..1.0).contains(&self.filter.extract_threshold)
        {
            return Err(eot::EotError::InvalidParameter("thresholds must lie in [0, 1)".into()));
        }
        if self.runs.count == 0 {
            return Err(eot::EotError::InvalidParameter("at least one run required".into()));
        }
        Ok(())
    }

    /// Model parameters the filter actually runs with.
    pub fn filter_model(&self) -> ModelParams {
        if self.filter.ppp_mode {
            self.model.to_ppp_mode()
        } else {
            self.model.clone()
        }
    }
}
