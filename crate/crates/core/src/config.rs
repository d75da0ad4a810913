//! Experiment configuration: one TOML file with a section per component.
//!
//! ```toml
//! [env]            # simulator (EnvConfig)
//! [agent]          # pacing behavior policy (PacingAgentConfig)
//! [collect]        # n_trajectories, explore_sigma
//! [diffusion]      # steps, gamma, cosine_squared
//! [denoiser]       # architecture (DenoiserConfig); cond_dim follows the layout
//! [train]          # denoiser optimization (TrainHyper)
//! [invdyn]         # inverse dynamics architecture (InvDynConfig)
//! [invdyn_train]   # inverse dynamics optimization (InvDynHyper)
//! [sampler]        # omega, temperature, unit_prior, noised_history
//! [conditions]     # layout, thresholds, target
//! [eval]           # budgets, n_runs, top_k, target_advertiser, seed_base, replan_every
//! ```
//!
//! Every section and field is optional; omitted values take their defaults.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agents::PacingAgentConfig;
use crate::conditions::{compose_condition, ConditionLayout, ConditionThresholds, ConditionVector, SLOT_RETURN};
use crate::denoiser::{DenoiserConfig, TrainHyper};
use crate::error::{Error, Result};
use crate::eval::{DiffusionConfig, EvalConfig};
use crate::invdyn::{InvDynConfig, InvDynHyper};
use crate::sampler::SamplerConfig;
use crate::sim::EnvConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectConfig {
    pub n_trajectories: usize,
    pub explore_sigma: f64,
}

impl Default for CollectConfig {
    fn default() -> Self {
        CollectConfig {
            n_trajectories: 2000,
            explore_sigma: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConditionConfig {
    pub layout: Vec<String>,
    pub thresholds: ConditionThresholds,
    /// Condition requested at generation time, by slot name.
    pub target: BTreeMap<String, f64>,
}

impl Default for ConditionConfig {
    fn default() -> Self {
        ConditionConfig {
            layout: vec![SLOT_RETURN.to_string()],
            thresholds: ConditionThresholds::default(),
            target: BTreeMap::from([(SLOT_RETURN.to_string(), 1.0)]),
        }
    }
}

impl ConditionConfig {
    pub fn layout(&self) -> Result<ConditionLayout> {
        ConditionLayout::new(&self.layout)
    }

    /// Builds a condition vector from `name=value` pairs.
    pub fn vector(&self, pairs: &BTreeMap<String, f64>) -> Result<ConditionVector> {
        let layout = self.layout()?;
        let ret = pairs.get(SLOT_RETURN).copied();
        let ind: Vec<(&str, f64)> = pairs
            .iter()
            .filter(|(k, _)| k.as_str() != SLOT_RETURN)
            .map(|(k, v)| (k.as_str(), *v))
            .collect();
        compose_condition(&layout, ret, &ind)
    }

    pub fn target_vector(&self) -> Result<ConditionVector> {
        self.vector(&self.target)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub agent: PacingAgentConfig,
    pub collect: CollectConfig,
    pub diffusion: DiffusionConfig,
    pub denoiser: DenoiserConfig,
    pub train: TrainHyper,
    pub invdyn: InvDynConfig,
    pub invdyn_train: InvDynHyper,
    pub sampler: SamplerConfig,
    pub conditions: ConditionConfig,
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    /// Denoiser architecture with the condition width taken from the layout.
    pub fn denoiser_config(&self) -> Result<DenoiserConfig> {
        Ok(DenoiserConfig {
            cond_dim: self.conditions.layout()?.len(),
            ..self.denoiser.clone()
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.agent.validate()?;
        self.diffusion.schedule()?;
        self.denoiser_config()?.validate()?;
        self.train.validate()?;
        self.invdyn.validate()?;
        self.sampler.validate()?;
        self.conditions.target_vector()?;
        self.eval.validate(&self.env)?;
        if !(self.collect.explore_sigma >= 0.0 && self.collect.explore_sigma.is_finite()) {
            return Err(Error::InvalidConfig("explore_sigma must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_defaults() {
        let cfg = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
    }

    #[test]
    fn roundtrip_and_overrides() {
        let text = r#"
            [env]
            periods = 48
            [diffusion]
            steps = 10
            [conditions]
            layout = ["return", "cpc_ok"]
            target = { return = 1.0, cpc_ok = 1.0 }
        "#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(cfg.env.periods, 48);
        assert_eq!(cfg.denoiser_config().unwrap().cond_dim, 2);
        assert_eq!(cfg.conditions.target_vector().unwrap().as_input(), Some(vec![1.0, 1.0]));
        let again = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(ExperimentConfig::from_toml("[env]\nperiodz = 3\n").is_err());
        assert!(ExperimentConfig::from_toml("[conditions]\nlayout = [\"ctr_ok\"]\n").is_err());
    }
}
