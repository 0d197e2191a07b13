//! Versioned config document: weights, devices, models, roles and beam settings.

use std::path::Path;

use serde::{Deserialize, Serialize};
use wfsched_core::catalog::{default_models, default_topology, RoleCatalog};
use wfsched_core::cost::ScoreWeights;
use wfsched_core::policy::BeamConfig;
use wfsched_core::workflow::{DeviceSpec, DeviceTopology, ModelCatalog, ModelProfile, Platform, TransferEntry};

use crate::error::{read_to_string, HarnessError, Result};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub schema_version: u32,
    #[serde(default)]
    pub weights: ScoreWeights,
    #[serde(default)]
    pub beam: BeamConfig,
    pub default_transfer: f64,
    pub devices: Vec<DeviceSpec>,
    #[serde(default)]
    pub transfer: Vec<TransferEntry>,
    pub models: Vec<ModelProfile>,
    #[serde(default)]
    pub roles: RoleCatalog,
}

impl Default for Config {
    fn default() -> Self {
        let topo = default_topology();
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            weights: ScoreWeights::default(),
            beam: BeamConfig::default(),
            default_transfer: topo.default_transfer,
            devices: topo.devices,
            transfer: topo.transfer,
            models: default_models().aliases().map(|a| default_models().get(a).unwrap().clone()).collect(),
            roles: RoleCatalog::default(),
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> std::result::Result<Self, String> {
        let cfg: Self = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_to_string(path)?;
        Self::from_toml(&text).map_err(|detail| HarnessError::Parse { path: path.to_path_buf(), detail })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn check(&self) -> std::result::Result<(), String> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(format!("config schema_version {} (expected {CONFIG_SCHEMA_VERSION})", self.schema_version));
        }
        self.weights.validate()?;
        if self.beam.beam_width == 0 {
            return Err("beam_width must be positive".into());
        }
        self.platform()?;
        Ok(())
    }

    pub fn platform(&self) -> std::result::Result<Platform, String> {
        let topology = DeviceTopology {
            devices: self.devices.clone(),
            default_transfer: self.default_transfer,
            transfer: self.transfer.clone(),
        };
        topology.check().map_err(|e| e.to_string())?;
        let models = ModelCatalog::new(self.models.iter().cloned()).map_err(|e| e.to_string())?;
        Ok(Platform { topology, models })
    }
}
