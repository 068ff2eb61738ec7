//! Whole-simulator configuration file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::device::DeviceParams;
use crate::engine::{ArrayConfig, ImacEngine};
use crate::error::{Error, Result};
use crate::nn::quant::QuantScheme;
use crate::perf::PerfParams;
use crate::peripherals::AdcConfig;
use crate::variation::NoiseSpec;

/// Every section is optional and defaults to the reference design; unknown
/// keys anywhere are rejected.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub device: DeviceParams,
    pub adc: AdcConfig,
    pub array: ArrayConfig,
    pub noise: NoiseSpec,
    pub quant: QuantScheme,
    pub perf: PerfParams,
}

impl SimConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SimConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.device.validate()?;
        self.adc.validate()?;
        self.array.validate(&self.device)?;
        self.noise.validate()?;
        self.quant.validate()?;
        self.perf.validate()?;
        if self.perf.r != self.array.r_amortization as f64 {
            return Err(Error::Config(format!(
                "perf.r ({}) must equal array.r_amortization ({})",
                self.perf.r, self.array.r_amortization
            )));
        }
        Ok(())
    }

    pub fn engine(&self) -> Result<ImacEngine> {
        ImacEngine::new(self.device.clone(), self.adc, self.array)
    }
}
