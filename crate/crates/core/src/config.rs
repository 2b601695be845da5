//! The operator config file shared by every CLI command.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::advisor::AdvisorConfig;
use crate::bench::BenchConfig;
use crate::error::{Error, Result};
use crate::learn::LearnConfig;
use crate::sim::CostParams;

pub const CONFIG_VERSION: u32 = 1;

fn default_version() -> u32 {
    CONFIG_VERSION
}

/// `params` are the simulator constants for every command; they replace
/// `bench.params` on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    pub params: CostParams,
    pub bench: BenchConfig,
    pub learn: LearnConfig,
    pub advisor: AdvisorConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            version: CONFIG_VERSION,
            params: CostParams::default(),
            bench: BenchConfig::default(),
            learn: LearnConfig::default(),
            advisor: AdvisorConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut c: PipelineConfig = toml::from_str(text).map_err(|e| Error::Parse(format!("config: {e}")))?;
        if c.version != CONFIG_VERSION {
            return Err(Error::UnsupportedVersion {
                what: "config",
                found: c.version,
            });
        }
        c.bench.params = c.params.clone();
        c.bench.validate()?;
        if !(0.0..=1.0).contains(&c.advisor.epsilon) {
            return Err(Error::Parse(format!(
                "config: epsilon {} outside [0,1]",
                c.advisor.epsilon
            )));
        }
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let c = PipelineConfig::from_toml("[bench]\nnum_schemas = 3\n[params]\ncache_pages = 64\n").unwrap();
        assert_eq!(c.bench.num_schemas, 3);
        assert_eq!(c.bench.params.cache_pages, 64);
        assert_eq!(c.advisor, AdvisorConfig::default());
    }

    #[test]
    fn rejects_unknown_version() {
        assert!(matches!(
            PipelineConfig::from_toml("version = 7"),
            Err(Error::UnsupportedVersion {
                what: "config",
                found: 7
            })
        ));
    }
}
