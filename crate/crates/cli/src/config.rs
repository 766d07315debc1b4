use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use sram_ageing::agesim::FleetConfig;
use sram_ageing::pipeline::ToolkitConfig;

/// Everything read from `--config`: the toolkit settings plus the optional
/// `[simulate]` table for synthetic fleets.
#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    pub toolkit: ToolkitConfig,
    pub fleet: FleetConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>, seed: Option<u64>) -> Result<Self> {
        let mut cfg = match path {
            None => RunConfig::default(),
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                Self::parse(&text).with_context(|| format!("in config {}", p.display()))?
            }
        };
        if let Some(s) = seed {
            cfg.toolkit.seed = s;
        }
        cfg.fleet.seed = cfg.toolkit.seed;
        cfg.toolkit.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text)?;
        let fleet = match table.remove("simulate") {
            Some(v) => v.try_into()?,
            None => FleetConfig::default(),
        };
        let toolkit = toml::Value::Table(table).try_into()?;
        Ok(Self { toolkit, fleet })
    }
}

/// Reproducibility stanza stamped into every JSON artifact.
#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub seed: u64,
    pub config_hash: String,
}

impl Provenance {
    pub fn new(command: &str, cfg: &RunConfig) -> Self {
        Self {
            tool: "sram-ageing",
            version: sram_ageing::VERSION,
            command: command.to_string(),
            seed: cfg.toolkit.seed,
            config_hash: cfg.toolkit.hash(),
        }
    }
}
