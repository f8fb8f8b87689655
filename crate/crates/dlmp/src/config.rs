//! Run configuration: one JSON document tying the network file to the
//! exogenous, device, training and evaluation blocks.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use dlmp_core::netmodel::{parse_case, scale_loads};
use dlmp_core::{DeviceConfig, EvalConfig, ExoConfig, Game, Network, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Environment variable naming the output directory when neither the
/// command line nor the configuration sets one.
pub const OUTPUT_DIR_ENV: &str = "DLMP_OUTPUT_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// MATPOWER case file, relative to the configuration file's directory.
    pub network_file: PathBuf,
    #[serde(default = "default_load_scale")]
    pub load_scale: f64,
    #[serde(default)]
    pub exogenous: ExoConfig,
    #[serde(default)]
    pub devices: DeviceConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_load_scale() -> f64 {
    3.0
}

/// A validated configuration together with what was derived from it.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: RunConfig,
    /// Hex SHA-256 of the configuration file bytes.
    pub sha256: String,
    pub network_path: PathBuf,
    pub network: Network,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let bytes = fs::read(path).with_context(|| format!("cannot read configuration {}", path.display()))?;
        let sha256 = hex::encode(Sha256::digest(&bytes));
        let config: RunConfig =
            serde_json::from_slice(&bytes).with_context(|| format!("invalid configuration {}", path.display()))?;
        if !(config.load_scale > 0.0) {
            bail!("load_scale must be positive, got {}", config.load_scale);
        }
        config.exogenous.validate()?;
        config.train.validate()?;
        config.eval.validate()?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let network_path = base.join(&config.network_file);
        let text = fs::read_to_string(&network_path)
            .with_context(|| format!("cannot read network file {}", network_path.display()))?;
        let network = parse_case(&text).with_context(|| format!("in network file {}", network_path.display()))?;
        let network = scale_loads(&network, config.load_scale)?;
        Ok(LoadedConfig {
            config,
            sha256,
            network_path,
            network,
        })
    }

    /// The game at the training block's voltage weight.
    pub fn game(&self) -> anyhow::Result<Game> {
        Ok(Game::new(
            self.network.clone(),
            self.config.exogenous.clone(),
            &self.config.devices,
            self.config.train.w,
        )?)
    }

    /// Command line, then configuration, then environment, then `out`.
    pub fn output_dir(&self, cli: Option<&Path>) -> PathBuf {
        cli.map(Path::to_path_buf)
            .or_else(|| self.config.output_dir.clone())
            .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn defaults_fill_missing_blocks() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "case18.m", dlmp_core::CASE18);
        let cfg = write(dir.path(), "run.json", r#"{"network_file": "case18.m"}"#);
        let loaded = LoadedConfig::load(&cfg).unwrap();
        assert_eq!(loaded.config.load_scale, 3.0);
        assert_eq!(loaded.config.exogenous, ExoConfig::default());
        assert_eq!(loaded.config.train, TrainConfig::default());
        assert_eq!(loaded.network.node_count, 17);
        assert_eq!(loaded.sha256.len(), 64);
        assert_eq!(loaded.game().unwrap().n_agents(), 15);
    }

    #[test]
    fn missing_network_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write(dir.path(), "run.json", r#"{"network_file": "nowhere.m"}"#);
        let err = format!("{:#}", LoadedConfig::load(&cfg).unwrap_err());
        assert!(err.contains("nowhere.m"), "{err}");
    }

    #[test]
    fn unknown_fields_and_bad_values_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "case18.m", dlmp_core::CASE18);
        for text in [
            r#"{"network_file": "case18.m", "bogus": 1}"#,
            r#"{"network_file": "case18.m", "train": {"gamma": 2.0}}"#,
            r#"{"network_file": "case18.m", "exogenous": {"z": -0.5}}"#,
            r#"{"network_file": "case18.m", "load_scale": 0}"#,
        ] {
            let cfg = write(dir.path(), "run.json", text);
            assert!(LoadedConfig::load(&cfg).is_err(), "{text}");
        }
    }
}
