//! The merged run configuration: TOML file first, then command-line flags.

use std::path::{Path, PathBuf};

use avwnet::data_io::SynthConfig;
use avwnet::fuse::FusionConfig;
use avwnet::loss::FocalConfig;
use avwnet::metrics::EvalOptions;
use avwnet::model::WNetConfig;
use avwnet::preprocess::PreprocessConfig;
use avwnet::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::exit::CliError;

/// Name of the effective configuration written into every output directory.
pub const CONFIG_FILE: &str = "run_config.toml";
pub const OUT_ENV: &str = "AVWNET_OUT";
pub const DEFAULT_OUT_ROOT: &str = "avwnet-out";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    /// Resolution levels of each U-Net.
    pub depth: usize,
    pub base_filters: usize,
    pub attention: bool,
    pub deep_supervision: bool,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            depth: 3,
            base_filters: 8,
            attention: true,
            deep_supervision: false,
        }
    }
}

impl ModelSettings {
    pub fn wnet(&self) -> WNetConfig {
        WNetConfig::new(self.depth, self.base_filters, self.attention).with_deep_supervision(self.deep_supervision)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Output root; subcommands write below it unless `--out` is given.
    pub out_root: Option<PathBuf>,
    pub verbosity: u8,
    pub synth: SynthConfig,
    pub preprocess: PreprocessConfig,
    pub model: ModelSettings,
    pub train: TrainConfig,
    pub focal: FocalConfig,
    pub fusion: FusionConfig,
    pub eval: EvalOptions,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self {
                verbosity: 1,
                ..Self::default()
            });
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    /// `--out` beats the config file, which beats the environment.
    pub fn output_dir(&self, flag: Option<&Path>, command: &str) -> PathBuf {
        if let Some(p) = flag {
            return p.to_path_buf();
        }
        let root = self
            .out_root
            .clone()
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_ROOT));
        root.join(command)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let wnet = self.model.wnet();
        wnet.validate().map_err(CliError::from_core)?;
        self.preprocess.validate(self.model.depth).map_err(CliError::from_core)?;
        self.train.validate().map_err(CliError::from_core)?;
        self.focal.validate().map_err(CliError::from_core)?;
        self.fusion.validate().map_err(CliError::from_core)?;
        Ok(())
    }
}
