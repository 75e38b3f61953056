//! Pipeline configuration: one TOML file drives every stage.

use std::path::{Path, PathBuf};

use crushgraph::dataset::DatasetConfig;
use crushgraph::graphset::SplitConfig;
use crushgraph::learn::ModelConfig;
use crushgraph::simulator::{CzmParams, LoadControl};
use crushgraph::tessellation::LloydControl;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const CONFIG_SCHEMA: &str = "crushgraph.config/1";
pub const CONFIG_ENV: &str = "CRUSHGRAPH_CONFIG";

const PRESETS: [(&str, &str); 2] = [
    ("default", include_str!("../configs/default.toml")),
    ("desk", include_str!("../configs/desk.toml")),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TessellationConfig {
    /// Centroidal relaxation of the random seeds.
    pub lloyd: bool,
    pub lloyd_max_iters: usize,
    pub lloyd_tol_rel: f64,
}

impl Default for TessellationConfig {
    fn default() -> Self {
        let c = LloydControl::default();
        Self {
            lloyd: true,
            lloyd_max_iters: c.max_iters,
            lloyd_tol_rel: c.tol_rel,
        }
    }
}

impl TessellationConfig {
    pub fn lloyd_control(&self) -> Option<LloydControl> {
        self.lloyd.then_some(LloydControl {
            max_iters: self.lloyd_max_iters,
            tol_rel: self.lloyd_tol_rel,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema: String,
    pub seed: u64,
    pub out: PathBuf,
    pub min_valid: usize,
    pub dataset: DatasetConfig,
    pub tessellation: TessellationConfig,
    pub czm: CzmParams,
    pub control: LoadControl,
    pub split: SplitConfig,
    pub model: ModelConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            schema: CONFIG_SCHEMA.to_string(),
            seed: 2024,
            out: PathBuf::from("runs/default"),
            min_valid: crushgraph::weibull::MIN_VALID,
            dataset: DatasetConfig::default(),
            tessellation: TessellationConfig::default(),
            czm: CzmParams::default(),
            control: LoadControl::default(),
            split: SplitConfig::default(),
            model: ModelConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self, CliError> {
        let value: toml::Value = toml::from_str(text).map_err(|e| CliError::Config(format!("{}: {e}", origin.display())))?;
        let found = value.get("schema").and_then(|s| s.as_str()).unwrap_or("");
        if found != CONFIG_SCHEMA {
            return Err(CliError::Schema {
                path: origin.to_path_buf(),
                expected: CONFIG_SCHEMA.to_string(),
                found: found.to_string(),
            });
        }
        let config: Self = value
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(format!("{}: {e}", origin.display())))?;
        config.validate()?;
        Ok(config)
    }

    /// A readable file path wins; otherwise `default` and `desk` name the
    /// bundled presets. `None` means the bundled default.
    pub fn load(name: Option<&str>) -> Result<Self, CliError> {
        let name = name.unwrap_or("default");
        let path = Path::new(name);
        if path.is_file() {
            let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            return Self::parse(&text, path);
        }
        match PRESETS.iter().find(|(n, _)| *n == name) {
            Some((_, text)) => Self::parse(text, Path::new(name)),
            None => Err(CliError::MissingInput(path.to_path_buf())),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.min_valid < 3 {
            return bad(format!("min_valid must be at least 3, got {}", self.min_valid));
        }
        if self.dataset.tests_per_type == 0 {
            return bad("tests_per_type must be positive".into());
        }
        if !(0.0..1.0).contains(&self.split.val_fraction) {
            return bad("val_fraction must lie in [0, 1)".into());
        }
        self.czm.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.control.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.model.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    /// Hash of the effective configuration, recorded in every manifest entry.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        format!("{:x}", Sha256::digest(json.as_bytes()))
    }
}
