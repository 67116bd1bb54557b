//! TOML configuration: the pipeline sections plus output paths.
//!
//! Precedence is flags over file over defaults.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use radar_uq::pipeline::PipelineConfig;

use crate::failure::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Directory for written artifacts.
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Config {
    #[serde(flatten)]
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub paths: Paths,
}

const TOP_LEVEL_KEYS: &[&str] = &[
    "seed",
    "ego_source",
    "radar",
    "scene",
    "noise",
    "cfar",
    "sigmas",
    "thresholds",
    "ransac",
    "registration",
    "paths",
];

impl Config {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let table: toml::Table = text.parse().map_err(|e| Failure::config(format!("malformed config: {e}")))?;
        if let Some(key) = table.keys().find(|k| !TOP_LEVEL_KEYS.contains(&k.as_str())) {
            return Err(Failure::config(format!("unknown config key `{key}`")).into());
        }
        let cfg: Config = toml::from_str(text).map_err(|e| Failure::config(format!("malformed config: {e}")))?;
        cfg.pipeline.validate().map_err(|e| Failure::config(format!("invalid config: {e}")))?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                Self::parse(&text).with_context(|| format!("in {}", p.display()))
            }
        }
    }

    #[cfg(test)]
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = Config::default();
        let text = cfg.to_toml();
        assert_eq!(Config::parse(&text).unwrap(), cfg);
    }

    #[test]
    fn populated_config_round_trips() {
        let text = r#"
seed = 11
ego_source = "truth"

[radar]
range_bins = 64
azimuth_bins = 16
elevation_bins = 4
range_resolution = 0.5
azimuth_min = -1.0
azimuth_max = 1.0
elevation_min = -0.25
elevation_max = 0.25

[scene]
n_scatterers = 12
reflectivity = [50.0, 60.0]

[noise]
point_spread_bins = [0.0, 0.5, 0.5]

[thresholds]
doppler = 0.3

[registration]
robust_loss_scale = 2.5
weighting = "identity"

[paths]
out = "results"
"#;
        let cfg = Config::parse(text).unwrap();
        assert_eq!(cfg.pipeline.seed, Some(11));
        assert_eq!(cfg.pipeline.scene.n_scatterers, 12);
        assert_eq!(cfg.pipeline.intrinsics().range_bins, 64);
        assert_eq!(cfg.paths.out.as_deref(), Some(Path::new("results")));
        let again = Config::parse(&cfg.to_toml()).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.to_toml(), cfg.to_toml());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(Config::parse("bogus = 1").is_err());
        assert!(Config::parse("[scene]\nn_scaterers = 3").is_err());
        assert!(Config::parse("[thresholds]\ndoppler = -1.0").is_err());
        assert!(Config::parse("seed = ").is_err());
    }
}
