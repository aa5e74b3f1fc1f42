use std::path::{Path, PathBuf};

use flownas::distill::DistillConfig;
use flownas::evolve::EvolutionConfig;
use flownas::flow_task::{DecoderConfig, MotionConfig};
use flownas::search_space::{ChannelScale, SearchSpaceSpec};
use flownas::train::TrainConfig;
use flownas::{Error, Result};
use serde::{Deserialize, Serialize};

/// Environment variable naming a base configuration file.
pub const CONFIG_ENV: &str = "FNAS_CONFIG";
/// File name of the resolved configuration written next to every output.
pub const SNAPSHOT: &str = "config.json";

/// Search space: a named preset scaled by `channel_scale`, or an inline table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpaceConfig {
    /// `table_s1` is the only preset.
    pub preset: String,
    pub channel_scale: ChannelScale,
    /// Replaces the preset (and its scale) when present.
    pub inline: Option<SearchSpaceSpec>,
}

impl Default for SpaceConfig {
    fn default() -> Self {
        Self {
            preset: "table_s1".into(),
            channel_scale: ChannelScale::DESK,
            inline: None,
        }
    }
}

impl SpaceConfig {
    pub fn resolve(&self) -> Result<SearchSpaceSpec> {
        let spec = match (&self.inline, self.preset.as_str()) {
            (Some(spec), _) => spec.clone(),
            (None, "table_s1") => SearchSpaceSpec::table_s1().with_channel_scale(self.channel_scale),
            (None, other) => return Err(Error::Usage(format!("unknown search space preset {other:?}"))),
        };
        spec.check()?;
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub size: usize,
    pub motion: MotionConfig,
    pub train_seed: u64,
    pub val_seed: u64,
    pub test_seed: u64,
    pub train_count: usize,
    pub val_count: usize,
    pub test_count: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            size: 64,
            motion: MotionConfig::default(),
            train_seed: 1,
            val_seed: 2,
            test_seed: 3,
            train_count: 512,
            val_count: 64,
            test_count: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Holds `train/`, `val/` and `test/` split directories.
    pub data: PathBuf,
    pub runs: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            data: "data".into(),
            runs: "runs".into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub search_space: SpaceConfig,
    pub dataset: DatasetConfig,
    pub decoder: DecoderConfig,
    pub train: TrainConfig,
    pub distill: DistillConfig,
    pub evolution: EvolutionConfig,
    pub paths: PathsConfig,
}

impl RunConfig {
    pub fn from_json(text: &str, path: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Usage(format!("{path}: {e}")))
    }

    /// `explicit`, else `$FNAS_CONFIG`, else the defaults.
    pub fn load(explicit: Option<&Path>) -> Result<Self> {
        let path = match explicit {
            Some(p) => Some(p.to_path_buf()),
            None => std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()).map(PathBuf::from),
        };
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(&p)
                    .map_err(|e| Error::Usage(format!("cannot read config {}: {e}", p.display())))?;
                Self::from_json(&text, &p.display().to_string())
            }
            None => Ok(Self::default()),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn write_snapshot(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(SNAPSHOT), self.to_json())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_json(&c.to_json(), "c.json").unwrap(), c);
        assert_eq!(RunConfig::from_json("{}", "c.json").unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in [r#"{"trian": {}}"#, r#"{"train": {"stpes": 3}}"#, r#"{"paths": {"x": "y"}}"#] {
            let err = RunConfig::from_json(text, "c.json").unwrap_err().to_string();
            assert!(err.starts_with("c.json: unknown field"), "{err}");
        }
    }

    #[test]
    fn preset_is_scaled() {
        let spec = SpaceConfig::default().resolve().unwrap();
        assert_eq!(spec, SearchSpaceSpec::desk());
        let bad = SpaceConfig {
            preset: "nope".into(),
            ..SpaceConfig::default()
        };
        assert!(bad.resolve().is_err());
    }
}
