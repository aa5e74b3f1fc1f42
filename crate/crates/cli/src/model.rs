use std::path::Path;

use flownas::distill::DistillConfig;
use flownas::flow_task::DecoderConfig;
use flownas::search_space::{ArchConfig, SearchSpaceSpec};
use flownas::supernet::{read_checkpoint, write_checkpoint};
use flownas::train::{FlowModel, TeacherModel, TrainMode};
use flownas::{Error, Result};
use serde::{Deserialize, Serialize};

pub const META: &str = "model.json";
pub const WEIGHTS: &str = "model.fnas";
pub const RESUME: &str = "resume.fnas";
pub const HISTORY: &str = "history.csv";
pub const METRICS: &str = "metrics.json";

/// Everything besides the tensors needed to rebuild a trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelMeta {
    pub mode: TrainMode,
    pub search_space: SearchSpaceSpec,
    pub decoder: DecoderConfig,
    /// Genome of the fixed-architecture modes.
    #[serde(default)]
    pub arch: Option<ArchConfig>,
    #[serde(default)]
    pub distill: Option<DistillConfig>,
}

pub struct SavedModel {
    pub meta: ModelMeta,
    pub model: FlowModel,
}

impl SavedModel {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(META);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::Usage(format!("{}: not a model directory ({e})", path.display())))?;
        let meta: ModelMeta = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            offset: 0,
            message: e.to_string(),
        })?;
        let entries = read_checkpoint(&dir.join(WEIGHTS))?;
        let model = FlowModel::from_entries(&meta.search_space, &meta.decoder, &entries);
        Ok(Self { meta, model })
    }

    pub fn save(dir: &Path, meta: &ModelMeta, model: &FlowModel) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(META), serde_json::to_string_pretty(meta)? + "\n")?;
        let entries = model.entries();
        write_checkpoint(&dir.join(WEIGHTS), entries.iter().map(|(k, v)| (k.as_str(), v)))
    }

    /// Genome evaluated by default: the fixed one, else the max config.
    pub fn default_genome(&self) -> ArchConfig {
        self.meta
            .arch
            .clone()
            .unwrap_or_else(|| self.meta.search_space.max_config())
    }

    pub fn into_teacher(self) -> Result<TeacherModel> {
        if self.meta.mode != TrainMode::Teacher {
            return Err(Error::Usage(format!(
                "expected a teacher model, found a {} model",
                self.meta.mode.name()
            )));
        }
        let config = self.default_genome();
        Ok(TeacherModel {
            config,
            model: self.model,
        })
    }
}
