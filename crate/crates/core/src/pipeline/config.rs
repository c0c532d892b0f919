use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::fem::Material;
use crate::models::ModelConfig;

/// Everything a run needs; read from a TOML file whose unknown keys are
/// rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Directory receiving the dataset, checkpoints and reports.
    pub run_dir: PathBuf,
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub canvas_width: usize,
    pub canvas_height: usize,
    /// Background threshold margin for the interior mask.
    pub epsilon: f64,
    /// Cantilever height H and L-shape arm width d (mm).
    pub height: f64,
    /// Truss template scale (mm per template unit).
    pub truss_scale: f64,
    /// Resultant of every applied load (N).
    pub load_magnitude: f64,
    pub material: MaterialConfig,
    /// Also write 8-bit PGM and PNG copies of every raster.
    pub export_images: bool,
    /// Seed of the train/test split.
    pub split_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaterialConfig {
    pub youngs_modulus: f64,
    pub poissons_ratio: f64,
    pub thickness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Epoch (0-based) from which the learning rate is multiplied by
    /// `lr_decay_factor`.
    pub lr_decay_epoch: usize,
    pub lr_decay_factor: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            run_dir: PathBuf::from("runs/default"),
            seed: 0,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            canvas_width: 288,
            canvas_height: 192,
            epsilon: crate::codec::DEFAULT_EPSILON,
            height: 100.0,
            truss_scale: 100.0,
            load_magnitude: 1000.0,
            material: MaterialConfig::default(),
            export_images: true,
            split_seed: 2024,
        }
    }
}

impl Default for MaterialConfig {
    fn default() -> Self {
        let m = Material::default();
        MaterialConfig { youngs_modulus: m.youngs_modulus, poissons_ratio: m.poissons_ratio, thickness: m.thickness }
    }
}

impl From<MaterialConfig> for Material {
    fn from(m: MaterialConfig) -> Self {
        Material { youngs_modulus: m.youngs_modulus, poissons_ratio: m.poissons_ratio, thickness: m.thickness }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 8,
            learning_rate: 1e-3,
            lr_decay_epoch: 150,
            lr_decay_factor: 0.1,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch >= self.lr_decay_epoch {
            self.learning_rate * self.lr_decay_factor
        } else {
            self.learning_rate
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative `run_dir` values are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if cfg.run_dir.is_relative() {
            if let Some(parent) = path.parent() {
                cfg.run_dir = parent.join(&cfg.run_dir);
            }
        }
        Ok(cfg)
    }

    /// Sets one dotted key (`train.epochs`, `model.physics_informed`, ...)
    /// from a TOML literal; bare words are taken as strings.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), PipelineError> {
        let cfg_err = |m: String| PipelineError::Config(m);
        let parsed: toml::Value = match toml::from_str::<toml::Table>(&format!("v = {value}")) {
            Ok(mut t) => t.remove("v").expect("key present"),
            Err(_) => toml::Value::String(value.to_string()),
        };
        let mut root = toml::Value::try_from(&*self).map_err(|e| cfg_err(e.to_string()))?;
        let mut node = &mut root;
        let parts: Vec<&str> = key.split('.').collect();
        for (n, part) in parts.iter().enumerate() {
            let table = node.as_table_mut().ok_or_else(|| cfg_err(format!("{key}: not a table")))?;
            if n + 1 == parts.len() {
                if !table.contains_key(*part) {
                    return Err(cfg_err(format!("unknown config key {key}")));
                }
                table.insert(part.to_string(), parsed.clone());
                break;
            }
            node = table.get_mut(*part).ok_or_else(|| cfg_err(format!("unknown config key {key}")))?;
        }
        let updated: RunConfig = root.try_into().map_err(|e: toml::de::Error| cfg_err(format!("{key}: {e}")))?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        self.model.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        let d = &self.data;
        self.model.check_canvas(d.canvas_height, d.canvas_width).map_err(|e| PipelineError::Config(e.to_string()))?;
        if !(d.epsilon > 0.0 && d.epsilon < 0.5) {
            return bad(format!("epsilon {} outside (0, 0.5)", d.epsilon));
        }
        if !(d.height > 0.0 && d.truss_scale > 0.0 && d.load_magnitude.is_finite() && d.load_magnitude != 0.0) {
            return bad("height, truss_scale and load_magnitude must be positive".into());
        }
        Material::from(d.material).validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        let t = &self.train;
        if t.batch_size == 0 || t.epochs == 0 {
            return bad("batch_size and epochs must be at least 1".into());
        }
        if !(t.learning_rate > 0.0 && t.lr_decay_factor > 0.0) {
            return bad("learning_rate and lr_decay_factor must be positive".into());
        }
        if !(0.0..1.0).contains(&t.adam_beta1) || !(0.0..1.0).contains(&t.adam_beta2) || !(t.adam_eps > 0.0) {
            return bad("Adam betas must lie in [0, 1) and eps must be positive".into());
        }
        Ok(())
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.run_dir.join("dataset")
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.dataset_dir().join("manifest.jsonl")
    }
}
