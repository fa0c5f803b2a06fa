use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{self, GenerationParams, SyntheticDataset};
use crate::error::{Error, Result};
use crate::head::{FocalLossConfig, HeadMode, PrototypeBank, DEFAULT_DELTA, DEFAULT_TEMPERATURE};

/// Where the training data comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    Path(PathBuf),
    Generate(GenerationParams),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DminPolicy {
    /// `d_min = 1`, used with learnable prototypes.
    #[serde(rename = "constant-1")]
    ConstantOne,
    /// Minimum inter-class distance of a frozen prototype set.
    MinInterClass,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    /// AdamW learning rate for encoder and Euclidean head parameters.
    pub lr: f64,
    /// Riemannian SGD learning rate for hyperbolic prototypes.
    pub prototype_lr: f64,
    pub weight_decay: f64,
    pub clip_norm: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr: 3e-3,
            prototype_lr: 0.1,
            weight_decay: 1e-4,
            clip_norm: Some(1.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub enabled: bool,
    pub hidden: usize,
    pub embedding_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            hidden: 64,
            embedding_dim: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub head: HeadMode,
    pub delta: f64,
    pub d_min_policy: DminPolicy,
    pub focal: FocalLossConfig,
    pub optimizer: OptimizerConfig,
    pub encoder: EncoderConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Evaluate and checkpoint every this many epochs (and after the last).
    pub eval_every: usize,
    /// Temperature of the cosine baseline.
    pub temperature: f64,
    /// Class names withheld from training.
    #[serde(default)]
    pub unseen_classes: Vec<String>,
    #[serde(default)]
    pub imbalance_exponent: Option<f64>,
    /// Fixed prototype file; required by the `min-inter-class` policy.
    #[serde(default)]
    pub prototypes: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSource::Generate(GenerationParams::default()),
            head: HeadMode::Hyperbolic,
            delta: DEFAULT_DELTA,
            d_min_policy: DminPolicy::ConstantOne,
            focal: FocalLossConfig::default(),
            optimizer: OptimizerConfig::default(),
            encoder: EncoderConfig::default(),
            epochs: 40,
            batch_size: 64,
            seed: 0,
            eval_every: 10,
            temperature: DEFAULT_TEMPERATURE,
            unseen_classes: Vec::new(),
            imbalance_exponent: None,
            prototypes: None,
        }
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(config_err(format!("delta must be positive, got {}", self.delta)));
        }
        self.focal.validate().map_err(|e| config_err(e.to_string()))?;
        let opt = &self.optimizer;
        if !(opt.lr > 0.0 && opt.prototype_lr > 0.0) {
            return Err(config_err("learning rates must be positive"));
        }
        if !(opt.weight_decay >= 0.0) {
            return Err(config_err("weight decay must be >= 0"));
        }
        if opt.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return Err(config_err("clip norm must be positive"));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return Err(config_err("epochs, batch_size and eval_every must be positive"));
        }
        if !(self.temperature > 0.0) {
            return Err(config_err("temperature must be positive"));
        }
        if self.encoder.enabled && (self.encoder.hidden == 0 || self.encoder.embedding_dim == 0) {
            return Err(config_err("encoder sizes must be positive"));
        }
        match (self.d_min_policy, &self.prototypes) {
            (DminPolicy::MinInterClass, None) => {
                return Err(config_err("the min-inter-class policy needs a fixed prototype file"))
            }
            (DminPolicy::ConstantOne, Some(_)) => {
                return Err(config_err("fixed prototypes use the min-inter-class policy"))
            }
            _ => {}
        }
        if self.prototypes.is_some() && self.head != HeadMode::Hyperbolic {
            return Err(config_err("fixed prototypes are only supported for the hyperbolic head"));
        }
        if !self.unseen_classes.is_empty() && self.prototypes.is_none() {
            return Err(config_err("unseen classes need fixed prototypes to be scored"));
        }
        if let Some(e) = self.imbalance_exponent {
            if !(e > 0.0) {
                return Err(config_err("imbalance exponent must be positive"));
            }
        }
        Ok(())
    }

    /// Loads or generates the dataset, then applies the imbalance profile and
    /// the unseen-class holdout.
    pub fn prepare_dataset(&self) -> Result<SyntheticDataset> {
        let base = match &self.dataset {
            DatasetSource::Path(p) => SyntheticDataset::load(p)?,
            DatasetSource::Generate(params) => data::generate(params)?,
        };
        self.prepare_from(base)
    }

    pub fn prepare_from(&self, base: SyntheticDataset) -> Result<SyntheticDataset> {
        let mut ds = base;
        if let Some(e) = self.imbalance_exponent {
            ds = data::imbalance_profile(&ds, e)?;
        }
        if !self.unseen_classes.is_empty() {
            let unseen = self.unseen_indices(&ds)?;
            ds = data::holdout_unseen(&ds, &unseen)?.dataset;
        }
        Ok(ds)
    }

    pub fn unseen_indices(&self, ds: &SyntheticDataset) -> Result<Vec<usize>> {
        self.unseen_classes
            .iter()
            .map(|name| {
                ds.tree
                    .class_index(name)
                    .ok_or_else(|| config_err(format!("unknown unseen class '{name}'")))
            })
            .collect()
    }

    /// Loads the fixed prototype bank and checks it covers every class.
    pub fn load_fixed_bank(&self, ds: &SyntheticDataset) -> Result<Option<PrototypeBank>> {
        let Some(path) = &self.prototypes else {
            return Ok(None);
        };
        let bank = PrototypeBank::load(path)?;
        if bank.mode() != HeadMode::Hyperbolic || !bank.is_frozen() {
            return Err(config_err("fixed prototype file must hold a frozen hyperbolic bank"));
        }
        let names = ds.tree.class_names();
        for name in &names {
            if !bank.class_names().contains(name) {
                return Err(config_err(format!("prototype file has no prototype for class '{name}'")));
            }
        }
        if bank.num_classes() != names.len() {
            return Err(config_err(format!(
                "prototype file has {} classes, dataset has {}",
                bank.num_classes(),
                names.len()
            )));
        }
        if bank.class_names() != names.as_slice() {
            return Err(config_err("prototype classes must follow the dataset class order"));
        }
        Ok(Some(bank))
    }

    pub fn embedding_dim(&self, ds: &SyntheticDataset) -> usize {
        if self.encoder.enabled {
            self.encoder.embedding_dim
        } else {
            ds.dim()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_round_trips() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let json = serde_json::to_string_pretty(&cfg).unwrap();
        assert!(json.contains("\"constant-1\""));
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn policy_must_match_prototype_source() {
        let cfg = ExperimentConfig {
            d_min_policy: DminPolicy::MinInterClass,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = ExperimentConfig {
            unseen_classes: vec!["leaf_3".into()],
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = ExperimentConfig {
            epochs: 0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let mut value = serde_json::to_value(ExperimentConfig::default()).unwrap();
        value["learning_rate"] = serde_json::json!(0.1);
        assert!(serde_json::from_value::<ExperimentConfig>(value).is_err());
    }
}
