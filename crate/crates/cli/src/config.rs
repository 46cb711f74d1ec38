//! Declarative run configuration: one TOML file, CLI flag overrides,
//! unknown keys rejected, every value range-checked.

use std::path::{Path, PathBuf};

use kfusion_core::features::FeatureParams;
use kfusion_core::fusion::MergeMode;
use kfusion_core::net::{AdamParams, TowerConfig};
use kfusion_core::pipeline::KernelParams;
use kfusion_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Frame CSV path.
    pub data: Option<PathBuf>,
    pub train_fraction: f64,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub features: FeaturesSection,
    pub kernels: KernelsSection,
    pub embedding: EmbeddingSection,
    pub tower: TowerSection,
    pub fusion: FusionSection,
    pub train: TrainSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: None,
            train_fraction: 0.8,
            seed: 1,
            out_dir: PathBuf::from("out"),
            features: FeaturesSection::default(),
            kernels: KernelsSection::default(),
            embedding: EmbeddingSection::default(),
            tower: TowerSection::default(),
            fusion: FusionSection::default(),
            train: TrainSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeaturesSection {
    pub sampling_rate: f64,
    pub tau: usize,
    pub embed_dim: usize,
    pub bins: usize,
    pub max_shift: usize,
}

impl Default for FeaturesSection {
    fn default() -> Self {
        let p = FeatureParams::default();
        FeaturesSection {
            sampling_rate: p.sampling_rate,
            tau: p.tau,
            embed_dim: p.embed_dim,
            bins: p.bins,
            max_shift: p.max_shift,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct KernelsSection {
    /// Explicit gamma grid; empty means the median-heuristic grid.
    pub gamma_grid: Vec<f64>,
    pub cv_folds: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbeddingSection {
    /// Dense embedding dimension (clipped to N_train at run time).
    pub dim: usize,
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        EmbeddingSection { dim: 500 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TowerSection {
    pub sizes: Vec<usize>,
    pub dropout_keep: f64,
}

impl Default for TowerSection {
    fn default() -> Self {
        let t = TowerConfig::default();
        TowerSection {
            sizes: t.sizes,
            dropout_keep: t.dropout_keep,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionSection {
    /// Kernel dropout rate, interpreted as the KEEP probability unless
    /// `rate_is_drop_probability` is set.
    pub kernel_dropout: f64,
    pub rate_is_drop_probability: bool,
    pub merge: MergeMode,
}

impl Default for FusionSection {
    fn default() -> Self {
        FusionSection {
            kernel_dropout: 0.6,
            rate_is_drop_probability: false,
            merge: MergeMode::Concat,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let a = AdamParams::default();
        TrainSection {
            epochs: 100,
            batch_size: 128,
            learning_rate: a.learning_rate,
            beta1: a.beta1,
            beta2: a.beta2,
            epsilon: a.epsilon,
            bn_momentum: 0.1,
            bn_epsilon: 1e-5,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Io(std::io::Error::new(
                e.kind(),
                format!("{}: {e}", path.display()),
            ))
        })?;
        let cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_fraction must be in (0,1), got {}",
                self.train_fraction
            )));
        }
        self.feature_params().validate()?;
        if self.kernels.cv_folds < 2 {
            return Err(Error::Config("kernels.cv_folds must be >= 2".into()));
        }
        if self.kernels.gamma_grid.iter().any(|&g| g <= 0.0) {
            return Err(Error::Config("kernels.gamma_grid entries must be positive".into()));
        }
        if self.embedding.dim == 0 {
            return Err(Error::Config("embedding.dim must be positive".into()));
        }
        self.tower_config().validate()?;
        let keep = self.kernel_keep();
        if !(keep > 0.0 && keep <= 1.0) {
            return Err(Error::Config(format!(
                "fusion.kernel_dropout yields keep probability {keep}, outside (0,1]"
            )));
        }
        if self.train.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be positive".into()));
        }
        if self.train.learning_rate <= 0.0 {
            return Err(Error::Config("train.learning_rate must be positive".into()));
        }
        for (name, v) in [("beta1", self.train.beta1), ("beta2", self.train.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("train.{name} must be in [0,1)")));
            }
        }
        if !(self.train.bn_momentum > 0.0 && self.train.bn_momentum < 1.0) {
            return Err(Error::Config("train.bn_momentum must be in (0,1)".into()));
        }
        if self.train.bn_epsilon <= 0.0 {
            return Err(Error::Config("train.bn_epsilon must be positive".into()));
        }
        Ok(())
    }

    pub fn data_path(&self) -> Result<&Path> {
        self.data
            .as_deref()
            .ok_or_else(|| Error::Config("no data file given (config `data` or --data)".into()))
    }

    pub fn feature_params(&self) -> FeatureParams {
        FeatureParams {
            sampling_rate: self.features.sampling_rate,
            tau: self.features.tau,
            embed_dim: self.features.embed_dim,
            bins: self.features.bins,
            max_shift: self.features.max_shift,
        }
    }

    pub fn kernel_params(&self) -> KernelParams {
        KernelParams {
            gamma_grid: self.kernels.gamma_grid.clone(),
            cv_folds: self.kernels.cv_folds,
        }
    }

    pub fn tower_config(&self) -> TowerConfig {
        TowerConfig {
            sizes: self.tower.sizes.clone(),
            dropout_keep: self.tower.dropout_keep,
        }
    }

    pub fn adam_params(&self) -> AdamParams {
        AdamParams {
            learning_rate: self.train.learning_rate,
            beta1: self.train.beta1,
            beta2: self.train.beta2,
            epsilon: self.train.epsilon,
        }
    }

    /// Effective kernel KEEP probability after the rate-interpretation flag.
    pub fn kernel_keep(&self) -> f64 {
        if self.fusion.rate_is_drop_probability {
            1.0 - self.fusion.kernel_dropout
        } else {
            self.fusion.kernel_dropout
        }
    }
}
