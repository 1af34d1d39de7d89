use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use crate::models::{SmallCnnConfig, SvmParams, VggConfig};
use crate::preprocess::AugmentParams;
use crate::training::TrainConfig;
use crate::{Error, Result};

/// Optional TOML file shared by the training commands. `[train]` keys
/// override the role preset; `[vgg]`, `[small_cnn]` and `[svm]` replace the
/// defaults for unspecified fields.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub train: Option<toml::Table>,
    pub vgg: Option<VggConfig>,
    pub small_cnn: Option<SmallCnnConfig>,
    pub svm: Option<SvmParams>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
    }

    /// Layers the `[train]` table over `preset`.
    pub fn train_config(&self, preset: TrainConfig) -> Result<TrainConfig> {
        let Some(table) = &self.train else {
            return Ok(preset);
        };
        let mut base = toml::Table::try_from(&preset).map_err(|e| Error::Validation(e.to_string()))?;
        for (k, v) in table {
            base.insert(k.clone(), v.clone());
        }
        toml::Value::Table(base)
            .try_into()
            .map_err(|e| Error::Validation(format!("[train]: {e}")))
    }
}

#[derive(Args, Debug, Clone, Default, Serialize)]
pub struct TrainOverrides {
    /// TOML file with [train] / [vgg] / [small_cnn] sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub max_steps: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub eval_every: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Disable flip, crop and rotation.
    #[arg(long)]
    pub no_augment: bool,
    /// Use the recursive decay form instead of a0·r^(g/s).
    #[arg(long)]
    pub recursive_decay: bool,
}

impl TrainOverrides {
    pub fn apply(&self, mut cfg: TrainConfig) -> Result<TrainConfig> {
        if let Some(v) = self.max_steps {
            cfg.max_steps = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.lr {
            cfg.initial_lr = v;
        }
        if let Some(v) = self.eval_every {
            cfg.eval_every = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if self.no_augment {
            cfg.augment = AugmentParams::none();
        }
        if self.recursive_decay {
            cfg.recursive_decay = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug, Clone, Default, Serialize)]
pub struct ModelOverrides {
    /// VGG block widths, four comma-separated values.
    #[arg(long, value_delimiter = ',')]
    pub block_widths: Option<Vec<usize>>,
    /// VGG hidden FC widths, two comma-separated values.
    #[arg(long, value_delimiter = ',')]
    pub fc_widths: Option<Vec<usize>>,
    /// Small CNN conv filters, two comma-separated values.
    #[arg(long, value_delimiter = ',')]
    pub conv_filters: Option<Vec<usize>>,
    /// Small CNN hidden FC width.
    #[arg(long)]
    pub fc_width: Option<usize>,
}

fn fixed<const N: usize>(flag: &str, v: &[usize]) -> Result<[usize; N]> {
    v.try_into()
        .map_err(|_| Error::Validation(format!("--{flag} takes {N} values, got {}", v.len())))
}

impl ModelOverrides {
    pub fn vgg(&self, mut cfg: VggConfig) -> Result<VggConfig> {
        if let Some(v) = &self.block_widths {
            cfg.block_widths = fixed("block-widths", v)?;
        }
        if let Some(v) = &self.fc_widths {
            cfg.fc_widths = fixed("fc-widths", v)?;
        }
        Ok(cfg)
    }

    pub fn small_cnn(&self, mut cfg: SmallCnnConfig) -> Result<SmallCnnConfig> {
        if let Some(v) = &self.conv_filters {
            cfg.conv_filters = fixed("conv-filters", v)?;
        }
        if let Some(v) = self.fc_width {
            cfg.fc_width = v;
        }
        Ok(cfg)
    }
}
