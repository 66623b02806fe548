use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Pool2d;

/// One convolutional layer of the encoder/CNN stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub channels: usize,
    pub pool: Option<Pool2d>,
}

const fn conv(k: usize, p: usize, channels: usize, pool: Option<usize>) -> LayerSpec {
    LayerSpec {
        kernel: (k, k),
        stride: (1, 1),
        padding: (p, p),
        channels,
        pool: match pool {
            Some(s) => Some(Pool2d::square(s)),
            None => None,
        },
    }
}

/// conv1..conv6 with their max-pool stages.
pub const LAYER_TABLE: [LayerSpec; 6] = [
    conv(5, 2, 32, Some(2)),
    conv(5, 2, 64, Some(2)),
    conv(5, 2, 128, Some(2)),
    conv(5, 2, 256, Some(3)),
    conv(3, 1, 512, None),
    conv(3, 1, 1024, None),
];

/// Layer specs for a stack of `depth` layers with channel counts divided by
/// `width_divisor` (1 keeps the table as is).
pub fn layer_stack(depth: usize, width_divisor: usize) -> Result<Vec<LayerSpec>> {
    if !(1..=6).contains(&depth) {
        return Err(Error::InvalidConfig(alloc::format!("num_layers {} outside 1..6", depth)));
    }
    if width_divisor == 0 {
        return Err(Error::InvalidConfig("width_divisor must be positive".into()));
    }
    Ok(LAYER_TABLE[..depth]
        .iter()
        .map(|l| LayerSpec { channels: (l.channels / width_divisor).max(1), ..*l })
        .collect())
}

fn default_divisor() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnnConfig {
    pub num_layers: usize,
    #[serde(default = "default_divisor")]
    pub width_divisor: usize,
    pub fc_hidden: usize,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self { num_layers: 3, width_divisor: 1, fc_hidden: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaeConfig {
    pub num_layers: usize,
    /// `None` feeds the flattened encoder output straight into the decoder.
    pub latent_dim: Option<usize>,
    #[serde(default = "default_divisor")]
    pub width_divisor: usize,
}

impl Default for CaeConfig {
    fn default() -> Self {
        Self { num_layers: 4, latent_dim: Some(100), width_divisor: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self { input_dim: crate::segment::SEGMENT_LEN, hidden: vec![1000, 250, 50, 20] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Cnn,
    Cae,
    ContrastiveCae,
    Mlp,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Cnn => "cnn",
            Family::Cae => "cae",
            Family::ContrastiveCae => "contrastive_cae",
            Family::Mlp => "mlp",
        }
    }

    pub fn is_autoencoder(self) -> bool {
        matches!(self, Family::Cae | Family::ContrastiveCae)
    }
}

fn default_latent() -> Option<usize> {
    Some(100)
}
fn default_hidden() -> usize {
    32
}
fn default_margin() -> f64 {
    5.0
}
fn default_mlp_hidden() -> Vec<usize> {
    vec![1000, 250, 50, 20]
}
fn default_fc_hidden() -> usize {
    100
}

/// Architecture description as stored in run configs and checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub family: Family,
    pub num_layers: usize,
    #[serde(default = "default_latent")]
    pub latent_dim: Option<usize>,
    #[serde(default = "default_hidden")]
    pub classifier_hidden: usize,
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default = "default_divisor")]
    pub width_divisor: usize,
    #[serde(default = "default_fc_hidden")]
    pub cnn_fc_hidden: usize,
    #[serde(default = "default_mlp_hidden")]
    pub mlp_hidden: Vec<usize>,
}

impl ArchConfig {
    pub fn new(family: Family, num_layers: usize) -> Self {
        Self {
            family,
            num_layers,
            latent_dim: default_latent(),
            classifier_hidden: default_hidden(),
            margin: default_margin(),
            width_divisor: 1,
            cnn_fc_hidden: default_fc_hidden(),
            mlp_hidden: default_mlp_hidden(),
        }
    }

    pub fn cnn(&self) -> CnnConfig {
        CnnConfig { num_layers: self.num_layers, width_divisor: self.width_divisor, fc_hidden: self.cnn_fc_hidden }
    }

    pub fn cae(&self) -> CaeConfig {
        CaeConfig { num_layers: self.num_layers, latent_dim: self.latent_dim, width_divisor: self.width_divisor }
    }

    pub fn mlp(&self) -> MlpConfig {
        MlpConfig { input_dim: crate::segment::SEGMENT_LEN, hidden: self.mlp_hidden.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        layer_stack(self.num_layers, self.width_divisor)?;
        if !(self.margin > 0.0) {
            return Err(Error::InvalidConfig("margin must be positive".into()));
        }
        if self.latent_dim == Some(0) || self.classifier_hidden == 0 {
            return Err(Error::InvalidConfig("zero-width layer".into()));
        }
        Ok(())
    }
}
