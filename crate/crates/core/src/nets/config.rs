use serde::{Deserialize, Serialize};

use super::NetsError;
use crate::raster::PYRAMID_LEVELS;

/// Encoder/decoder sizes shared by both networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformerConfig {
    pub layers: usize,
    pub heads: usize,
    /// Model width `d_q`.
    pub d_model: usize,
    pub d_ff: usize,
    /// Square patch edge `d_e` in pixels.
    pub patch: usize,
}

impl TransformerConfig {
    /// Small CPU-trainable configuration.
    pub fn desk() -> Self {
        Self { layers: 2, heads: 4, d_model: 64, d_ff: 128, patch: 8 }
    }

    pub fn full_spn() -> Self {
        Self { layers: 4, heads: 8, d_model: 256, d_ff: 1024, patch: 16 }
    }

    pub fn full_srn() -> Self {
        Self { layers: 12, ..Self::full_spn() }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self, image_size: usize) -> Result<(), NetsError> {
        let bad = |m: String| Err(NetsError::InvalidConfig(m));
        if self.layers == 0 || self.heads == 0 || self.d_model == 0 || self.d_ff == 0 || self.patch == 0 {
            return bad("transformer sizes must be positive".into());
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return bad(format!("d_model {} is not divisible by {} heads", self.d_model, self.heads));
        }
        if image_size == 0 || !image_size.is_multiple_of(self.patch) {
            return bad(format!("image size {image_size} is not divisible by patch {}", self.patch));
        }
        let pyramid = 1 << (PYRAMID_LEVELS - 1);
        if !image_size.is_multiple_of(pyramid) {
            return bad(format!("image size {image_size} is not divisible by {pyramid}"));
        }
        Ok(())
    }

    /// Patches per image side.
    pub fn patches_per_side(&self, image_size: usize) -> usize {
        image_size / self.patch
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SrnConfig {
    pub transformer: TransformerConfig,
    pub image_size: usize,
}

impl SrnConfig {
    pub fn desk() -> Self {
        Self { transformer: TransformerConfig::desk(), image_size: 64 }
    }

    pub fn full() -> Self {
        Self { transformer: TransformerConfig::full_srn(), image_size: 128 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpnConfig {
    pub transformer: TransformerConfig,
    pub image_size: usize,
    /// Feature channels `c` of the convolutional backbone.
    pub backbone_channels: usize,
    pub backbone_layers: usize,
}

impl SpnConfig {
    pub fn desk() -> Self {
        Self { transformer: TransformerConfig::desk(), image_size: 64, backbone_channels: 8, backbone_layers: 3 }
    }

    pub fn full() -> Self {
        Self { transformer: TransformerConfig::full_spn(), image_size: 128, backbone_channels: 16, backbone_layers: 3 }
    }

    pub fn validate(&self) -> Result<(), NetsError> {
        if self.backbone_channels == 0 || self.backbone_layers == 0 {
            return Err(NetsError::InvalidConfig("backbone sizes must be positive".into()));
        }
        self.transformer.validate(self.image_size)
    }
}

impl Default for SrnConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl Default for SpnConfig {
    fn default() -> Self {
        Self::desk()
    }
}
