//! Model dimensions, presets and module toggles.

use serde::{Deserialize, Serialize};

use crate::error::{OridError, Result};

/// Which optional modules take part in the forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Toggles {
    pub use_mask: bool,
    pub use_ocf_fine: bool,
    pub use_ocf_coarse: bool,
    pub use_oica: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Toggles::row(5).expect("row 5 exists")
    }
}

impl Toggles {
    /// Rows 1-5 of the ablation ladder, each adding one module to the previous.
    pub fn row(n: usize) -> Result<Self> {
        if !(1..=5).contains(&n) {
            return Err(OridError::InvalidArgument(format!("ablation row must be 1-5, got {n}")));
        }
        Ok(Toggles { use_mask: n >= 2, use_ocf_fine: n >= 3, use_ocf_coarse: n >= 4, use_oica: n >= 5 })
    }

    pub fn validate(&self) -> Result<()> {
        if self.use_ocf_coarse && !self.use_ocf_fine {
            return Err(OridError::Toggles("use_ocf_coarse requires use_ocf_fine".into()));
        }
        if self.use_oica && !self.use_ocf_coarse {
            return Err(OridError::Toggles("use_oica requires use_ocf_coarse".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisionConfig {
    pub image_size: usize,
    pub image_channels: usize,
    /// Side of the square feature grid; `P = grid * grid`.
    pub grid: usize,
    /// Output channels of each stride-2 stage of the raw-image backbone.
    pub raw_channels: Vec<usize>,
    /// Stage whose output is the mid-layer raw feature.
    pub mid_stage: usize,
    /// Masks are average-pooled to `mask_size x mask_size` before the mask backbone.
    pub mask_size: usize,
    /// Width of every organ's 1x1 input adapter.
    pub mask_adapter: usize,
    pub mask_channels: Vec<usize>,
}

impl VisionConfig {
    pub fn positions(&self) -> usize {
        self.grid * self.grid
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vision: VisionConfig,
    pub dim: usize,
    pub heads: usize,
    pub gat_heads: usize,
    pub gat_layers: usize,
    pub mlp_hidden: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub ff_hidden: usize,
    /// Report length in tokens including BOS and EOS.
    pub max_report_len: usize,
    pub share_fine_attention: bool,
    pub toggles: Toggles,
}

impl ModelConfig {
    /// Tiny dimensions for gradient checks: P=4, d=8, 8x8 images.
    pub fn toy() -> Self {
        ModelConfig {
            vision: VisionConfig {
                image_size: 8,
                image_channels: 1,
                grid: 2,
                raw_channels: vec![3, 4],
                mid_stage: 0,
                mask_size: 4,
                mask_adapter: 2,
                mask_channels: vec![3],
            },
            dim: 8,
            heads: 2,
            gat_heads: 2,
            gat_layers: 2,
            mlp_hidden: 4,
            enc_layers: 1,
            dec_layers: 1,
            ff_hidden: 8,
            max_report_len: 8,
            share_fine_attention: true,
            toggles: Toggles::default(),
        }
    }

    /// Single-core CPU scale: 64x64 images, P=16, d=32.
    pub fn desk() -> Self {
        ModelConfig {
            vision: VisionConfig {
                image_size: 64,
                image_channels: 1,
                grid: 4,
                raw_channels: vec![8, 16, 32],
                mid_stage: 1,
                mask_size: 16,
                mask_adapter: 8,
                mask_channels: vec![16, 32],
            },
            dim: 32,
            heads: 8,
            gat_heads: 8,
            gat_layers: 2,
            mlp_hidden: 16,
            enc_layers: 3,
            dec_layers: 3,
            ff_hidden: 64,
            max_report_len: 60,
            share_fine_attention: true,
            toggles: Toggles::default(),
        }
    }

    /// 224x224x3 images, P=49, d=512.
    pub fn full() -> Self {
        ModelConfig {
            vision: VisionConfig {
                image_size: 224,
                image_channels: 3,
                grid: 7,
                raw_channels: vec![64, 128, 256, 512, 512],
                mid_stage: 3,
                mask_size: 56,
                mask_adapter: 32,
                mask_channels: vec![64, 128, 256],
            },
            dim: 512,
            heads: 8,
            gat_heads: 8,
            gat_layers: 2,
            mlp_hidden: 128,
            enc_layers: 3,
            dec_layers: 3,
            ff_hidden: 2048,
            max_report_len: 60,
            share_fine_attention: true,
            toggles: Toggles::default(),
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "toy" => Ok(Self::toy()),
            "desk" => Ok(Self::desk()),
            "full" => Ok(Self::full()),
            other => Err(OridError::Config(format!("unknown preset '{other}' (toy, desk, full)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.toggles.validate()?;
        let v = &self.vision;
        let check = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(OridError::Config(msg.into())) };
        check(self.dim.is_multiple_of(self.heads.max(1)) && self.heads > 0, "dim must be divisible by heads")?;
        check(self.dim.is_multiple_of(self.gat_heads.max(1)) && self.gat_heads > 0, "dim must be divisible by gat_heads")?;
        check(!v.raw_channels.is_empty() && v.mid_stage < v.raw_channels.len(), "mid_stage outside the raw backbone")?;
        check(!v.mask_channels.is_empty(), "mask backbone needs at least one stage")?;
        check(v.grid > 0 && v.image_size > 0 && v.mask_size > 0, "sizes must be positive")?;
        check(self.max_report_len >= 2, "max_report_len must be at least 2")?;
        check(self.gat_layers >= 1 && self.enc_layers >= 1 && self.dec_layers >= 1, "layer counts must be >= 1")?;
        let mut side = v.image_size;
        for (i, _) in v.raw_channels.iter().enumerate() {
            side = side.div_ceil(2);
            if i == v.mid_stage || i + 1 == v.raw_channels.len() {
                check(side >= v.grid, "raw backbone taps are smaller than the grid")?;
            }
        }
        let mask_side = v.mask_channels.iter().fold(v.mask_size, |s, _| s.div_ceil(2));
        check(mask_side >= v.grid, "mask backbone output is smaller than the grid")?;
        Ok(())
    }
}
