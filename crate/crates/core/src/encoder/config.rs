use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motionmask::{MgmConfig, MotionScorer, DEFAULT_KEEP_RATIO, DEFAULT_SEARCH_RADIUS};
use crate::posenc::DEFAULT_BLOCK;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PosEncMode {
    Ape,
    #[default]
    Liere,
}

impl PosEncMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Ape => "ape",
            Self::Liere => "liere",
        }
    }
}

impl std::fmt::Display for PosEncMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PosEncMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ape" => Ok(Self::Ape),
            "liere" => Ok(Self::Liere),
            other => Err(Error::Config(format!("unknown positional encoding {other}"))),
        }
    }
}

/// Architecture hyperparameters of the factorized clip encoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub embed_dim: usize,
    pub heads: usize,
    pub spatial_layers: usize,
    pub temporal_layers: usize,
    pub patch_size: usize,
    pub frames: usize,
    /// Frame height and width.
    pub resolution: usize,
    pub channels: usize,
    pub mlp_ratio: usize,
    pub posenc: PosEncMode,
    pub liere_block: usize,
    pub mgm_enabled: bool,
    pub keep_ratio: f64,
    pub mgm_scorer: MotionScorer,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl EncoderConfig {
    /// ViViT-base scale: 224×224, 16-pixel patches, 32 frames, 768 wide.
    pub fn paper() -> Self {
        Self {
            embed_dim: 768,
            heads: 12,
            spatial_layers: 6,
            temporal_layers: 6,
            patch_size: 16,
            frames: 32,
            resolution: 224,
            ..Self::toy()
        }
    }

    /// Desk scale: 32×32, 8-pixel patches, 8 frames, 64 wide.
    pub fn toy() -> Self {
        Self {
            embed_dim: 64,
            heads: 4,
            spatial_layers: 2,
            temporal_layers: 2,
            patch_size: 8,
            frames: 8,
            resolution: 32,
            channels: 3,
            mlp_ratio: 4,
            posenc: PosEncMode::Liere,
            liere_block: DEFAULT_BLOCK,
            mgm_enabled: true,
            keep_ratio: DEFAULT_KEEP_RATIO,
            mgm_scorer: MotionScorer::Sad,
            seed: 0,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "toy" => Ok(Self::toy()),
            other => Err(Error::Config(format!("unknown preset {other}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        let positive = [
            ("embed_dim", self.embed_dim),
            ("heads", self.heads),
            ("spatial_layers", self.spatial_layers),
            ("temporal_layers", self.temporal_layers),
            ("patch_size", self.patch_size),
            ("frames", self.frames),
            ("resolution", self.resolution),
            ("channels", self.channels),
            ("mlp_ratio", self.mlp_ratio),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return fail(format!("{name} must be positive"));
        }
        if !self.embed_dim.is_multiple_of(self.heads) {
            return fail(format!(
                "embed_dim {} is not divisible by {} heads",
                self.embed_dim, self.heads
            ));
        }
        if !self.resolution.is_multiple_of(self.patch_size) {
            return fail(format!(
                "resolution {} is not divisible by patch size {}",
                self.resolution, self.patch_size
            ));
        }
        if self.posenc == PosEncMode::Liere
            && (self.liere_block == 0 || !self.head_dim().is_multiple_of(self.liere_block))
        {
            return fail(format!(
                "head dimension {} is not divisible by LieRE block {}",
                self.head_dim(),
                self.liere_block
            ));
        }
        if !(self.keep_ratio > 0.0 && self.keep_ratio <= 1.0) {
            return fail(format!("keep_ratio {} outside (0,1]", self.keep_ratio));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    /// Patches per side.
    pub fn grid(&self) -> usize {
        self.resolution / self.patch_size
    }

    pub fn patches_per_frame(&self) -> usize {
        self.grid() * self.grid()
    }

    /// Spatial tokens per frame including CLS.
    pub fn spatial_tokens(&self) -> usize {
        self.patches_per_frame() + 1
    }

    /// Temporal tokens including CLS.
    pub fn temporal_tokens(&self) -> usize {
        self.frames + 1
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    /// Masking tiles coincide with patches.
    pub fn mgm(&self) -> MgmConfig {
        MgmConfig {
            tile_size: self.patch_size,
            keep_ratio: self.keep_ratio,
            search_radius: DEFAULT_SEARCH_RADIUS,
            scorer: self.mgm_scorer,
        }
    }
}
