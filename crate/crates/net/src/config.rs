use imt_core::{ImtError, Result};
use serde::{Deserialize, Serialize};

/// Architecture hyperparameters. Every tensor shape follows from these.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub channels: usize,
    pub heads: usize,
    /// Patches per window edge.
    pub window: usize,
    /// Pixels per patch edge.
    pub patch: usize,
    pub cells_per_block: usize,
    /// Slices per input chunk.
    pub slice_depth: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: 32,
            heads: 4,
            window: 8,
            patch: 1,
            cells_per_block: 2,
            slice_depth: 8,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ImtError::InvalidInput(m));
        if self.channels == 0 || self.heads == 0 || self.window == 0 || self.patch == 0 || self.slice_depth == 0 {
            return bad(format!("model sizes must be positive: {self:?}"));
        }
        if self.channels % self.heads != 0 {
            return bad(format!("channels {} not divisible by heads {}", self.channels, self.heads));
        }
        if !(2..=3).contains(&self.cells_per_block) {
            return bad(format!("cells_per_block must be 2 or 3, got {}", self.cells_per_block));
        }
        Ok(())
    }

    /// Spatial sizes are reflect-padded to a multiple of this so both the
    /// full-resolution and the half-resolution grids tile into windows.
    pub fn pad_multiple(&self) -> usize {
        2 * self.window * self.patch
    }

    pub fn padded(&self, n: usize) -> usize {
        n.div_ceil(self.pad_multiple()) * self.pad_multiple()
    }

    pub fn patch_features(&self) -> usize {
        2 * self.patch * self.patch
    }
}
