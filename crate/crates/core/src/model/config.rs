//! Model configuration: desk-scale defaults that train in minutes, with
//! the full-scale constants available as presets.

use crate::data::ContextLayout;
use crate::error::{Result, TrinityError};

#[derive(Clone, Debug)]
pub struct ModelConfig {
    /// Frames per input tube (T).
    pub frames_per_tube: usize,
    pub frame_height: usize,
    pub frame_width: usize,
    /// Patch side in pixels (k).
    pub patch_size: usize,
    /// Joint embedding dimension (D).
    pub joint_dim: usize,
    /// Context embedding / positional dimension (d_t = d_p).
    pub context_dim: usize,
    pub tscab_blocks: usize,
    pub motion_blocks: usize,
    pub appearance_blocks: usize,
    pub heads: usize,
    pub batch_size: usize,
    /// Frame sampling gap applied when ingesting raw sequences.
    pub frame_gap: usize,
    pub codebook_size: usize,
    /// Width of the motion/appearance token transformers. The two
    /// motion words are embedded at half this and concatenated.
    pub token_dim: usize,
    /// U-net encoder channels; the third is the bottleneck width.
    pub unet_channels: [usize; 3],
    /// HOF background-magnitude threshold (pixels per frame step).
    pub hof_threshold: f64,
    /// Vector quantization on the motion branch (ablation toggle VQ).
    pub use_vq: bool,
    pub context_layout: ContextLayout,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::desk()
    }
}

impl ModelConfig {
    /// Desk-scale configuration: full training in minutes on one core.
    pub fn desk() -> Self {
        ModelConfig {
            frames_per_tube: 4,
            frame_height: 64,
            frame_width: 64,
            patch_size: 16,
            joint_dim: 64,
            context_dim: 128,
            tscab_blocks: 2,
            motion_blocks: 3,
            appearance_blocks: 3,
            heads: 8,
            batch_size: 12,
            frame_gap: 1,
            codebook_size: 64,
            token_dim: 64,
            unet_channels: [8, 16, 32],
            hof_threshold: 0.5,
            use_vq: true,
            context_layout: ContextLayout::default(),
        }
    }

    /// The published webcam-scale constants (128x384 frames, D = 512).
    pub fn paper_wf() -> Self {
        ModelConfig {
            frames_per_tube: 4,
            frame_height: 128,
            frame_width: 384,
            patch_size: 16,
            joint_dim: 512,
            context_dim: 128,
            tscab_blocks: 2,
            motion_blocks: 3,
            appearance_blocks: 3,
            heads: 8,
            batch_size: 12,
            frame_gap: 4,
            codebook_size: 512,
            token_dim: 256,
            unet_channels: [32, 64, 128],
            hof_threshold: 1.0,
            use_vq: true,
            context_layout: ContextLayout::default(),
        }
    }

    /// The published benchmark-scale constants (256x256 frames).
    pub fn paper_benchmark() -> Self {
        ModelConfig {
            frame_height: 256,
            frame_width: 256,
            frame_gap: 1,
            tscab_blocks: 1,
            hof_threshold: 0.5,
            ..ModelConfig::paper_wf()
        }
    }

    /// Patch-grid token count (without the global head).
    pub fn grid_tokens(&self) -> usize {
        (self.frame_height / self.patch_size) * (self.frame_width / self.patch_size)
    }

    /// N = H*W/k^2 + 1.
    pub fn token_count(&self) -> usize {
        self.grid_tokens() + 1
    }

    pub fn grid_rows(&self) -> usize {
        self.frame_height / self.patch_size
    }

    pub fn grid_cols(&self) -> usize {
        self.frame_width / self.patch_size
    }

    /// Conv tokenizer kernel/stride over the 8x-downsampled bottleneck.
    pub fn tokenizer_kernel(&self) -> usize {
        self.patch_size / 8
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.frame_height % self.patch_size != 0 || self.frame_width % self.patch_size != 0 {
            problems.push(format!(
                "patch size {} must divide frame {}x{}",
                self.patch_size, self.frame_height, self.frame_width
            ));
        }
        if self.joint_dim % self.heads != 0 {
            problems.push(format!(
                "heads {} must divide joint dimension {}",
                self.heads, self.joint_dim
            ));
        }
        if self.context_dim % self.heads != 0 {
            problems.push(format!(
                "heads {} must divide context dimension {}",
                self.heads, self.context_dim
            ));
        }
        if self.token_dim % self.heads != 0 || self.token_dim % 2 != 0 {
            problems.push(format!(
                "token dimension {} must be even and divisible by heads {}",
                self.token_dim, self.heads
            ));
        }
        if self.patch_size % 8 != 0 {
            problems.push(format!(
                "patch size {} must be a multiple of the U-net downsampling 8",
                self.patch_size
            ));
        }
        if self.frames_per_tube < 2 {
            problems.push("frame tube needs at least 2 frames".into());
        }
        if self.frame_height % 8 != 0 || self.frame_width % 8 != 0 {
            problems.push(format!(
                "frame {}x{} must be divisible by the U-net downsampling 8",
                self.frame_height, self.frame_width
            ));
        }
        if self.hof_threshold <= 0.0 {
            problems.push("HOF threshold must be positive".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(TrinityError::Config(problems.join("; ")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_grid_is_seventeen_tokens() {
        let cfg = ModelConfig::desk();
        cfg.validate().unwrap();
        assert_eq!(cfg.token_count(), 17); // 64*64/256 + 1
        assert_eq!(cfg.tokenizer_kernel(), 2);
    }

    #[test]
    fn paper_benchmark_grid_is_257_tokens() {
        let cfg = ModelConfig::paper_benchmark();
        cfg.validate().unwrap();
        assert_eq!(cfg.token_count(), 257);
    }

    #[test]
    fn paper_wf_grid_is_193_tokens() {
        let cfg = ModelConfig::paper_wf();
        cfg.validate().unwrap();
        assert_eq!(cfg.token_count(), 193);
    }

    #[test]
    fn invalid_patch_size_is_config_error() {
        let cfg = ModelConfig {
            patch_size: 24,
            ..ModelConfig::desk()
        };
        assert!(matches!(cfg.validate(), Err(TrinityError::Config(_))));
    }
}
