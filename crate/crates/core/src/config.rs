//! Versioned key-value run configuration. Every run writes its
//! resolved configuration next to its outputs so results reproduce
//! from the artifacts alone.

use std::collections::BTreeMap;
use std::path::Path;

use crate::data::GenerateSpec;
use crate::error::{Result, TrinityError};
use crate::flow::SolverConfig;
use crate::model::{AlignMode, ModelConfig};

const CONFIG_VERSION: &str = "trinity-config v1";

/// The full run configuration: model, training, generation, scoring,
/// and solver settings with desk-scale defaults.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub mode: AlignMode,
    pub seed: u64,
    pub use_gt_flow: bool,

    pub train_epochs: usize,
    pub train_lr: f64,
    pub train_lr_min: f64,
    pub beta_local: f64,
    pub beta_global: f64,

    pub vq_epochs: usize,
    pub vq_lr: f64,

    /// Fusion weight for contextual scoring.
    pub alpha_contextual: f64,
    /// Fusion weight for context-free scoring.
    pub alpha_context_free: f64,
    pub median_kernel: usize,

    pub gen: GenerateSpec,
    pub solver: SolverConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::desk(),
            mode: AlignMode::Contextual,
            seed: 42,
            use_gt_flow: true,
            train_epochs: 20,
            train_lr: 1e-3,
            train_lr_min: 1e-4,
            beta_local: 1.0,
            beta_global: 1.0,
            vq_epochs: 30,
            vq_lr: 1e-3,
            alpha_contextual: 0.3,
            alpha_context_free: 0.7,
            median_kernel: 17,
            gen: GenerateSpec::default(),
            solver: SolverConfig::default(),
        }
    }
}

impl RunConfig {
    /// The fusion weight implied by the mode.
    pub fn alpha(&self) -> f64 {
        match self.mode {
            AlignMode::Contextual => self.alpha_contextual,
            AlignMode::ContextFree => self.alpha_context_free,
        }
    }

    pub fn to_text(&self) -> String {
        let m = &self.model;
        let g = &self.gen;
        let s = &self.solver;
        let mut out = String::from(CONFIG_VERSION);
        out.push('\n');
        let mut push = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        push("mode", self.mode.as_str().into());
        push("seed", self.seed.to_string());
        push("use_gt_flow", self.use_gt_flow.to_string());
        push("model.frames_per_tube", m.frames_per_tube.to_string());
        push("model.frame_height", m.frame_height.to_string());
        push("model.frame_width", m.frame_width.to_string());
        push("model.patch_size", m.patch_size.to_string());
        push("model.joint_dim", m.joint_dim.to_string());
        push("model.context_dim", m.context_dim.to_string());
        push("model.tscab_blocks", m.tscab_blocks.to_string());
        push("model.motion_blocks", m.motion_blocks.to_string());
        push("model.appearance_blocks", m.appearance_blocks.to_string());
        push("model.heads", m.heads.to_string());
        push("model.batch_size", m.batch_size.to_string());
        push("model.frame_gap", m.frame_gap.to_string());
        push("model.codebook_size", m.codebook_size.to_string());
        push("model.token_dim", m.token_dim.to_string());
        push(
            "model.unet_channels",
            format!("{},{},{}", m.unet_channels[0], m.unet_channels[1], m.unet_channels[2]),
        );
        push("model.hof_threshold", format!("{}", m.hof_threshold));
        push("model.use_vq", m.use_vq.to_string());
        push("train.epochs", self.train_epochs.to_string());
        push("train.lr", format!("{}", self.train_lr));
        push("train.lr_min", format!("{}", self.train_lr_min));
        push("train.beta_local", format!("{}", self.beta_local));
        push("train.beta_global", format!("{}", self.beta_global));
        push("vq.epochs", self.vq_epochs.to_string());
        push("vq.lr", format!("{}", self.vq_lr));
        push("infer.alpha_contextual", format!("{}", self.alpha_contextual));
        push("infer.alpha_context_free", format!("{}", self.alpha_context_free));
        push("infer.median_kernel", self.median_kernel.to_string());
        push("gen.train_clips", g.train_clips.to_string());
        push("gen.train_frames", g.train_frames.to_string());
        push("gen.pseudo_clips", g.pseudo_clips.to_string());
        push("gen.pseudo_frames", g.pseudo_frames.to_string());
        push("gen.cfree_videos", g.cfree_videos.to_string());
        push("gen.cfree_frames", g.cfree_frames.to_string());
        push("gen.width", g.width.to_string());
        push("gen.height", g.height.to_string());
        push("solver.lambda", format!("{}", s.lambda));
        push("solver.theta", format!("{}", s.theta));
        push("solver.tau", format!("{}", s.tau));
        push("solver.iterations", s.iterations.to_string());
        push("solver.warps", s.warps.to_string());
        out
    }

    pub fn from_text(text: &str) -> Result<RunConfig> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default().trim();
        if header != CONFIG_VERSION {
            return Err(TrinityError::Config(format!(
                "unsupported config header `{header}` (expected `{CONFIG_VERSION}`)"
            )));
        }
        let mut kv = BTreeMap::new();
        for line in lines {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(TrinityError::Config(format!("bad config line: {line}")));
            };
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let mut cfg = RunConfig::default();
        for (key, value) in kv {
            cfg.apply(&key, &value)?;
        }
        cfg.model.validate()?;
        Ok(cfg)
    }

    /// Apply one key/value override (config file or CLI flag).
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| {
                TrinityError::Config(format!("bad value `{v}` for config key `{key}`"))
            })
        }
        match key {
            "mode" => self.mode = AlignMode::parse(value)?,
            "seed" => self.seed = num(key, value)?,
            "use_gt_flow" => self.use_gt_flow = num(key, value)?,
            "model.frames_per_tube" => self.model.frames_per_tube = num(key, value)?,
            "model.frame_height" => self.model.frame_height = num(key, value)?,
            "model.frame_width" => self.model.frame_width = num(key, value)?,
            "model.patch_size" => self.model.patch_size = num(key, value)?,
            "model.joint_dim" => self.model.joint_dim = num(key, value)?,
            "model.context_dim" => self.model.context_dim = num(key, value)?,
            "model.tscab_blocks" => self.model.tscab_blocks = num(key, value)?,
            "model.motion_blocks" => self.model.motion_blocks = num(key, value)?,
            "model.appearance_blocks" => self.model.appearance_blocks = num(key, value)?,
            "model.heads" => self.model.heads = num(key, value)?,
            "model.batch_size" => self.model.batch_size = num(key, value)?,
            "model.frame_gap" => self.model.frame_gap = num(key, value)?,
            "model.codebook_size" => self.model.codebook_size = num(key, value)?,
            "model.token_dim" => self.model.token_dim = num(key, value)?,
            "model.unet_channels" => {
                let parts: Vec<&str> = value.split(',').collect();
                if parts.len() != 3 {
                    return Err(TrinityError::Config(
                        "model.unet_channels needs three comma-separated widths".into(),
                    ));
                }
                for (i, p) in parts.iter().enumerate() {
                    self.model.unet_channels[i] = num(key, p.trim())?;
                }
            }
            "model.hof_threshold" => self.model.hof_threshold = num(key, value)?,
            "model.use_vq" => self.model.use_vq = num(key, value)?,
            "train.epochs" => self.train_epochs = num(key, value)?,
            "train.lr" => self.train_lr = num(key, value)?,
            "train.lr_min" => self.train_lr_min = num(key, value)?,
            "train.beta_local" => self.beta_local = num(key, value)?,
            "train.beta_global" => self.beta_global = num(key, value)?,
            "vq.epochs" => self.vq_epochs = num(key, value)?,
            "vq.lr" => self.vq_lr = num(key, value)?,
            "infer.alpha_contextual" => self.alpha_contextual = num(key, value)?,
            "infer.alpha_context_free" => self.alpha_context_free = num(key, value)?,
            "infer.median_kernel" => self.median_kernel = num(key, value)?,
            "gen.train_clips" => self.gen.train_clips = num(key, value)?,
            "gen.train_frames" => self.gen.train_frames = num(key, value)?,
            "gen.pseudo_clips" => self.gen.pseudo_clips = num(key, value)?,
            "gen.pseudo_frames" => self.gen.pseudo_frames = num(key, value)?,
            "gen.cfree_videos" => self.gen.cfree_videos = num(key, value)?,
            "gen.cfree_frames" => self.gen.cfree_frames = num(key, value)?,
            "gen.width" => self.gen.width = num(key, value)?,
            "gen.height" => self.gen.height = num(key, value)?,
            "solver.lambda" => self.solver.lambda = num(key, value)?,
            "solver.theta" => self.solver.theta = num(key, value)?,
            "solver.tau" => self.solver.tau = num(key, value)?,
            "solver.iterations" => self.solver.iterations = num(key, value)?,
            "solver.warps" => self.solver.warps = num(key, value)?,
            other => {
                return Err(TrinityError::Config(format!(
                    "unknown config key `{other}`"
                )))
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        RunConfig::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_every_field() {
        let mut cfg = RunConfig::default();
        cfg.seed = 77;
        cfg.mode = AlignMode::ContextFree;
        cfg.model.joint_dim = 32;
        cfg.model.unet_channels = [4, 8, 12];
        cfg.train_epochs = 3;
        cfg.gen.train_clips = 50;
        cfg.solver.iterations = 250;
        let text = cfg.to_text();
        let back = RunConfig::from_text(&text).unwrap();
        assert_eq!(back.to_text(), text);
        assert_eq!(back.seed, 77);
        assert_eq!(back.model.unet_channels, [4, 8, 12]);
        assert_eq!(back.solver.iterations, 250);
    }

    #[test]
    fn unknown_key_is_config_error() {
        let text = format!("{CONFIG_VERSION}\nmystery.key = 5\n");
        assert!(matches!(
            RunConfig::from_text(&text),
            Err(TrinityError::Config(_))
        ));
    }

    #[test]
    fn bad_header_is_rejected() {
        assert!(matches!(
            RunConfig::from_text("other-config v2\n"),
            Err(TrinityError::Config(_))
        ));
    }

    #[test]
    fn alpha_follows_mode() {
        let mut cfg = RunConfig::default();
        assert_eq!(cfg.alpha(), 0.3);
        cfg.mode = AlignMode::ContextFree;
        assert_eq!(cfg.alpha(), 0.7);
    }
}
