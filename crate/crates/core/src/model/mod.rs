//! The three-branch alignment model: context, motion, and appearance
//! branches produce congruent `[B, N, D]` token embeddings for
//! contrastive alignment.

pub mod appearance_branch;
pub mod config;
pub mod context_branch;
pub mod features;
pub mod motion_branch;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use appearance_branch::{AppearanceBranch, AppearanceOutput};
pub use config::ModelConfig;
pub use context_branch::ContextBranch;
pub use features::{
    appearance_tensors, motion_descriptors, solve_clip_flows, tokenize_descriptors,
};
pub use motion_branch::{MotionBranch, MotionInput};

use crate::data::{encode_context, ClipRecord, ContextVector};
use crate::error::{Result, TrinityError};
use crate::flow::SolverConfig;
use crate::numerics::{ParamSet, Tensor};
use crate::vq::Codebook;

/// Which alignment family the model trains and scores with.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AlignMode {
    /// Context-motion and context-appearance alignment (three branches).
    Contextual,
    /// Appearance-motion alignment only (no context branch).
    ContextFree,
}

impl AlignMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            AlignMode::Contextual => "contextual",
            AlignMode::ContextFree => "context_free",
        }
    }

    pub fn parse(s: &str) -> Result<AlignMode> {
        Ok(match s {
            "contextual" => AlignMode::Contextual,
            "context_free" | "context-free" => AlignMode::ContextFree,
            other => return Err(TrinityError::Config(format!("unknown mode `{other}`"))),
        })
    }
}

/// Assembled inputs for one training/scoring batch.
pub struct BatchInput {
    pub contexts: Vec<ContextVector>,
    pub motion: MotionInput,
    pub appearance_input: Tensor,
    pub appearance_target: Tensor,
}

/// Branch outputs plus the reconstruction loss.
pub struct ForwardOutput {
    pub h_cxt: Option<Tensor>,
    pub h_mot: Tensor,
    pub h_app: Tensor,
    pub l_recon: Tensor,
    pub prediction: Tensor,
}

impl ForwardOutput {
    /// Global head tokens, `[B, D]`.
    pub fn global(h: &Tensor) -> Result<Tensor> {
        let s = h.shape();
        h.slice(1, 0, 1)?.reshape(&[s[0], s[2]])
    }

    /// Local tokens, `[B, N-1, D]`.
    pub fn locals(h: &Tensor) -> Result<Tensor> {
        h.slice(1, 1, h.shape()[1] - 1)
    }
}

pub struct TrinityModel {
    pub cfg: ModelConfig,
    pub mode: AlignMode,
    pub context: Option<ContextBranch>,
    pub motion: MotionBranch,
    pub appearance: AppearanceBranch,
    /// Temperature stored as log tau; exponentiation keeps tau > 0.
    pub log_tau: Tensor,
}

pub const INITIAL_TAU: f64 = 0.07;

impl TrinityModel {
    pub fn new(cfg: ModelConfig, mode: AlignMode, seed: u64) -> Result<TrinityModel> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let context = match mode {
            AlignMode::Contextual => Some(ContextBranch::new(&cfg, &mut rng)?),
            AlignMode::ContextFree => None,
        };
        let motion = MotionBranch::new(&cfg, &mut rng)?;
        let appearance = AppearanceBranch::new(&cfg, &mut rng)?;
        let log_tau = Tensor::param(vec![INITIAL_TAU.ln()], &[1])?;
        Ok(TrinityModel {
            cfg,
            mode,
            context,
            motion,
            appearance,
            log_tau,
        })
    }

    /// The learnable temperature, always positive.
    pub fn tau(&self) -> Tensor {
        self.log_tau.exp()
    }

    pub fn tau_value(&self) -> f64 {
        self.log_tau.value()[0].exp()
    }

    pub fn params(&self) -> ParamSet {
        let mut ps = ParamSet::new();
        if let Some(ctx) = &self.context {
            ctx.params("context", &mut ps);
        }
        self.motion.params("motion", &mut ps);
        self.appearance.params("appearance", &mut ps);
        ps.register("log_tau", &self.log_tau);
        ps
    }

    pub fn forward(&self, batch: &BatchInput) -> Result<ForwardOutput> {
        let b = batch.motion.batch_len();
        if batch.appearance_input.shape()[0] != b {
            return Err(TrinityError::ShapeMismatch {
                op: "forward batch",
                lhs: vec![batch.appearance_input.shape()[0]],
                rhs: vec![b],
            });
        }
        let h_cxt = match (&self.context, self.mode) {
            (Some(branch), AlignMode::Contextual) => {
                if batch.contexts.len() != b {
                    return Err(TrinityError::Config(format!(
                        "contextual mode needs {b} context vectors, got {}",
                        batch.contexts.len()
                    )));
                }
                Some(branch.forward(&batch.contexts)?)
            }
            (None, AlignMode::ContextFree) => None,
            _ => {
                return Err(TrinityError::Config(
                    "model mode and branch set disagree".into(),
                ))
            }
        };
        let h_mot = self.motion.forward(&batch.motion)?;
        let app = self
            .appearance
            .forward(&batch.appearance_input, &batch.appearance_target)?;
        if let Some(h_cxt) = &h_cxt {
            if h_cxt.shape() != h_mot.shape() {
                return Err(TrinityError::ShapeMismatch {
                    op: "branch congruence",
                    lhs: h_cxt.shape().to_vec(),
                    rhs: h_mot.shape().to_vec(),
                });
            }
        }
        if h_mot.shape() != app.h_app.shape() {
            return Err(TrinityError::ShapeMismatch {
                op: "branch congruence",
                lhs: h_mot.shape().to_vec(),
                rhs: app.h_app.shape().to_vec(),
            });
        }
        Ok(ForwardOutput {
            h_cxt,
            h_mot,
            h_app: app.h_app,
            l_recon: app.l_recon,
            prediction: app.prediction,
        })
    }
}

/// Build a training batch from fixed-length clips. Clips must carry
/// ground-truth flow or `solver` must be provided to compute it.
pub fn build_batch(
    clips: &[&ClipRecord],
    cfg: &ModelConfig,
    codebook: Option<&Codebook>,
    solver: Option<&SolverConfig>,
) -> Result<BatchInput> {
    let mut contexts = Vec::with_capacity(clips.len());
    let mut token_rows = Vec::with_capacity(clips.len());
    let mut feature_rows = Vec::with_capacity(clips.len());
    let mut tubes: Vec<&[Image]> = Vec::with_capacity(clips.len());
    for clip in clips {
        contexts.push(encode_context(&clip.context, &cfg.context_layout)?);
        let descriptors = match (&clip.gt_flow, solver) {
            (Some(flows), _) => motion_descriptors(flows, cfg)?,
            (None, Some(solver_cfg)) => {
                let flows = solve_clip_flows(&clip.frames, solver_cfg)?;
                motion_descriptors(&flows, cfg)?
            }
            (None, None) => {
                return Err(TrinityError::Config(format!(
                    "clip {} has no ground-truth flow and no solver was configured",
                    clip.id
                )))
            }
        };
        match codebook {
            Some(cb) => token_rows.push(tokenize_descriptors(&descriptors, cb)?),
            None => feature_rows.push(descriptors),
        }
        tubes.push(clip.frames.as_slice());
    }
    let (appearance_input, appearance_target) = appearance_tensors(&tubes, cfg)?;
    let motion = if codebook.is_some() {
        MotionInput::Tokens(token_rows)
    } else {
        MotionInput::Features(feature_rows)
    };
    Ok(BatchInput {
        contexts,
        motion,
        appearance_input,
        appearance_target,
    })
}

use crate::flow::Image;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, GenerateSpec, SplitKind};
    use crate::vq::Codebook;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            frame_height: 32,
            frame_width: 32,
            patch_size: 16,
            token_dim: 16,
            joint_dim: 16,
            context_dim: 16,
            heads: 2,
            unet_channels: [3, 4, 5],
            tscab_blocks: 1,
            motion_blocks: 1,
            appearance_blocks: 1,
            codebook_size: 8,
            ..ModelConfig::desk()
        }
    }

    fn tiny_dataset() -> crate::data::Dataset {
        generate_dataset(&GenerateSpec {
            seed: 5,
            width: 32,
            height: 32,
            train_clips: 4,
            pseudo_clips: 0,
            cfree_videos: 0,
            ..GenerateSpec::default()
        })
        .unwrap()
    }

    fn tiny_codebook() -> Codebook {
        let entries = (0..8)
            .map(|i| (0..25).map(|j| ((i * 25 + j) as f64) * 0.01).collect())
            .collect();
        Codebook::new(entries).unwrap()
    }

    #[test]
    fn forward_shapes_are_congruent() {
        let cfg = tiny_cfg();
        let model = TrinityModel::new(cfg.clone(), AlignMode::Contextual, 3).unwrap();
        let ds = tiny_dataset();
        let clips = ds.split(SplitKind::Train);
        let cb = tiny_codebook();
        let batch = build_batch(&clips[..1], &cfg, Some(&cb), None).unwrap();
        let out = model.forward(&batch).unwrap();
        let n = cfg.token_count();
        assert_eq!(out.h_cxt.as_ref().unwrap().shape(), &[1, n, 16]);
        assert_eq!(out.h_mot.shape(), &[1, n, 16]);
        assert_eq!(out.h_app.shape(), &[1, n, 16]);
    }

    #[test]
    fn batch_permutation_permutes_outputs() {
        let cfg = tiny_cfg();
        let model = TrinityModel::new(cfg.clone(), AlignMode::Contextual, 3).unwrap();
        let ds = tiny_dataset();
        let clips = ds.split(SplitKind::Train);
        let cb = tiny_codebook();
        let fwd = |order: &[usize]| {
            let picked: Vec<&ClipRecord> = order.iter().map(|&i| clips[i]).collect();
            let batch = build_batch(&picked, &cfg, Some(&cb), None).unwrap();
            let out = model.forward(&batch).unwrap();
            (
                out.h_mot.value(),
                out.h_app.value(),
                out.h_cxt.unwrap().value(),
            )
        };
        let (mot_a, app_a, cxt_a) = fwd(&[0, 1, 2]);
        let (mot_b, app_b, cxt_b) = fwd(&[2, 0, 1]);
        let n = cfg.token_count() * 16;
        // Permuted batch [2, 0, 1]: its position i holds clip order[i].
        for (branch_a, branch_b) in [(mot_a, mot_b), (app_a, app_b), (cxt_a, cxt_b)] {
            for (b_pos, a_pos) in [(0usize, 2usize), (1, 0), (2, 1)] {
                let a = &branch_a[a_pos * n..(a_pos + 1) * n];
                let b = &branch_b[b_pos * n..(b_pos + 1) * n];
                for (x, y) in a.iter().zip(b) {
                    assert!((x - y).abs() < 1e-12, "cross-sample leakage");
                }
            }
        }
    }

    #[test]
    fn context_output_ignores_other_branch_inputs() {
        let cfg = tiny_cfg();
        let model = TrinityModel::new(cfg.clone(), AlignMode::Contextual, 3).unwrap();
        let ds = tiny_dataset();
        let clips = ds.split(SplitKind::Train);
        let cb = tiny_codebook();
        let b1 = build_batch(&clips[..2], &cfg, Some(&cb), None).unwrap();
        let mut b2 = build_batch(&clips[2..4], &cfg, Some(&cb), None).unwrap();
        b2.contexts = b1.contexts.clone();
        let o1 = model.forward(&b1).unwrap();
        let o2 = model.forward(&b2).unwrap();
        assert_eq!(o1.h_cxt.unwrap().value(), o2.h_cxt.unwrap().value());
    }

    #[test]
    fn mode_mismatch_is_config_error() {
        let cfg = tiny_cfg();
        let mut model = TrinityModel::new(cfg.clone(), AlignMode::Contextual, 3).unwrap();
        model.mode = AlignMode::ContextFree;
        let ds = tiny_dataset();
        let clips = ds.split(SplitKind::Train);
        let cb = tiny_codebook();
        let batch = build_batch(&clips[..1], &cfg, Some(&cb), None).unwrap();
        assert!(matches!(
            model.forward(&batch),
            Err(TrinityError::Config(_))
        ));
    }

    #[test]
    fn tau_stays_positive() {
        let model = TrinityModel::new(tiny_cfg(), AlignMode::ContextFree, 0).unwrap();
        assert!((model.tau_value() - 0.07).abs() < 1e-12);
        model.log_tau.set_data(vec![-30.0]).unwrap();
        assert!(model.tau_value() > 0.0);
    }
}
