//! Featurization from clips to branch inputs: flow tubes to averaged
//! per-patch HOF descriptors, descriptors to token pairs, and frame
//! tubes to appearance tensors.

use super::config::ModelConfig;
use crate::error::{Result, TrinityError};
use crate::flow::{average_hof_grids, compute_flow, hof_features, FlowField, Image, SolverConfig};
use crate::numerics::Tensor;
use crate::vq::{Codebook, TokenPair};

/// Dense flow for each consecutive frame pair via the TV-L1 solver.
pub fn solve_clip_flows(frames: &[Image], solver: &SolverConfig) -> Result<Vec<FlowField>> {
    if frames.len() < 2 {
        return Err(TrinityError::Contract(
            "a flow tube needs at least two frames".into(),
        ));
    }
    frames
        .windows(2)
        .map(|w| compute_flow(&w[0], &w[1], solver))
        .collect()
}

/// Per-patch 25-channel descriptors averaged over the tube's frame
/// pairs, in row-major patch order.
pub fn motion_descriptors(
    flows: &[FlowField],
    cfg: &ModelConfig,
) -> Result<Vec<Vec<f64>>> {
    let grids = flows
        .iter()
        .map(|f| hof_features(f, cfg.patch_size, cfg.hof_threshold))
        .collect::<Result<Vec<_>>>()?;
    average_hof_grids(&grids)
}

pub fn tokenize_descriptors(
    descriptors: &[Vec<f64>],
    codebook: &Codebook,
) -> Result<Vec<TokenPair>> {
    descriptors.iter().map(|d| codebook.error_code(d)).collect()
}

/// Stack tube frames into the appearance input/target pair: channels
/// are the first T-1 frames, the target is the last frame.
pub fn appearance_tensors(tubes: &[&[Image]], cfg: &ModelConfig) -> Result<(Tensor, Tensor)> {
    let t = cfg.frames_per_tube;
    let (h, w) = (cfg.frame_height, cfg.frame_width);
    let b = tubes.len();
    if b == 0 {
        return Err(TrinityError::Degenerate("empty appearance batch".into()));
    }
    let mut input = Vec::with_capacity(b * (t - 1) * h * w);
    let mut target = Vec::with_capacity(b * h * w);
    for tube in tubes {
        if tube.len() != t {
            return Err(TrinityError::Contract(format!(
                "tube has {} frames, model expects {t}",
                tube.len()
            )));
        }
        for frame in &tube[..t - 1] {
            if frame.height != h || frame.width != w {
                return Err(TrinityError::ShapeMismatch {
                    op: "appearance_tensors",
                    lhs: vec![frame.height, frame.width],
                    rhs: vec![h, w],
                });
            }
            input.extend_from_slice(&frame.data);
        }
        target.extend_from_slice(&tube[t - 1].data);
    }
    Ok((
        Tensor::from_vec(input, &[b, t - 1, h, w])?,
        Tensor::from_vec(target, &[b, 1, h, w])?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn descriptors_average_over_pairs() {
        let cfg = ModelConfig {
            frame_height: 16,
            frame_width: 16,
            patch_size: 16,
            ..ModelConfig::desk()
        };
        let still = FlowField::zeros(16, 16);
        let moving = FlowField {
            width: 16,
            height: 16,
            u: vec![2.0; 256],
            v: vec![0.0; 256],
        };
        let desc = motion_descriptors(&[still, moving], &cfg).unwrap();
        assert_eq!(desc.len(), 1);
        // Background ratio: (1.0 + 0.0) / 2.
        assert!((desc[0][12] - 0.5).abs() < 1e-12);
        // Bin-0 fraction: (0.0 + 1.0) / 2; mean magnitude (0 + 2)/2.
        assert!((desc[0][0] - 0.5).abs() < 1e-12);
        assert!((desc[0][13] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tube_length_is_enforced() {
        let cfg = ModelConfig::desk();
        let frames = vec![Image::new(64, 64); 3];
        let err = appearance_tensors(&[&frames], &cfg).unwrap_err();
        assert!(matches!(err, TrinityError::Contract(_)));
    }
}
