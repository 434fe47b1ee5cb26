//! Motion branch: per-patch HOF descriptors are quantized into (word,
//! error-word) pairs, both words embedded with one shared table and
//! concatenated, then run through transformer blocks behind a learnable
//! global head token.

use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::error::{Result, TrinityError};
use crate::flow::HOF_CHANNELS;
use crate::numerics::{concat, trunc_normal, Linear, ParamSet, Tensor, TransformerBlock};
use crate::vq::TokenPair;

/// Motion input: quantized token pairs, or raw HOF descriptors when the
/// VQ stage is ablated.
#[derive(Clone, Debug)]
pub enum MotionInput {
    Tokens(Vec<Vec<TokenPair>>),
    Features(Vec<Vec<Vec<f64>>>),
}

impl MotionInput {
    pub fn batch_len(&self) -> usize {
        match self {
            MotionInput::Tokens(t) => t.len(),
            MotionInput::Features(f) => f.len(),
        }
    }
}

pub struct MotionBranch {
    /// Shared embedding for quantized and error words.
    embed: Option<Tensor>,
    /// Direct projection of raw descriptors (VQ ablated).
    hof_proj: Option<Linear>,
    pos_embed: Tensor,
    head_token: Tensor,
    blocks: Vec<TransformerBlock>,
    proj: Tensor,
    grid: usize,
    vocab: usize,
}

impl MotionBranch {
    pub fn new(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<MotionBranch> {
        let d = cfg.token_dim;
        let n = cfg.token_count();
        let (embed, hof_proj) = if cfg.use_vq {
            (
                Some(trunc_normal(rng, &[cfg.codebook_size, d / 2], 0.02)),
                None,
            )
        } else {
            (None, Some(Linear::new(rng, HOF_CHANNELS, d)))
        };
        let blocks = (0..cfg.motion_blocks)
            .map(|_| TransformerBlock::new(rng, d, cfg.heads, 4))
            .collect::<Result<Vec<_>>>()?;
        Ok(MotionBranch {
            embed,
            hof_proj,
            pos_embed: trunc_normal(rng, &[n, d], 0.02),
            head_token: trunc_normal(rng, &[1, d], 0.02),
            blocks,
            proj: trunc_normal(rng, &[d, cfg.joint_dim], 0.02),
            grid: n - 1,
            vocab: cfg.codebook_size,
        })
    }

    fn sample_tokens(&self, input: &MotionInput, b: usize) -> Result<Tensor> {
        match input {
            MotionInput::Tokens(pairs) => {
                let embed = self.embed.as_ref().ok_or_else(|| {
                    TrinityError::Config(
                        "token-pair input on a model built without vector quantization".into(),
                    )
                })?;
                let row = &pairs[b];
                if row.len() != self.grid {
                    return Err(TrinityError::Contract(format!(
                        "expected {} token pairs, got {}",
                        self.grid,
                        row.len()
                    )));
                }
                for p in row {
                    if p.q_index >= self.vocab || p.err_index >= self.vocab {
                        return Err(TrinityError::Contract(format!(
                            "token pair ({}, {}) out of range for vocabulary {}",
                            p.q_index, p.err_index, self.vocab
                        )));
                    }
                }
                let q_idx: Vec<usize> = row.iter().map(|p| p.q_index).collect();
                let e_idx: Vec<usize> = row.iter().map(|p| p.err_index).collect();
                let q = Tensor::embedding(embed, &q_idx)?;
                let e = Tensor::embedding(embed, &e_idx)?;
                concat(&[&q, &e], 1)
            }
            MotionInput::Features(feats) => {
                let proj = self.hof_proj.as_ref().ok_or_else(|| {
                    TrinityError::Config(
                        "raw-feature input on a model built with vector quantization".into(),
                    )
                })?;
                let row = &feats[b];
                if row.len() != self.grid {
                    return Err(TrinityError::Contract(format!(
                        "expected {} patch descriptors, got {}",
                        self.grid,
                        row.len()
                    )));
                }
                let mut flat = Vec::with_capacity(self.grid * HOF_CHANNELS);
                for f in row {
                    if f.len() != HOF_CHANNELS {
                        return Err(TrinityError::Contract(format!(
                            "descriptor has {} channels, expected {HOF_CHANNELS}",
                            f.len()
                        )));
                    }
                    flat.extend_from_slice(f);
                }
                proj.forward(&Tensor::from_vec(flat, &[self.grid, HOF_CHANNELS])?)
            }
        }
    }

    /// Output is `[B, N, D]` with unit-norm tokens.
    pub fn forward(&self, input: &MotionInput) -> Result<Tensor> {
        let batch = input.batch_len();
        if batch == 0 {
            return Err(TrinityError::Degenerate("empty motion batch".into()));
        }
        let mut per_sample = Vec::with_capacity(batch);
        for b in 0..batch {
            let tokens = self.sample_tokens(input, b)?;
            let mut x = concat(&[&self.head_token, &tokens], 0)?.add(&self.pos_embed)?;
            for block in &self.blocks {
                x = block.forward(&x)?;
            }
            let h = x.matmul(&self.proj)?.l2_normalize();
            per_sample.push(h.reshape(&[1, self.grid + 1, h.shape()[1]])?);
        }
        let refs: Vec<&Tensor> = per_sample.iter().collect();
        concat(&refs, 0)
    }

    pub fn params(&self, prefix: &str, out: &mut ParamSet) {
        if let Some(e) = &self.embed {
            out.register(format!("{prefix}.embed"), e);
        }
        if let Some(p) = &self.hof_proj {
            p.params(&format!("{prefix}.hof_proj"), out);
        }
        out.register(format!("{prefix}.pos_embed"), &self.pos_embed);
        out.register(format!("{prefix}.head_token"), &self.head_token);
        for (i, b) in self.blocks.iter().enumerate() {
            b.params(&format!("{prefix}.block{i}"), out);
        }
        out.register(format!("{prefix}.proj"), &self.proj);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn branch(use_vq: bool) -> MotionBranch {
        let cfg = ModelConfig {
            use_vq,
            ..ModelConfig::desk()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        MotionBranch::new(&cfg, &mut rng).unwrap()
    }

    fn uniform_pairs(q: usize, e: usize) -> Vec<TokenPair> {
        vec![
            TokenPair {
                q_index: q,
                err_index: e
            };
            16
        ]
    }

    #[test]
    fn static_clip_tokens_differ_only_by_position() {
        // All patches share one token pair; local tokens must still be
        // distinguished by the positional embedding.
        let b = branch(true);
        let out = b
            .forward(&MotionInput::Tokens(vec![uniform_pairs(3, 0)]))
            .unwrap();
        assert_eq!(out.shape(), &[1, 17, 64]);
        let v = out.value();
        let t1 = &v[64..128];
        let t2 = &v[128..192];
        assert!(t1.iter().zip(t2).any(|(a, b)| (a - b).abs() > 1e-9));
    }

    #[test]
    fn changed_pair_moves_only_that_patch_representation() {
        let b = branch(true);
        let base = uniform_pairs(3, 0);
        let mut injected = base.clone();
        injected[5] = TokenPair {
            q_index: 9,
            err_index: 31,
        };
        let h0 = b.forward(&MotionInput::Tokens(vec![base])).unwrap().value();
        let h1 = b
            .forward(&MotionInput::Tokens(vec![injected]))
            .unwrap()
            .value();
        // Patch 5 lives at token index 6 (after the global head).
        let t0 = &h0[6 * 64..7 * 64];
        let t1 = &h1[6 * 64..7 * 64];
        let diff: f64 = t0.iter().zip(t1).map(|(a, b)| (a - b).abs()).sum();
        assert!(diff > 1e-6, "injected pair left token unchanged");
    }

    #[test]
    fn out_of_range_token_is_contract_error() {
        let b = branch(true);
        let mut pairs = uniform_pairs(0, 0);
        pairs[0].q_index = 64;
        assert!(matches!(
            b.forward(&MotionInput::Tokens(vec![pairs])),
            Err(TrinityError::Contract(_))
        ));
    }

    #[test]
    fn raw_feature_path_works_without_vq() {
        let b = branch(false);
        let feats = vec![vec![vec![0.1; HOF_CHANNELS]; 16]];
        let out = b.forward(&MotionInput::Features(feats)).unwrap();
        assert_eq!(out.shape(), &[1, 17, 64]);
    }

    #[test]
    fn mismatched_input_kind_is_config_error() {
        let b = branch(true);
        let feats = vec![vec![vec![0.1; HOF_CHANNELS]; 16]];
        assert!(matches!(
            b.forward(&MotionInput::Features(feats)),
            Err(TrinityError::Config(_))
        ));
    }
}
