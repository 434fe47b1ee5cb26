//! Context branch: an MLP projects the one-hot context into a temporal
//! embedding, and context attention blocks adjust a learnable spatial
//! positional embedding with it. The attended summary token (query from
//! the temporal context, keys/values from the positional tokens) is
//! broadcast back onto every position as the block's residual.

use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::data::ContextVector;
use crate::error::{Result, TrinityError};
use crate::numerics::{
    concat, trunc_normal, AttnScale, LayerNorm, Linear, MultiHeadAttention, ParamSet, Tensor,
};

pub struct ContextBranch {
    fc1: Linear,
    ln1: LayerNorm,
    fc2: Linear,
    ln2: LayerNorm,
    fc3: Linear,
    /// Learnable spatial positional embedding, one row per token.
    pos_embed: Tensor,
    blocks: Vec<MultiHeadAttention>,
    proj: Tensor,
    context_dim: usize,
    tokens: usize,
    input_dim: usize,
}

impl ContextBranch {
    pub fn new(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<ContextBranch> {
        let d = cfg.context_dim;
        let n = cfg.token_count();
        let y = cfg.context_layout.dim();
        let blocks = (0..cfg.tscab_blocks)
            .map(|_| MultiHeadAttention::new(rng, d, d, d, cfg.heads, AttnScale::FullDim))
            .collect::<Result<Vec<_>>>()?;
        Ok(ContextBranch {
            fc1: Linear::new(rng, y, d),
            ln1: LayerNorm::new(d),
            fc2: Linear::new(rng, d, d),
            ln2: LayerNorm::new(d),
            fc3: Linear::new(rng, d, d),
            pos_embed: trunc_normal(rng, &[n, d], 0.02),
            blocks,
            proj: trunc_normal(rng, &[d, cfg.joint_dim], 0.02),
            context_dim: d,
            tokens: n,
            input_dim: y,
        })
    }

    /// Temporal context embedding: two Linear-LayerNorm-GELU blocks and
    /// a final Linear.
    fn temporal_embedding(&self, c: &Tensor) -> Result<Tensor> {
        let x = self.ln1.forward(&self.fc1.forward(c)?)?.gelu();
        let x = self.ln2.forward(&self.fc2.forward(&x)?)?.gelu();
        self.fc3.forward(&x)
    }

    /// `contexts` is one encoding per batch entry; output is `[B, N, D]`
    /// with unit-norm tokens. The output for a sample depends only on
    /// its own context.
    pub fn forward(&self, contexts: &[ContextVector]) -> Result<Tensor> {
        if contexts.is_empty() {
            return Err(TrinityError::Degenerate("empty context batch".into()));
        }
        let mut per_sample = Vec::with_capacity(contexts.len());
        for ctx in contexts {
            if ctx.dim() != self.input_dim {
                return Err(TrinityError::Config(format!(
                    "context vector has dimension {}, model expects {}",
                    ctx.dim(),
                    self.input_dim
                )));
            }
            let c = Tensor::from_vec(ctx.bits.clone(), &[1, self.input_dim])?;
            let t = self.temporal_embedding(&c)?;
            let mut p = self.pos_embed.clone();
            for block in &self.blocks {
                let attended = block.forward(&t, &p, &p)?;
                p = p.add(&attended)?;
            }
            let h = p.matmul(&self.proj)?.l2_normalize();
            per_sample.push(h.reshape(&[1, self.tokens, h.shape()[1]])?);
        }
        let refs: Vec<&Tensor> = per_sample.iter().collect();
        concat(&refs, 0)
    }

    /// Attention weights of each block for one context (inspection).
    pub fn attention_maps(&self, ctx: &ContextVector) -> Result<Vec<Vec<Vec<f64>>>> {
        let c = Tensor::from_vec(ctx.bits.clone(), &[1, self.input_dim])?;
        let t = self.temporal_embedding(&c)?;
        let mut p = self.pos_embed.clone();
        let mut maps = Vec::new();
        for block in &self.blocks {
            let (attended, weights) = block.forward_with_weights(&t, &p, &p)?;
            maps.push(weights);
            p = p.add(&attended)?;
        }
        Ok(maps)
    }

    pub fn params(&self, prefix: &str, out: &mut ParamSet) {
        self.fc1.params(&format!("{prefix}.mlp.fc1"), out);
        self.ln1.params(&format!("{prefix}.mlp.ln1"), out);
        self.fc2.params(&format!("{prefix}.mlp.fc2"), out);
        self.ln2.params(&format!("{prefix}.mlp.ln2"), out);
        self.fc3.params(&format!("{prefix}.mlp.fc3"), out);
        out.register(format!("{prefix}.pos_embed"), &self.pos_embed);
        for (i, b) in self.blocks.iter().enumerate() {
            b.params(&format!("{prefix}.block{i}"), out);
        }
        out.register(format!("{prefix}.proj"), &self.proj);
    }

    pub fn context_dim(&self) -> usize {
        self.context_dim
    }
}
