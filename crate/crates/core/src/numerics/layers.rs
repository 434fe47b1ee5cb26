//! Neural layers assembled from tensor ops: linear, layer norm,
//! multi-head (cross) attention per the alignment architecture, and
//! pre-norm transformer encoder blocks.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tensor::{concat, Tensor};
use crate::error::{Result, TrinityError};

/// Default epsilon for layer norm at float64.
pub const LAYER_NORM_EPS: f64 = 1e-10;

/// Truncated normal init (resample outside two standard deviations).
pub fn trunc_normal(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    while data.len() < n {
        // Box-Muller pair.
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen::<f64>();
        let r = (-2.0 * u1.ln()).sqrt();
        for z in [
            r * (2.0 * std::f64::consts::PI * u2).cos(),
            r * (2.0 * std::f64::consts::PI * u2).sin(),
        ] {
            if z.abs() <= 2.0 && data.len() < n {
                data.push(z * std);
            }
        }
    }
    Tensor::param(data, shape).expect("shape/data agree by construction")
}

/// Ordered registry of named parameters. Names and nodes are unique.
#[derive(Default)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, t: &Tensor) {
        let name = name.into();
        assert!(
            !self.entries.iter().any(|(n, _)| *n == name),
            "duplicate parameter name {name}"
        );
        assert!(
            !self.entries.iter().any(|(_, p)| p.node_id() == t.node_id()),
            "parameter {name} registered twice"
        );
        self.entries.push((name, t.clone()));
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        self.entries.iter().map(|(_, t)| t.clone()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub struct Linear {
    pub weight: Tensor, // [in, out]
    pub bias: Tensor,   // [out]
}

impl Linear {
    pub fn new(rng: &mut ChaCha8Rng, d_in: usize, d_out: usize) -> Self {
        Linear {
            weight: trunc_normal(rng, &[d_in, d_out], 0.02),
            bias: Tensor::param(vec![0.0; d_out], &[d_out]).unwrap(),
        }
    }

    /// `x` is `[n, in]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.matmul(&self.weight)?.add(&self.bias)
    }

    pub fn params(&self, prefix: &str, out: &mut ParamSet) {
        out.register(format!("{prefix}.weight"), &self.weight);
        out.register(format!("{prefix}.bias"), &self.bias);
    }
}

pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(d: usize) -> Self {
        LayerNorm {
            gamma: Tensor::param(vec![1.0; d], &[d]).unwrap(),
            beta: Tensor::param(vec![0.0; d], &[d]).unwrap(),
            eps: LAYER_NORM_EPS,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.layer_norm(&self.gamma, &self.beta, self.eps)
    }

    pub fn params(&self, prefix: &str, out: &mut ParamSet) {
        out.register(format!("{prefix}.gamma"), &self.gamma);
        out.register(format!("{prefix}.beta"), &self.beta);
    }
}

/// How attention scores are scaled before the softmax.
#[derive(Clone, Copy, PartialEq, Eq)]
pub enum AttnScale {
    /// 1/sqrt(d_head), the transformer-encoder convention.
    PerHead,
    /// 1/sqrt(d_model), the context-attention convention.
    FullDim,
}

/// Multi-head attention over 2-D token matrices (one sample at a time).
/// Queries may live in a different input dimension than keys/values.
pub struct MultiHeadAttention {
    pub w_q: Tensor,    // [d_q_in, d]
    pub w_k: Tensor,    // [d_kv_in, d]
    pub w_v: Tensor,    // [d_kv_in, d]
    pub w_proj: Tensor, // [d, d]
    pub heads: usize,
    pub dim: usize,
    pub scale: AttnScale,
}

impl MultiHeadAttention {
    pub fn new(
        rng: &mut ChaCha8Rng,
        d_q_in: usize,
        d_kv_in: usize,
        dim: usize,
        heads: usize,
        scale: AttnScale,
    ) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(TrinityError::Config(format!(
                "attention heads ({heads}) must divide the embedding dimension ({dim})"
            )));
        }
        Ok(MultiHeadAttention {
            w_q: trunc_normal(rng, &[d_q_in, dim], 0.02),
            w_k: trunc_normal(rng, &[d_kv_in, dim], 0.02),
            w_v: trunc_normal(rng, &[d_kv_in, dim], 0.02),
            w_proj: trunc_normal(rng, &[dim, dim], 0.02),
            heads,
            dim,
            scale,
        })
    }

    fn scale_factor(&self) -> f64 {
        match self.scale {
            AttnScale::PerHead => 1.0 / ((self.dim / self.heads) as f64).sqrt(),
            AttnScale::FullDim => 1.0 / (self.dim as f64).sqrt(),
        }
    }

    /// `query` is `[Lq, d_q_in]`, `keys`/`values` are `[Lk, d_kv_in]`.
    /// Output is `[Lq, dim]`.
    pub fn forward(&self, query: &Tensor, keys: &Tensor, values: &Tensor) -> Result<Tensor> {
        Ok(self.forward_inner(query, keys, values, false)?.0)
    }

    /// Forward that also returns the per-head attention weight matrices
    /// (`Lq x Lk` row-stochastic), for inspection dumps.
    pub fn forward_with_weights(
        &self,
        query: &Tensor,
        keys: &Tensor,
        values: &Tensor,
    ) -> Result<(Tensor, Vec<Vec<f64>>)> {
        let (out, weights) = self.forward_inner(query, keys, values, true)?;
        Ok((out, weights))
    }

    fn forward_inner(
        &self,
        query: &Tensor,
        keys: &Tensor,
        values: &Tensor,
        keep_weights: bool,
    ) -> Result<(Tensor, Vec<Vec<f64>>)> {
        if keys.shape() != values.shape() {
            return Err(TrinityError::ShapeMismatch {
                op: "attention key/value",
                lhs: keys.shape().to_vec(),
                rhs: values.shape().to_vec(),
            });
        }
        let q = query.matmul(&self.w_q)?;
        let k = keys.matmul(&self.w_k)?;
        let v = values.matmul(&self.w_v)?;
        let dh = self.dim / self.heads;
        let scale = self.scale_factor();
        let mut head_outputs = Vec::with_capacity(self.heads);
        let mut weights = Vec::new();
        for h in 0..self.heads {
            let qh = q.slice(1, h * dh, dh)?;
            let kh = k.slice(1, h * dh, dh)?;
            let vh = v.slice(1, h * dh, dh)?;
            let scores = qh.matmul(&kh.transpose()?)?.mul_scalar(scale);
            let attn = scores.softmax();
            if keep_weights {
                weights.push(attn.value());
            }
            head_outputs.push(attn.matmul(&vh)?);
        }
        let refs: Vec<&Tensor> = head_outputs.iter().collect();
        let merged = concat(&refs, 1)?;
        Ok((merged.matmul(&self.w_proj)?, weights))
    }

    pub fn params(&self, prefix: &str, out: &mut ParamSet) {
        out.register(format!("{prefix}.w_q"), &self.w_q);
        out.register(format!("{prefix}.w_k"), &self.w_k);
        out.register(format!("{prefix}.w_v"), &self.w_v);
        out.register(format!("{prefix}.w_proj"), &self.w_proj);
    }
}

/// Pre-norm transformer encoder block: self-attention + GELU MLP,
/// both with residual connections.
pub struct TransformerBlock {
    pub ln_attn: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln_mlp: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl TransformerBlock {
    pub fn new(rng: &mut ChaCha8Rng, dim: usize, heads: usize, mlp_ratio: usize) -> Result<Self> {
        Ok(TransformerBlock {
            ln_attn: LayerNorm::new(dim),
            attn: MultiHeadAttention::new(rng, dim, dim, dim, heads, AttnScale::PerHead)?,
            ln_mlp: LayerNorm::new(dim),
            fc1: Linear::new(rng, dim, dim * mlp_ratio),
            fc2: Linear::new(rng, dim * mlp_ratio, dim),
        })
    }

    /// `x` is `[L, dim]` — one sample's token matrix.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let normed = self.ln_attn.forward(x)?;
        let x = x.add(&self.attn.forward(&normed, &normed, &normed)?)?;
        let normed = self.ln_mlp.forward(&x)?;
        let mlp = self.fc2.forward(&self.fc1.forward(&normed)?.gelu())?;
        x.add(&mlp)
    }

    pub fn params(&self, prefix: &str, out: &mut ParamSet) {
        self.ln_attn.params(&format!("{prefix}.ln_attn"), out);
        self.attn.params(&format!("{prefix}.attn"), out);
        self.ln_mlp.params(&format!("{prefix}.ln_mlp"), out);
        self.fc1.params(&format!("{prefix}.fc1"), out);
        self.fc2.params(&format!("{prefix}.fc2"), out);
    }
}

pub struct Conv2d {
    pub weight: Tensor, // [out, in, k, k]
    pub bias: Tensor,   // [out]
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn new(
        rng: &mut ChaCha8Rng,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        // He-style fan-in scaling; the projection init of 0.02 starves
        // a ten-layer conv stack at these widths.
        let std = (1.0 / (c_in * k * k) as f64).sqrt();
        Conv2d {
            weight: trunc_normal(rng, &[c_out, c_in, k, k], std),
            bias: Tensor::param(vec![0.0; c_out], &[c_out]).unwrap(),
            stride,
            pad,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.conv2d(&self.weight, &self.bias, self.stride, self.pad)
    }

    pub fn params(&self, prefix: &str, out: &mut ParamSet) {
        out.register(format!("{prefix}.weight"), &self.weight);
        out.register(format!("{prefix}.bias"), &self.bias);
    }
}
