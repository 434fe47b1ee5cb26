//! Appearance branch: a U-net predicts the tube's last frame from the
//! preceding ones; its bottleneck features are detached from the
//! reconstruction path, tokenized by a patch-aligned convolution, and
//! run through transformer blocks behind a learnable global head.

use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::error::{Result, TrinityError};
use crate::numerics::{concat, trunc_normal, Conv2d, ParamSet, Tensor, TransformerBlock};

pub struct AppearanceBranch {
    enc0: Conv2d,
    enc1: Conv2d,
    enc2: Conv2d,
    enc3: Conv2d,
    dec2: Conv2d,
    dec1: Conv2d,
    dec0: Conv2d,
    out_conv: Conv2d,
    tokenizer: Conv2d,
    pos_embed: Tensor,
    head_token: Tensor,
    blocks: Vec<TransformerBlock>,
    proj: Tensor,
    grid: usize,
}

pub struct AppearanceOutput {
    /// `[B, N, D]`, unit-norm tokens.
    pub h_app: Tensor,
    /// Predicted frame, `[B, 1, H, W]`.
    pub prediction: Tensor,
    /// Root-mean-square prediction error (scalar).
    pub l_recon: Tensor,
}

impl AppearanceBranch {
    pub fn new(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<AppearanceBranch> {
        let [c0, c1, c2] = cfg.unet_channels;
        let c_in = cfg.frames_per_tube - 1;
        let d = cfg.token_dim;
        let n = cfg.token_count();
        let r = cfg.tokenizer_kernel();
        let blocks = (0..cfg.appearance_blocks)
            .map(|_| TransformerBlock::new(rng, d, cfg.heads, 4))
            .collect::<Result<Vec<_>>>()?;
        Ok(AppearanceBranch {
            enc0: Conv2d::new(rng, c_in, c0, 3, 1, 1),
            enc1: Conv2d::new(rng, c0, c1, 3, 2, 1),
            enc2: Conv2d::new(rng, c1, c2, 3, 2, 1),
            enc3: Conv2d::new(rng, c2, c2, 3, 2, 1),
            dec2: Conv2d::new(rng, c2 + c2, c1, 3, 1, 1),
            dec1: Conv2d::new(rng, c1 + c1, c0, 3, 1, 1),
            dec0: Conv2d::new(rng, c0 + c0, c0, 3, 1, 1),
            out_conv: Conv2d::new(rng, c0, 1, 3, 1, 1),
            tokenizer: Conv2d::new(rng, c2, d, r, r, 0),
            pos_embed: trunc_normal(rng, &[n, d], 0.02),
            head_token: trunc_normal(rng, &[1, d], 0.02),
            blocks,
            proj: trunc_normal(rng, &[d, cfg.joint_dim], 0.02),
            grid: n - 1,
        })
    }

    /// `input` is `[B, T-1, H, W]` (earlier frames as channels),
    /// `target` is `[B, 1, H, W]` (the tube's last frame). Values must
    /// lie in [-1, 1].
    pub fn forward(&self, input: &Tensor, target: &Tensor) -> Result<AppearanceOutput> {
        for (name, t) in [("input", input), ("target", target)] {
            if t.value().iter().any(|v| !v.is_finite() || v.abs() > 1.0 + 1e-9) {
                return Err(TrinityError::Contract(format!(
                    "appearance {name} frames must lie in [-1, 1]"
                )));
            }
        }
        let e0 = self.enc0.forward(input)?.relu();
        let e1 = self.enc1.forward(&e0)?.relu();
        let e2 = self.enc2.forward(&e1)?.relu();
        let z = self.enc3.forward(&e2)?.relu();

        let up2 = z.upsample_nearest_2x()?;
        let d2 = self.dec2.forward(&concat(&[&up2, &e2], 1)?)?.relu();
        let up1 = d2.upsample_nearest_2x()?;
        let d1 = self.dec1.forward(&concat(&[&up1, &e1], 1)?)?.relu();
        let up0 = d1.upsample_nearest_2x()?;
        let d0 = self.dec0.forward(&concat(&[&up0, &e0], 1)?)?.relu();
        let prediction = self.out_conv.forward(&d0)?.tanh();

        let diff = prediction.sub(target)?;
        let l_recon = diff.mul(&diff)?.mean_all().add_scalar(1e-12).sqrt();

        // Stop gradient: the alignment losses must not disturb the
        // reconstruction path.
        let zt = z.detach();
        let tokens = self.tokenizer.forward(&zt)?;
        let (b, d) = (tokens.shape()[0], tokens.shape()[1]);
        let (gh, gw) = (tokens.shape()[2], tokens.shape()[3]);
        if gh * gw != self.grid {
            return Err(TrinityError::Config(format!(
                "tokenizer produced {}x{} tokens, expected {}",
                gh, gw, self.grid
            )));
        }
        let mut per_sample = Vec::with_capacity(b);
        for bi in 0..b {
            let sample = tokens.select(0, bi)?.reshape(&[d, self.grid])?.transpose()?;
            let mut x = concat(&[&self.head_token, &sample], 0)?.add(&self.pos_embed)?;
            for block in &self.blocks {
                x = block.forward(&x)?;
            }
            let h = x.matmul(&self.proj)?.l2_normalize();
            per_sample.push(h.reshape(&[1, self.grid + 1, h.shape()[1]])?);
        }
        let refs: Vec<&Tensor> = per_sample.iter().collect();
        Ok(AppearanceOutput {
            h_app: concat(&refs, 0)?,
            prediction,
            l_recon,
        })
    }

    pub fn params(&self, prefix: &str, out: &mut ParamSet) {
        self.enc0.params(&format!("{prefix}.enc0"), out);
        self.enc1.params(&format!("{prefix}.enc1"), out);
        self.enc2.params(&format!("{prefix}.enc2"), out);
        self.enc3.params(&format!("{prefix}.enc3"), out);
        self.dec2.params(&format!("{prefix}.dec2"), out);
        self.dec1.params(&format!("{prefix}.dec1"), out);
        self.dec0.params(&format!("{prefix}.dec0"), out);
        self.out_conv.params(&format!("{prefix}.out_conv"), out);
        self.tokenizer.params(&format!("{prefix}.tokenizer"), out);
        out.register(format!("{prefix}.pos_embed"), &self.pos_embed);
        out.register(format!("{prefix}.head_token"), &self.head_token);
        for (i, b) in self.blocks.iter().enumerate() {
            b.params(&format!("{prefix}.block{i}"), out);
        }
        out.register(format!("{prefix}.proj"), &self.proj);
    }

    /// Names of the parameters on the reconstruction (encoder/decoder)
    /// side of the stop gradient.
    pub fn unet_param_names(&self, prefix: &str) -> Vec<String> {
        ["enc0", "enc1", "enc2", "enc3", "dec2", "dec1", "dec0", "out_conv"]
            .iter()
            .flat_map(|stage| {
                [
                    format!("{prefix}.{stage}.weight"),
                    format!("{prefix}.{stage}.bias"),
                ]
            })
            .collect()
    }

    /// Encoder-only parameter names (strictly behind the stop gradient).
    pub fn encoder_param_names(&self, prefix: &str) -> Vec<String> {
        ["enc0", "enc1", "enc2", "enc3"]
            .iter()
            .flat_map(|stage| {
                [
                    format!("{prefix}.{stage}.weight"),
                    format!("{prefix}.{stage}.bias"),
                ]
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            frame_height: 32,
            frame_width: 32,
            patch_size: 16,
            token_dim: 16,
            joint_dim: 16,
            heads: 2,
            unet_channels: [4, 6, 8],
            appearance_blocks: 1,
            ..ModelConfig::desk()
        }
    }

    fn frames(b: usize, c: usize, h: usize, w: usize, level: f64) -> Tensor {
        Tensor::from_vec(vec![level; b * c * h * w], &[b, c, h, w]).unwrap()
    }

    #[test]
    fn output_shapes_match_config() {
        let cfg = tiny_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let branch = AppearanceBranch::new(&cfg, &mut rng).unwrap();
        let out = branch
            .forward(&frames(2, 3, 32, 32, 0.1), &frames(2, 1, 32, 32, 0.2))
            .unwrap();
        assert_eq!(out.h_app.shape(), &[2, cfg.token_count(), 16]);
        assert_eq!(out.prediction.shape(), &[2, 1, 32, 32]);
        assert_eq!(out.l_recon.numel(), 1);
    }

    #[test]
    fn out_of_range_frames_are_rejected() {
        let cfg = tiny_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let branch = AppearanceBranch::new(&cfg, &mut rng).unwrap();
        match branch.forward(&frames(1, 3, 32, 32, 1.5), &frames(1, 1, 32, 32, 0.0)) {
            Err(TrinityError::Contract(_)) => {}
            Err(other) => panic!("expected contract error, got {other}"),
            Ok(_) => panic!("expected contract error"),
        }
    }

    #[test]
    fn alignment_gradients_stop_at_the_bottleneck() {
        let cfg = tiny_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let branch = AppearanceBranch::new(&cfg, &mut rng).unwrap();
        let out = branch
            .forward(&frames(1, 3, 32, 32, 0.3), &frames(1, 1, 32, 32, -0.2))
            .unwrap();
        // A loss built only from the branch tokens must leave every
        // U-net parameter with an exactly zero gradient.
        let loss = out.h_app.mul(&out.h_app).unwrap().mean_all();
        loss.backward().unwrap();
        let mut ps = ParamSet::new();
        branch.params("app", &mut ps);
        for name in branch.unet_param_names("app") {
            let t = ps.get(&name).unwrap();
            assert!(
                t.grad().iter().all(|&g| g == 0.0),
                "{name} received alignment gradient"
            );
        }
        // While the transformer side did receive gradient.
        let proj_grad = ps.get("app.proj").unwrap().grad();
        assert!(proj_grad.iter().any(|&g| g != 0.0));
    }
}
