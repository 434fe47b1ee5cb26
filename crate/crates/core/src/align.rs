//! Contrastive alignment losses between branch outputs: CLIP-style
//! symmetric NCE at the global level, batch-wise and patch-wise NCE at
//! the local level, and their weighted combination with the
//! reconstruction loss.

use crate::error::{Result, TrinityError};
use crate::model::{AlignMode, ForwardOutput};
use crate::numerics::{concat, Tensor};

/// Local/global loss weights (beta_1, beta_2).
#[derive(Clone, Copy, Debug)]
pub struct LossWeights {
    pub beta_local: f64,
    pub beta_global: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            beta_local: 1.0,
            beta_global: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.beta_local < 0.0 || self.beta_global < 0.0 {
            return Err(TrinityError::Config(format!(
                "loss weights must be nonnegative, got ({}, {})",
                self.beta_local, self.beta_global
            )));
        }
        Ok(())
    }
}

/// Alignment-scheme toggles for the ablation grid. The full loss keeps
/// everything on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AblationToggles {
    /// Global alignment.
    pub ga: bool,
    /// Vector quantization in the motion branch.
    pub vq: bool,
    /// Batch-wise local alignment.
    pub lb: bool,
    /// Patch-wise local alignment.
    pub lp: bool,
}

impl Default for AblationToggles {
    fn default() -> Self {
        AblationToggles {
            ga: true,
            vq: true,
            lb: true,
            lp: true,
        }
    }
}

impl AblationToggles {
    pub fn validate(&self) -> Result<()> {
        if (self.lb || self.lp) && !self.ga {
            return Err(TrinityError::Config(
                "local alignment (LB/LP) requires global alignment (GA)".into(),
            ));
        }
        if !self.ga && !self.lb && !self.lp {
            return Err(TrinityError::Config(
                "at least one alignment term must be enabled".into(),
            ));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.ga {
            parts.push("GA");
        }
        if self.vq {
            parts.push("VQ");
        }
        if self.lb {
            parts.push("LB");
        }
        if self.lp {
            parts.push("LP");
        }
        parts.join("+")
    }
}

/// Similarity logits between two token matrices: `h1 . h2^T / tau`.
pub fn pair_logits(h1: &Tensor, h2: &Tensor, tau: &Tensor) -> Result<Tensor> {
    h1.matmul(&h2.transpose()?)?.div(tau)
}

/// Symmetric InfoNCE over square logits with diagonal targets: the mean
/// row cross-entropy in both directions, averaged. Mean normalization
/// keeps the magnitude independent of batch and token counts.
fn symmetric_nce(logits: &Tensor) -> Result<Tensor> {
    let forward = logits.logsumexp_rows()?.sub(&logits.diag()?)?.mean_all();
    let transposed = logits.transpose()?;
    let backward = transposed
        .logsumexp_rows()?
        .sub(&transposed.diag()?)?
        .mean_all();
    Ok(forward.add(&backward)?.mul_scalar(0.5))
}

/// Global alignment loss between `[B, D]` head tokens. Every other
/// sample in the batch is a negative.
pub fn global_nce_loss(h1: &Tensor, h2: &Tensor, tau: &Tensor) -> Result<Tensor> {
    if h1.shape() != h2.shape() || h1.shape().len() != 2 {
        return Err(TrinityError::ShapeMismatch {
            op: "global_nce_loss",
            lhs: h1.shape().to_vec(),
            rhs: h2.shape().to_vec(),
        });
    }
    if h1.shape()[0] < 2 {
        return Err(TrinityError::Degenerate(
            "global alignment needs a batch of at least 2 (no negatives otherwise)".into(),
        ));
    }
    symmetric_nce(&pair_logits(h1, h2, tau)?)
}

/// Batch-wise local alignment over `[B, N-1, D]` local tokens: one
/// B x B symmetric NCE per grid location, averaged over locations.
pub fn batchwise_local_loss(h1: &Tensor, h2: &Tensor, tau: &Tensor) -> Result<Tensor> {
    if h1.shape() != h2.shape() || h1.shape().len() != 3 {
        return Err(TrinityError::ShapeMismatch {
            op: "batchwise_local_loss",
            lhs: h1.shape().to_vec(),
            rhs: h2.shape().to_vec(),
        });
    }
    let (b, locations) = (h1.shape()[0], h1.shape()[1]);
    if b < 2 {
        return Err(TrinityError::Degenerate(
            "batch-wise local alignment needs a batch of at least 2".into(),
        ));
    }
    let mut per_location = Vec::with_capacity(locations);
    for loc in 0..locations {
        let l1 = h1.select(1, loc)?;
        let l2 = h2.select(1, loc)?;
        per_location.push(symmetric_nce(&pair_logits(&l1, &l2, tau)?)?);
    }
    let refs: Vec<&Tensor> = per_location.iter().collect();
    Ok(concat(&refs, 0)?.mean_all())
}

/// Patch-wise local alignment over `[B, N-1, D]` local tokens: one
/// (N-1) x (N-1) symmetric NCE per sample, averaged over the batch.
pub fn patchwise_local_loss(h1: &Tensor, h2: &Tensor, tau: &Tensor) -> Result<Tensor> {
    if h1.shape() != h2.shape() || h1.shape().len() != 3 {
        return Err(TrinityError::ShapeMismatch {
            op: "patchwise_local_loss",
            lhs: h1.shape().to_vec(),
            rhs: h2.shape().to_vec(),
        });
    }
    let (b, locations) = (h1.shape()[0], h1.shape()[1]);
    if locations < 2 {
        return Err(TrinityError::Degenerate(
            "patch-wise local alignment needs at least 2 local tokens".into(),
        ));
    }
    let mut per_sample = Vec::with_capacity(b);
    for bi in 0..b {
        let s1 = h1.select(0, bi)?;
        let s2 = h2.select(0, bi)?;
        per_sample.push(symmetric_nce(&pair_logits(&s1, &s2, tau)?)?);
    }
    let refs: Vec<&Tensor> = per_sample.iter().collect();
    Ok(concat(&refs, 0)?.mean_all())
}

/// Scalar values of each loss term in one step, for the training log.
#[derive(Clone, Debug, Default)]
pub struct LossComponents {
    pub total: f64,
    pub recon: f64,
    pub terms: Vec<(String, f64)>,
}

/// The training loss: reconstruction plus weighted local and global
/// alignment. Contextual mode aligns motion-context and
/// appearance-context pairs globally and adds the three patch-wise
/// terms with the batch-wise appearance-motion term; context-free mode
/// keeps only appearance-motion terms.
pub fn trinity_loss(
    out: &ForwardOutput,
    mode: AlignMode,
    weights: &LossWeights,
    toggles: &AblationToggles,
    tau: &Tensor,
) -> Result<(Tensor, LossComponents)> {
    weights.validate()?;
    toggles.validate()?;
    let mut components = LossComponents {
        recon: out.l_recon.scalar_value(),
        ..Default::default()
    };
    let app_g = ForwardOutput::global(&out.h_app)?;
    let mot_g = ForwardOutput::global(&out.h_mot)?;
    let app_l = ForwardOutput::locals(&out.h_app)?;
    let mot_l = ForwardOutput::locals(&out.h_mot)?;

    let mut global_terms: Vec<Tensor> = Vec::new();
    let mut local_terms: Vec<Tensor> = Vec::new();
    match (mode, &out.h_cxt) {
        (AlignMode::Contextual, Some(h_cxt)) => {
            let cxt_g = ForwardOutput::global(h_cxt)?;
            let cxt_l = ForwardOutput::locals(h_cxt)?;
            if toggles.ga {
                let t = global_nce_loss(&app_g, &cxt_g, tau)?;
                components.terms.push(("global_app_cxt".into(), t.scalar_value()));
                global_terms.push(t);
                let t = global_nce_loss(&mot_g, &cxt_g, tau)?;
                components.terms.push(("global_mot_cxt".into(), t.scalar_value()));
                global_terms.push(t);
            }
            if toggles.lb {
                let t = batchwise_local_loss(&app_l, &mot_l, tau)?;
                components.terms.push(("batch_app_mot".into(), t.scalar_value()));
                local_terms.push(t);
            }
            if toggles.lp {
                let t = patchwise_local_loss(&cxt_l, &mot_l, tau)?;
                components.terms.push(("patch_cxt_mot".into(), t.scalar_value()));
                local_terms.push(t);
                let t = patchwise_local_loss(&cxt_l, &app_l, tau)?;
                components.terms.push(("patch_cxt_app".into(), t.scalar_value()));
                local_terms.push(t);
                let t = patchwise_local_loss(&app_l, &mot_l, tau)?;
                components.terms.push(("patch_app_mot".into(), t.scalar_value()));
                local_terms.push(t);
            }
        }
        (AlignMode::ContextFree, None) => {
            if toggles.ga {
                let t = global_nce_loss(&app_g, &mot_g, tau)?;
                components.terms.push(("global_app_mot".into(), t.scalar_value()));
                global_terms.push(t);
            }
            if toggles.lb {
                let t = batchwise_local_loss(&app_l, &mot_l, tau)?;
                components.terms.push(("batch_app_mot".into(), t.scalar_value()));
                local_terms.push(t);
            }
            if toggles.lp {
                let t = patchwise_local_loss(&app_l, &mot_l, tau)?;
                components.terms.push(("patch_app_mot".into(), t.scalar_value()));
                local_terms.push(t);
            }
        }
        _ => {
            return Err(TrinityError::Config(
                "alignment mode does not match the branch outputs".into(),
            ))
        }
    }

    let mut total = out.l_recon.clone();
    if !local_terms.is_empty() {
        let refs: Vec<&Tensor> = local_terms.iter().collect();
        let local = concat(&refs, 0)?.sum_all().mul_scalar(weights.beta_local);
        total = total.add(&local)?;
    }
    if !global_terms.is_empty() {
        let refs: Vec<&Tensor> = global_terms.iter().collect();
        let global = concat(&refs, 0)?.sum_all().mul_scalar(weights.beta_global);
        total = total.add(&global)?;
    }
    components.total = total.scalar_value();
    Ok((total, components))
}

/// Alignment logits packaged for inspection dumps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AlignLevel {
    Global,
    BatchLocal,
    PatchLocal,
}

#[derive(Clone, Debug)]
pub struct AlignmentLogits {
    pub pair: String,
    pub level: AlignLevel,
    /// Stacked square matrices: one for Global, N-1 for BatchLocal,
    /// B for PatchLocal.
    pub matrices: Vec<Vec<f64>>,
    pub side: usize,
    pub tau: f64,
}

impl AlignmentLogits {
    /// Compute logits outside the gradient graph.
    pub fn compute(
        pair: impl Into<String>,
        level: AlignLevel,
        h1: &Tensor,
        h2: &Tensor,
        tau: &Tensor,
    ) -> Result<AlignmentLogits> {
        let tau_v = tau.value()[0];
        crate::numerics::no_grad(|| {
            let (matrices, side) = match level {
                AlignLevel::Global => {
                    let l = pair_logits(h1, h2, tau)?;
                    (vec![l.value()], l.shape()[0])
                }
                AlignLevel::BatchLocal => {
                    let locs = h1.shape()[1];
                    let mut ms = Vec::with_capacity(locs);
                    for loc in 0..locs {
                        ms.push(
                            pair_logits(&h1.select(1, loc)?, &h2.select(1, loc)?, tau)?.value(),
                        );
                    }
                    (ms, h1.shape()[0])
                }
                AlignLevel::PatchLocal => {
                    let b = h1.shape()[0];
                    let mut ms = Vec::with_capacity(b);
                    for bi in 0..b {
                        ms.push(pair_logits(&h1.select(0, bi)?, &h2.select(0, bi)?, tau)?.value());
                    }
                    (ms, h1.shape()[1])
                }
            };
            for m in &matrices {
                if m.iter().any(|v| !v.is_finite()) {
                    return Err(TrinityError::Contract(
                        "alignment logits contain non-finite values".into(),
                    ));
                }
            }
            Ok(AlignmentLogits {
                pair: pair.into(),
                level,
                matrices,
                side,
                tau: tau_v,
            })
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tensor2(rows: &[[f64; 2]]) -> Tensor {
        let data: Vec<f64> = rows.iter().flatten().copied().collect();
        Tensor::from_vec(data, &[rows.len(), 2]).unwrap()
    }

    fn random_unit_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Tensor {
        let data: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::from_vec(data, &[n, d]).unwrap().l2_normalize()
    }

    #[test]
    fn identity_logits_at_unit_tau_match_hand_value() {
        let h = tensor2(&[[1.0, 0.0], [0.0, 1.0]]);
        let tau = Tensor::scalar(1.0);
        let loss = global_nce_loss(&h, &h, &tau).unwrap().scalar_value();
        let expected = -(1f64.exp() / (1f64.exp() + 1.0)).ln();
        assert!((loss - expected).abs() < 1e-12, "{loss} vs {expected}");
    }

    #[test]
    fn perfect_alignment_at_small_tau_vanishes() {
        let h = tensor2(&[[1.0, 0.0], [0.0, 1.0]]);
        let tau = Tensor::scalar(0.01);
        let loss = global_nce_loss(&h, &h, &tau).unwrap().scalar_value();
        assert!(loss >= 0.0 && loss < 1e-8, "loss = {loss}");
    }

    #[test]
    fn random_embeddings_approach_log_batch() {
        // Uniform-logit expectation oracle: near-orthogonal rows at
        // tau = 1 give a loss close to ln(B).
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let b = 64;
        let h1 = random_unit_rows(&mut rng, b, 512);
        let h2 = random_unit_rows(&mut rng, b, 512);
        let tau = Tensor::scalar(1.0);
        let loss = global_nce_loss(&h1, &h2, &tau).unwrap().scalar_value();
        let target = (b as f64).ln();
        assert!((loss - target).abs() < 0.12 * target, "{loss} vs {target}");
    }

    #[test]
    fn single_location_batchwise_reduces_to_global() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = 5;
        let flat1 = random_unit_rows(&mut rng, b, 8);
        let flat2 = random_unit_rows(&mut rng, b, 8);
        let tau = Tensor::scalar(0.3);
        let g = global_nce_loss(&flat1, &flat2, &tau).unwrap().scalar_value();
        let h1 = flat1.reshape(&[b, 1, 8]).unwrap();
        let h2 = flat2.reshape(&[b, 1, 8]).unwrap();
        let l = batchwise_local_loss(&h1, &h2, &tau).unwrap().scalar_value();
        assert!((g - l).abs() < 1e-12);
    }

    #[test]
    fn single_sample_patchwise_reduces_to_its_nce() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 6;
        let flat1 = random_unit_rows(&mut rng, n, 8);
        let flat2 = random_unit_rows(&mut rng, n, 8);
        let tau = Tensor::scalar(0.5);
        let direct = symmetric_nce(&pair_logits(&flat1, &flat2, &tau).unwrap())
            .unwrap()
            .scalar_value();
        let h1 = flat1.reshape(&[1, n, 8]).unwrap();
        let h2 = flat2.reshape(&[1, n, 8]).unwrap();
        let l = patchwise_local_loss(&h1, &h2, &tau).unwrap().scalar_value();
        assert!((direct - l).abs() < 1e-12);
    }

    #[test]
    fn losses_are_symmetric_in_their_arguments() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let tau = Tensor::scalar(0.2);
        let a = random_unit_rows(&mut rng, 4, 8);
        let b = random_unit_rows(&mut rng, 4, 8);
        let ab = global_nce_loss(&a, &b, &tau).unwrap().scalar_value();
        let ba = global_nce_loss(&b, &a, &tau).unwrap().scalar_value();
        assert!((ab - ba).abs() < 1e-10);

        let a3 = random_unit_rows(&mut rng, 12, 8).reshape(&[3, 4, 8]).unwrap();
        let b3 = random_unit_rows(&mut rng, 12, 8).reshape(&[3, 4, 8]).unwrap();
        let f = batchwise_local_loss(&a3, &b3, &tau).unwrap().scalar_value();
        let r = batchwise_local_loss(&b3, &a3, &tau).unwrap().scalar_value();
        assert!((f - r).abs() < 1e-10);
        let f = patchwise_local_loss(&a3, &b3, &tau).unwrap().scalar_value();
        let r = patchwise_local_loss(&b3, &a3, &tau).unwrap().scalar_value();
        assert!((f - r).abs() < 1e-10);
    }

    #[test]
    fn degenerate_batches_are_rejected() {
        let tau = Tensor::scalar(1.0);
        let one = tensor2(&[[1.0, 0.0]]);
        assert!(matches!(
            global_nce_loss(&one, &one, &tau),
            Err(TrinityError::Degenerate(_))
        ));
        let single_loc = Tensor::zeros(&[3, 1, 4]);
        assert!(matches!(
            patchwise_local_loss(&single_loc, &single_loc, &tau),
            Err(TrinityError::Degenerate(_))
        ));
    }

    #[test]
    fn toggles_validate_dependencies() {
        let bad = AblationToggles {
            ga: false,
            vq: true,
            lb: true,
            lp: false,
        };
        assert!(matches!(bad.validate(), Err(TrinityError::Config(_))));
        let ok = AblationToggles {
            ga: true,
            vq: false,
            lb: false,
            lp: true,
        };
        ok.validate().unwrap();
        assert_eq!(ok.label(), "GA+LP");
    }

    #[test]
    fn nce_loss_is_nonnegative_on_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..20 {
            let b = rng.gen_range(2..6);
            let h1 = random_unit_rows(&mut rng, b, 4);
            let h2 = random_unit_rows(&mut rng, b, 4);
            let tau = Tensor::scalar(rng.gen_range(0.05..2.0));
            let loss = global_nce_loss(&h1, &h2, &tau).unwrap().scalar_value();
            // Symmetric diagonal-target NCE over a batch with negatives
            // is strictly positive in finite batches.
            assert!(loss > 0.0);
        }
    }
}
