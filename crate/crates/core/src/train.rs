//! Training loop: Adam over the trinity loss with cosine-annealed
//! learning rate, and the per-step loss-component log.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::align::{trinity_loss, AblationToggles, LossWeights};
use crate::data::{Dataset, SplitKind};
use crate::error::{Result, TrinityError};
use crate::model::{build_batch, AlignMode, ModelConfig, TrinityModel};
use crate::numerics::{Adam, CosineSchedule};
use crate::vq::Codebook;

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub lr_min: f64,
    pub weights: LossWeights,
    pub toggles: AblationToggles,
    pub mode: AlignMode,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            lr: 2e-4,
            lr_min: 1e-6,
            weights: LossWeights::default(),
            toggles: AblationToggles::default(),
            mode: AlignMode::Contextual,
            seed: 0,
        }
    }
}

/// One logged optimization step.
#[derive(Clone, Debug)]
pub struct LossRow {
    pub step: usize,
    pub recon: f64,
    pub terms: Vec<(String, f64)>,
    pub total: f64,
    pub tau: f64,
    pub lr: f64,
}

/// Train a fresh model on the dataset's training split. Returns the
/// model and the per-step loss log.
pub fn train_model(
    dataset: &Dataset,
    codebook: Option<&Codebook>,
    model_cfg: &ModelConfig,
    tc: &TrainConfig,
) -> Result<(TrinityModel, Vec<LossRow>)> {
    tc.toggles.validate()?;
    tc.weights.validate()?;
    let mut cfg = model_cfg.clone();
    cfg.use_vq = tc.toggles.vq;
    let codebook = if tc.toggles.vq {
        match codebook {
            Some(cb) => {
                if cb.len() != cfg.codebook_size {
                    cfg.codebook_size = cb.len();
                }
                Some(cb)
            }
            None => {
                return Err(TrinityError::Config(
                    "vector quantization is enabled but no codebook was provided; \
                     run `trinity pretrain-vq` first"
                        .into(),
                ))
            }
        }
    } else {
        None
    };

    let clips = dataset.split(SplitKind::Train);
    if clips.len() < 2 {
        return Err(TrinityError::Degenerate(format!(
            "training needs at least 2 clips, found {}",
            clips.len()
        )));
    }
    let batch_size = cfg.batch_size.max(2).min(clips.len());
    let batches_per_epoch = clips.len() / batch_size;
    if batches_per_epoch == 0 {
        return Err(TrinityError::Degenerate(
            "training split smaller than one batch".into(),
        ));
    }
    let total_steps = tc.epochs * batches_per_epoch;

    let model = TrinityModel::new(cfg.clone(), tc.mode, tc.seed)?;
    let params = model.params();
    let mut adam = Adam::new(&params, CosineSchedule::new(tc.lr, tc.lr_min, total_steps));
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed.wrapping_add(0x5eed));
    let mut order: Vec<usize> = (0..clips.len()).collect();
    let mut log = Vec::with_capacity(total_steps);
    let mut step = 0usize;
    for _epoch in 0..tc.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch_size) {
            if chunk.len() < batch_size {
                continue;
            }
            let picked: Vec<_> = chunk.iter().map(|&i| clips[i]).collect();
            let batch = build_batch(&picked, &cfg, codebook, None)?;
            let lr = adam.current_lr();
            adam.zero_grad();
            let out = model.forward(&batch)?;
            let tau = model.tau();
            let (loss, components) = trinity_loss(&out, tc.mode, &tc.weights, &tc.toggles, &tau)?;
            loss.backward()?;
            adam.step()?;
            log.push(LossRow {
                step,
                recon: components.recon,
                terms: components.terms,
                total: components.total,
                tau: model.tau_value(),
                lr,
            });
            step += 1;
        }
    }
    Ok((model, log))
}

/// Loss log CSV: step, L_recon, each alignment term, total, tau, lr.
pub fn write_loss_csv(path: &Path, rows: &[LossRow]) -> Result<()> {
    let mut out = String::new();
    let term_names: Vec<&str> = rows
        .first()
        .map(|r| r.terms.iter().map(|(n, _)| n.as_str()).collect())
        .unwrap_or_default();
    out.push_str("step,recon");
    for name in &term_names {
        out.push(',');
        out.push_str(name);
    }
    out.push_str(",total,tau,lr\n");
    for row in rows {
        out.push_str(&format!("{},{:.12e}", row.step, row.recon));
        for name in &term_names {
            let v = row
                .terms
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, v)| *v)
                .unwrap_or(f64::NAN);
            out.push_str(&format!(",{v:.12e}"));
        }
        out.push_str(&format!(",{:.12e},{:.12e},{:.12e}\n", row.total, row.tau, row.lr));
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, GenerateSpec};
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
            batch_size: 4,
            ..ModelConfig::desk()
        }
    }

    fn tiny_dataset() -> Dataset {
        generate_dataset(&GenerateSpec {
            seed: 9,
            width: 32,
            height: 32,
            train_clips: 8,
            pseudo_clips: 0,
            cfree_videos: 0,
            ..GenerateSpec::default()
        })
        .unwrap()
    }

    fn tiny_codebook() -> Codebook {
        let entries = (0..8)
            .map(|i| (0..25).map(|j| ((i * 7 + j) as f64) * 0.013).collect())
            .collect();
        Codebook::new(entries).unwrap()
    }

    #[test]
    fn one_epoch_produces_log_rows_and_updates() {
        let ds = tiny_dataset();
        let cb = tiny_codebook();
        let tc = TrainConfig {
            epochs: 1,
            lr: 1e-3,
            seed: 1,
            ..TrainConfig::default()
        };
        let (model, log) = train_model(&ds, Some(&cb), &tiny_cfg(), &tc).unwrap();
        assert_eq!(log.len(), 2); // 8 clips / batch 4
        assert!(log[0].total.is_finite());
        assert!(log[0].terms.iter().any(|(n, _)| n == "global_app_cxt"));
        // Temperature moved from its initial value or stayed finite.
        assert!(model.tau_value() > 0.0);
    }

    #[test]
    fn vq_on_without_codebook_cites_pretrain() {
        let ds = tiny_dataset();
        let tc = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        };
        match train_model(&ds, None, &tiny_cfg(), &tc) {
            Err(TrinityError::Config(msg)) => assert!(msg.contains("pretrain-vq")),
            other => panic!("expected config error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn context_free_training_runs() {
        let ds = tiny_dataset();
        let cb = tiny_codebook();
        let tc = TrainConfig {
            epochs: 1,
            mode: AlignMode::ContextFree,
            seed: 2,
            ..TrainConfig::default()
        };
        let (_, log) = train_model(&ds, Some(&cb), &tiny_cfg(), &tc).unwrap();
        assert!(log[0].terms.iter().any(|(n, _)| n == "global_app_mot"));
        assert!(!log[0].terms.iter().any(|(n, _)| n.contains("cxt")));
    }

    #[test]
    fn loss_csv_writes_all_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("loss.csv");
        let rows = vec![LossRow {
            step: 0,
            recon: 0.5,
            terms: vec![("global_app_cxt".into(), 1.25)],
            total: 1.75,
            tau: 0.07,
            lr: 2e-4,
        }];
        write_loss_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("step,recon,global_app_cxt,total,tau,lr\n"));
        assert!(text.lines().nth(1).unwrap().starts_with("0,"));
    }
}
