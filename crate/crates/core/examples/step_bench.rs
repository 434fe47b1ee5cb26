//! Rough per-component timing of one desk-config training step.
use std::time::Instant;
use trinity_core::align::{trinity_loss, AblationToggles, LossWeights};
use trinity_core::data::{generate_dataset, GenerateSpec, SplitKind};
use trinity_core::model::{build_batch, AlignMode, ModelConfig, TrinityModel};
use trinity_core::vq::Codebook;

fn main() {
    let cfg = ModelConfig::desk();
    let ds = generate_dataset(&GenerateSpec {
        train_clips: 8,
        pseudo_clips: 0,
        cfree_videos: 0,
        ..GenerateSpec::default()
    })
    .unwrap();
    let clips = ds.split(SplitKind::Train);
    let entries = (0..cfg.codebook_size)
        .map(|i| (0..25).map(|j| ((i * 25 + j) as f64) * 0.001).collect())
        .collect();
    let cb = Codebook::new(entries).unwrap();
    let model = TrinityModel::new(cfg.clone(), AlignMode::Contextual, 1).unwrap();
    let batch = build_batch(&clips, &cfg, Some(&cb), None).unwrap();

    for _ in 0..2 {
        // appearance branch only
        let t0 = Instant::now();
        let app = model
            .appearance
            .forward(&batch.appearance_input, &batch.appearance_target)
            .unwrap();
        let t_app_fwd = t0.elapsed();
        let t0 = Instant::now();
        app.l_recon.backward().unwrap();
        let t_app_bwd = t0.elapsed();

        let t0 = Instant::now();
        let mot = model.motion.forward(&batch.motion).unwrap();
        let t_mot_fwd = t0.elapsed();
        let t0 = Instant::now();
        mot.mean_all().backward().unwrap();
        let t_mot_bwd = t0.elapsed();

        let t0 = Instant::now();
        let cxt = model.context.as_ref().unwrap().forward(&batch.contexts).unwrap();
        let t_cxt_fwd = t0.elapsed();
        let t0 = Instant::now();
        cxt.mean_all().backward().unwrap();
        let t_cxt_bwd = t0.elapsed();

        let t0 = Instant::now();
        let out = model.forward(&batch).unwrap();
        let (loss, _) = trinity_loss(
            &out,
            AlignMode::Contextual,
            &LossWeights::default(),
            &AblationToggles::default(),
            &model.tau(),
        )
        .unwrap();
        let t_full_fwd = t0.elapsed();
        let t0 = Instant::now();
        loss.backward().unwrap();
        let t_full_bwd = t0.elapsed();

        println!(
            "app fwd {t_app_fwd:?} bwd {t_app_bwd:?} | mot fwd {t_mot_fwd:?} bwd {t_mot_bwd:?} | cxt fwd {t_cxt_fwd:?} bwd {t_cxt_bwd:?} | full fwd {t_full_fwd:?} bwd {t_full_bwd:?}"
        );
    }
}
