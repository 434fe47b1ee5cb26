//! Command implementations. Every command resolves its configuration
//! (defaults, then config file, then flags), writes the resolved
//! configuration next to its outputs, and is deterministic in its seed.

use std::fs;
use std::path::{Path, PathBuf};

use trinity_core::align::AblationToggles;
use trinity_core::config::RunConfig;
use trinity_core::data::{
    ensure_flows, generate_dataset, read_dataset, Dataset, SplitKind,
};
use trinity_core::error::{Result, TrinityError};
use trinity_core::eval::{
    ablation_grid, evaluate_context_free, run_ablation, run_pseudo_protocol_multi,
    write_ablation_csv, write_results_csv, write_roc_csv,
};
use trinity_core::infer::{
    fuse_timeline, score_video, write_matrix_csv, write_score_csv, ScorerKind,
};
use trinity_core::model::{AlignMode, ModelConfig, TrinityModel};
use trinity_core::numerics::checkpoint::{restore_params, save_params};
use trinity_core::report::{read_roc_csv, read_score_csv, svg_roc, svg_timeline};
use trinity_core::train::{train_model, write_loss_csv, TrainConfig};
use trinity_core::vq::{pretrain_codebook, read_codebook, write_codebook, Codebook, PretrainConfig};
use trinity_core::{align::AlignLevel, align::AlignmentLogits, model::ForwardOutput};

use crate::Common;

/// Defaults -> config file -> command-line flags.
fn resolve_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
        cfg.gen.seed = seed;
    } else {
        cfg.gen.seed = cfg.seed;
    }
    if let Some(mode) = &common.mode {
        cfg.mode = AlignMode::parse(mode)?;
    }
    cfg.model.validate()?;
    Ok(cfg)
}

fn prepare_out(common: &Common, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&common.out)?;
    cfg.save(&common.out.join("resolved.cfg"))
}

fn load_dataset_with_flows(
    data: &Path,
    cfg: &RunConfig,
    use_gt_flow: Option<bool>,
) -> Result<Dataset> {
    let mut ds = read_dataset(data)?;
    let use_gt = use_gt_flow.unwrap_or(cfg.use_gt_flow);
    ensure_flows(&mut ds, Some(data), &cfg.solver, !use_gt)?;
    Ok(ds)
}

pub fn generate(common: Common) -> Result<()> {
    let mut cfg = resolve_config(&common)?;
    cfg.gen.width = cfg.model.frame_width;
    cfg.gen.height = cfg.model.frame_height;
    cfg.gen.train_frames = cfg.model.frames_per_tube;
    let ds = generate_dataset(&cfg.gen)?;
    fs::create_dir_all(&common.out)?;
    trinity_core::data::write_dataset(&common.out, &ds)?;
    prepare_out(&common, &cfg)?;
    println!(
        "generated {} train clips, {} pseudo cases, {} context-free videos -> {}",
        ds.split(SplitKind::Train).len(),
        ds.pseudo_cases.len(),
        ds.split(SplitKind::ContextFree).len(),
        common.out.display()
    );
    Ok(())
}

/// Training-split HOF descriptors, flattened across clips and patches.
fn training_descriptors(ds: &Dataset, model_cfg: &ModelConfig) -> Result<Vec<Vec<f64>>> {
    let mut features = Vec::new();
    for clip in ds.split(SplitKind::Train) {
        let flows = clip.gt_flow.as_ref().ok_or_else(|| {
            TrinityError::Config(format!("clip {} has no flow", clip.id))
        })?;
        features.extend(trinity_core::model::motion_descriptors(flows, model_cfg)?);
    }
    Ok(features)
}

pub fn pretrain_vq(common: Common, data: PathBuf, use_gt_flow: Option<bool>) -> Result<()> {
    let cfg = resolve_config(&common)?;
    let ds = load_dataset_with_flows(&data, &cfg, use_gt_flow)?;
    let features = training_descriptors(&ds, &cfg.model)?;
    let (codebook, report) = pretrain_codebook(
        &features,
        &PretrainConfig {
            codebook_size: cfg.model.codebook_size,
            epochs: cfg.vq_epochs,
            lr: cfg.vq_lr,
            seed: cfg.seed,
        },
    )?;
    fs::create_dir_all(&common.out)?;
    write_codebook(&common.out.join("codebook.bin"), &codebook)?;
    prepare_out(&common, &cfg)?;
    println!(
        "pretrained {}-entry codebook on {} descriptors, final epoch MSE {:.6e} -> {}",
        codebook.len(),
        features.len(),
        report.epoch_mse.last().unwrap_or(&f64::NAN),
        common.out.join("codebook.bin").display()
    );
    Ok(())
}

fn require_codebook(path: &Path) -> Result<Codebook> {
    if !path.exists() {
        return Err(TrinityError::MissingArtifact {
            path: path.to_path_buf(),
            produced_by: "trinity pretrain-vq".into(),
        });
    }
    read_codebook(path)
}

pub fn train(
    common: Common,
    data: PathBuf,
    codebook: Option<PathBuf>,
    epochs: Option<usize>,
    use_gt_flow: Option<bool>,
) -> Result<()> {
    let mut cfg = resolve_config(&common)?;
    if let Some(e) = epochs {
        cfg.train_epochs = e;
    }
    let codebook_path = codebook.unwrap_or_else(|| common.out.join("codebook.bin"));
    let cb = if cfg.model.use_vq {
        Some(require_codebook(&codebook_path)?)
    } else {
        None
    };
    let ds = load_dataset_with_flows(&data, &cfg, use_gt_flow)?;
    let tc = TrainConfig {
        epochs: cfg.train_epochs,
        lr: cfg.train_lr,
        lr_min: cfg.train_lr_min,
        weights: trinity_core::align::LossWeights {
            beta_local: cfg.beta_local,
            beta_global: cfg.beta_global,
        },
        toggles: AblationToggles {
            vq: cfg.model.use_vq,
            ..AblationToggles::default()
        },
        mode: cfg.mode,
        seed: cfg.seed,
    };
    let (model, log) = train_model(&ds, cb.as_ref(), &cfg.model, &tc)?;
    fs::create_dir_all(&common.out)?;
    save_params(&common.out.join("model.ckpt"), &model.params())?;
    write_loss_csv(&common.out.join("loss.csv"), &log)?;
    if let Some(cb) = &cb {
        write_codebook(&common.out.join("codebook.bin"), cb)?;
    }
    let mut model_cfg = cfg.clone();
    model_cfg.model.codebook_size = cb.as_ref().map_or(cfg.model.codebook_size, |c| c.len());
    model_cfg.save(&common.out.join("model.cfg"))?;
    prepare_out(&common, &cfg)?;
    let first = log.first().map(|r| r.total).unwrap_or(f64::NAN);
    let last = log.last().map(|r| r.total).unwrap_or(f64::NAN);
    println!(
        "trained {} steps ({} mode): loss {first:.4} -> {last:.4}, tau {:.4} -> {}",
        log.len(),
        model.mode.as_str(),
        model.tau_value(),
        common.out.join("model.ckpt").display()
    );
    Ok(())
}

/// Load a trained model directory: model.cfg + model.ckpt + codebook.
fn load_model(dir: &Path) -> Result<(TrinityModel, Option<Codebook>, RunConfig)> {
    let cfg_path = dir.join("model.cfg");
    if !cfg_path.exists() {
        return Err(TrinityError::MissingArtifact {
            path: cfg_path,
            produced_by: "trinity train".into(),
        });
    }
    let cfg = RunConfig::load(&cfg_path)?;
    let ckpt = dir.join("model.ckpt");
    if !ckpt.exists() {
        return Err(TrinityError::MissingArtifact {
            path: ckpt,
            produced_by: "trinity train".into(),
        });
    }
    let model = TrinityModel::new(cfg.model.clone(), cfg.mode, cfg.seed)?;
    restore_params(&ckpt, &model.params())?;
    let cb = if cfg.model.use_vq {
        Some(require_codebook(&dir.join("codebook.bin"))?)
    } else {
        None
    };
    Ok((model, cb, cfg))
}

#[allow(clippy::too_many_arguments)]
pub fn score(
    common: Common,
    data: PathBuf,
    model_dir: PathBuf,
    split: String,
    alpha: Option<f64>,
    use_gt_flow: Option<bool>,
    dump_align: bool,
) -> Result<()> {
    let (model, cb, model_cfg) = load_model(&model_dir)?;
    let cfg = resolve_config(&common)?;
    let ds = load_dataset_with_flows(&data, &model_cfg, use_gt_flow)?;
    let split = SplitKind::parse(&split)?;
    let alpha = alpha.unwrap_or(model_cfg.alpha());
    fs::create_dir_all(&common.out)?;
    let contextual = model.mode == AlignMode::Contextual;
    let mut scored = 0usize;
    for clip in ds.split(split) {
        let flows = clip.gt_flow.as_ref().ok_or_else(|| {
            TrinityError::Config(format!("clip {} has no flow", clip.id))
        })?;
        let ctx = contextual.then_some(&clip.context);
        let (components, labels) =
            score_video(&model, cb.as_ref(), &clip.frames, flows, ctx, &clip.labels)?;
        let timeline = fuse_timeline(
            &components,
            &labels,
            ScorerKind::Fused,
            alpha,
            model_cfg.median_kernel,
        )?;
        write_score_csv(&common.out.join(format!("{}.csv", clip.id)), &timeline)?;
        if dump_align {
            dump_alignment_matrix(&model, cb.as_ref(), clip, &common.out)?;
        }
        scored += 1;
    }
    prepare_out(&common, &cfg)?;
    println!(
        "scored {scored} {} videos (alpha {alpha}) -> {}",
        split.as_str(),
        common.out.display()
    );
    Ok(())
}

/// Patch-alignment logits of the clip's first tube, as a matrix CSV.
fn dump_alignment_matrix(
    model: &TrinityModel,
    cb: Option<&Codebook>,
    clip: &trinity_core::data::ClipRecord,
    out: &Path,
) -> Result<()> {
    let t = model.cfg.frames_per_tube;
    let flows = clip.gt_flow.as_ref().expect("caller checked flows");
    let descriptors =
        trinity_core::model::motion_descriptors(&flows[..t - 1], &model.cfg)?;
    let motion = match cb {
        Some(cb) => trinity_core::model::MotionInput::Tokens(vec![
            trinity_core::model::tokenize_descriptors(&descriptors, cb)?,
        ]),
        None => trinity_core::model::MotionInput::Features(vec![descriptors]),
    };
    let (app_in, app_target) =
        trinity_core::model::appearance_tensors(&[&clip.frames[..t]], &model.cfg)?;
    let contexts = match model.mode {
        AlignMode::Contextual => vec![trinity_core::data::encode_context(
            &clip.context,
            &model.cfg.context_layout,
        )?],
        AlignMode::ContextFree => vec![],
    };
    let batch = trinity_core::model::BatchInput {
        contexts,
        motion,
        appearance_input: app_in,
        appearance_target: app_target,
    };
    let out_fwd = model.forward(&batch)?;
    let logits = AlignmentLogits::compute(
        "app-mot",
        AlignLevel::PatchLocal,
        &ForwardOutput::locals(&out_fwd.h_app)?,
        &ForwardOutput::locals(&out_fwd.h_mot)?,
        &model.tau(),
    )?;
    write_matrix_csv(
        &out.join(format!("{}.align.csv", clip.id)),
        &logits.matrices[0],
        logits.side,
    )
}

pub fn evaluate(
    common: Common,
    data: PathBuf,
    model_dir: PathBuf,
    alpha: Option<f64>,
    use_gt_flow: Option<bool>,
) -> Result<()> {
    let (model, cb, model_cfg) = load_model(&model_dir)?;
    let cfg = resolve_config(&common)?;
    let ds = load_dataset_with_flows(&data, &model_cfg, use_gt_flow)?;
    let alpha = alpha.unwrap_or(model_cfg.alpha());
    let kernel = model_cfg.median_kernel;
    fs::create_dir_all(&common.out)?;
    match model.mode {
        AlignMode::Contextual => {
            let mut results = run_pseudo_protocol_multi(
                &model,
                cb.as_ref(),
                &ds,
                &[
                    ScorerKind::Fused,
                    ScorerKind::ContextMotionOnly,
                    ScorerKind::ContextAppearanceOnly,
                    ScorerKind::PsnrOnly,
                ],
                alpha,
                kernel,
            )?;
            let blind = results.pop().unwrap();
            let app = results.pop().unwrap();
            let mot = results.pop().unwrap();
            let fused = results.pop().unwrap();
            write_results_csv(
                &common.out.join("results.csv"),
                &[
                    ("pseudo_auc", fused.roc.auc),
                    ("pseudo_auc_mot", mot.roc.auc),
                    ("pseudo_auc_app", app.roc.auc),
                    ("pseudo_auc_psnr_only", blind.roc.auc),
                ],
                &fused.per_case,
            )?;
            write_roc_csv(&common.out.join("roc.csv"), &fused.roc)?;
            println!(
                "pseudo-context AUC {:.4} (motion-only {:.4}, appearance-only {:.4}, \
                 prediction-only {:.4}) -> {}",
                fused.roc.auc,
                mot.roc.auc,
                app.roc.auc,
                blind.roc.auc,
                common.out.display()
            );
        }
        AlignMode::ContextFree => {
            let (fused, psnr_only, per_video) =
                evaluate_context_free(&model, cb.as_ref(), &ds, alpha, kernel)?;
            write_results_csv(
                &common.out.join("results.csv"),
                &[
                    ("cfree_auc", fused.auc),
                    ("cfree_auc_psnr_only", psnr_only.auc),
                ],
                &per_video,
            )?;
            write_roc_csv(&common.out.join("roc.csv"), &fused)?;
            println!(
                "context-free AUC {:.4} (prediction-only {:.4}) -> {}",
                fused.auc,
                psnr_only.auc,
                common.out.display()
            );
        }
    }
    prepare_out(&common, &cfg)?;
    Ok(())
}

pub fn ablate(
    common: Common,
    data: PathBuf,
    codebook: Option<PathBuf>,
    epochs: Option<usize>,
    alpha: Option<f64>,
    use_gt_flow: Option<bool>,
) -> Result<()> {
    let mut cfg = resolve_config(&common)?;
    if let Some(e) = epochs {
        cfg.train_epochs = e;
    }
    let codebook_path = codebook.unwrap_or_else(|| common.out.join("codebook.bin"));
    let cb = require_codebook(&codebook_path)?;
    let ds = load_dataset_with_flows(&data, &cfg, use_gt_flow)?;
    let tc = TrainConfig {
        epochs: cfg.train_epochs,
        lr: cfg.train_lr,
        lr_min: cfg.train_lr_min,
        weights: trinity_core::align::LossWeights {
            beta_local: cfg.beta_local,
            beta_global: cfg.beta_global,
        },
        toggles: AblationToggles::default(),
        mode: AlignMode::Contextual,
        seed: cfg.seed,
    };
    let alpha = alpha.unwrap_or(cfg.alpha_contextual);
    let rows = run_ablation(
        &ds,
        Some(&cb),
        &cfg.model,
        &tc,
        &ablation_grid(),
        alpha,
        cfg.median_kernel,
    )?;
    fs::create_dir_all(&common.out)?;
    write_ablation_csv(&common.out.join("ablation.csv"), &rows)?;
    prepare_out(&common, &cfg)?;
    for row in &rows {
        println!("{:<14} auc_mot {:.4}  auc {:.4}", row.label, row.auc_mot, row.auc);
    }
    Ok(())
}

pub fn plot(scores: Option<PathBuf>, roc: Option<PathBuf>, out: PathBuf) -> Result<()> {
    match (&scores, &roc) {
        (Some(csv), None) => {
            let parsed = read_score_csv(csv)?;
            let title = csv.file_stem().map(|s| s.to_string_lossy().into_owned());
            svg_timeline(&out, &parsed, title.as_deref().unwrap_or("scores"))?;
        }
        (None, Some(csv)) => {
            let points = read_roc_csv(csv)?;
            svg_roc(&out, &points, None, "ROC")?;
        }
        _ => {
            return Err(TrinityError::Config(
                "plot needs exactly one of --scores or --roc".into(),
            ))
        }
    }
    println!("wrote {}", out.display());
    Ok(())
}
