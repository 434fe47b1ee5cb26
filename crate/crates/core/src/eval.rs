//! Frame-level ROC-AUC, the pseudo-context evaluation protocol, and the
//! ablation grid runner.

use std::path::Path;

use crate::align::AblationToggles;
use crate::data::{ClipContext, Dataset, PseudoContextCase, SplitKind};
use crate::error::{Result, TrinityError};
use crate::infer::{fuse_timeline, score_video, ScorerKind};
use crate::model::{ModelConfig, TrinityModel};
use crate::train::{train_model, TrainConfig};
use crate::vq::Codebook;

/// ROC curve with its tie-aware area. Equal scores contribute half
/// credit, matching the rank-sum formulation exactly.
#[derive(Clone, Debug)]
pub struct RocResult {
    pub auc: f64,
    /// (FPR, TPR) operating points from (0,0) to (1,1), one per
    /// distinct score threshold.
    pub points: Vec<(f64, f64)>,
    pub positives: usize,
    pub negatives: usize,
}

/// Tie-aware frame-level AUC of anomaly scores against binary labels.
/// Higher scores mean more anomalous; label 1 is the positive class.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<RocResult> {
    if scores.len() != labels.len() {
        return Err(TrinityError::ShapeMismatch {
            op: "roc_auc",
            lhs: vec![scores.len()],
            rhs: vec![labels.len()],
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(TrinityError::Contract("scores must be finite".into()));
    }
    let positives = labels.iter().filter(|&&l| l != 0).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(TrinityError::UndefinedMetric(format!(
            "AUC needs both classes; got {positives} positives and {negatives} negatives"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let mut points = Vec::with_capacity(scores.len() + 1);
    points.push((0.0, 0.0));
    let mut tp = 0u128;
    let mut fp = 0u128;
    // Integer numerator in units of 1/(2 * P * N): each trapezoid adds
    // dfp * (tp_before + tp_after). One final division keeps the
    // tie-aware value exact (0.5 for perfectly paired ties).
    let mut numerator = 0u128;
    let mut i = 0;
    while i < order.len() {
        // Group tied scores into one threshold step.
        let mut j = i;
        let (mut dtp, mut dfp) = (0u128, 0u128);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] != 0 {
                dtp += 1;
            } else {
                dfp += 1;
            }
            j += 1;
        }
        numerator += dfp * (2 * tp + dtp);
        tp += dtp;
        fp += dfp;
        points.push((
            fp as f64 / negatives as f64,
            tp as f64 / positives as f64,
        ));
        i = j;
    }
    debug_assert!((points.last().unwrap().0 - 1.0).abs() < 1e-12);
    debug_assert!((points.last().unwrap().1 - 1.0).abs() < 1e-12);
    let auc = numerator as f64 / (2.0 * positives as f64 * negatives as f64);
    Ok(RocResult {
        auc,
        points,
        positives,
        negatives,
    })
}

impl RocResult {
    /// Trapezoidal area of the stored curve; equal to `auc` within
    /// rounding by construction.
    pub fn trapezoid_area(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) * 0.5)
            .sum()
    }
}

/// Pooled protocol result plus per-case AUCs for reporting.
#[derive(Clone, Debug)]
pub struct ProtocolResult {
    pub roc: RocResult,
    pub per_case: Vec<(String, f64)>,
}

/// Run the pseudo-context protocol with an arbitrary per-run scorer.
/// Each case is scored twice: under its original context with
/// all-normal labels, and under the altered context with all-anomalous
/// labels. All frames pool into one AUC.
pub fn run_pseudo_protocol_with<F>(
    cases: &[PseudoContextCase],
    mut scorer: F,
) -> Result<ProtocolResult>
where
    F: FnMut(&str, &ClipContext) -> Result<Vec<f64>>,
{
    if cases.is_empty() {
        return Err(TrinityError::Degenerate(
            "pseudo protocol needs at least one case".into(),
        ));
    }
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    let mut per_case = Vec::with_capacity(cases.len());
    for case in cases {
        let normal = scorer(&case.clip_id, &case.original)?;
        let anomalous = scorer(&case.clip_id, &case.altered)?;
        if normal.len() != anomalous.len() {
            return Err(TrinityError::Contract(format!(
                "case {}: run lengths differ ({} vs {})",
                case.clip_id,
                normal.len(),
                anomalous.len()
            )));
        }
        let mut case_scores = Vec::with_capacity(normal.len() * 2);
        let mut case_labels = Vec::with_capacity(normal.len() * 2);
        case_scores.extend_from_slice(&normal);
        case_labels.extend(std::iter::repeat(0u8).take(normal.len()));
        case_scores.extend_from_slice(&anomalous);
        case_labels.extend(std::iter::repeat(1u8).take(anomalous.len()));
        let case_auc = roc_auc(&case_scores, &case_labels)?.auc;
        per_case.push((case.clip_id.clone(), case_auc));
        scores.extend(case_scores);
        labels.extend(case_labels);
    }
    Ok(ProtocolResult {
        roc: roc_auc(&scores, &labels)?,
        per_case,
    })
}

/// Per-run raw components: the model runs once per (clip, context) and
/// every scorer variant fuses from this cache.
fn model_run_components(
    model: &TrinityModel,
    codebook: Option<&Codebook>,
    dataset: &Dataset,
    clip_id: &str,
    ctx: &ClipContext,
) -> Result<(crate::infer::VideoComponents, Vec<u8>)> {
    let clip = dataset.clip(clip_id).ok_or_else(|| {
        TrinityError::Config(format!("pseudo case references unknown clip {clip_id}"))
    })?;
    let flows = clip.gt_flow.as_ref().ok_or_else(|| {
        TrinityError::Config(format!(
            "clip {clip_id} has no flow; materialize flows before evaluating"
        ))
    })?;
    score_video(
        model,
        codebook,
        &clip.frames,
        flows,
        Some(ctx),
        &clip.labels,
    )
}

/// Model-backed pseudo-context evaluation for several scorer variants
/// in one scoring pass. Results are returned in `kinds` order.
pub fn run_pseudo_protocol_multi(
    model: &TrinityModel,
    codebook: Option<&Codebook>,
    dataset: &Dataset,
    kinds: &[ScorerKind],
    alpha: f64,
    kernel: usize,
) -> Result<Vec<ProtocolResult>> {
    let mut cache: Vec<((String, ClipContext), (crate::infer::VideoComponents, Vec<u8>))> =
        Vec::new();
    for case in &dataset.pseudo_cases {
        for ctx in [&case.original, &case.altered] {
            if !cache.iter().any(|((id, c), _)| id == &case.clip_id && c == ctx) {
                let run = model_run_components(model, codebook, dataset, &case.clip_id, ctx)?;
                cache.push(((case.clip_id.clone(), *ctx), run));
            }
        }
    }
    kinds
        .iter()
        .map(|&kind| {
            run_pseudo_protocol_with(&dataset.pseudo_cases, |clip_id, ctx| {
                let ((_, _), (components, labels)) = cache
                    .iter()
                    .find(|((id, c), _)| id == clip_id && c == ctx)
                    .expect("cache covers every case run");
                let timeline = fuse_timeline(components, labels, kind, alpha, kernel)?;
                Ok(timeline.anomaly)
            })
        })
        .collect()
}

/// Model-backed pseudo-context evaluation over the dataset's case table.
pub fn run_pseudo_protocol(
    model: &TrinityModel,
    codebook: Option<&Codebook>,
    dataset: &Dataset,
    kind: ScorerKind,
    alpha: f64,
    kernel: usize,
) -> Result<ProtocolResult> {
    Ok(run_pseudo_protocol_multi(model, codebook, dataset, &[kind], alpha, kernel)?
        .remove(0))
}

/// One ablation grid row.
#[derive(Clone, Debug)]
pub struct AblationRow {
    pub label: String,
    pub auc_mot: f64,
    pub auc: f64,
}

/// The published ablation grid shape: GA, +VQ, +LB, +LB+LP, +LP.
pub fn ablation_grid() -> Vec<AblationToggles> {
    vec![
        AblationToggles { ga: true, vq: false, lb: false, lp: false },
        AblationToggles { ga: true, vq: true, lb: false, lp: false },
        AblationToggles { ga: true, vq: true, lb: true, lp: false },
        AblationToggles { ga: true, vq: true, lb: true, lp: true },
        AblationToggles { ga: true, vq: true, lb: false, lp: true },
    ]
}

/// Train and evaluate each toggle configuration on the same seeded
/// dataset. AUC_mot scores with the context-motion pair alone; AUC is
/// the fused score.
#[allow(clippy::too_many_arguments)]
pub fn run_ablation(
    dataset: &Dataset,
    codebook: Option<&Codebook>,
    model_cfg: &ModelConfig,
    base: &TrainConfig,
    grid: &[AblationToggles],
    alpha: f64,
    kernel: usize,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(grid.len());
    for toggles in grid {
        toggles.validate()?;
        let tc = TrainConfig {
            toggles: *toggles,
            ..base.clone()
        };
        let cb = if toggles.vq { codebook } else { None };
        let (model, _) = train_model(dataset, cb, model_cfg, &tc)?;
        let mut results = run_pseudo_protocol_multi(
            &model,
            cb,
            dataset,
            &[ScorerKind::Fused, ScorerKind::ContextMotionOnly],
            alpha,
            kernel,
        )?;
        let mot = results.pop().expect("two scorer results");
        let fused = results.pop().expect("two scorer results");
        rows.push(AblationRow {
            label: toggles.label(),
            auc_mot: mot.roc.auc,
            auc: fused.roc.auc,
        });
    }
    Ok(rows)
}

pub fn write_ablation_csv(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let mut out = String::from("config,auc_mot,auc\n");
    for r in rows {
        out.push_str(&format!("{},{:.6},{:.6}\n", r.label, r.auc_mot, r.auc));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_roc_csv(path: &Path, roc: &RocResult) -> Result<()> {
    let mut out = String::from("fpr,tpr\n");
    for (x, y) in &roc.points {
        out.push_str(&format!("{x:.9},{y:.9}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Results CSV: headline metrics plus per-case (or per-video) AUCs.
pub fn write_results_csv(
    path: &Path,
    headline: &[(&str, f64)],
    per_item: &[(String, f64)],
) -> Result<()> {
    let mut out = String::from("metric,value\n");
    for (name, value) in headline {
        out.push_str(&format!("{name},{value:.6}\n"));
    }
    for (name, value) in per_item {
        out.push_str(&format!("auc[{name}],{value:.6}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Context-free evaluation: pooled frame AUC over a split's videos for
/// both the fused scorer and the prediction-only scorer.
pub fn evaluate_context_free(
    model: &TrinityModel,
    codebook: Option<&Codebook>,
    dataset: &Dataset,
    alpha: f64,
    kernel: usize,
) -> Result<(RocResult, RocResult, Vec<(String, f64)>)> {
    let videos = dataset.split(SplitKind::ContextFree);
    if videos.is_empty() {
        return Err(TrinityError::Degenerate(
            "no context-free videos in the dataset".into(),
        ));
    }
    let mut fused_scores = Vec::new();
    let mut psnr_scores = Vec::new();
    let mut labels = Vec::new();
    let mut per_video = Vec::new();
    for clip in videos {
        let flows = clip.gt_flow.as_ref().ok_or_else(|| {
            TrinityError::Config(format!("clip {} has no flow", clip.id))
        })?;
        let (components, clip_labels) =
            score_video(model, codebook, &clip.frames, flows, None, &clip.labels)?;
        let fused = fuse_timeline(&components, &clip_labels, ScorerKind::Fused, alpha, kernel)?;
        let psnr = fuse_timeline(&components, &clip_labels, ScorerKind::PsnrOnly, alpha, kernel)?;
        if clip_labels.iter().any(|&l| l != 0) && clip_labels.iter().any(|&l| l == 0) {
            per_video.push((
                clip.id.clone(),
                roc_auc(&fused.anomaly, &clip_labels)?.auc,
            ));
        }
        fused_scores.extend(fused.anomaly);
        psnr_scores.extend(psnr.anomaly);
        labels.extend(clip_labels);
    }
    Ok((
        roc_auc(&fused_scores, &labels)?,
        roc_auc(&psnr_scores, &labels)?,
        per_video,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// O(n^2) pairwise-comparison oracle with half credit for ties.
    fn auc_pairwise_oracle(scores: &[f64], labels: &[u8]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &si) in scores.iter().enumerate() {
            if labels[i] == 0 {
                continue;
            }
            for (j, &sj) in scores.iter().enumerate() {
                if labels[j] != 0 {
                    continue;
                }
                pairs += 1.0;
                if si > sj {
                    wins += 1.0;
                } else if si == sj {
                    wins += 0.5;
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn perfect_separation_is_one() {
        let r = roc_auc(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0]).unwrap();
        assert_eq!(r.auc, 1.0);
        assert_eq!(r.points.first(), Some(&(0.0, 0.0)));
        assert_eq!(r.points.last(), Some(&(1.0, 1.0)));
    }

    #[test]
    fn all_equal_scores_are_exactly_half() {
        let r = roc_auc(&[0.5; 10], &[1, 0, 1, 0, 1, 0, 1, 0, 1, 0]).unwrap();
        assert_eq!(r.auc, 0.5);
    }

    #[test]
    fn matches_pairwise_oracle_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..30 {
            let n = rng.gen_range(10..200);
            // Quantized scores force plenty of ties.
            let scores: Vec<f64> = (0..n)
                .map(|_| (rng.gen_range(0.0..1.0f64) * 8.0).round() / 8.0)
                .collect();
            let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2u8)).collect();
            if labels.iter().all(|&l| l == 0) || labels.iter().all(|&l| l == 1) {
                continue;
            }
            let r = roc_auc(&scores, &labels).unwrap();
            let oracle = auc_pairwise_oracle(&scores, &labels);
            assert!((r.auc - oracle).abs() < 1e-12, "{} vs {oracle}", r.auc);
            assert!((r.auc - r.trapezoid_area()).abs() < 1e-10);
        }
    }

    #[test]
    fn single_class_is_undefined() {
        assert!(matches!(
            roc_auc(&[0.1, 0.2], &[0, 0]),
            Err(TrinityError::UndefinedMetric(_))
        ));
    }

    #[test]
    fn auc_is_invariant_under_monotone_transforms() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let scores: Vec<f64> = (0..100).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let labels: Vec<u8> = (0..100).map(|_| rng.gen_range(0..2u8)).collect();
        let base = roc_auc(&scores, &labels).unwrap().auc;
        let squashed: Vec<f64> = scores.iter().map(|s| (3.0 * s).tanh()).collect();
        let shifted: Vec<f64> = scores.iter().map(|s| s * 7.0 + 11.0).collect();
        assert!((roc_auc(&squashed, &labels).unwrap().auc - base).abs() < 1e-12);
        assert!((roc_auc(&shifted, &labels).unwrap().auc - base).abs() < 1e-12);
    }

    #[test]
    fn label_flip_symmetry_for_tie_free_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let scores: Vec<f64> = (0..60).map(|i| i as f64 + rng.gen_range(0.0..0.5)).collect();
        let labels: Vec<u8> = (0..60).map(|_| rng.gen_range(0..2u8)).collect();
        let flipped: Vec<u8> = labels.iter().map(|&l| 1 - l).collect();
        let a = roc_auc(&scores, &labels).unwrap().auc;
        let b = roc_auc(&scores, &flipped).unwrap().auc;
        assert!((a + b - 1.0).abs() < 1e-12);
    }

    fn toy_cases(n: usize) -> Vec<PseudoContextCase> {
        (0..n)
            .map(|i| {
                PseudoContextCase::new(
                    format!("clip{i}"),
                    ClipContext {
                        hour: 10,
                        day: 1,
                        game_hour: Some(14),
                    },
                    ClipContext {
                        hour: 10,
                        day: 1,
                        game_hour: None,
                    },
                    "test",
                )
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn context_blind_scorer_pools_to_exactly_half() {
        // Any scorer that ignores the context produces identical frames
        // in both runs of every case: perfectly paired ties.
        let cases = toy_cases(7);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut cached: std::collections::HashMap<String, Vec<f64>> = Default::default();
        let result = run_pseudo_protocol_with(&cases, |clip_id, _ctx| {
            Ok(cached
                .entry(clip_id.to_string())
                .or_insert_with(|| (0..25).map(|_| rng.gen_range(0.0..1.0)).collect())
                .clone())
        })
        .unwrap();
        assert_eq!(result.roc.auc, 0.5);
        for (_, case_auc) in &result.per_case {
            assert_eq!(*case_auc, 0.5);
        }
    }

    #[test]
    fn oracle_scorer_reaches_one() {
        let cases = toy_cases(4);
        let result = run_pseudo_protocol_with(&cases, |_, ctx| {
            // 1 iff the context was altered (the plan drops the game).
            Ok(vec![if ctx.game_hour.is_none() { 1.0 } else { 0.0 }; 10])
        })
        .unwrap();
        assert_eq!(result.roc.auc, 1.0);
    }

    #[test]
    fn protocol_pools_two_runs_per_case() {
        let cases = toy_cases(3);
        let mut runs = 0usize;
        let result = run_pseudo_protocol_with(&cases, |_, _| {
            runs += 1;
            Ok(vec![runs as f64; 5])
        })
        .unwrap();
        assert_eq!(runs, 6); // 2n evaluation runs
        assert_eq!(result.roc.positives, 15);
        assert_eq!(result.roc.negatives, 15);
    }
}
