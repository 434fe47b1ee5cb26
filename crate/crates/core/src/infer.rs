//! Anomaly scoring: normalized prediction PSNR, sigmoid global context
//! similarity, patch misalignment, score fusion, and temporal
//! smoothing.

use std::path::Path;

use crate::data::{encode_context, ClipContext};
use crate::error::{Result, TrinityError};
use crate::flow::{FlowField, Image};
use crate::model::{
    appearance_tensors, motion_descriptors, tokenize_descriptors, AlignMode, BatchInput,
    ForwardOutput, MotionInput, TrinityModel,
};
use crate::numerics::no_grad;
use crate::vq::Codebook;

/// PSNR ceiling applied before normalization when the error vanishes.
pub const PSNR_CAP_DB: f64 = 99.0;
/// Peak-to-peak signal range of [-1, 1] frames.
pub const SIGNAL_RANGE: f64 = 2.0;

/// Per-frame PSNR in dB against the fixed [-1, 1] range, capped.
pub fn psnr_db(prediction: &[f64], target: &[f64]) -> Result<f64> {
    if prediction.len() != target.len() || prediction.is_empty() {
        return Err(TrinityError::ShapeMismatch {
            op: "psnr_db",
            lhs: vec![prediction.len()],
            rhs: vec![target.len()],
        });
    }
    let mse: f64 = prediction
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / prediction.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (SIGNAL_RANGE * SIGNAL_RANGE / mse).log10()).min(PSNR_CAP_DB))
}

/// Min-max normalization over one evaluated video; a degenerate range
/// maps every frame to 0.5.
pub fn min_max_normalize(xs: &[f64]) -> Vec<f64> {
    let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi - lo).is_finite() || hi - lo < 1e-12 {
        return vec![0.5; xs.len()];
    }
    xs.iter().map(|x| (x - lo) / (hi - lo)).collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-clip global context similarity: the equally weighted average of
/// the sigmoid context-motion and context-appearance alignment logits.
/// Returns (combined, context-motion, context-appearance).
pub fn global_context_score(
    cxt_g: &[f64],
    mot_g: &[f64],
    app_g: &[f64],
    tau: f64,
) -> (f64, f64, f64) {
    let s_mot = sigmoid(dot(cxt_g, mot_g) / tau);
    let s_app = sigmoid(dot(cxt_g, app_g) / tau);
    (0.5 * (s_mot + s_app), s_mot, s_app)
}

/// Raw patch misalignment for one clip: the Frobenius distance between
/// the row-softmaxed appearance-motion local alignment matrix and the
/// identity. Larger = more anomalous (inverted later).
pub fn local_misalignment_raw(app_l: &[Vec<f64>], mot_l: &[Vec<f64>], tau: f64) -> Result<f64> {
    let n = app_l.len();
    if n < 2 || mot_l.len() != n {
        return Err(TrinityError::Degenerate(format!(
            "patch misalignment needs at least 2 congruent local tokens, got {n} and {}",
            mot_l.len()
        )));
    }
    let mut fro = 0.0;
    for i in 0..n {
        let logits: Vec<f64> = (0..n).map(|j| dot(&app_l[i], &mot_l[j]) / tau).collect();
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
        let z: f64 = exps.iter().sum();
        for j in 0..n {
            let p = exps[j] / z;
            let target = if i == j { 1.0 } else { 0.0 };
            fro += (p - target) * (p - target);
        }
    }
    Ok(fro.sqrt())
}

/// Median filter with edge replication. The kernel must be odd.
pub fn median_filter(xs: &[f64], kernel: usize) -> Result<Vec<f64>> {
    if kernel % 2 == 0 || kernel == 0 {
        return Err(TrinityError::Config(format!(
            "median filter kernel must be odd, got {kernel}"
        )));
    }
    if xs.is_empty() {
        return Ok(Vec::new());
    }
    let half = kernel / 2;
    let n = xs.len();
    let mut out = Vec::with_capacity(n);
    let mut window = Vec::with_capacity(kernel);
    for i in 0..n {
        window.clear();
        for k in 0..kernel {
            let idx = (i + k).saturating_sub(half).min(n - 1);
            window.push(xs[idx]);
        }
        window.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out.push(window[kernel / 2]);
    }
    Ok(out)
}

/// Weighted fusion of the prediction score with an alignment score:
/// `S = alpha * S_r + (1 - alpha) * S_ctx`, then median smoothing.
pub fn fuse_and_smooth(
    s_r: &[f64],
    s_ctx: &[f64],
    alpha: f64,
    kernel: usize,
) -> Result<Vec<f64>> {
    if s_r.len() != s_ctx.len() {
        return Err(TrinityError::ShapeMismatch {
            op: "fuse_and_smooth",
            lhs: vec![s_r.len()],
            rhs: vec![s_ctx.len()],
        });
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(TrinityError::Config(format!(
            "fusion weight alpha must lie in [0, 1], got {alpha}"
        )));
    }
    let fused: Vec<f64> = s_r
        .iter()
        .zip(s_ctx)
        .map(|(r, c)| alpha * r + (1.0 - alpha) * c)
        .collect();
    median_filter(&fused, kernel)
}

/// Raw per-frame scoring components of one video, before fusion.
#[derive(Clone, Debug)]
pub struct VideoComponents {
    /// Normalized PSNR (min-max over this video).
    pub s_r: Vec<f64>,
    /// Combined sigmoid global context similarity (contextual mode).
    pub s_g: Option<Vec<f64>>,
    pub s_g_mot: Option<Vec<f64>>,
    pub s_g_app: Option<Vec<f64>>,
    /// Inverted normalized patch misalignment (context-free mode).
    pub s_l: Option<Vec<f64>>,
}

/// Which normalcy score the evaluation uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScorerKind {
    /// alpha * S_r + (1 - alpha) * (S_g or S_l).
    Fused,
    /// The context-blind prediction score alone.
    PsnrOnly,
    /// Contextual fusion using only the context-motion pair.
    ContextMotionOnly,
    /// Contextual fusion using only the context-appearance pair.
    ContextAppearanceOnly,
}

/// Per-frame normalcy timeline with its components and labels.
#[derive(Clone, Debug)]
pub struct ScoreTimeline {
    pub frame_index: Vec<usize>,
    pub s_r: Vec<f64>,
    /// S_g (contextual) or inverted S_l (context-free).
    pub s_ctx: Vec<f64>,
    /// Fused, median-smoothed normalcy score in [0, 1].
    pub s: Vec<f64>,
    /// 1 - S.
    pub anomaly: Vec<f64>,
    pub labels: Vec<u8>,
}

/// Slide stride-1 tubes over a video and collect per-frame components.
/// Frames before the first full tube inherit its scores.
pub fn score_video(
    model: &TrinityModel,
    codebook: Option<&Codebook>,
    frames: &[Image],
    flows: &[FlowField],
    context: Option<&ClipContext>,
    labels: &[u8],
) -> Result<(VideoComponents, Vec<u8>)> {
    let t = model.cfg.frames_per_tube;
    if frames.len() < t {
        return Err(TrinityError::Contract(format!(
            "video has {} frames, shorter than one {t}-frame tube",
            frames.len()
        )));
    }
    if flows.len() + 1 != frames.len() {
        return Err(TrinityError::ShapeMismatch {
            op: "score_video flows",
            lhs: vec![flows.len()],
            rhs: vec![frames.len() - 1],
        });
    }
    if labels.len() != frames.len() {
        return Err(TrinityError::Contract(format!(
            "{} labels for {} frames",
            labels.len(),
            frames.len()
        )));
    }
    let contextual = model.mode == AlignMode::Contextual;
    if contextual && context.is_none() {
        return Err(TrinityError::Config(
            "contextual scoring needs a context".into(),
        ));
    }
    let ctx_vec = match context {
        Some(c) => Some(encode_context(c, &model.cfg.context_layout)?),
        None => None,
    };
    let tau = model.tau_value();
    let n_frames = frames.len();
    let mut psnr = vec![0.0; n_frames];
    let mut g = vec![0.0; n_frames];
    let mut g_mot = vec![0.0; n_frames];
    let mut g_app = vec![0.0; n_frames];
    let mut l_raw = vec![0.0; n_frames];
    no_grad(|| -> Result<()> {
        for end in (t - 1)..n_frames {
            let start = end + 1 - t;
            let tube = &frames[start..=end];
            let tube_flows = &flows[start..end];
            let descriptors = motion_descriptors(tube_flows, &model.cfg)?;
            let motion = match codebook {
                Some(cb) => MotionInput::Tokens(vec![tokenize_descriptors(&descriptors, cb)?]),
                None => MotionInput::Features(vec![descriptors]),
            };
            let (app_in, app_target) = appearance_tensors(&[tube], &model.cfg)?;
            let batch = BatchInput {
                contexts: ctx_vec.iter().cloned().collect(),
                motion,
                appearance_input: app_in,
                appearance_target: app_target,
            };
            let out = model.forward(&batch)?;
            psnr[end] = psnr_db(&out.prediction.value(), &batch.appearance_target.value())?;
            let mot_g = ForwardOutput::global(&out.h_mot)?.value();
            let app_g = ForwardOutput::global(&out.h_app)?.value();
            if let Some(h_cxt) = &out.h_cxt {
                let cxt_g = ForwardOutput::global(h_cxt)?.value();
                let (s, sm, sa) = global_context_score(&cxt_g, &mot_g, &app_g, tau);
                g[end] = s;
                g_mot[end] = sm;
                g_app[end] = sa;
            } else {
                let app_l = token_rows(&ForwardOutput::locals(&out.h_app)?.value(), model);
                let mot_l = token_rows(&ForwardOutput::locals(&out.h_mot)?.value(), model);
                l_raw[end] = local_misalignment_raw(&app_l, &mot_l, tau)?;
            }
        }
        Ok(())
    })?;
    for i in 0..t - 1 {
        psnr[i] = psnr[t - 1];
        g[i] = g[t - 1];
        g_mot[i] = g_mot[t - 1];
        g_app[i] = g_app[t - 1];
        l_raw[i] = l_raw[t - 1];
    }
    let s_r = min_max_normalize(&psnr);
    let components = if contextual {
        VideoComponents {
            s_r,
            s_g: Some(g),
            s_g_mot: Some(g_mot),
            s_g_app: Some(g_app),
            s_l: None,
        }
    } else {
        // Invert so that, like every other component, larger = more
        // normal before fusion.
        let inv: Vec<f64> = min_max_normalize(&l_raw).iter().map(|x| 1.0 - x).collect();
        VideoComponents {
            s_r,
            s_g: None,
            s_g_mot: None,
            s_g_app: None,
            s_l: Some(inv),
        }
    };
    Ok((components, labels.to_vec()))
}

fn token_rows(flat: &[f64], model: &TrinityModel) -> Vec<Vec<f64>> {
    let d = model.cfg.joint_dim;
    flat.chunks(d).map(|c| c.to_vec()).collect()
}

/// Fuse components into a final timeline for the chosen scorer.
pub fn fuse_timeline(
    components: &VideoComponents,
    labels: &[u8],
    kind: ScorerKind,
    alpha: f64,
    kernel: usize,
) -> Result<ScoreTimeline> {
    let n = components.s_r.len();
    let pick = |field: &Option<Vec<f64>>, name: &str| -> Result<Vec<f64>> {
        field.clone().ok_or_else(|| {
            TrinityError::Config(format!("scorer needs {name}, which this mode did not produce"))
        })
    };
    let (s_ctx, effective_alpha) = match kind {
        ScorerKind::Fused => {
            if components.s_g.is_some() {
                (pick(&components.s_g, "S_g")?, alpha)
            } else {
                (pick(&components.s_l, "S_l")?, alpha)
            }
        }
        ScorerKind::PsnrOnly => (vec![0.0; n], 1.0),
        ScorerKind::ContextMotionOnly => (pick(&components.s_g_mot, "S_g (motion)")?, alpha),
        ScorerKind::ContextAppearanceOnly => {
            (pick(&components.s_g_app, "S_g (appearance)")?, alpha)
        }
    };
    let s = fuse_and_smooth(&components.s_r, &s_ctx, effective_alpha, kernel)?;
    Ok(ScoreTimeline {
        frame_index: (0..n).collect(),
        s_r: components.s_r.clone(),
        s_ctx,
        anomaly: s.iter().map(|v| 1.0 - v).collect(),
        s,
        labels: labels.to_vec(),
    })
}

/// Score output CSV: frame_index, S_r, S_g_or_S_l, S, anomaly, label.
pub fn write_score_csv(path: &Path, timeline: &ScoreTimeline) -> Result<()> {
    let mut out = String::from("frame_index,s_r,s_ctx,s,anomaly,label\n");
    for i in 0..timeline.s.len() {
        out.push_str(&format!(
            "{},{:.9},{:.9},{:.9},{:.9},{}\n",
            timeline.frame_index[i],
            timeline.s_r[i],
            timeline.s_ctx[i],
            timeline.s[i],
            timeline.anomaly[i],
            timeline.labels[i],
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Dump a square matrix (attention or alignment weights) as CSV.
pub fn write_matrix_csv(path: &Path, matrix: &[f64], side: usize) -> Result<()> {
    let mut out = String::new();
    for row in matrix.chunks(side) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.9}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_closed_form() {
        // MSE 0.01 against range 2.0: 10 log10(4 / 0.01) = 26.02 dB.
        let target = vec![0.0; 100];
        let pred = vec![0.1; 100];
        let db = psnr_db(&pred, &target).unwrap();
        assert!((db - 10.0 * (400.0f64).log10()).abs() < 1e-9);
        assert!((db - 26.0206).abs() < 1e-3);
    }

    #[test]
    fn psnr_zero_error_caps() {
        let x = vec![0.3; 16];
        assert_eq!(psnr_db(&x, &x).unwrap(), PSNR_CAP_DB);
    }

    #[test]
    fn min_max_endpoints_and_degenerate_rule() {
        let s = min_max_normalize(&[26.0, 99.0, 40.0]);
        assert_eq!(s[0], 0.0);
        assert_eq!(s[1], 1.0);
        let flat = min_max_normalize(&[7.0, 7.0, 7.0]);
        assert!(flat.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn sigmoid_scores_saturate_and_center() {
        let unit = vec![1.0, 0.0];
        let (s, _, _) = global_context_score(&unit, &unit, &unit, 1e-6);
        assert!(s > 1.0 - 1e-9);
        let orth = vec![0.0, 1.0];
        let zero = vec![1.0, 0.0];
        let (s, sm, sa) = global_context_score(&orth, &zero, &zero, 0.07);
        assert_eq!(s, 0.5);
        assert_eq!(sm, 0.5);
        assert_eq!(sa, 0.5);
    }

    #[test]
    fn misalignment_identity_and_uniform_closed_forms() {
        let n = 5;
        // Orthonormal rows aligned with themselves at tiny tau: the
        // softmax approaches the identity, so the residual vanishes.
        let mut rows = vec![vec![0.0; n]; n];
        for (i, row) in rows.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        let raw = local_misalignment_raw(&rows, &rows, 1e-3).unwrap();
        assert!(raw < 1e-9, "raw = {raw}");
        // Identical tokens give uniform rows; closed form:
        // sqrt(n * ((1 - 1/n)^2 + (n-1)/n^2)).
        let same = vec![vec![1.0, 0.0]; n];
        let raw = local_misalignment_raw(&same, &same, 1.0).unwrap();
        let nf = n as f64;
        let expected =
            (nf * ((1.0 - 1.0 / nf).powi(2) + (nf - 1.0) / (nf * nf))).sqrt();
        assert!((raw - expected).abs() < 1e-12);
    }

    #[test]
    fn fusion_arithmetic_and_alpha_one() {
        let s = fuse_and_smooth(&[0.9], &[0.5], 0.3, 1).unwrap();
        assert!((s[0] - 0.62).abs() < 1e-12);
        let s = fuse_and_smooth(&[0.9, 0.2], &[0.5, 0.5], 1.0, 1).unwrap();
        assert_eq!(s, vec![0.9, 0.2]);
    }

    #[test]
    fn median_filter_removes_impulse_and_preserves_constants() {
        let mut xs = vec![0.4; 40];
        xs[20] = 1.0;
        let out = median_filter(&xs, 17).unwrap();
        assert!(out.iter().all(|&v| v == 0.4));
        let flat = median_filter(&vec![0.7; 10], 17).unwrap();
        assert!(flat.iter().all(|&v| v == 0.7));
    }

    #[test]
    fn median_filter_stays_within_input_range() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let xs: Vec<f64> = (0..50).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let out = median_filter(&xs, 7).unwrap();
        assert!(out.iter().all(|&v| v >= lo && v <= hi));
    }

    #[test]
    fn even_kernel_is_config_error() {
        assert!(matches!(
            median_filter(&[1.0], 4),
            Err(TrinityError::Config(_))
        ));
        assert!(matches!(
            fuse_and_smooth(&[1.0], &[1.0], 0.5, 2),
            Err(TrinityError::Config(_))
        ));
    }

    #[test]
    fn fusion_is_monotone_in_each_component() {
        let alpha = 0.3;
        let base = fuse_and_smooth(&[0.5], &[0.5], alpha, 1).unwrap()[0];
        let up_r = fuse_and_smooth(&[0.8], &[0.5], alpha, 1).unwrap()[0];
        let up_c = fuse_and_smooth(&[0.5], &[0.8], alpha, 1).unwrap()[0];
        assert!(up_r > base && up_c > base);
    }
}
