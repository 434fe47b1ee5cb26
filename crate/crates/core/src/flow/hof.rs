//! Histogram-of-optical-flow patch features: 12 orientation-bin mass
//! fractions, one background ratio, and 12 per-bin mean magnitudes.

use super::FlowField;
use crate::error::{Result, TrinityError};

pub const HOF_BINS: usize = 12;
pub const HOF_CHANNELS: usize = 2 * HOF_BINS + 1;

/// 25-channel descriptor of one non-overlapping patch.
#[derive(Clone, Debug, PartialEq)]
pub struct HofPatchFeature {
    /// Fraction of patch pixels whose flow lands in each 30-degree bin.
    pub bin_fractions: [f64; HOF_BINS],
    /// Fraction of pixels with flow magnitude below the threshold.
    pub background_ratio: f64,
    /// Mean magnitude of the pixels in each bin; 0 for empty bins.
    pub bin_mean_magnitudes: [f64; HOF_BINS],
}

impl HofPatchFeature {
    /// Channel layout: 12 fractions, background ratio, 12 magnitudes.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(HOF_CHANNELS);
        v.extend_from_slice(&self.bin_fractions);
        v.push(self.background_ratio);
        v.extend_from_slice(&self.bin_mean_magnitudes);
        v
    }
}

/// Patch grid of HOF features, row-major.
#[derive(Clone, Debug)]
pub struct HofGrid {
    pub rows: usize,
    pub cols: usize,
    pub patches: Vec<HofPatchFeature>,
}

impl HofGrid {
    pub fn at(&self, row: usize, col: usize) -> &HofPatchFeature {
        &self.patches[row * self.cols + col]
    }
}

/// Bin k covers [k*30 - 15, k*30 + 15) degrees, so axis-aligned motion
/// falls on a bin center rather than an edge.
fn orientation_bin(u: f64, v: f64) -> usize {
    let mut deg = v.atan2(u).to_degrees();
    if deg < 0.0 {
        deg += 360.0;
    }
    (((deg + 15.0) / 30.0).floor() as usize) % HOF_BINS
}

/// Histogram features over non-overlapping `patch_size` patches.
/// `magnitude_threshold` separates background from moving pixels.
pub fn hof_features(
    flow: &FlowField,
    patch_size: usize,
    magnitude_threshold: f64,
) -> Result<HofGrid> {
    if patch_size == 0 || flow.width % patch_size != 0 || flow.height % patch_size != 0 {
        return Err(TrinityError::Config(format!(
            "patch size {patch_size} must divide flow field {}x{}",
            flow.width, flow.height
        )));
    }
    if magnitude_threshold <= 0.0 {
        return Err(TrinityError::Config(format!(
            "magnitude threshold must be positive, got {magnitude_threshold}"
        )));
    }
    let rows = flow.height / patch_size;
    let cols = flow.width / patch_size;
    let mut patches = Vec::with_capacity(rows * cols);
    let total = (patch_size * patch_size) as f64;
    for pr in 0..rows {
        for pc in 0..cols {
            let mut counts = [0usize; HOF_BINS];
            let mut mags = [0.0; HOF_BINS];
            let mut background = 0usize;
            for dy in 0..patch_size {
                for dx in 0..patch_size {
                    let idx = (pr * patch_size + dy) * flow.width + pc * patch_size + dx;
                    let (u, v) = (flow.u[idx], flow.v[idx]);
                    if !u.is_finite() || !v.is_finite() {
                        return Err(TrinityError::Contract(
                            "flow field contains non-finite values".into(),
                        ));
                    }
                    let mag = (u * u + v * v).sqrt();
                    if mag < magnitude_threshold {
                        background += 1;
                    } else {
                        let b = orientation_bin(u, v);
                        counts[b] += 1;
                        mags[b] += mag;
                    }
                }
            }
            let mut bin_fractions = [0.0; HOF_BINS];
            let mut bin_mean_magnitudes = [0.0; HOF_BINS];
            for b in 0..HOF_BINS {
                bin_fractions[b] = counts[b] as f64 / total;
                if counts[b] > 0 {
                    bin_mean_magnitudes[b] = mags[b] / counts[b] as f64;
                }
            }
            patches.push(HofPatchFeature {
                bin_fractions,
                background_ratio: background as f64 / total,
                bin_mean_magnitudes,
            });
        }
    }
    Ok(HofGrid { rows, cols, patches })
}

/// Mean of per-pair HOF grids over a clip. Each patch's 25 channels are
/// averaged across the `T-1` frame pairs.
pub fn average_hof_grids(grids: &[HofGrid]) -> Result<Vec<Vec<f64>>> {
    let first = grids.first().ok_or_else(|| {
        TrinityError::Contract("average_hof_grids needs at least one grid".into())
    })?;
    let n = first.patches.len();
    let mut out = vec![vec![0.0; HOF_CHANNELS]; n];
    for g in grids {
        if g.patches.len() != n {
            return Err(TrinityError::ShapeMismatch {
                op: "average_hof_grids",
                lhs: vec![n],
                rhs: vec![g.patches.len()],
            });
        }
        for (acc, patch) in out.iter_mut().zip(&g.patches) {
            for (a, x) in acc.iter_mut().zip(patch.to_vec()) {
                *a += x;
            }
        }
    }
    let k = grids.len() as f64;
    for acc in &mut out {
        for a in acc.iter_mut() {
            *a /= k;
        }
    }
    Ok(out)
}
