//! Simplified duality-based TV-L1 optical flow: single pyramid level,
//! fixed-point iterations with periodic re-warping.
//!
//! The classic (lambda, theta, tau) defaults are calibrated for 8-bit
//! intensities, so inputs in [-1, 1] are rescaled by 127.5 internally;
//! the recovered displacements are unaffected.

use super::{FlowField, Image};
use crate::error::{Result, TrinityError};

#[derive(Clone, Debug)]
pub struct SolverConfig {
    /// Data-term weight.
    pub lambda: f64,
    /// Coupling between the flow and its auxiliary variable.
    pub theta: f64,
    /// Dual ascent step.
    pub tau: f64,
    /// Total fixed-point iterations, split evenly across warps.
    pub iterations: usize,
    /// Re-linearization (warp) count.
    pub warps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            lambda: 0.15,
            theta: 0.3,
            tau: 0.25,
            iterations: 100,
            warps: 5,
        }
    }
}

const INTENSITY_SCALE: f64 = 127.5;
const GRAD_EPS: f64 = 1e-9;

fn bilinear(img: &[f64], w: usize, h: usize, x: f64, y: f64) -> f64 {
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let a = img[y0 * w + x0];
    let b = img[y0 * w + x1];
    let c = img[y1 * w + x0];
    let d = img[y1 * w + x1];
    a * (1.0 - fx) * (1.0 - fy) + b * fx * (1.0 - fy) + c * (1.0 - fx) * fy + d * fx * fy
}

/// Centered differences with clamped borders.
fn centered_gradient(img: &[f64], w: usize, h: usize) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let xm = x.saturating_sub(1);
            let xp = (x + 1).min(w - 1);
            let ym = y.saturating_sub(1);
            let yp = (y + 1).min(h - 1);
            gx[y * w + x] = 0.5 * (img[y * w + xp] - img[y * w + xm]);
            gy[y * w + x] = 0.5 * (img[yp * w + x] - img[ym * w + x]);
        }
    }
    (gx, gy)
}

fn forward_gradient(field: &[f64], w: usize, h: usize, gx: &mut [f64], gy: &mut [f64]) {
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            gx[i] = if x + 1 < w { field[i + 1] - field[i] } else { 0.0 };
            gy[i] = if y + 1 < h { field[i + w] - field[i] } else { 0.0 };
        }
    }
}

/// Negative adjoint of `forward_gradient`.
fn divergence(px: &[f64], py: &[f64], w: usize, h: usize, out: &mut [f64]) {
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let mut d = 0.0;
            if x + 1 < w {
                d += px[i];
            }
            if x > 0 {
                d -= px[i - 1];
            }
            if y + 1 < h {
                d += py[i];
            }
            if y > 0 {
                d -= py[i - w];
            }
            out[i] = d;
        }
    }
}

/// Dense flow from `frame_a` to `frame_b`. Both frames are grayscale
/// with values in [-1, 1] and equal shapes.
pub fn compute_flow(frame_a: &Image, frame_b: &Image, cfg: &SolverConfig) -> Result<FlowField> {
    if frame_a.width != frame_b.width || frame_a.height != frame_b.height {
        return Err(TrinityError::ShapeMismatch {
            op: "compute_flow",
            lhs: vec![frame_a.height, frame_a.width],
            rhs: vec![frame_b.height, frame_b.width],
        });
    }
    for img in [frame_a, frame_b] {
        if img.data.iter().any(|v| !v.is_finite() || v.abs() > 1.0 + 1e-9) {
            return Err(TrinityError::Contract(
                "compute_flow expects pixel values in [-1, 1]".into(),
            ));
        }
    }
    let (w, h) = (frame_a.width, frame_a.height);
    let n = w * h;
    let i0: Vec<f64> = frame_a.data.iter().map(|v| v * INTENSITY_SCALE).collect();
    let i1: Vec<f64> = frame_b.data.iter().map(|v| v * INTENSITY_SCALE).collect();
    let (i1x, i1y) = centered_gradient(&i1, w, h);

    let mut u = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut p = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut div = vec![0.0; n];
    let mut gx = vec![0.0; n];
    let mut gy = vec![0.0; n];
    let mut i1w = vec![0.0; n];
    let mut i1wx = vec![0.0; n];
    let mut i1wy = vec![0.0; n];
    let mut rho_c = vec![0.0; n];
    let mut grad_sq = vec![0.0; n];
    let mut vx = vec![0.0; n];
    let mut vy = vec![0.0; n];

    let warps = cfg.warps.max(1);
    let inner = (cfg.iterations / warps).max(1);
    let lt = cfg.lambda * cfg.theta;
    let sigma = cfg.tau / cfg.theta;

    for _ in 0..warps {
        // Linearize the data term around the current flow.
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let sx = x as f64 + u[i];
                let sy = y as f64 + v[i];
                i1w[i] = bilinear(&i1, w, h, sx, sy);
                i1wx[i] = bilinear(&i1x, w, h, sx, sy);
                i1wy[i] = bilinear(&i1y, w, h, sx, sy);
                grad_sq[i] = i1wx[i] * i1wx[i] + i1wy[i] * i1wy[i];
                rho_c[i] = i1w[i] - i1wx[i] * u[i] - i1wy[i] * v[i] - i0[i];
            }
        }
        for _ in 0..inner {
            // Data step: pointwise soft thresholding.
            for i in 0..n {
                let rho = rho_c[i] + i1wx[i] * u[i] + i1wy[i] * v[i];
                let bound = lt * grad_sq[i];
                let (du, dv) = if rho < -bound {
                    (lt * i1wx[i], lt * i1wy[i])
                } else if rho > bound {
                    (-lt * i1wx[i], -lt * i1wy[i])
                } else if grad_sq[i] > GRAD_EPS {
                    let s = -rho / grad_sq[i];
                    (s * i1wx[i], s * i1wy[i])
                } else {
                    (0.0, 0.0)
                };
                vx[i] = u[i] + du;
                vy[i] = v[i] + dv;
            }
            // TV step for each flow component, then dual ascent.
            divergence(&p[0], &p[1], w, h, &mut div);
            for i in 0..n {
                u[i] = vx[i] + cfg.theta * div[i];
            }
            forward_gradient(&u, w, h, &mut gx, &mut gy);
            for i in 0..n {
                let mag = (gx[i] * gx[i] + gy[i] * gy[i]).sqrt();
                let denom = 1.0 + sigma * mag;
                p[0][i] = (p[0][i] + sigma * gx[i]) / denom;
                p[1][i] = (p[1][i] + sigma * gy[i]) / denom;
            }
            divergence(&p[2], &p[3], w, h, &mut div);
            for i in 0..n {
                v[i] = vy[i] + cfg.theta * div[i];
            }
            forward_gradient(&v, w, h, &mut gx, &mut gy);
            for i in 0..n {
                let mag = (gx[i] * gx[i] + gy[i] * gy[i]).sqrt();
                let denom = 1.0 + sigma * mag;
                p[2][i] = (p[2][i] + sigma * gx[i]) / denom;
                p[3][i] = (p[3][i] + sigma * gy[i]) / denom;
            }
        }
    }
    Ok(FlowField {
        width: w,
        height: h,
        u,
        v,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smooth_pattern(w: usize, h: usize) -> Image {
        let mut img = Image::new(w, h);
        for y in 0..h {
            for x in 0..w {
                let fx = x as f64;
                let fy = y as f64;
                let v = 0.45 * (2.0 * std::f64::consts::PI * fx / 16.0).sin()
                    + 0.35 * (2.0 * std::f64::consts::PI * fy / 20.0).cos()
                    + 0.15 * (2.0 * std::f64::consts::PI * (fx + fy) / 24.0).sin();
                img.set(x, y, v);
            }
        }
        img
    }

    fn translate_periodic(img: &Image, dx: f64, dy: f64) -> Image {
        // The pattern above is built from periodic components, so a
        // wrapped shift is an exact translation.
        let (w, h) = (img.width, img.height);
        let mut out = Image::new(w, h);
        for y in 0..h {
            for x in 0..w {
                let sx = (x as f64 - dx).rem_euclid(w as f64);
                let sy = (y as f64 - dy).rem_euclid(h as f64);
                // periodic bilinear
                let x0 = sx.floor() as usize % w;
                let y0 = sy.floor() as usize % h;
                let x1 = (x0 + 1) % w;
                let y1 = (y0 + 1) % h;
                let fx = sx - sx.floor();
                let fy = sy - sy.floor();
                let v = img.at(x0, y0) * (1.0 - fx) * (1.0 - fy)
                    + img.at(x1, y0) * fx * (1.0 - fy)
                    + img.at(x0, y1) * (1.0 - fx) * fy
                    + img.at(x1, y1) * fx * fy;
                out.set(x, y, v);
            }
        }
        out
    }

    #[test]
    fn identical_frames_give_zero_flow() {
        let a = smooth_pattern(32, 32);
        let flow = compute_flow(&a, &a, &SolverConfig::default()).unwrap();
        for i in 0..flow.u.len() {
            assert!(flow.magnitude(i) < 1e-6, "flow {} at {i}", flow.magnitude(i));
        }
    }

    #[test]
    fn flat_frames_give_zero_flow() {
        let a = Image::from_data(16, 16, vec![0.25; 256]).unwrap();
        let b = Image::from_data(16, 16, vec![0.25; 256]).unwrap();
        let flow = compute_flow(&a, &b, &SolverConfig::default()).unwrap();
        for i in 0..flow.u.len() {
            assert!(flow.magnitude(i) < 1e-12);
        }
    }

    #[test]
    fn recovers_two_pixel_translation() {
        let a = smooth_pattern(64, 64);
        let b = translate_periodic(&a, 2.0, 0.0);
        let flow = compute_flow(&a, &b, &SolverConfig::default()).unwrap();
        let margin = 8;
        let mut su = 0.0;
        let mut sv = 0.0;
        let mut count = 0.0;
        for y in margin..64 - margin {
            for x in margin..64 - margin {
                su += flow.u[y * 64 + x];
                sv += flow.v[y * 64 + x];
                count += 1.0;
            }
        }
        let mu = su / count;
        let mv = sv / count;
        let err = ((mu - 2.0).powi(2) + mv.powi(2)).sqrt();
        assert!(err < 0.25, "mean interior flow ({mu:.3}, {mv:.3})");
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let a = Image::new(8, 8);
        let b = Image::new(8, 9);
        assert!(matches!(
            compute_flow(&a, &b, &SolverConfig::default()),
            Err(TrinityError::ShapeMismatch { .. })
        ));
    }
}
