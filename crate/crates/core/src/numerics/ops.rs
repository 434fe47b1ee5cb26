//! Neural-network ops on tensors: softmax, layer norm, convolution,
//! embedding lookup, and the reductions the alignment losses need.

use super::tensor::{numel_of, Tensor};
use crate::error::{Result, TrinityError};

/// Output-column range [lo, hi) for which `ox*stride + kx - pad` lands
/// inside a width-`w` input row; `None` when no column does.
#[inline]
fn conv_span(kx: usize, pad: usize, stride: usize, w: usize, wo: usize) -> Option<(usize, usize)> {
    if kx >= w + pad {
        return None;
    }
    let lo = pad.saturating_sub(kx).div_ceil(stride);
    let hi = ((w + pad - kx - 1) / stride + 1).min(wo);
    (lo < hi).then_some((lo, hi))
}

impl Tensor {
    /// Softmax along the last axis. Rows are max-shifted for stability.
    pub fn softmax(&self) -> Tensor {
        let shape = self.shape().to_vec();
        let d = *shape.last().unwrap_or(&1);
        let rows = self.numel() / d;
        let src = self.value();
        let mut data = vec![0.0; src.len()];
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (o, &x) in data[r * d..(r + 1) * d].iter_mut().zip(row.iter()) {
                *o = (x - m).exp();
                sum += *o;
            }
            for o in &mut data[r * d..(r + 1) * d] {
                *o /= sum;
            }
        }
        let parent = self.clone();
        Tensor::op_from(
            data,
            shape,
            vec![self.clone()],
            Box::new(move |g, out| {
                let mut dx = vec![0.0; g.len()];
                for r in 0..rows {
                    let y = &out[r * d..(r + 1) * d];
                    let gy = &g[r * d..(r + 1) * d];
                    let dot: f64 = y.iter().zip(gy).map(|(yv, gv)| yv * gv).sum();
                    for j in 0..d {
                        dx[r * d + j] = y[j] * (gy[j] - dot);
                    }
                }
                parent.accumulate_pub(&dx);
            }),
        )
    }

    /// log(sum(exp(row))) per row of a 2-D tensor.
    pub fn logsumexp_rows(&self) -> Result<Tensor> {
        if self.shape().len() != 2 {
            return Err(TrinityError::Contract(format!(
                "logsumexp_rows expects a 2-D tensor, got {:?}",
                self.shape()
            )));
        }
        let (m, d) = (self.shape()[0], self.shape()[1]);
        let src = self.value();
        let mut data = vec![0.0; m];
        for r in 0..m {
            let row = &src[r * d..(r + 1) * d];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = row.iter().map(|x| (x - mx).exp()).sum();
            data[r] = mx + s.ln();
        }
        let parent = self.clone();
        Ok(Tensor::op_from(
            data,
            vec![m],
            vec![self.clone()],
            Box::new(move |g, out| {
                let src = parent.data_ref();
                let mut dx = vec![0.0; m * d];
                for r in 0..m {
                    for j in 0..d {
                        dx[r * d + j] = g[r] * (src[r * d + j] - out[r]).exp();
                    }
                }
                drop(src);
                parent.accumulate_pub(&dx);
            }),
        ))
    }

    /// Main diagonal of a square matrix.
    pub fn diag(&self) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 2 || s[0] != s[1] {
            return Err(TrinityError::Contract(format!(
                "diag expects a square matrix, got {s:?}"
            )));
        }
        let n = s[0];
        let src = self.value();
        let data: Vec<f64> = (0..n).map(|i| src[i * n + i]).collect();
        let parent = self.clone();
        Ok(Tensor::op_from(
            data,
            vec![n],
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut dx = vec![0.0; n * n];
                for i in 0..n {
                    dx[i * n + i] = g[i];
                }
                parent.accumulate_pub(&dx);
            }),
        ))
    }

    /// Normalize along the last axis — mean 0, variance 1 — then apply
    /// the affine `gamma`/`beta`. `eps` guards the zero-variance case.
    pub fn layer_norm(&self, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
        let shape = self.shape().to_vec();
        let d = *shape.last().unwrap_or(&1);
        if gamma.shape() != [d] || beta.shape() != [d] {
            return Err(TrinityError::ShapeMismatch {
                op: "layer_norm",
                lhs: shape,
                rhs: gamma.shape().to_vec(),
            });
        }
        let rows = self.numel() / d;
        let src = self.value();
        let gam = gamma.value();
        let bet = beta.value();
        let mut data = vec![0.0; src.len()];
        let mut xhat = vec![0.0; src.len()];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            let mu: f64 = row.iter().sum::<f64>() / d as f64;
            let var: f64 = row.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / d as f64;
            let istd = 1.0 / (var + eps).sqrt();
            inv_std[r] = istd;
            for j in 0..d {
                let xh = (row[j] - mu) * istd;
                xhat[r * d + j] = xh;
                data[r * d + j] = gam[j] * xh + bet[j];
            }
        }
        let px = self.clone();
        let pg = gamma.clone();
        let pb = beta.clone();
        Ok(Tensor::op_from(
            data,
            self.shape().to_vec(),
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |g, _| {
                let mut dx = vec![0.0; rows * d];
                let mut dgam = vec![0.0; d];
                let mut dbet = vec![0.0; d];
                for r in 0..rows {
                    let istd = inv_std[r];
                    let xh = &xhat[r * d..(r + 1) * d];
                    let gr = &g[r * d..(r + 1) * d];
                    let mut sum_dxh = 0.0;
                    let mut sum_dxh_xh = 0.0;
                    for j in 0..d {
                        let dxh = gr[j] * gam[j];
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xh[j];
                        dgam[j] += gr[j] * xh[j];
                        dbet[j] += gr[j];
                    }
                    for j in 0..d {
                        let dxh = gr[j] * gam[j];
                        dx[r * d + j] =
                            istd * (dxh - sum_dxh / d as f64 - xh[j] * sum_dxh_xh / d as f64);
                    }
                }
                px.accumulate_pub(&dx);
                pg.accumulate_pub(&dgam);
                pb.accumulate_pub(&dbet);
            }),
        ))
    }

    /// L2-normalize along the last axis.
    pub fn l2_normalize(&self) -> Tensor {
        let shape = self.shape().to_vec();
        let d = *shape.last().unwrap_or(&1);
        let rows = self.numel() / d;
        let src = self.value();
        let mut data = vec![0.0; src.len()];
        let mut norms = vec![0.0; rows];
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            norms[r] = n;
            for j in 0..d {
                data[r * d + j] = row[j] / n;
            }
        }
        let parent = self.clone();
        Tensor::op_from(
            data,
            shape,
            vec![self.clone()],
            Box::new(move |g, out| {
                let mut dx = vec![0.0; g.len()];
                for r in 0..rows {
                    let y = &out[r * d..(r + 1) * d];
                    let gy = &g[r * d..(r + 1) * d];
                    let dot: f64 = y.iter().zip(gy).map(|(yv, gv)| yv * gv).sum();
                    for j in 0..d {
                        dx[r * d + j] = (gy[j] - y[j] * dot) / norms[r];
                    }
                }
                parent.accumulate_pub(&dx);
            }),
        )
    }

    /// Row lookup into a `[M, d]` table; gradients scatter back into it.
    pub fn embedding(table: &Tensor, indices: &[usize]) -> Result<Tensor> {
        let s = table.shape();
        if s.len() != 2 {
            return Err(TrinityError::Contract(format!(
                "embedding table must be 2-D, got {s:?}"
            )));
        }
        let (m, d) = (s[0], s[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= m) {
            return Err(TrinityError::Contract(format!(
                "token index {bad} out of range for table of {m} entries"
            )));
        }
        let src = table.value();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let parent = table.clone();
        let idx = indices.to_vec();
        Ok(Tensor::op_from(
            data,
            vec![indices.len(), d],
            vec![table.clone()],
            Box::new(move |g, _| {
                let mut dt = vec![0.0; m * d];
                for (row, &i) in idx.iter().enumerate() {
                    for j in 0..d {
                        dt[i * d + j] += g[row * d + j];
                    }
                }
                parent.accumulate_pub(&dt);
            }),
        ))
    }

    /// 2-D convolution over `[B, C, H, W]` with kernel `[O, C, kh, kw]`,
    /// zero padding and square stride.
    pub fn conv2d(
        &self,
        weight: &Tensor,
        bias: &Tensor,
        stride: usize,
        pad: usize,
    ) -> Result<Tensor> {
        let xs = self.shape().to_vec();
        let ws = weight.shape().to_vec();
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] {
            return Err(TrinityError::ShapeMismatch {
                op: "conv2d",
                lhs: xs,
                rhs: ws,
            });
        }
        let (b, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (o, _, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        if bias.shape() != [o] {
            return Err(TrinityError::ShapeMismatch {
                op: "conv2d bias",
                lhs: bias.shape().to_vec(),
                rhs: vec![o],
            });
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(TrinityError::Contract(format!(
                "conv2d kernel {kh}x{kw} larger than padded input {h}x{w} (pad {pad})"
            )));
        }
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (w + 2 * pad - kw) / stride + 1;
        let x = self.data_ref();
        let wt = weight.data_ref();
        let bs = bias.data_ref();
        let mut out = vec![0.0; b * o * ho * wo];
        for bi in 0..b {
            for oi in 0..o {
                let wbase = oi * c * kh * kw;
                for oy in 0..ho {
                    let orow = &mut out[((bi * o + oi) * ho + oy) * wo..][..wo];
                    orow.fill(bs[oi]);
                    for ci in 0..c {
                        let xplane = &x[(bi * c + ci) * h * w..][..h * w];
                        let kbase = wbase + ci * kh * kw;
                        for ky in 0..kh {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let xrow = &xplane[iy as usize * w..][..w];
                            let wrow = &wt[kbase + ky * kw..][..kw];
                            for (kx, &wv) in wrow.iter().enumerate() {
                                // ix = ox*stride + kx - pad stays in range
                                // for ox in [lo, hi).
                                let Some((lo, hi)) = conv_span(kx, pad, stride, w, wo) else {
                                    continue;
                                };
                                let ix = lo * stride + kx - pad;
                                if stride == 1 {
                                    let xs = &xrow[ix..ix + (hi - lo)];
                                    for (ov, &xv) in orow[lo..hi].iter_mut().zip(xs) {
                                        *ov += xv * wv;
                                    }
                                } else {
                                    let mut ix = ix;
                                    for ov in orow[lo..hi].iter_mut() {
                                        *ov += xrow[ix] * wv;
                                        ix += stride;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        drop(x);
        drop(wt);
        drop(bs);
        let px = self.clone();
        let pw = weight.clone();
        let pb = bias.clone();
        Ok(Tensor::op_from(
            out,
            vec![b, o, ho, wo],
            vec![self.clone(), weight.clone(), bias.clone()],
            Box::new(move |g, _| {
                let x = px.data_ref();
                let wt = pw.data_ref();
                let mut dx = vec![0.0; b * c * h * w];
                let mut dw = vec![0.0; o * c * kh * kw];
                let mut db = vec![0.0; o];
                for bi in 0..b {
                    for oi in 0..o {
                        let wbase = oi * c * kh * kw;
                        for oy in 0..ho {
                            let grow = &g[((bi * o + oi) * ho + oy) * wo..][..wo];
                            db[oi] += grow.iter().sum::<f64>();
                            for ci in 0..c {
                                let plane = (bi * c + ci) * h * w;
                                let kbase = wbase + ci * kh * kw;
                                for ky in 0..kh {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    let row = plane + iy as usize * w;
                                    let xrow = &x[row..row + w];
                                    let dxrow = &mut dx[row..row + w];
                                    for kx in 0..kw {
                                        let Some((lo, hi)) = conv_span(kx, pad, stride, w, wo)
                                        else {
                                            continue;
                                        };
                                        let wv = wt[kbase + ky * kw + kx];
                                        let ix = lo * stride + kx - pad;
                                        let mut dwv = 0.0;
                                        if stride == 1 {
                                            let n = hi - lo;
                                            let xs = &xrow[ix..ix + n];
                                            let dxs = &mut dxrow[ix..ix + n];
                                            for ((&gv, dxv), &xv) in
                                                grow[lo..hi].iter().zip(dxs).zip(xs)
                                            {
                                                *dxv += gv * wv;
                                                dwv += gv * xv;
                                            }
                                        } else {
                                            let mut ix = ix;
                                            for &gv in grow[lo..hi].iter() {
                                                dxrow[ix] += gv * wv;
                                                dwv += gv * xrow[ix];
                                                ix += stride;
                                            }
                                        }
                                        dw[kbase + ky * kw + kx] += dwv;
                                    }
                                }
                            }
                        }
                    }
                }
                drop(x);
                drop(wt);
                px.accumulate_pub(&dx);
                pw.accumulate_pub(&dw);
                pb.accumulate_pub(&db);
            }),
        ))
    }

    /// Nearest-neighbor 2x upsampling of `[B, C, H, W]`.
    pub fn upsample_nearest_2x(&self) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 4 {
            return Err(TrinityError::Contract(format!(
                "upsample_nearest_2x expects [B,C,H,W], got {s:?}"
            )));
        }
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (h2, w2) = (h * 2, w * 2);
        let src = self.value();
        let mut out = vec![0.0; b * c * h2 * w2];
        for bc in 0..b * c {
            for y in 0..h2 {
                for x in 0..w2 {
                    out[(bc * h2 + y) * w2 + x] = src[(bc * h + y / 2) * w + x / 2];
                }
            }
        }
        let parent = self.clone();
        Ok(Tensor::op_from(
            out,
            vec![b, c, h2, w2],
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut dx = vec![0.0; b * c * h * w];
                for bc in 0..b * c {
                    for y in 0..h2 {
                        for x in 0..w2 {
                            dx[(bc * h + y / 2) * w + x / 2] += g[(bc * h2 + y) * w2 + x];
                        }
                    }
                }
                parent.accumulate_pub(&dx);
            }),
        ))
    }
}

/// Internal constructors re-exposed for this module.
impl Tensor {
    pub(crate) fn op_from(
        data: Vec<f64>,
        shape: Vec<usize>,
        parents: Vec<Tensor>,
        backward: Box<dyn Fn(&[f64], &[f64])>,
    ) -> Tensor {
        debug_assert_eq!(data.len(), numel_of(&shape));
        Tensor::op_internal(data, shape, parents, backward)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_uniform_logits() {
        let x = Tensor::zeros(&[3]);
        let y = x.softmax();
        for v in y.value() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Tensor::from_vec(vec![3.0, -1.0, 0.5, 10.0, 10.0, -4.0], &[2, 3]).unwrap();
        let y = x.softmax();
        let v = y.value();
        for r in 0..2 {
            let s: f64 = v[r * 3..(r + 1) * 3].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(v[r * 3..(r + 1) * 3].iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn layer_norm_centers_and_scales() {
        let d = 8;
        let x = Tensor::from_vec((0..d).map(|i| (i as f64) * 1.7 - 3.0).collect(), &[1, d])
            .unwrap();
        let gamma = Tensor::full(&[d], 1.0);
        let beta = Tensor::zeros(&[d]);
        let y = x.layer_norm(&gamma, &beta, 1e-10).unwrap().value();
        let mu: f64 = y.iter().sum::<f64>() / d as f64;
        let var: f64 = y.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
        assert!(mu.abs() < 1e-10);
        assert!((var - 1.0).abs() < 1e-6);
    }

    #[test]
    fn embedding_scatters_gradients() {
        let table = Tensor::param(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[3, 2]).unwrap();
        let looked = Tensor::embedding(&table, &[2, 0, 2]).unwrap();
        assert_eq!(looked.value(), vec![5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        looked.sum_all().backward().unwrap();
        assert_eq!(table.grad(), vec![1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
    }

    #[test]
    fn embedding_rejects_out_of_range() {
        let table = Tensor::zeros(&[3, 2]);
        assert!(Tensor::embedding(&table, &[3]).is_err());
    }

    #[test]
    fn conv2d_known_answer() {
        // 1x1x2x2 input, 1x1x2x2 kernel, no pad: plain dot product.
        let x = Tensor::from_vec(vec![1.0, 2.0, 3.0, 4.0], &[1, 1, 2, 2]).unwrap();
        let w = Tensor::from_vec(vec![10.0, 20.0, 30.0, 40.0], &[1, 1, 2, 2]).unwrap();
        let b = Tensor::from_vec(vec![0.5], &[1]).unwrap();
        let y = x.conv2d(&w, &b, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert!((y.value()[0] - (10.0 + 40.0 + 90.0 + 160.0 + 0.5)).abs() < 1e-12);
    }

    #[test]
    fn upsample_then_sum_pools_gradient() {
        let x = Tensor::param(vec![1.0, 2.0, 3.0, 4.0], &[1, 1, 2, 2]).unwrap();
        let y = x.upsample_nearest_2x().unwrap();
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
        y.sum_all().backward().unwrap();
        assert_eq!(x.grad(), vec![4.0, 4.0, 4.0, 4.0]);
    }

    #[test]
    fn l2_normalize_unit_rows() {
        let x = Tensor::from_vec(vec![3.0, 4.0, 0.0, 5.0], &[2, 2]).unwrap();
        let y = x.l2_normalize().value();
        for r in 0..2 {
            let n: f64 = y[r * 2..(r + 1) * 2].iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }
}
