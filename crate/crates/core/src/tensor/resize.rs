//! Bilinear resizing with half-pixel sample centers (align-corners off),
//! plus reflect padding and cropping for the patch pipeline.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::Tensor;

/// Per-output-axis interpolation taps: (low index, high index, weight on high).
fn axis_taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = (o as f64 + 0.5) * scale - 0.5;
            let src = src.max(0.0).min((n_in - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(n_in - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

impl<T: Scalar> Tensor<T> {
    /// Resize an (H, W, C) map to (out_h, out_w, C). Identity shapes pass
    /// through bit-exactly; constant maps stay constant.
    pub fn bilinear_resize(&self, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
        let (h, w, c) = self.dims3()?;
        if out_h == 0 || out_w == 0 {
            return Err(Error::invalid("bilinear_resize", "output dims must be >= 1"));
        }
        let ty = axis_taps(h, out_h);
        let tx = axis_taps(w, out_w);
        let src = self.data();
        let mut out = vec![T::zero(); out_h * out_w * c];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let wy1 = T::c(fy);
            let wy0 = T::one() - wy1;
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let wx1 = T::c(fx);
                let wx0 = T::one() - wx1;
                let o = (oy * out_w + ox) * c;
                let i00 = (y0 * w + x0) * c;
                let i01 = (y0 * w + x1) * c;
                let i10 = (y1 * w + x0) * c;
                let i11 = (y1 * w + x1) * c;
                for j in 0..c {
                    out[o + j] = wy0 * (wx0 * src[i00 + j] + wx1 * src[i01 + j])
                        + wy1 * (wx0 * src[i10 + j] + wx1 * src[i11 + j]);
                }
            }
        }
        drop(src);
        let parent = self.clone();
        Ok(Tensor::from_op(
            vec![out_h, out_w, c],
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = vec![T::zero(); h * w * c];
                for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                    let wy1 = T::c(fy);
                    let wy0 = T::one() - wy1;
                    for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                        let wx1 = T::c(fx);
                        let wx0 = T::one() - wx1;
                        let o = (oy * out_w + ox) * c;
                        for j in 0..c {
                            let gv = g[o + j];
                            dx[(y0 * w + x0) * c + j] = dx[(y0 * w + x0) * c + j] + gv * wy0 * wx0;
                            dx[(y0 * w + x1) * c + j] = dx[(y0 * w + x1) * c + j] + gv * wy0 * wx1;
                            dx[(y1 * w + x0) * c + j] = dx[(y1 * w + x0) * c + j] + gv * wy1 * wx0;
                            dx[(y1 * w + x1) * c + j] = dx[(y1 * w + x1) * c + j] + gv * wy1 * wx1;
                        }
                    }
                }
                parent.add_grad(&dx);
            }),
        ))
    }

    /// Reflect-pad the spatial axes of an (H, W, C) map. Single reflection:
    /// each pad amount must be at most dim - 1.
    pub fn pad_reflect2d(&self, pad_h: usize, pad_w: usize) -> Result<Tensor<T>> {
        let (h, w, c) = self.dims3()?;
        if pad_h >= h || pad_w >= w {
            return Err(Error::invalid(
                "pad_reflect2d",
                format!("pad ({}, {}) too large for map {}x{}", pad_h, pad_w, h, w),
            ));
        }
        let nh = h + 2 * pad_h;
        let nw = w + 2 * pad_w;
        let reflect = |i: isize, n: usize| -> usize {
            let n = n as isize;
            let mut i = i;
            if i < 0 {
                i = -i;
            }
            if i >= n {
                i = 2 * n - 2 - i;
            }
            i as usize
        };
        // Per-output index map into the source; reused by the backward scatter.
        let mut map = Vec::with_capacity(nh * nw * c);
        for oy in 0..nh {
            let sy = reflect(oy as isize - pad_h as isize, h);
            for ox in 0..nw {
                let sx = reflect(ox as isize - pad_w as isize, w);
                let base = (sy * w + sx) * c;
                for j in 0..c {
                    map.push(base + j);
                }
            }
        }
        Ok(self.gather_bijection_or_surjection(map, vec![nh, nw, c]))
    }

    /// Crop an (H, W, C) map to the window starting at (top, left).
    pub fn crop2d(&self, top: usize, left: usize, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
        let (h, w, c) = self.dims3()?;
        if top + out_h > h || left + out_w > w {
            return Err(Error::invalid(
                "crop2d",
                format!("window {}x{}+{}+{} exceeds map {}x{}", out_h, out_w, top, left, h, w),
            ));
        }
        let mut map = Vec::with_capacity(out_h * out_w * c);
        for oy in 0..out_h {
            for ox in 0..out_w {
                let base = ((top + oy) * w + (left + ox)) * c;
                for j in 0..c {
                    map.push(base + j);
                }
            }
        }
        Ok(self.gather_bijection_or_surjection(map, vec![out_h, out_w, c]))
    }

    /// Gather that tolerates repeated or missing source indices (reflect
    /// padding repeats, cropping drops). Backward adds into each source slot.
    fn gather_bijection_or_surjection(&self, map: Vec<usize>, shape: Vec<usize>) -> Tensor<T> {
        let src = self.data();
        let data: Vec<T> = map.iter().map(|&i| src[i]).collect();
        drop(src);
        let parent = self.clone();
        let total = self.len();
        Tensor::from_op(
            shape,
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = vec![T::zero(); total];
                for (out_i, &in_i) in map.iter().enumerate() {
                    dx[in_i] = dx[in_i] + g[out_i];
                }
                parent.add_grad(&dx);
            }),
        )
    }
}
