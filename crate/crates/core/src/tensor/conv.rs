//! 2D convolution over (H, W, C) maps and a width-3 depthwise convolution
//! over (L, D) token sequences. Direct loops; desk-scale shapes make im2col
//! machinery unnecessary.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::Tensor;

impl<T: Scalar> Tensor<T> {
    /// Convolve an (H, W, C_in) map with a (kh, kw, C_in, C_out) kernel.
    /// Zero padding, standard output arithmetic:
    /// out = (in + 2*pad - k) / stride + 1.
    pub fn conv2d(&self, kernel: &Tensor<T>, bias: &Tensor<T>, stride: usize, padding: usize) -> Result<Tensor<T>> {
        let (h, w, c_in) = self.dims3()?;
        let (kh, kw, kc_in, c_out) = kernel.dims4()?;
        if kc_in != c_in {
            return Err(Error::shape(
                "conv2d",
                format!("kernel input channels {}", c_in),
                format!("input {:?} vs kernel {:?}", self.shape(), kernel.shape()),
            ));
        }
        if bias.len() != c_out {
            return Err(Error::shape("conv2d bias", format!("({},)", c_out), format!("{:?}", bias.shape())));
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d", "stride must be >= 1"));
        }
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(Error::invalid(
                "conv2d",
                format!("kernel {}x{} larger than padded input {}x{}", kh, kw, h + 2 * padding, w + 2 * padding),
            ));
        }
        let oh = (h + 2 * padding - kh) / stride + 1;
        let ow = (w + 2 * padding - kw) / stride + 1;

        let x = self.data();
        let k = kernel.data();
        let b = bias.data();
        let mut out = vec![T::zero(); oh * ow * c_out];
        for oy in 0..oh {
            for ox in 0..ow {
                let orow = &mut out[(oy * ow + ox) * c_out..(oy * ow + ox + 1) * c_out];
                orow.copy_from_slice(&b);
                for ky in 0..kh {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let xoff = (iy as usize * w + ix as usize) * c_in;
                        let koff = (ky * kw + kx) * c_in * c_out;
                        for ci in 0..c_in {
                            let xv = x[xoff + ci];
                            if xv == T::zero() {
                                continue;
                            }
                            let krow = &k[koff + ci * c_out..koff + (ci + 1) * c_out];
                            for (o, &kv) in orow.iter_mut().zip(krow) {
                                *o = *o + xv * kv;
                            }
                        }
                    }
                }
            }
        }
        drop(x);
        drop(k);
        drop(b);

        let px = self.clone();
        let pk = kernel.clone();
        let pb = bias.clone();
        Ok(Tensor::from_op(
            vec![oh, ow, c_out],
            out,
            vec![self.clone(), kernel.clone(), bias.clone()],
            Box::new(move |g| {
                let (dx, dk, db) = {
                    let x = px.data();
                    let k = pk.data();
                    let mut dx = vec![T::zero(); h * w * c_in];
                    let mut dk = vec![T::zero(); kh * kw * c_in * c_out];
                    let mut db = vec![T::zero(); c_out];
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let grow = &g[(oy * ow + ox) * c_out..(oy * ow + ox + 1) * c_out];
                            for (j, &gv) in grow.iter().enumerate() {
                                db[j] = db[j] + gv;
                            }
                            for ky in 0..kh {
                                let iy = (oy * stride + ky) as isize - padding as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for kx in 0..kw {
                                    let ix = (ox * stride + kx) as isize - padding as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    let xoff = (iy as usize * w + ix as usize) * c_in;
                                    let koff = (ky * kw + kx) * c_in * c_out;
                                    for ci in 0..c_in {
                                        let krow = &k[koff + ci * c_out..koff + (ci + 1) * c_out];
                                        let mut acc = T::zero();
                                        for (j, &kv) in krow.iter().enumerate() {
                                            acc = acc + grow[j] * kv;
                                        }
                                        dx[xoff + ci] = dx[xoff + ci] + acc;
                                        let xv = x[xoff + ci];
                                        for (j, &gv) in grow.iter().enumerate() {
                                            dk[koff + ci * c_out + j] = dk[koff + ci * c_out + j] + xv * gv;
                                        }
                                    }
                                }
                            }
                        }
                    }
                    (dx, dk, db)
                };
                px.add_grad(&dx);
                pk.add_grad(&dk);
                pb.add_grad(&db);
            }),
        ))
    }

    /// Depthwise convolution of width 3 along the token axis of an (L, D)
    /// sequence, zero-padded so the length is preserved. Kernel is (3, D),
    /// bias (D,).
    pub fn dwconv1d_w3(&self, kernel: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
        let (l, d) = self.dims2()?;
        if kernel.shape() != [3, d] {
            return Err(Error::shape("dwconv1d_w3", format!("(3, {})", d), format!("{:?}", kernel.shape())));
        }
        if bias.len() != d {
            return Err(Error::shape("dwconv1d_w3 bias", format!("({},)", d), format!("{:?}", bias.shape())));
        }
        let x = self.data();
        let k = kernel.data();
        let b = bias.data();
        let mut out = vec![T::zero(); l * d];
        for t in 0..l {
            for j in 0..d {
                let mut acc = b[j];
                for tap in 0..3usize {
                    let ti = t as isize + tap as isize - 1;
                    if ti < 0 || ti >= l as isize {
                        continue;
                    }
                    acc = acc + k[tap * d + j] * x[ti as usize * d + j];
                }
                out[t * d + j] = acc;
            }
        }
        drop(x);
        drop(k);
        drop(b);
        let px = self.clone();
        let pk = kernel.clone();
        let pb = bias.clone();
        Ok(Tensor::from_op(
            vec![l, d],
            out,
            vec![self.clone(), kernel.clone(), bias.clone()],
            Box::new(move |g| {
                let (dx, dk, db) = {
                    let x = px.data();
                    let k = pk.data();
                    let mut dx = vec![T::zero(); l * d];
                    let mut dk = vec![T::zero(); 3 * d];
                    let mut db = vec![T::zero(); d];
                    for t in 0..l {
                        for j in 0..d {
                            let gv = g[t * d + j];
                            db[j] = db[j] + gv;
                            for tap in 0..3usize {
                                let ti = t as isize + tap as isize - 1;
                                if ti < 0 || ti >= l as isize {
                                    continue;
                                }
                                let xi = ti as usize * d + j;
                                dx[xi] = dx[xi] + gv * k[tap * d + j];
                                dk[tap * d + j] = dk[tap * d + j] + gv * x[xi];
                            }
                        }
                    }
                    (dx, dk, db)
                };
                px.add_grad(&dx);
                pk.add_grad(&dk);
                pb.add_grad(&db);
            }),
        ))
    }
}
