//! Elementwise, reduction, linear-algebra and structural ops.
//!
//! Backward closures capture their parent handles plus whatever forward
//! values they need; reading parent data inside the closure is safe because
//! values are immutable for the lifetime of the graph.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::Tensor;

fn sigmoid_val<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

fn softplus_val<T: Scalar>(x: T) -> T {
    // Stable in both tails.
    let twenty = T::c(20.0);
    if x > twenty {
        x
    } else if x < -twenty {
        x.exp()
    } else {
        (T::one() + x.exp()).ln()
    }
}

const GELU_COEF: f64 = 0.044_715;

fn gelu_val<T: Scalar>(x: T) -> T {
    // tanh approximation
    let k = T::c((2.0 / std::f64::consts::PI).sqrt());
    let u = k * (x + T::c(GELU_COEF) * x * x * x);
    T::c(0.5) * x * (T::one() + u.tanh())
}

fn gelu_dval<T: Scalar>(x: T) -> T {
    let k = T::c((2.0 / std::f64::consts::PI).sqrt());
    let c = T::c(GELU_COEF);
    let u = k * (x + c * x * x * x);
    let t = u.tanh();
    let sech2 = T::one() - t * t;
    let du = k * (T::one() + T::c(3.0) * c * x * x);
    T::c(0.5) * (T::one() + t) + T::c(0.5) * x * sech2 * du
}

impl<T: Scalar> Tensor<T> {
    fn unary(&self, f: impl Fn(T) -> T, df: impl Fn(T) -> T + 'static) -> Tensor<T> {
        let data: Vec<T> = self.data().iter().map(|&v| f(v)).collect();
        let parent = self.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let x = parent.data();
                let dx: Vec<T> = g.iter().zip(x.iter()).map(|(&gi, &xi)| gi * df(xi)).collect();
                drop(x);
                parent.add_grad(&dx);
            }),
        )
    }

    pub fn neg(&self) -> Tensor<T> {
        self.unary(|v| -v, |_| -T::one())
    }

    pub fn exp(&self) -> Tensor<T> {
        self.unary(|v| v.exp(), |v| v.exp())
    }

    pub fn ln(&self) -> Tensor<T> {
        self.unary(|v| v.ln(), |v| T::one() / v)
    }

    /// x * sigmoid(x)
    pub fn silu(&self) -> Tensor<T> {
        self.unary(
            |v| v * sigmoid_val(v),
            |v| {
                let s = sigmoid_val(v);
                s * (T::one() + v * (T::one() - s))
            },
        )
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        self.unary(sigmoid_val, |v| {
            let s = sigmoid_val(v);
            s * (T::one() - s)
        })
    }

    pub fn softplus(&self) -> Tensor<T> {
        self.unary(softplus_val, sigmoid_val)
    }

    pub fn gelu(&self) -> Tensor<T> {
        self.unary(gelu_val, gelu_dval)
    }

    /// Elementwise absolute value; subgradient 0 at exactly 0.
    pub fn abs(&self) -> Tensor<T> {
        self.unary(
            |v| v.abs(),
            |v| {
                if v > T::zero() {
                    T::one()
                } else if v < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    pub fn scale(&self, c: T) -> Tensor<T> {
        self.unary(move |v| v * c, move |_| c)
    }

    pub fn add_scalar(&self, c: T) -> Tensor<T> {
        self.unary(move |v| v + c, |_| T::one())
    }

    /// c - x
    pub fn rsub_scalar(&self, c: T) -> Tensor<T> {
        self.unary(move |v| c - v, |_| -T::one())
    }

    /// Clamp into [lo, hi]; gradient passes through strictly inside the
    /// interval and is zero where the value was clipped.
    pub fn clamp(&self, lo: T, hi: T) -> Tensor<T> {
        self.unary(
            move |v| {
                if v < lo {
                    lo
                } else if v > hi {
                    hi
                } else {
                    v
                }
            },
            move |v| {
                if v < lo || v > hi {
                    T::zero()
                } else {
                    T::one()
                }
            },
        )
    }

    fn binary(
        &self,
        rhs: &Tensor<T>,
        context: &str,
        f: impl Fn(T, T) -> T,
        dfa: impl Fn(T, T) -> T + 'static,
        dfb: impl Fn(T, T) -> T + 'static,
    ) -> Result<Tensor<T>> {
        self.check_same_shape(rhs, context)?;
        let data: Vec<T> = self
            .data()
            .iter()
            .zip(rhs.data().iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        let pa = self.clone();
        let pb = rhs.clone();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g| {
                let (da, db): (Vec<T>, Vec<T>) = {
                    let a = pa.data();
                    let b = pb.data();
                    let da = g
                        .iter()
                        .zip(a.iter().zip(b.iter()))
                        .map(|(&gi, (&ai, &bi))| gi * dfa(ai, bi))
                        .collect();
                    let db = g
                        .iter()
                        .zip(a.iter().zip(b.iter()))
                        .map(|(&gi, (&ai, &bi))| gi * dfb(ai, bi))
                        .collect();
                    (da, db)
                };
                pa.add_grad(&da);
                pb.add_grad(&db);
            }),
        ))
    }

    pub fn add(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(rhs, "add", |a, b| a + b, |_, _| T::one(), |_, _| T::one())
    }

    pub fn sub(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(rhs, "sub", |a, b| a - b, |_, _| T::one(), |_, _| -T::one())
    }

    pub fn mul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(rhs, "mul", |a, b| a * b, |_, b| b, |a, _| a)
    }

    pub fn div(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(rhs, "div", |a, b| a / b, |_, b| T::one() / b, |a, b| -a / (b * b))
    }

    pub fn sum_all(&self) -> Tensor<T> {
        let s: T = self.data().iter().copied().sum();
        let parent = self.clone();
        let n = self.len();
        Tensor::from_op(
            vec![1],
            vec![s],
            vec![self.clone()],
            Box::new(move |g| {
                parent.add_grad(&vec![g[0]; n]);
            }),
        )
    }

    pub fn mean_all(&self) -> Tensor<T> {
        let n = self.len();
        self.sum_all().scale(T::one() / T::c(n as f64))
    }

    /// Same data, new shape (sizes must agree). Gradient passes through.
    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor<T>> {
        if shape.iter().product::<usize>() != self.len() {
            return Err(Error::shape(
                "reshape",
                format!("product {}", self.len()),
                format!("{:?}", shape),
            ));
        }
        let parent = self.clone();
        Ok(Tensor::from_op(
            shape,
            self.to_vec(),
            vec![self.clone()],
            Box::new(move |g| parent.add_grad(g)),
        ))
    }

    /// out[i] = in[map[i]] where `map` is a bijection on indices. Exact
    /// reorderings (plane flattening, token reversal, axis swaps) all go
    /// through here; the backward scatter uses the same map.
    pub fn gather_bijection(&self, map: std::rc::Rc<Vec<usize>>, shape: Vec<usize>) -> Tensor<T> {
        debug_assert_eq!(map.len(), self.len());
        debug_assert_eq!(shape.iter().product::<usize>(), self.len());
        let src = self.data();
        let data: Vec<T> = map.iter().map(|&i| src[i]).collect();
        drop(src);
        let parent = self.clone();
        let back_map = map.clone();
        Tensor::from_op(
            shape,
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = vec![T::zero(); g.len()];
                for (out_i, &in_i) in back_map.iter().enumerate() {
                    dx[in_i] = dx[in_i] + g[out_i];
                }
                parent.add_grad(&dx);
            }),
        )
    }

    /// Reverse the token axis of an (L, D) sequence.
    pub fn reverse_tokens(&self) -> Result<Tensor<T>> {
        let (l, d) = self.dims2()?;
        let mut map = Vec::with_capacity(l * d);
        for t in 0..l {
            let src_t = l - 1 - t;
            for j in 0..d {
                map.push(src_t * d + j);
            }
        }
        Ok(self.gather_bijection(std::rc::Rc::new(map), vec![l, d]))
    }

    /// Slice along the last axis: keeps `len` entries starting at `offset`.
    pub fn narrow_last(&self, offset: usize, len: usize) -> Result<Tensor<T>> {
        let shape = self.shape().to_vec();
        let last = *shape.last().ok_or_else(|| Error::invalid("narrow_last", "rank 0"))?;
        if offset + len > last {
            return Err(Error::invalid(
                "narrow_last",
                format!("slice {}..{} out of {}", offset, offset + len, last),
            ));
        }
        let rows = self.len() / last;
        let src = self.data();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&src[r * last + offset..r * last + offset + len]);
        }
        drop(src);
        let mut out_shape = shape.clone();
        *out_shape.last_mut().unwrap() = len;
        let parent = self.clone();
        let total = self.len();
        Ok(Tensor::from_op(
            out_shape,
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = vec![T::zero(); total];
                for r in 0..rows {
                    for j in 0..len {
                        dx[r * last + offset + j] = g[r * len + j];
                    }
                }
                parent.add_grad(&dx);
            }),
        ))
    }

    /// Concatenate two rank-1 tensors.
    pub fn concat1d(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        if self.shape().len() != 1 || rhs.shape().len() != 1 {
            return Err(Error::invalid("concat1d", "expects rank-1 inputs"));
        }
        let n = self.len();
        let m = rhs.len();
        let mut data = self.to_vec();
        data.extend_from_slice(&rhs.data());
        let pa = self.clone();
        let pb = rhs.clone();
        Ok(Tensor::from_op(
            vec![n + m],
            data,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g| {
                pa.add_grad(&g[..n]);
                pb.add_grad(&g[n..]);
            }),
        ))
    }

    /// (L, K) x (K, M) -> (L, M)
    pub fn matmul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        let (l, k) = self.dims2()?;
        let (k2, m) = rhs.dims2()?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("inner {}", k), format!("inner {}", k2)));
        }
        let a = self.data();
        let b = rhs.data();
        let mut out = vec![T::zero(); l * m];
        for i in 0..l {
            for p in 0..k {
                let av = a[i * k + p];
                if av == T::zero() {
                    continue;
                }
                let brow = &b[p * m..(p + 1) * m];
                let orow = &mut out[i * m..(i + 1) * m];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o = *o + av * bv;
                }
            }
        }
        drop(a);
        drop(b);
        let pa = self.clone();
        let pb = rhs.clone();
        Ok(Tensor::from_op(
            vec![l, m],
            out,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g| {
                let (da, db) = {
                    let a = pa.data();
                    let b = pb.data();
                    // dA = g . B^T
                    let mut da = vec![T::zero(); l * k];
                    for i in 0..l {
                        for p in 0..k {
                            let mut acc = T::zero();
                            for j in 0..m {
                                acc = acc + g[i * m + j] * b[p * m + j];
                            }
                            da[i * k + p] = acc;
                        }
                    }
                    // dB = A^T . g
                    let mut db = vec![T::zero(); k * m];
                    for p in 0..k {
                        for i in 0..l {
                            let av = a[i * k + p];
                            if av == T::zero() {
                                continue;
                            }
                            for j in 0..m {
                                db[p * m + j] = db[p * m + j] + av * g[i * m + j];
                            }
                        }
                    }
                    (da, db)
                };
                pa.add_grad(&da);
                pb.add_grad(&db);
            }),
        ))
    }

    /// (rows, M) + (M,) broadcast over rows. Works for any leading shape
    /// whose last axis equals the bias length.
    pub fn add_row_broadcast(&self, bias: &Tensor<T>) -> Result<Tensor<T>> {
        let m = bias.len();
        if bias.shape().len() != 1 || self.len() % m != 0 || *self.shape().last().unwrap() != m {
            return Err(Error::shape(
                "add_row_broadcast",
                format!("last axis {}", m),
                format!("{:?}", self.shape()),
            ));
        }
        let rows = self.len() / m;
        let b = bias.data();
        let data: Vec<T> = self
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + b[i % m])
            .collect();
        drop(b);
        let pa = self.clone();
        let pb = bias.clone();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), bias.clone()],
            Box::new(move |g| {
                pa.add_grad(g);
                let mut db = vec![T::zero(); m];
                for r in 0..rows {
                    for j in 0..m {
                        db[j] = db[j] + g[r * m + j];
                    }
                }
                pb.add_grad(&db);
            }),
        ))
    }

    /// (rows, M) * (M,) broadcast over rows.
    pub fn mul_row_broadcast(&self, v: &Tensor<T>) -> Result<Tensor<T>> {
        let m = v.len();
        if v.shape().len() != 1 || self.len() % m != 0 || *self.shape().last().unwrap() != m {
            return Err(Error::shape(
                "mul_row_broadcast",
                format!("last axis {}", m),
                format!("{:?}", self.shape()),
            ));
        }
        let rows = self.len() / m;
        let vv = v.data();
        let data: Vec<T> = self
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x * vv[i % m])
            .collect();
        drop(vv);
        let pa = self.clone();
        let pv = v.clone();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), v.clone()],
            Box::new(move |g| {
                let (da, dv) = {
                    let a = pa.data();
                    let vv = pv.data();
                    let da: Vec<T> = g.iter().enumerate().map(|(i, &gi)| gi * vv[i % m]).collect();
                    let mut dv = vec![T::zero(); m];
                    for r in 0..rows {
                        for j in 0..m {
                            dv[j] = dv[j] + g[r * m + j] * a[r * m + j];
                        }
                    }
                    (da, dv)
                };
                pa.add_grad(&da);
                pv.add_grad(&dv);
            }),
        ))
    }

    /// Mean over the two leading (spatial) axes of an (H, W, C) map -> (C,).
    pub fn spatial_mean(&self) -> Result<Tensor<T>> {
        let (h, w, c) = self.dims3()?;
        let n = h * w;
        let src = self.data();
        let mut out = vec![T::zero(); c];
        for i in 0..n {
            for j in 0..c {
                out[j] = out[j] + src[i * c + j];
            }
        }
        let inv = T::one() / T::c(n as f64);
        for v in out.iter_mut() {
            *v = *v * inv;
        }
        drop(src);
        let parent = self.clone();
        Ok(Tensor::from_op(
            vec![c],
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = vec![T::zero(); n * c];
                for i in 0..n {
                    for j in 0..c {
                        dx[i * c + j] = g[j] * inv;
                    }
                }
                parent.add_grad(&dx);
            }),
        ))
    }

    /// Layer normalization over the last axis, per leading index.
    /// Population variance; `eps` keeps the zero-variance case at exactly 0.
    pub fn layer_norm(&self, gamma: &Tensor<T>, beta: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
        let c = *self
            .shape()
            .last()
            .ok_or_else(|| Error::invalid("layer_norm", "rank 0"))?;
        if c == 0 {
            return Err(Error::invalid("layer_norm", "zero-width last axis"));
        }
        if eps <= T::zero() {
            return Err(Error::invalid("layer_norm", "eps must be positive"));
        }
        if gamma.len() != c || beta.len() != c {
            return Err(Error::shape(
                "layer_norm affine",
                format!("({},)", c),
                format!("gamma {:?}, beta {:?}", gamma.shape(), beta.shape()),
            ));
        }
        let rows = self.len() / c;
        let src = self.data();
        let gm = gamma.data();
        let bt = beta.data();
        let mut out = vec![T::zero(); self.len()];
        let mut xhat = vec![T::zero(); self.len()];
        let mut inv_std = vec![T::zero(); rows];
        let inv_c = T::one() / T::c(c as f64);
        for r in 0..rows {
            let row = &src[r * c..(r + 1) * c];
            let mean: T = row.iter().copied().sum::<T>() * inv_c;
            let var: T = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_c;
            let istd = T::one() / (var + eps).sqrt();
            inv_std[r] = istd;
            for j in 0..c {
                let xh = (row[j] - mean) * istd;
                xhat[r * c + j] = xh;
                out[r * c + j] = gm[j] * xh + bt[j];
            }
        }
        drop(src);
        drop(gm);
        drop(bt);
        let px = self.clone();
        let pg = gamma.clone();
        let pb = beta.clone();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |g| {
                let (dx, dgm, dbt) = {
                    let gm = pg.data();
                    let mut dx = vec![T::zero(); rows * c];
                    let mut dgm = vec![T::zero(); c];
                    let mut dbt = vec![T::zero(); c];
                    for r in 0..rows {
                        let istd = inv_std[r];
                        // dL/dxhat_j = g_j * gamma_j
                        let mut sum_dxh = T::zero();
                        let mut sum_dxh_xh = T::zero();
                        for j in 0..c {
                            let idx = r * c + j;
                            let dxh = g[idx] * gm[j];
                            sum_dxh = sum_dxh + dxh;
                            sum_dxh_xh = sum_dxh_xh + dxh * xhat[idx];
                            dgm[j] = dgm[j] + g[idx] * xhat[idx];
                            dbt[j] = dbt[j] + g[idx];
                        }
                        let inv_cn = T::one() / T::c(c as f64);
                        for j in 0..c {
                            let idx = r * c + j;
                            let dxh = g[idx] * gm[j];
                            dx[idx] = istd * (dxh - sum_dxh * inv_cn - xhat[idx] * sum_dxh_xh * inv_cn);
                        }
                    }
                    (dx, dgm, dbt)
                };
                px.add_grad(&dx);
                pg.add_grad(&dgm);
                pb.add_grad(&dbt);
            }),
        ))
    }

    /// Softmax over the last axis, stabilized by max subtraction.
    pub fn softmax_last(&self) -> Tensor<T> {
        let c = *self.shape().last().expect("softmax on rank-0");
        let rows = self.len() / c;
        let src = self.data();
        let mut out = vec![T::zero(); self.len()];
        for r in 0..rows {
            let row = &src[r * c..(r + 1) * c];
            let mx = row.iter().copied().fold(row[0], T::max);
            let mut denom = T::zero();
            for j in 0..c {
                let e = (row[j] - mx).exp();
                out[r * c + j] = e;
                denom = denom + e;
            }
            for j in 0..c {
                out[r * c + j] = out[r * c + j] / denom;
            }
        }
        drop(src);
        let probs = out.clone();
        let parent = self.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = vec![T::zero(); rows * c];
                for r in 0..rows {
                    let mut dot = T::zero();
                    for j in 0..c {
                        dot = dot + g[r * c + j] * probs[r * c + j];
                    }
                    for j in 0..c {
                        let idx = r * c + j;
                        dx[idx] = probs[idx] * (g[idx] - dot);
                    }
                }
                parent.add_grad(&dx);
            }),
        )
    }

    /// out = alpha[0] * a + alpha[1] * b, with alpha a rank-1 length-2 node.
    pub fn lincomb2(a: &Tensor<T>, b: &Tensor<T>, alpha: &Tensor<T>) -> Result<Tensor<T>> {
        a.check_same_shape(b, "lincomb2")?;
        if alpha.len() != 2 {
            return Err(Error::shape("lincomb2 alpha", "(2,)", format!("{:?}", alpha.shape())));
        }
        let (a0, a1) = {
            let al = alpha.data();
            (al[0], al[1])
        };
        let data: Vec<T> = a
            .data()
            .iter()
            .zip(b.data().iter())
            .map(|(&x, &y)| a0 * x + a1 * y)
            .collect();
        let pa = a.clone();
        let pb = b.clone();
        let pal = alpha.clone();
        Ok(Tensor::from_op(
            a.shape().to_vec(),
            data,
            vec![a.clone(), b.clone(), alpha.clone()],
            Box::new(move |g| {
                let (da, db, dal) = {
                    let av = pa.data();
                    let bv = pb.data();
                    let al = pal.data();
                    let da: Vec<T> = g.iter().map(|&gi| gi * al[0]).collect();
                    let db: Vec<T> = g.iter().map(|&gi| gi * al[1]).collect();
                    let mut d0 = T::zero();
                    let mut d1 = T::zero();
                    for i in 0..g.len() {
                        d0 = d0 + g[i] * av[i];
                        d1 = d1 + g[i] * bv[i];
                    }
                    (da, db, vec![d0, d1])
                };
                pa.add_grad(&da);
                pb.add_grad(&db);
                pal.add_grad(&dal);
            }),
        ))
    }

    /// out = beta * x where beta is a learnable length-1 node.
    pub fn scale_by(&self, beta: &Tensor<T>) -> Result<Tensor<T>> {
        if beta.len() != 1 {
            return Err(Error::shape("scale_by", "(1,)", format!("{:?}", beta.shape())));
        }
        let bv = beta.data()[0];
        let data: Vec<T> = self.data().iter().map(|&v| v * bv).collect();
        let px = self.clone();
        let pbeta = beta.clone();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), beta.clone()],
            Box::new(move |g| {
                let (dx, db) = {
                    let x = px.data();
                    let b = pbeta.data()[0];
                    let dx: Vec<T> = g.iter().map(|&gi| gi * b).collect();
                    let mut db = T::zero();
                    for i in 0..g.len() {
                        db = db + g[i] * x[i];
                    }
                    (dx, vec![db])
                };
                px.add_grad(&dx);
                pbeta.add_grad(&db);
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: Vec<f64>) -> Tensor<f64> {
        let n = v.len();
        Tensor::leaf(vec![n], v)
    }

    #[test]
    fn matmul_matches_hand_computation() {
        let a = Tensor::<f64>::leaf(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Tensor::<f64>::leaf(vec![3, 2], vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let c = a.matmul(&b).unwrap();
        assert_eq!(*c.data(), vec![58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant() {
        let x = Tensor::<f64>::leaf(vec![2, 4], vec![0.3, -1.0, 2.0, 0.0, 5.0, 5.0, 5.0, 5.0]);
        let p = x.softmax_last();
        let d = p.data();
        let s0: f64 = d[..4].iter().sum();
        assert!((s0 - 1.0).abs() < 1e-12);
        assert!(d[4..].iter().all(|&v| (v - 0.25).abs() < 1e-12));

        let shifted = x.add_scalar(3.7).softmax_last();
        for (a, b) in p.data().iter().zip(shifted.data().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_two_way_closed_form() {
        let x = Tensor::<f64>::leaf(vec![1, 2], vec![0.0, 3.0f64.ln()]);
        let p = x.softmax_last();
        assert!((p.data()[0] - 0.25).abs() < 1e-12);
        assert!((p.data()[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn layer_norm_hand_case() {
        // channels (1, 3): mean 2, population std 1 -> (-1, 1) as eps -> 0
        let x = Tensor::<f64>::leaf(vec![1, 1, 2], vec![1.0, 3.0]);
        let gamma = Tensor::leaf(vec![2], vec![1.0, 1.0]);
        let beta = Tensor::leaf(vec![2], vec![0.0, 0.0]);
        let y = x.layer_norm(&gamma, &beta, 1e-12).unwrap();
        assert!((y.data()[0] + 1.0).abs() < 1e-6);
        assert!((y.data()[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn layer_norm_constant_input_maps_to_beta() {
        let x = Tensor::<f64>::leaf(vec![1, 1, 3], vec![4.2, 4.2, 4.2]);
        let gamma = Tensor::leaf(vec![3], vec![1.0, 1.0, 1.0]);
        let beta = Tensor::leaf(vec![3], vec![0.5, -0.5, 0.0]);
        let y = x.layer_norm(&gamma, &beta, 1e-5).unwrap();
        // zero variance: (x - mean) = 0, eps guard keeps it finite
        assert_eq!(*y.data(), vec![0.5, -0.5, 0.0]);
    }

    #[test]
    fn layer_norm_rejects_zero_channels() {
        let x = Tensor::<f64>::leaf(vec![2, 0], vec![]);
        let gamma = Tensor::leaf(vec![0], vec![]);
        let beta = Tensor::leaf(vec![0], vec![]);
        assert!(x.layer_norm(&gamma, &beta, 1e-5).is_err());
    }

    #[test]
    fn layer_norm_mean_near_zero() {
        let x = Tensor::<f64>::leaf(vec![1, 1, 4], vec![0.3, -2.0, 5.5, 1.1]);
        let gamma = Tensor::leaf(vec![4], vec![1.0; 4]);
        let beta = Tensor::leaf(vec![4], vec![0.0; 4]);
        let y = x.layer_norm(&gamma, &beta, 1e-6).unwrap();
        let mean: f64 = y.data().iter().sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-6);
    }

    #[test]
    fn abs_subgradient_and_values() {
        let x = t(vec![-2.0, 0.0, 3.0]);
        let y = x.abs();
        assert_eq!(*y.data(), vec![2.0, 0.0, 3.0]);
        y.sum_all().backward();
        assert_eq!(*x.grad(), vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn narrow_and_concat_roundtrip() {
        let x = Tensor::<f64>::leaf(vec![2, 4], (0..8).map(|v| v as f64).collect());
        let a = x.narrow_last(0, 2).unwrap();
        let b = x.narrow_last(2, 2).unwrap();
        assert_eq!(*a.data(), vec![0.0, 1.0, 4.0, 5.0]);
        assert_eq!(*b.data(), vec![2.0, 3.0, 6.0, 7.0]);

        let u = t(vec![1.0, 2.0]);
        let v = t(vec![3.0]);
        let w = u.concat1d(&v).unwrap();
        assert_eq!(*w.data(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn reverse_tokens_is_involution() {
        let x = Tensor::<f64>::leaf(vec![3, 2], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        let r = x.reverse_tokens().unwrap();
        assert_eq!(*r.data(), vec![4.0, 5.0, 2.0, 3.0, 0.0, 1.0]);
        let rr = r.reverse_tokens().unwrap();
        assert_eq!(*rr.data(), *x.data());
    }
}
