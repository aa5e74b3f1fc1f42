use super::{axis_split, config_error};
use crate::autodiff::tape::{Tape, Var};
use crate::{Scalar, Tensor};

fn same_shape<T: Scalar>(tape: &Tape<T>, op: &str, a: Var, b: Var) {
    if tape.shape(a) != tape.shape(b) {
        config_error!("{op}: shapes {:?} and {:?} differ", tape.shape(a), tape.shape(b));
    }
}

impl<T: Scalar> Tape<T> {
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        same_shape(self, "add", a, b);
        let (x, y) = (self.value(a), self.value(b));
        let out = Tensor::new(
            x.shape(),
            x.data().iter().zip(y.data()).map(|(&p, &q)| p + q).collect(),
        );
        self.push(
            out,
            &[a, b],
            Box::new(|ctx| vec![Some(ctx.grad.to_vec()), Some(ctx.grad.to_vec())]),
        )
    }

    /// `relu(a + b)` as one node.
    pub fn add_relu(&mut self, a: Var, b: Var) -> Var {
        same_shape(self, "add_relu", a, b);
        let (x, y) = (self.value(a), self.value(b));
        let out = Tensor::new(
            x.shape(),
            x.data()
                .iter()
                .zip(y.data())
                .map(|(&p, &q)| (p + q).max(T::zero()))
                .collect(),
        );
        self.push(
            out,
            &[a, b],
            Box::new(|ctx| {
                let g: Vec<T> = ctx
                    .grad
                    .iter()
                    .zip(ctx.output.data())
                    .map(|(&g, &y)| if y > T::zero() { g } else { T::zero() })
                    .collect();
                vec![Some(g.clone()), Some(g)]
            }),
        )
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        same_shape(self, "sub", a, b);
        let (x, y) = (self.value(a), self.value(b));
        let out = Tensor::new(
            x.shape(),
            x.data().iter().zip(y.data()).map(|(&p, &q)| p - q).collect(),
        );
        self.push(
            out,
            &[a, b],
            Box::new(|ctx| {
                vec![
                    Some(ctx.grad.to_vec()),
                    Some(ctx.grad.iter().map(|&g| -g).collect()),
                ]
            }),
        )
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        same_shape(self, "mul", a, b);
        let (x, y) = (self.value(a), self.value(b));
        let out = Tensor::new(
            x.shape(),
            x.data().iter().zip(y.data()).map(|(&p, &q)| p * q).collect(),
        );
        self.push(
            out,
            &[a, b],
            Box::new(|ctx| {
                let (x, y) = (ctx.inputs[0].data(), ctx.inputs[1].data());
                let ga = ctx.needs[0]
                    .then(|| ctx.grad.iter().zip(y).map(|(&g, &q)| g * q).collect());
                let gb = ctx.needs[1]
                    .then(|| ctx.grad.iter().zip(x).map(|(&g, &p)| g * p).collect());
                vec![ga, gb]
            }),
        )
    }

    /// Multiplies every element by a constant.
    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).map(|v| v * c);
        self.push(
            out,
            &[a],
            Box::new(move |ctx| vec![Some(ctx.grad.iter().map(|&g| g * c).collect())]),
        )
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.leaky_relu(a, T::zero())
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        let out = self
            .value(a)
            .map(|v| if v > T::zero() { v } else { v * slope });
        self.push(
            out,
            &[a],
            Box::new(move |ctx| {
                let x = ctx.inputs[0].data();
                vec![Some(
                    ctx.grad
                        .iter()
                        .zip(x)
                        .map(|(&g, &v)| if v > T::zero() { g } else { g * slope })
                        .collect(),
                )]
            }),
        )
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.abs());
        self.push(
            out,
            &[a],
            Box::new(|ctx| {
                let x = ctx.inputs[0].data();
                vec![Some(
                    ctx.grad.iter().zip(x).map(|(&g, &v)| sign(v) * g).collect(),
                )]
            }),
        )
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let mut acc = T::zero();
        for &v in self.value(a).data() {
            acc += v;
        }
        let n = self.value(a).len();
        self.push(
            Tensor::scalar(acc),
            &[a],
            Box::new(move |ctx| vec![Some(vec![ctx.grad[0]; n])]),
        )
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = T::lit(self.value(a).len() as f64);
        let s = self.sum(a);
        self.scale(s, T::one() / n)
    }

    /// Mean absolute difference.
    pub fn l1_loss(&mut self, a: Var, b: Var) -> Var {
        same_shape(self, "l1_loss", a, b);
        let (x, y) = (self.value(a), self.value(b));
        let n = x.len();
        let mut acc = T::zero();
        for (&p, &q) in x.data().iter().zip(y.data()) {
            acc += (p - q).abs();
        }
        let inv = T::one() / T::lit(n as f64);
        self.push(
            Tensor::scalar(acc * inv),
            &[a, b],
            Box::new(move |ctx| {
                let g = ctx.grad[0] * inv;
                let d: Vec<T> = ctx.inputs[0]
                    .data()
                    .iter()
                    .zip(ctx.inputs[1].data())
                    .map(|(&p, &q)| sign(p - q) * g)
                    .collect();
                let gb = ctx.needs[1].then(|| d.iter().map(|&v| -v).collect());
                vec![Some(d), gb]
            }),
        )
    }

    /// Mean squared difference.
    pub fn l2_loss(&mut self, a: Var, b: Var) -> Var {
        same_shape(self, "l2_loss", a, b);
        let (x, y) = (self.value(a), self.value(b));
        let n = x.len();
        let mut acc = T::zero();
        for (&p, &q) in x.data().iter().zip(y.data()) {
            acc += (p - q) * (p - q);
        }
        let inv = T::one() / T::lit(n as f64);
        self.push(
            Tensor::scalar(acc * inv),
            &[a, b],
            Box::new(move |ctx| {
                let g = ctx.grad[0] * inv * T::lit(2.0);
                let d: Vec<T> = ctx.inputs[0]
                    .data()
                    .iter()
                    .zip(ctx.inputs[1].data())
                    .map(|(&p, &q)| (p - q) * g)
                    .collect();
                let gb = ctx.needs[1].then(|| d.iter().map(|&v| -v).collect());
                vec![Some(d), gb]
            }),
        )
    }

    /// `[M, K] x [K, N] -> [M, N]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            config_error!("matmul: incompatible shapes {sa:?} and {sb:?}");
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push(
            Tensor::new([m, n], out),
            &[a, b],
            Box::new(move |ctx| {
                let (x, y, g) = (ctx.inputs[0].data(), ctx.inputs[1].data(), ctx.grad);
                // dA = G B^T, dB = A^T G
                let ga = ctx.needs[0].then(|| {
                    let mut out = vec![T::zero(); m * k];
                    for i in 0..m {
                        for j in 0..n {
                            let gv = g[i * n + j];
                            for p in 0..k {
                                out[i * k + p] += gv * y[p * n + j];
                            }
                        }
                    }
                    out
                });
                let gb = ctx.needs[1].then(|| {
                    let mut out = vec![T::zero(); k * n];
                    for i in 0..m {
                        for p in 0..k {
                            let xv = x[i * k + p];
                            let row = &mut out[p * n..(p + 1) * n];
                            for (o, &gv) in row.iter_mut().zip(&g[i * n..(i + 1) * n]) {
                                *o += xv * gv;
                            }
                        }
                    }
                    out
                });
                vec![ga, gb]
            }),
        )
    }

    /// Softmax along `axis`.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Var {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            config_error!("softmax: axis {axis} out of range for {shape:?}");
        }
        let (outer, dim, inner) = axis_split(&shape, axis);
        let x = self.value(a).data();
        let mut y = vec![T::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * dim * inner + i;
                let mut mx = T::neg_infinity();
                for k in 0..dim {
                    mx = mx.max(x[base + k * inner]);
                }
                let mut s = T::zero();
                for k in 0..dim {
                    let e = (x[base + k * inner] - mx).exp();
                    y[base + k * inner] = e;
                    s += e;
                }
                let inv = T::one() / s;
                for k in 0..dim {
                    y[base + k * inner] *= inv;
                }
            }
        }
        self.push(
            Tensor::new(shape, y),
            &[a],
            Box::new(move |ctx| {
                let (y, g) = (ctx.output.data(), ctx.grad);
                let mut gx = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * dim * inner + i;
                        let mut dot = T::zero();
                        for k in 0..dim {
                            dot += g[base + k * inner] * y[base + k * inner];
                        }
                        for k in 0..dim {
                            let j = base + k * inner;
                            gx[j] = y[j] * (g[j] - dot);
                        }
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    pub fn softmax_lastdim(&mut self, a: Var) -> Var {
        let axis = self.shape(a).len() - 1;
        self.softmax(a, axis)
    }

    /// Maximum along `axis`, keeping it as an extent-1 dimension. The gradient
    /// goes to the first maximal element.
    pub fn reduce_max(&mut self, a: Var, axis: usize) -> Var {
        let shape = self.shape(a).to_vec();
        let (outer, dim, inner) = axis_split(&shape, axis);
        let x = self.value(a).data();
        let mut out = vec![T::zero(); outer * inner];
        let mut arg = vec![0usize; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * dim * inner + i;
                let (mut best, mut bk) = (x[base], 0);
                for k in 1..dim {
                    if x[base + k * inner] > best {
                        best = x[base + k * inner];
                        bk = k;
                    }
                }
                out[o * inner + i] = best;
                arg[o * inner + i] = bk;
            }
        }
        let mut oshape = shape.clone();
        oshape[axis] = 1;
        let n = x.len();
        self.push(
            Tensor::new(oshape, out),
            &[a],
            Box::new(move |ctx| {
                let mut gx = vec![T::zero(); n];
                for o in 0..outer {
                    for i in 0..inner {
                        let j = o * inner + i;
                        gx[o * dim * inner + arg[j] * inner + i] = ctx.grad[j];
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Mean along `axis`, keeping it as an extent-1 dimension.
    pub fn reduce_mean(&mut self, a: Var, axis: usize) -> Var {
        let shape = self.shape(a).to_vec();
        let (outer, dim, inner) = axis_split(&shape, axis);
        let x = self.value(a).data();
        let inv = T::one() / T::lit(dim as f64);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            let dst = &mut out[o * inner..(o + 1) * inner];
            for k in 0..dim {
                let src = &x[(o * dim + k) * inner..(o * dim + k + 1) * inner];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
            dst.iter_mut().for_each(|d| *d *= inv);
        }
        let mut oshape = shape.clone();
        oshape[axis] = 1;
        let n = x.len();
        self.push(
            Tensor::new(oshape, out),
            &[a],
            Box::new(move |ctx| {
                let mut gx = vec![T::zero(); n];
                for o in 0..outer {
                    let src = &ctx.grad[o * inner..(o + 1) * inner];
                    for k in 0..dim {
                        let dst = &mut gx[(o * dim + k) * inner..(o * dim + k + 1) * inner];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d = s * inv;
                        }
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let n: usize = shape.iter().product();
        if n != self.value(a).len() {
            config_error!("reshape: cannot view {:?} as {shape:?}", self.shape(a));
        }
        let out = self.value(a).clone().reshape(shape.to_vec());
        self.push(out, &[a], Box::new(|ctx| vec![Some(ctx.grad.to_vec())]))
    }

    /// Elements `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Var {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            config_error!("narrow: axis {axis} range {start}..{} invalid for {shape:?}", start + len);
        }
        let (outer, dim, inner) = axis_split(&shape, axis);
        let x = self.value(a).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let b = (o * dim + start) * inner;
            out.extend_from_slice(&x[b..b + len * inner]);
        }
        let mut oshape = shape.clone();
        oshape[axis] = len;
        let n = x.len();
        self.push(
            Tensor::new(oshape, out),
            &[a],
            Box::new(move |ctx| {
                let mut gx = vec![T::zero(); n];
                for o in 0..outer {
                    let b = (o * dim + start) * inner;
                    gx[b..b + len * inner]
                        .copy_from_slice(&ctx.grad[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let first = self.shape(parts[0]).to_vec();
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len()
                || s.iter().enumerate().any(|(d, &e)| d != axis && e != first[d])
            {
                config_error!("concat: shape {s:?} incompatible with {first:?} on axis {axis}");
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&first, axis);
        let extents: Vec<usize> = parts.iter().map(|&p| self.shape(p)[axis]).collect();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&p, &e) in parts.iter().zip(&extents) {
                let x = self.value(p).data();
                out.extend_from_slice(&x[o * e * inner..(o + 1) * e * inner]);
            }
        }
        let mut oshape = first.clone();
        oshape[axis] = total;
        self.push(
            Tensor::new(oshape, out),
            parts,
            Box::new(move |ctx| {
                let mut grads: Vec<Vec<T>> = extents
                    .iter()
                    .map(|&e| Vec::with_capacity(outer * e * inner))
                    .collect();
                let mut off = 0;
                for _ in 0..outer {
                    for (g, &e) in grads.iter_mut().zip(&extents) {
                        g.extend_from_slice(&ctx.grad[off..off + e * inner]);
                        off += e * inner;
                    }
                }
                grads.into_iter().map(Some).collect()
            }),
        )
    }

    /// Adds `bias[c]` to every element of channel `c` of an `[N, C, ...]` tensor.
    pub fn add_channel_bias(&mut self, x: Var, bias: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let c = shape[1];
        if self.shape(bias) != [c] {
            config_error!("add_channel_bias: bias {:?} for input {shape:?}", self.shape(bias));
        }
        let (n, inner) = (shape[0], shape[2..].iter().product::<usize>());
        let mut out = self.value(x).data().to_vec();
        let b = self.value(bias).data();
        for i in 0..n {
            for (ch, &bv) in b.iter().enumerate() {
                out[(i * c + ch) * inner..(i * c + ch + 1) * inner]
                    .iter_mut()
                    .for_each(|v| *v += bv);
            }
        }
        self.push(
            Tensor::new(shape, out),
            &[x, bias],
            Box::new(move |ctx| {
                let gb = ctx.needs[1].then(|| {
                    let mut gb = vec![T::zero(); c];
                    for i in 0..n {
                        for (ch, acc) in gb.iter_mut().enumerate() {
                            for &g in &ctx.grad[(i * c + ch) * inner..(i * c + ch + 1) * inner] {
                                *acc += g;
                            }
                        }
                    }
                    gb
                });
                vec![Some(ctx.grad.to_vec()), gb]
            }),
        )
    }
}

#[inline]
fn sign<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

pub(crate) fn matmul_raw<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            for (o, &bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}
