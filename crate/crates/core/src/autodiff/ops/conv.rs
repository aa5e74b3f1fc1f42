use super::config_error;
use crate::autodiff::tape::{Tape, Var};
use crate::{Scalar, Tensor};

/// Output extent of a convolution along one axis.
pub fn conv_out_size(input: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (input + 2 * padding - kernel) / stride + 1
}

/// Geometry shared by the forward and both backward loops of `conv2d`.
#[derive(Clone, Copy)]
struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    k: usize,
    groups: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

/// Valid output range `[lo, hi)` along one axis for kernel tap `t`, and the
/// input index that corresponds to output `lo`.
#[inline]
fn tap_range(t: usize, g: &ConvGeom, input: usize, output: usize) -> Option<(usize, usize, usize)> {
    // input index = out * stride + t - pad
    let lo = if g.pad > t {
        (g.pad - t).div_ceil(g.stride)
    } else {
        0
    };
    if input + g.pad < t + 1 {
        return None;
    }
    let hi = ((input - 1 + g.pad - t) / g.stride + 1).min(output);
    (lo < hi).then(|| (lo, hi, lo * g.stride + t - g.pad))
}

impl ConvGeom {
    fn cg(&self) -> usize {
        self.c / self.groups
    }

    fn og(&self) -> usize {
        self.o / self.groups
    }

    fn pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0 && self.groups == 1
    }

    /// Visits every (kernel tap, output row, input row, column window) of one plane pair.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize, usize, usize, usize, usize)) {
        for ky in 0..self.k {
            let Some((oy_lo, oy_hi, iy_lo)) = tap_range(ky, self, self.h, self.ho) else {
                continue;
            };
            for kx in 0..self.k {
                let Some((ox_lo, ox_hi, ix_lo)) = tap_range(kx, self, self.w, self.wo) else {
                    continue;
                };
                for (r, oy) in (oy_lo..oy_hi).enumerate() {
                    f(ky, kx, oy, iy_lo + r * self.stride, ox_lo, ox_hi, ix_lo);
                }
            }
        }
    }
}

impl<T: Scalar> Tape<T> {
    /// 2-D cross-correlation of `input [N, C, H, W]` with `weight [O, C/groups, k, k]`.
    pub fn conv2d(&mut self, input: Var, weight: Var, groups: usize, stride: usize, padding: usize) -> Var {
        let xs = self.shape(input).to_vec();
        let ws = self.shape(weight).to_vec();
        if xs.len() != 4 || ws.len() != 4 {
            config_error!("conv2d: input {xs:?} and weight {ws:?} must both be rank 4");
        }
        if groups == 0
            || stride == 0
            || xs[1] % groups != 0
            || ws[0] % groups != 0
            || ws[1] != xs[1] / groups
            || ws[2] != ws[3]
            || xs[2] + 2 * padding < ws[2]
            || xs[3] + 2 * padding < ws[3]
        {
            config_error!(
                "conv2d: input {xs:?}, weight {ws:?}, groups {groups}, stride {stride}, padding {padding} are inconsistent"
            );
        }
        let g = ConvGeom {
            n: xs[0],
            c: xs[1],
            h: xs[2],
            w: xs[3],
            o: ws[0],
            k: ws[2],
            groups,
            stride,
            pad: padding,
            ho: conv_out_size(xs[2], ws[2], stride, padding),
            wo: conv_out_size(xs[3], ws[2], stride, padding),
        };
        self.add_macs((g.n * g.o * g.cg() * g.k * g.k * g.ho * g.wo) as u64);
        let out = conv_forward(self.value(input).data(), self.value(weight).data(), &g);
        self.push(
            Tensor::new([g.n, g.o, g.ho, g.wo], out),
            &[input, weight],
            Box::new(move |ctx| {
                let (x, w, gout) = (ctx.inputs[0].data(), ctx.inputs[1].data(), ctx.grad);
                let gx = ctx.needs[0].then(|| conv_grad_input(gout, w, &g));
                let gw = ctx.needs[1].then(|| conv_grad_weight(gout, x, &g));
                vec![gx, gw]
            }),
        )
    }

    /// Per-sample, per-channel normalization over the spatial extent followed
    /// by a per-channel affine map.
    pub fn instance_norm(&mut self, input: Var, gamma: Var, beta: Var, eps: T) -> Var {
        self.instance_norm_act(input, gamma, beta, eps, false)
    }

    /// `relu(instance_norm(..))` as one node.
    pub fn instance_norm_relu(&mut self, input: Var, gamma: Var, beta: Var, eps: T) -> Var {
        self.instance_norm_act(input, gamma, beta, eps, true)
    }

    fn instance_norm_act(&mut self, input: Var, gamma: Var, beta: Var, eps: T, relu: bool) -> Var {
        let xs = self.shape(input).to_vec();
        if xs.len() != 4 || self.shape(gamma) != [xs[1]] || self.shape(beta) != [xs[1]] {
            config_error!(
                "instance_norm: input {xs:?}, gamma {:?}, beta {:?}",
                self.shape(gamma),
                self.shape(beta)
            );
        }
        let (n, c, m) = (xs[0], xs[1], xs[2] * xs[3]);
        if m < 2 {
            config_error!("instance_norm: spatial extent of {xs:?} must be at least 2");
        }
        let x = self.value(input).data();
        let (gm, bt) = (self.value(gamma).data(), self.value(beta).data());
        let mut y = vec![T::zero(); x.len()];
        for plane in 0..n * c {
            let ch = plane % c;
            let src = &x[plane * m..(plane + 1) * m];
            let (mean, inv) = plane_stats(src, eps);
            let (a, b) = (gm[ch] * inv, bt[ch]);
            let dst = &mut y[plane * m..(plane + 1) * m];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = (s - mean) * a + b;
            }
            if relu {
                dst.iter_mut().for_each(|d| *d = d.max(T::zero()));
            }
        }
        self.push(
            Tensor::new(xs, y),
            &[input, gamma, beta],
            Box::new(move |ctx| {
                let (x, gm) = (ctx.inputs[0].data(), ctx.inputs[1].data());
                let gated: Vec<T>;
                let gout = if relu {
                    gated = ctx
                        .grad
                        .iter()
                        .zip(ctx.output.data())
                        .map(|(&g, &y)| if y > T::zero() { g } else { T::zero() })
                        .collect();
                    &gated[..]
                } else {
                    ctx.grad
                };
                let mut gx = vec![T::zero(); x.len()];
                let mut ggamma = vec![T::zero(); c];
                let mut gbeta = vec![T::zero(); c];
                let inv_m = T::one() / T::lit(m as f64);
                let mut xhat = vec![T::zero(); m];
                for plane in 0..n * c {
                    let ch = plane % c;
                    let src = &x[plane * m..(plane + 1) * m];
                    let g = &gout[plane * m..(plane + 1) * m];
                    let (mean, inv) = plane_stats(src, eps);
                    let (mut sum_g, mut sum_gx) = (T::zero(), T::zero());
                    for ((xh, &s), &gv) in xhat.iter_mut().zip(src).zip(g) {
                        *xh = (s - mean) * inv;
                        sum_g += gv;
                        sum_gx += gv * *xh;
                    }
                    ggamma[ch] += sum_gx;
                    gbeta[ch] += sum_g;
                    // dx = gamma * inv * (g - mean(g) - xhat * mean(g * xhat))
                    let (mg, mgx, scale) = (sum_g * inv_m, sum_gx * inv_m, gm[ch] * inv);
                    for ((d, &gv), &xh) in gx[plane * m..(plane + 1) * m].iter_mut().zip(g).zip(&xhat) {
                        *d = scale * (gv - mg - xh * mgx);
                    }
                }
                vec![Some(gx), Some(ggamma), Some(gbeta)]
            }),
        )
    }

    /// Rescales every pixel's channel vector to unit mean square:
    /// `y = x / sqrt(mean_c x^2 + eps)`.
    pub fn channel_rms_norm(&mut self, input: Var, eps: T) -> Var {
        let xs = self.shape(input).to_vec();
        if xs.len() != 4 {
            config_error!("channel_rms_norm: input {xs:?} must be [N, C, H, W]");
        }
        let (n, c, m) = (xs[0], xs[1], xs[2] * xs[3]);
        let inv_c = T::one() / T::lit(c as f64);
        let x = self.value(input).data();
        let mut inv = vec![T::zero(); n * m];
        for b in 0..n {
            let acc = &mut inv[b * m..(b + 1) * m];
            for ch in 0..c {
                for (a, &v) in acc.iter_mut().zip(&x[(b * c + ch) * m..(b * c + ch + 1) * m]) {
                    *a += v * v;
                }
            }
            acc.iter_mut().for_each(|a| *a = T::one() / (*a * inv_c + eps).sqrt());
        }
        let mut y = x.to_vec();
        for b in 0..n {
            for ch in 0..c {
                let dst = &mut y[(b * c + ch) * m..(b * c + ch + 1) * m];
                dst.iter_mut().zip(&inv[b * m..(b + 1) * m]).for_each(|(d, &s)| *d *= s);
            }
        }
        self.push(
            Tensor::new(xs, y),
            &[input],
            Box::new(move |ctx| {
                let (g, y) = (ctx.grad, ctx.output.data());
                // dx = (g - y * mean_c(g * y)) / s
                let mut dot = vec![T::zero(); n * m];
                for b in 0..n {
                    for ch in 0..c {
                        let o = (b * c + ch) * m;
                        for (p, d) in dot[b * m..(b + 1) * m].iter_mut().enumerate() {
                            *d += g[o + p] * y[o + p];
                        }
                    }
                }
                let mut gx = vec![T::zero(); g.len()];
                for b in 0..n {
                    for ch in 0..c {
                        let o = (b * c + ch) * m;
                        for p in 0..m {
                            let q = b * m + p;
                            gx[o + p] = (g[o + p] - y[o + p] * dot[q] * inv_c) * inv[q];
                        }
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Non-overlapping 2x2 mean pooling; H and W must be even.
    pub fn avg_pool2x2(&mut self, input: Var) -> Var {
        let xs = self.shape(input).to_vec();
        if xs.len() != 4 || xs[2] % 2 != 0 || xs[3] % 2 != 0 {
            config_error!("avg_pool2x2: input {xs:?} needs rank 4 with even H and W");
        }
        let (planes, h, w) = (xs[0] * xs[1], xs[2], xs[3]);
        let (ho, wo) = (h / 2, w / 2);
        let x = self.value(input).data();
        let q = T::lit(0.25);
        let mut y = vec![T::zero(); planes * ho * wo];
        for p in 0..planes {
            for oy in 0..ho {
                for ox in 0..wo {
                    let b = p * h * w + 2 * oy * w + 2 * ox;
                    y[(p * ho + oy) * wo + ox] = (x[b] + x[b + 1] + x[b + w] + x[b + w + 1]) * q;
                }
            }
        }
        self.push(
            Tensor::new([xs[0], xs[1], ho, wo], y),
            &[input],
            Box::new(move |ctx| {
                let mut gx = vec![T::zero(); planes * h * w];
                for p in 0..planes {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let gv = ctx.grad[(p * ho + oy) * wo + ox] * q;
                            let b = p * h * w + 2 * oy * w + 2 * ox;
                            gx[b] = gv;
                            gx[b + 1] = gv;
                            gx[b + w] = gv;
                            gx[b + w + 1] = gv;
                        }
                    }
                }
                vec![Some(gx)]
            }),
        )
    }
}

fn plane_stats<T: Scalar>(src: &[T], eps: T) -> (T, T) {
    let inv_m = T::one() / T::lit(src.len() as f64);
    // shifted by the first element: exact for constant planes
    let anchor = src[0];
    let mut s = T::zero();
    for &v in src {
        s += v - anchor;
    }
    let mean = anchor + s * inv_m;
    let mut ss = T::zero();
    for &v in src {
        ss += (v - mean) * (v - mean);
    }
    (mean, T::one() / (ss * inv_m + eps).sqrt())
}

#[inline]
fn axpy<T: Scalar>(dst: &mut [T], a: T, src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

/// Eight interleaved partial sums so the loop vectorizes; the summation
/// order is fixed by the code, not by the target.
#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let mut acc = [T::zero(); 8];
    let (ac, bc) = (a[..n].chunks_exact(8), b[..n].chunks_exact(8));
    let (ar, br) = (ac.remainder(), bc.remainder());
    for (x, y) in ac.zip(bc) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ar.iter().zip(br) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

fn conv_forward<T: Scalar>(x: &[T], w: &[T], g: &ConvGeom) -> Vec<T> {
    let (hw, ohw, kk) = (g.h * g.w, g.ho * g.wo, g.k * g.k);
    let (cg, og) = (g.cg(), g.og());
    let mut out = vec![T::zero(); g.n * g.o * ohw];
    for n in 0..g.n {
        for o in 0..g.o {
            let grp = o / og;
            let dst = &mut out[(n * g.o + o) * ohw..(n * g.o + o + 1) * ohw];
            for ic in 0..cg {
                let c = grp * cg + ic;
                let src = &x[(n * g.c + c) * hw..(n * g.c + c + 1) * hw];
                let wk = &w[(o * cg + ic) * kk..(o * cg + ic + 1) * kk];
                if g.pointwise() {
                    axpy(dst, wk[0], src);
                    continue;
                }
                g.for_each_tap(|ky, kx, oy, iy, ox_lo, ox_hi, ix_lo| {
                    let wv = wk[ky * g.k + kx];
                    let drow = &mut dst[oy * g.wo + ox_lo..oy * g.wo + ox_hi];
                    let srow = &src[iy * g.w..(iy + 1) * g.w];
                    if g.stride == 1 {
                        axpy(drow, wv, &srow[ix_lo..ix_lo + drow.len()]);
                    } else {
                        for (j, d) in drow.iter_mut().enumerate() {
                            *d += wv * srow[ix_lo + j * g.stride];
                        }
                    }
                });
            }
        }
    }
    out
}

fn conv_grad_input<T: Scalar>(gout: &[T], w: &[T], g: &ConvGeom) -> Vec<T> {
    let (hw, ohw, kk) = (g.h * g.w, g.ho * g.wo, g.k * g.k);
    let (cg, og) = (g.cg(), g.og());
    let mut gx = vec![T::zero(); g.n * g.c * hw];
    for n in 0..g.n {
        for o in 0..g.o {
            let grp = o / og;
            let src = &gout[(n * g.o + o) * ohw..(n * g.o + o + 1) * ohw];
            for ic in 0..cg {
                let c = grp * cg + ic;
                let dst = &mut gx[(n * g.c + c) * hw..(n * g.c + c + 1) * hw];
                let wk = &w[(o * cg + ic) * kk..(o * cg + ic + 1) * kk];
                if g.pointwise() {
                    axpy(dst, wk[0], src);
                    continue;
                }
                g.for_each_tap(|ky, kx, oy, iy, ox_lo, ox_hi, ix_lo| {
                    let wv = wk[ky * g.k + kx];
                    let grow = &src[oy * g.wo + ox_lo..oy * g.wo + ox_hi];
                    let drow = &mut dst[iy * g.w..(iy + 1) * g.w];
                    if g.stride == 1 {
                        axpy(&mut drow[ix_lo..ix_lo + grow.len()], wv, grow);
                    } else {
                        for (j, &gv) in grow.iter().enumerate() {
                            drow[ix_lo + j * g.stride] += wv * gv;
                        }
                    }
                });
            }
        }
    }
    gx
}

fn conv_grad_weight<T: Scalar>(gout: &[T], x: &[T], g: &ConvGeom) -> Vec<T> {
    let (hw, ohw, kk) = (g.h * g.w, g.ho * g.wo, g.k * g.k);
    let (cg, og) = (g.cg(), g.og());
    let mut gw = vec![T::zero(); g.o * cg * kk];
    for n in 0..g.n {
        for o in 0..g.o {
            let grp = o / og;
            let gsrc = &gout[(n * g.o + o) * ohw..(n * g.o + o + 1) * ohw];
            for ic in 0..cg {
                let c = grp * cg + ic;
                let xsrc = &x[(n * g.c + c) * hw..(n * g.c + c + 1) * hw];
                let wk = &mut gw[(o * cg + ic) * kk..(o * cg + ic + 1) * kk];
                if g.pointwise() {
                    wk[0] += dot(gsrc, xsrc);
                    continue;
                }
                g.for_each_tap(|ky, kx, oy, iy, ox_lo, ox_hi, ix_lo| {
                    let grow = &gsrc[oy * g.wo + ox_lo..oy * g.wo + ox_hi];
                    let xrow = &xsrc[iy * g.w..(iy + 1) * g.w];
                    let acc = if g.stride == 1 {
                        dot(grow, &xrow[ix_lo..ix_lo + grow.len()])
                    } else {
                        let mut acc = T::zero();
                        for (j, &gv) in grow.iter().enumerate() {
                            acc += gv * xrow[ix_lo + j * g.stride];
                        }
                        acc
                    };
                    wk[ky * g.k + kx] += acc;
                });
            }
        }
    }
    gw
}

