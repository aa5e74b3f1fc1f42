use super::config_error;
use crate::autodiff::tape::{Tape, Var};
use crate::{Scalar, Tensor};

/// Source index pair and weight of the second index, per output position,
/// for half-pixel-centred bilinear resizing along one axis.
fn resize_table<T: Scalar>(input: usize, factor: usize) -> Vec<(usize, usize, T)> {
    (0..input * factor)
        .map(|o| {
            let s = ((o as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let i0 = (s.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, T::lit(s - i0 as f64))
        })
        .collect()
}

impl<T: Scalar> Tape<T> {
    /// Samples `input [N, C, H, W]` at the pixel coordinates `grid [N, Ho, Wo, 2]`
    /// (`x` then `y`). Taps that fall outside the image read zero.
    pub fn bilinear_sample(&mut self, input: Var, grid: Var) -> Var {
        let xs = self.shape(input).to_vec();
        let gs = self.shape(grid).to_vec();
        if xs.len() != 4 || gs.len() != 4 || gs[0] != xs[0] || gs[3] != 2 {
            config_error!("bilinear_sample: input {xs:?} with grid {gs:?}");
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (ho, wo) = (gs[1], gs[2]);
        let x = self.value(input).data();
        let gr = self.value(grid).data();
        let mut out = vec![T::zero(); n * c * ho * wo];
        for b in 0..n {
            for p in 0..ho * wo {
                let taps = Taps::new(gr[(b * ho * wo + p) * 2], gr[(b * ho * wo + p) * 2 + 1], h, w);
                for ch in 0..c {
                    let plane = &x[(b * c + ch) * h * w..(b * c + ch + 1) * h * w];
                    out[(b * c + ch) * ho * wo + p] = taps.eval(plane, w);
                }
            }
        }
        self.push(
            Tensor::new([n, c, ho, wo], out),
            &[input, grid],
            Box::new(move |ctx| {
                let (x, gr, g) = (ctx.inputs[0].data(), ctx.inputs[1].data(), ctx.grad);
                let mut gx = ctx.needs[0].then(|| vec![T::zero(); x.len()]);
                let mut gg = ctx.needs[1].then(|| vec![T::zero(); gr.len()]);
                for b in 0..n {
                    for p in 0..ho * wo {
                        let gi = (b * ho * wo + p) * 2;
                        let taps = Taps::new(gr[gi], gr[gi + 1], h, w);
                        for ch in 0..c {
                            let gv = g[(b * c + ch) * ho * wo + p];
                            let off = (b * c + ch) * h * w;
                            if let Some(gx) = gx.as_mut() {
                                taps.scatter(&mut gx[off..off + h * w], w, gv);
                            }
                            if let Some(gg) = gg.as_mut() {
                                let (dx, dy) = taps.coord_grad(&x[off..off + h * w], w);
                                gg[gi] += gv * dx;
                                gg[gi + 1] += gv * dy;
                            }
                        }
                    }
                }
                vec![gx, gg]
            }),
        )
    }

    /// Bilinear resize by an integer factor with half-pixel centres and edge clamping.
    pub fn bilinear_upsample(&mut self, input: Var, factor: usize) -> Var {
        let xs = self.shape(input).to_vec();
        if xs.len() != 4 || factor == 0 {
            config_error!("bilinear_upsample: input {xs:?} with factor {factor}");
        }
        let (planes, h, w) = (xs[0] * xs[1], xs[2], xs[3]);
        let (ho, wo) = (h * factor, w * factor);
        let ty: Vec<(usize, usize, T)> = resize_table(h, factor);
        let tx: Vec<(usize, usize, T)> = resize_table(w, factor);
        let x = self.value(input).data();
        let mut out = vec![T::zero(); planes * ho * wo];
        for p in 0..planes {
            let src = &x[p * h * w..(p + 1) * h * w];
            for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                    let top = src[y0 * w + x0] * (T::one() - lx) + src[y0 * w + x1] * lx;
                    let bot = src[y1 * w + x0] * (T::one() - lx) + src[y1 * w + x1] * lx;
                    out[(p * ho + oy) * wo + ox] = top * (T::one() - ly) + bot * ly;
                }
            }
        }
        self.push(
            Tensor::new([xs[0], xs[1], ho, wo], out),
            &[input],
            Box::new(move |ctx| {
                let mut gx = vec![T::zero(); planes * h * w];
                for p in 0..planes {
                    let dst = &mut gx[p * h * w..(p + 1) * h * w];
                    for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                        for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                            let g = ctx.grad[(p * ho + oy) * wo + ox];
                            let (gt, gb) = (g * (T::one() - ly), g * ly);
                            dst[y0 * w + x0] += gt * (T::one() - lx);
                            dst[y0 * w + x1] += gt * lx;
                            dst[y1 * w + x0] += gb * (T::one() - lx);
                            dst[y1 * w + x1] += gb * lx;
                        }
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Expected offset under per-pixel weights over a `(2r+1)^2` window laid
    /// out as in [`Tape::local_corr`]: `p [N, (2r+1)^2, H, W]` to
    /// `[N, 2, H, W]` holding (x, y) offsets. Mirrored offsets are paired, so
    /// weights symmetric under `d -> -d` give exactly zero.
    pub fn window_expectation(&mut self, p: Var, radius: usize) -> Var {
        let xs = self.shape(p).to_vec();
        let span = 2 * radius + 1;
        let d2 = span * span;
        if xs.len() != 4 || xs[1] != d2 {
            config_error!("window_expectation: input {xs:?} needs {d2} channels for radius {radius}");
        }
        let (n, hw) = (xs[0], xs[2] * xs[3]);
        let offset = move |j: usize| {
            (
                T::lit((j % span) as f64 - radius as f64),
                T::lit((j / span) as f64 - radius as f64),
            )
        };
        let x = self.value(p).data();
        let mut out = vec![T::zero(); n * 2 * hw];
        for b in 0..n {
            let src = &x[b * d2 * hw..(b + 1) * d2 * hw];
            let (u, v) = out[b * 2 * hw..(b + 1) * 2 * hw].split_at_mut(hw);
            for j in d2 / 2 + 1..d2 {
                let m = d2 - 1 - j;
                let (dx, dy) = offset(j);
                let (pj, pm) = (&src[j * hw..(j + 1) * hw], &src[m * hw..(m + 1) * hw]);
                for q in 0..hw {
                    let diff = pj[q] - pm[q];
                    u[q] += diff * dx;
                    v[q] += diff * dy;
                }
            }
        }
        self.push(
            Tensor::new([n, 2, xs[2], xs[3]], out),
            &[p],
            Box::new(move |ctx| {
                let g = ctx.grad;
                let mut gp = vec![T::zero(); n * d2 * hw];
                for b in 0..n {
                    let (gu, gv) = g[b * 2 * hw..(b + 1) * 2 * hw].split_at(hw);
                    for j in 0..d2 {
                        let (dx, dy) = offset(j);
                        let dst = &mut gp[(b * d2 + j) * hw..(b * d2 + j + 1) * hw];
                        for q in 0..hw {
                            dst[q] = gu[q] * dx + gv[q] * dy;
                        }
                    }
                }
                vec![Some(gp)]
            }),
        )
    }

    /// Local correlation volume: `out[n, (dy+r)(2r+1) + dx+r, y, x] =
    /// <a[n, :, y, x], b[n, :, y+dy, x+dx]> / sqrt(C)` with zeros outside `b`.
    pub fn local_corr(&mut self, a: Var, b: Var, radius: usize) -> Var {
        let xs = self.shape(a).to_vec();
        if xs.len() != 4 || self.shape(b) != xs.as_slice() {
            config_error!("local_corr: shapes {xs:?} and {:?} differ", self.shape(b));
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let span = 2 * radius + 1;
        let d2 = span * span;
        let scale = T::one() / T::lit(c as f64).sqrt();
        let windows = CorrWindows::new(h, w, radius);
        let (fa, fb) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![T::zero(); n * d2 * h * w];
        for bi in 0..n {
            for (d, win) in windows.iter().enumerate() {
                let dst = &mut out[(bi * d2 + d) * h * w..(bi * d2 + d + 1) * h * w];
                for ch in 0..c {
                    let pa = &fa[(bi * c + ch) * h * w..(bi * c + ch + 1) * h * w];
                    let pb = &fb[(bi * c + ch) * h * w..(bi * c + ch + 1) * h * w];
                    win.for_rows(w, |ra, rb, len| {
                        for j in 0..len {
                            dst[ra + j] += pa[ra + j] * pb[rb + j];
                        }
                    });
                }
                dst.iter_mut().for_each(|v| *v *= scale);
            }
        }
        self.push(
            Tensor::new([n, d2, h, w], out),
            &[a, b],
            Box::new(move |ctx| {
                let (fa, fb, g) = (ctx.inputs[0].data(), ctx.inputs[1].data(), ctx.grad);
                let mut ga = ctx.needs[0].then(|| vec![T::zero(); fa.len()]);
                let mut gb = ctx.needs[1].then(|| vec![T::zero(); fb.len()]);
                for bi in 0..n {
                    for (d, win) in windows.iter().enumerate() {
                        let gp = &g[(bi * d2 + d) * h * w..(bi * d2 + d + 1) * h * w];
                        for ch in 0..c {
                            let off = (bi * c + ch) * h * w;
                            let (pa, pb) = (&fa[off..off + h * w], &fb[off..off + h * w]);
                            if let Some(ga) = ga.as_mut() {
                                let da = &mut ga[off..off + h * w];
                                win.for_rows(w, |ra, rb, len| {
                                    for j in 0..len {
                                        da[ra + j] += gp[ra + j] * pb[rb + j] * scale;
                                    }
                                });
                            }
                            if let Some(gb) = gb.as_mut() {
                                let db = &mut gb[off..off + h * w];
                                win.for_rows(w, |ra, rb, len| {
                                    for j in 0..len {
                                        db[rb + j] += gp[ra + j] * pa[ra + j] * scale;
                                    }
                                });
                            }
                        }
                    }
                }
                vec![ga, gb]
            }),
        )
    }
}

/// Bilinear taps of one sample point; out-of-range corners carry no weight.
struct Taps<T> {
    x0: isize,
    y0: isize,
    fx: T,
    fy: T,
    h: isize,
    w: isize,
}

impl<T: Scalar> Taps<T> {
    fn new(x: T, y: T, h: usize, w: usize) -> Self {
        let (xf, yf) = (x.floor(), y.floor());
        Self {
            x0: xf.to_isize().unwrap_or(isize::MIN / 2),
            y0: yf.to_isize().unwrap_or(isize::MIN / 2),
            fx: x - xf,
            fy: y - yf,
            h: h as isize,
            w: w as isize,
        }
    }

    #[inline]
    fn at(&self, plane: &[T], w: usize, dy: isize, dx: isize) -> T {
        let (y, x) = (self.y0 + dy, self.x0 + dx);
        if y >= 0 && y < self.h && x >= 0 && x < self.w {
            plane[y as usize * w + x as usize]
        } else {
            T::zero()
        }
    }

    fn eval(&self, plane: &[T], w: usize) -> T {
        let one = T::one();
        let mut v = T::zero();
        // skip zero-weight taps so sampling at a knot copies the value exactly
        for (dy, dx, wt) in [
            (0, 0, (one - self.fy) * (one - self.fx)),
            (0, 1, (one - self.fy) * self.fx),
            (1, 0, self.fy * (one - self.fx)),
            (1, 1, self.fy * self.fx),
        ] {
            if wt != T::zero() {
                v += wt * self.at(plane, w, dy, dx);
            }
        }
        v
    }

    fn scatter(&self, plane: &mut [T], w: usize, g: T) {
        let one = T::one();
        for (dy, dx, wt) in [
            (0, 0, (one - self.fy) * (one - self.fx)),
            (0, 1, (one - self.fy) * self.fx),
            (1, 0, self.fy * (one - self.fx)),
            (1, 1, self.fy * self.fx),
        ] {
            let (y, x) = (self.y0 + dy, self.x0 + dx);
            if y >= 0 && y < self.h && x >= 0 && x < self.w {
                plane[y as usize * w + x as usize] += g * wt;
            }
        }
    }

    fn coord_grad(&self, plane: &[T], w: usize) -> (T, T) {
        let one = T::one();
        let (v00, v01) = (self.at(plane, w, 0, 0), self.at(plane, w, 0, 1));
        let (v10, v11) = (self.at(plane, w, 1, 0), self.at(plane, w, 1, 1));
        let dx = (one - self.fy) * (v01 - v00) + self.fy * (v11 - v10);
        let dy = (one - self.fx) * (v10 - v00) + self.fx * (v11 - v01);
        (dx, dy)
    }
}

/// Overlap of a plane with itself shifted by one displacement.
#[derive(Clone)]
struct CorrWindow {
    dy: isize,
    dx: isize,
    h: usize,
    w: usize,
}

impl CorrWindow {
    /// Calls `f(offset_a, offset_b, len)` for every row segment where both
    /// `a[y, x]` and `b[y + dy, x + dx]` are inside the plane.
    #[inline]
    fn for_rows(&self, w: usize, mut f: impl FnMut(usize, usize, usize)) {
        let (h, wi) = (self.h as isize, self.w as isize);
        let (x_lo, x_hi) = ((-self.dx).max(0), (wi - self.dx).min(wi));
        if x_lo >= x_hi {
            return;
        }
        for y in (-self.dy).max(0)..(h - self.dy).min(h) {
            let ra = y as usize * w + x_lo as usize;
            let rb = (y + self.dy) as usize * w + (x_lo + self.dx) as usize;
            f(ra, rb, (x_hi - x_lo) as usize);
        }
    }
}

struct CorrWindows(Vec<CorrWindow>);

impl CorrWindows {
    fn new(h: usize, w: usize, radius: usize) -> Self {
        let r = radius as isize;
        let mut v = Vec::new();
        for dy in -r..=r {
            for dx in -r..=r {
                v.push(CorrWindow { dy, dx, h, w });
            }
        }
        Self(v)
    }

    fn iter(&self) -> impl Iterator<Item = &CorrWindow> {
        self.0.iter()
    }
}
