use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FlowField, FramePair};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Ranges of the random motion applied to each pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MotionConfig {
    /// Translation bound in pixels along each axis.
    pub max_disp: f64,
    pub max_rotation_deg: f64,
    pub min_scale: f64,
    pub max_scale: f64,
    /// Adds a rectangle moving with its own translation.
    pub moving_rect: bool,
}

impl Default for MotionConfig {
    fn default() -> Self {
        Self {
            max_disp: 12.0,
            max_rotation_deg: 5.0,
            min_scale: 0.95,
            max_scale: 1.05,
            moving_rect: false,
        }
    }
}

impl MotionConfig {
    pub fn with_max_disp(max_disp: f64) -> Self {
        Self {
            max_disp,
            ..Self::default()
        }
    }

    /// No motion at all.
    pub fn still() -> Self {
        Self {
            max_disp: 0.0,
            max_rotation_deg: 0.0,
            min_scale: 1.0,
            max_scale: 1.0,
            moving_rect: false,
        }
    }

    /// Upper bound on |flow| over an `h x w` frame.
    fn bound(&self, h: usize, w: usize) -> f64 {
        let radius = 0.5 * ((h * h + w * w) as f64).sqrt();
        let th = self.max_rotation_deg.to_radians();
        let s = self.max_scale.max(1.0 / self.min_scale.max(1e-3));
        // |sR - I| <= |s - 1| + s * |R - I|
        let lin = (s - 1.0).abs().max((1.0 - self.min_scale).abs()) + s * 2.0 * (th / 2.0).sin();
        std::f64::consts::SQRT_2 * self.max_disp + lin * radius
    }
}

const SIGMA_FINE: f64 = 2.0;
const SIGMA_COARSE: f64 = 8.0;

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable blur with edge clamping.
fn blur(src: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let clamp = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(j, kv)| kv * src[y * w + clamp(x as i64 + j as i64 - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(j, kv)| kv * tmp[clamp(y as i64 + j as i64 - r, h) * w + x])
                .sum();
        }
    }
    out
}

/// Band-pass texture: difference of two blurs of white noise, normalized
/// to unit spread and squashed into [-1, 1].
fn texture(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let noise: Vec<f64> = (0..h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let fine = blur(&noise, h, w, SIGMA_FINE);
    let coarse = blur(&noise, h, w, SIGMA_COARSE);
    let band: Vec<f64> = fine.iter().zip(&coarse).map(|(a, b)| a - b).collect();
    let var = band.iter().map(|v| v * v).sum::<f64>() / band.len() as f64;
    let inv = 1.0 / (var.sqrt() * 2.0).max(1e-12);
    band.into_iter().map(|v| (v * inv).tanh()).collect()
}

fn bilinear(plane: &[f64], h: usize, w: usize, x: f64, y: f64) -> f64 {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let at = |yy: i64, xx: i64| -> f64 {
        if yy < 0 || xx < 0 || yy >= h as i64 || xx >= w as i64 {
            0.0
        } else {
            plane[yy as usize * w + xx as usize]
        }
    };
    let (xi, yi) = (x0 as i64, y0 as i64);
    let mut v = 0.0;
    for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
        for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
            let wgt = wy * wx;
            if wgt != 0.0 {
                v += wgt * at(yi + dy, xi + dx);
            }
        }
    }
    v
}

/// Pair `index` of the stream `seed`. The second frame is a crop of a
/// larger textured canvas; the first frame reads that canvas at
/// `x + gt(x)`, so `frame1(x) = frame2(x + gt(x))` wherever the target
/// lies inside the crop.
pub fn gen_pair(seed: u64, index: u64, h: usize, w: usize, motion: &MotionConfig) -> Result<FramePair> {
    if h % 8 != 0 || w % 8 != 0 || h == 0 || w == 0 {
        return Err(Error::Shape(format!("frame size {h}x{w} must be divisible by 8")));
    }
    if motion.max_disp < 0.0 || motion.max_disp > (h.min(w) as f64) / 4.0 {
        return Err(Error::Usage(format!(
            "max_disp {} must lie in [0, {}] for {h}x{w} frames",
            motion.max_disp,
            h.min(w) / 4
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let m = motion.bound(h, w).ceil() as usize + 2;
    let (ch, cw) = (h + 2 * m, w + 2 * m);
    let canvas: Vec<Vec<f64>> = (0..3).map(|_| texture(ch, cw, &mut rng)).collect();

    let uni = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| if hi > lo { rng.gen_range(lo..hi) } else { lo };
    let tx = uni(&mut rng, -motion.max_disp, motion.max_disp);
    let ty = uni(&mut rng, -motion.max_disp, motion.max_disp);
    let th = uni(&mut rng, -motion.max_rotation_deg, motion.max_rotation_deg).to_radians();
    let s = uni(&mut rng, motion.min_scale, motion.max_scale);
    let (a, b) = (s * th.cos() - 1.0, -s * th.sin());
    let (c, d) = (s * th.sin(), s * th.cos() - 1.0);
    let rect = motion.moving_rect.then(|| {
        let rw = uni(&mut rng, w as f64 / 4.0, w as f64 / 2.0);
        let rh = uni(&mut rng, h as f64 / 4.0, h as f64 / 2.0);
        let x0 = uni(&mut rng, 0.0, w as f64 - rw);
        let y0 = uni(&mut rng, 0.0, h as f64 - rh);
        let u = uni(&mut rng, -motion.max_disp, motion.max_disp);
        let v = uni(&mut rng, -motion.max_disp, motion.max_disp);
        (x0, y0, x0 + rw, y0 + rh, u, v)
    });
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let mut uv = Vec::with_capacity(h * w * 2);
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64, y as f64);
            let flow = match rect {
                Some((x0, y0, x1, y1, u, v)) if px >= x0 && px < x1 && py >= y0 && py < y1 => (u, v),
                _ => {
                    let (rx, ry) = (px - cx, py - cy);
                    (tx + a * rx + b * ry, ty + c * rx + d * ry)
                }
            };
            uv.push(flow.0);
            uv.push(flow.1);
        }
    }
    // round the flow to f32 first so the stored ground truth is what the
    // frames were rendered with
    let uv32: Vec<f32> = uv.iter().map(|&v| v as f32).collect();
    let mut f1 = vec![0f32; 3 * h * w];
    let mut f2 = vec![0f32; 3 * h * w];
    for (ci, plane) in canvas.iter().enumerate() {
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                f2[ci * h * w + p] = plane[(y + m) * cw + x + m] as f32;
                let sx = x as f64 + uv32[2 * p] as f64;
                let sy = y as f64 + uv32[2 * p + 1] as f64;
                f1[ci * h * w + p] = bilinear(plane, ch, cw, sx + m as f64, sy + m as f64) as f32;
            }
        }
    }
    Ok(FramePair {
        frame1: Tensor::new([3, h, w], f1),
        frame2: Tensor::new([3, h, w], f2),
        gt: FlowField::new(Tensor::new([h, w, 2], uv32)),
        seed,
    })
}

/// Pairs `0..count` of the stream `seed`.
pub fn gen_dataset(seed: u64, count: usize, h: usize, w: usize, motion: &MotionConfig) -> Result<Vec<FramePair>> {
    (0..count as u64).map(|i| gen_pair(seed, i, h, w, motion)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    /// Mean |frame1(x) - sample(frame2, x + gt(x))| over pixels whose
    /// target lies at least one pixel inside frame2.
    fn warp_residual(p: &FramePair) -> f64 {
        let (h, w) = (p.gt.height(), p.gt.width());
        let mut tape = Tape::<f64>::new();
        let f2 = tape.constant(p.frame2.cast::<f64>().reshape([1, 3, h, w]));
        let grid = Tensor::from_fn([1, h, w, 2], |i| {
            let (pix, c) = (i / 2, i % 2);
            let base = if c == 0 { pix % w } else { pix / w } as f64;
            base + p.gt.uv.data()[i] as f64
        });
        let gv = tape.constant(grid.clone());
        let warped = tape.bilinear_sample(f2, gv);
        let wv = tape.value(warped).data();
        let f1 = p.frame1.data();
        let (mut sum, mut n) = (0.0, 0usize);
        for pix in 0..h * w {
            let (gx, gy) = (grid.data()[2 * pix], grid.data()[2 * pix + 1]);
            if gx < 1.0 || gy < 1.0 || gx > (w - 2) as f64 || gy > (h - 2) as f64 {
                continue;
            }
            for c in 0..3 {
                sum += (f1[c * h * w + pix] as f64 - wv[c * h * w + pix]).abs();
                n += 1;
            }
        }
        sum / n as f64
    }

    #[test]
    fn still_pairs_are_identical() {
        let p = gen_pair(5, 0, 32, 32, &MotionConfig::still()).unwrap();
        assert_eq!(p.frame1, p.frame2);
        assert!(p.gt.uv.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn frames_are_warps_of_each_other() {
        for motion in [MotionConfig::default(), MotionConfig { moving_rect: true, ..MotionConfig::default() }] {
            for p in gen_dataset(9, 4, 64, 64, &motion).unwrap() {
                let r = warp_residual(&p);
                assert!(r < 1e-6, "residual {r}");
            }
        }
    }

    #[test]
    fn same_seed_same_data() {
        let m = MotionConfig::default();
        assert_eq!(gen_dataset(3, 2, 64, 64, &m).unwrap(), gen_dataset(3, 2, 64, 64, &m).unwrap());
        assert_ne!(gen_pair(3, 0, 64, 64, &m).unwrap(), gen_pair(3, 1, 64, 64, &m).unwrap());
    }

    #[test]
    fn values_and_motion_stay_in_range() {
        let m = MotionConfig::default();
        let p = gen_pair(1, 0, 64, 64, &m).unwrap();
        assert!(p.frame1.data().iter().chain(p.frame2.data()).all(|v| (-1.0..=1.0).contains(v)));
        let bound = m.bound(64, 64) as f32;
        assert!(p.gt.uv.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn bad_sizes_are_rejected() {
        assert!(gen_pair(0, 0, 60, 64, &MotionConfig::default()).is_err());
        assert!(gen_pair(0, 0, 32, 32, &MotionConfig::with_max_disp(9.0)).is_err());
    }
}
