use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::supernet::{Binding, FeaturePyramid, Init};

/// Prefix shared by every decoder parameter name.
pub const DECODER_PREFIX: &str = "dec.";

/// Strides of the three pyramid levels.
const LEVEL_STRIDES: [usize; 3] = [2, 4, 8];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoderConfig {
    /// Correlation window radius in feature cells.
    pub radius: usize,
    /// Soft-argmax temperature as a multiple of sqrt(C).
    pub temperature_scale: f64,
    /// Hidden channels of the refinement head.
    pub hidden: usize,
    /// Default number of flow estimates (1 = soft-argmax only).
    pub iterations: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            radius: 4,
            temperature_scale: 1.0,
            hidden: 32,
            iterations: 4,
        }
    }
}

impl DecoderConfig {
    fn window(&self) -> usize {
        (2 * self.radius + 1) * (2 * self.radius + 1)
    }
}

/// Refinement head: 3x3 conv to `hidden` channels, ReLU, 3x3 conv to the
/// two flow channels. The last conv starts at zero so a fresh decoder
/// returns the soft-argmax estimate unchanged.
pub fn decoder_shapes(cfg: &DecoderConfig) -> Vec<(String, Vec<usize>, Init)> {
    let d = |s: &str| format!("{DECODER_PREFIX}{s}");
    vec![
        (d("conv1.w"), vec![cfg.hidden, cfg.window(), 3, 3], Init::HeUniform),
        (d("conv1.b"), vec![cfg.hidden], Init::Zeros),
        (d("conv2.w"), vec![2, cfg.hidden, 3, 3], Init::Zeros),
        (d("conv2.b"), vec![2], Init::Zeros),
    ]
}

/// Expected displacement under a softmax over the correlation window.
/// `corr [N, (2r+1)^2, h, w]` to flow `[N, 2, h, w]` in cells.
pub fn soft_argmax<T: Scalar>(tape: &mut Tape<T>, corr: Var, radius: usize, temperature: f64) -> Var {
    let logits = tape.scale(corr, T::lit(1.0 / temperature));
    let p = tape.softmax(logits, 1);
    tape.window_expectation(p, radius)
}

fn temperature<T: Scalar>(tape: &Tape<T>, f: Var, cfg: &DecoderConfig) -> f64 {
    cfg.temperature_scale * (tape.shape(f)[1] as f64).sqrt()
}

/// Full-resolution flow from one pyramid level.
fn level_flow<T: Scalar>(tape: &mut Tape<T>, f1: Var, f2: Var, stride: usize, cfg: &DecoderConfig) -> Var {
        let corr = tape.local_corr(f1, f2, cfg.radius);
    let tau = temperature(tape, f1, cfg);
    let cells = soft_argmax(tape, corr, cfg.radius, tau);
    upsample_flow(tape, cells, stride)
}

fn upsample_flow<T: Scalar>(tape: &mut Tape<T>, cells: Var, stride: usize) -> Var {
    let px = tape.scale(cells, T::lit(stride as f64));
    tape.bilinear_upsample(px, stride)
}

fn check_pair<T: Scalar>(tape: &Tape<T>, p1: &FeaturePyramid, p2: &FeaturePyramid) -> Result<()> {
    for (a, b) in p1.levels.iter().zip(&p2.levels) {
        if tape.shape(*a) != tape.shape(*b) {
            return Err(Error::Shape(format!(
                "pyramid levels {:?} and {:?} differ",
                tape.shape(*a),
                tape.shape(*b)
            )));
        }
    }
    Ok(())
}

/// Flow estimates `[N, 2, H, W]`, one per iteration. The first is the
/// soft-argmax of the stride-8 correlation; each later one warps the second
/// frame's features by the current (detached) estimate, recorrelates, and
/// adds the refinement head's residual.
pub fn decode_flow<T: Scalar>(
    tape: &mut Tape<T>,
    pyr1: &FeaturePyramid,
    pyr2: &FeaturePyramid,
    dec: &ParamStore<T>,
    cfg: &DecoderConfig,
    iterations: usize,
    binding: Binding,
) -> Result<Vec<Var>> {
    if iterations < 1 {
        return Err(Error::Usage(format!("decoder iterations must be at least 1, got {iterations}")));
    }
    check_pair(tape, pyr1, pyr2)?;
    let (f1, f2) = (pyr1.levels[2], pyr2.levels[2]);
    let stride = LEVEL_STRIDES[2];
    let corr = tape.local_corr(f1, f2, cfg.radius);
    let tau = temperature(tape, f1, cfg);
    let mut cells = soft_argmax(tape, corr, cfg.radius, tau);
    let mut out = vec![upsample_flow(tape, cells, stride)];
    if iterations == 1 {
        return Ok(out);
    }
    let bind = |tape: &mut Tape<T>, name: &str| {
        let name = format!("{DECODER_PREFIX}{name}");
        match binding {
            Binding::Trainable => tape.param(dec, &name),
            Binding::Frozen => {
                let full: Vec<_> = dec.get(&name).shape().iter().map(|&d| 0..d).collect();
                tape.frozen_slice(dec, &name, &full)
            }
        }
    };
    let w1 = bind(tape, "conv1.w");
    let b1 = bind(tape, "conv1.b");
    let w2 = bind(tape, "conv2.w");
    let b2 = bind(tape, "conv2.b");
    let s = tape.shape(f2).to_vec();
    let (n, h, w) = (s[0], s[2], s[3]);
    for _ in 1..iterations {
        let flow = tape.value(cells).data().to_vec();
        let grid = Tensor::from_fn([n, h, w, 2], |i| {
            let (b, p, c) = (i / (2 * h * w), (i / 2) % (h * w), i % 2);
            let base = if c == 0 { p % w } else { p / w };
            T::lit(base as f64) + flow[(b * 2 + c) * h * w + p]
        });
        let gv = tape.constant(grid);
        let warped = tape.bilinear_sample(f2, gv);
        let corr = tape.local_corr(f1, warped, cfg.radius);
        let mut r = tape.conv2d(corr, w1, 1, 1, 1);
        r = tape.add_channel_bias(r, b1);
        r = tape.relu(r);
        r = tape.conv2d(r, w2, 1, 1, 1);
        r = tape.add_channel_bias(r, b2);
        cells = tape.add(cells, r);
        out.push(upsample_flow(tape, cells, stride));
    }
    Ok(out)
}

/// Analytic FLOPs (two per multiply-accumulate) of [`decode_flow`] on
/// `channels`-wide stride-8 features of an `h x w` frame: one correlation
/// per estimate, plus a bilinear warp and the refinement head per later
/// estimate. Softmax and upsampling are not counted.
pub fn decoder_flops(cfg: &DecoderConfig, channels: usize, h: usize, w: usize, iterations: usize) -> u64 {
    let stride = LEVEL_STRIDES[2];
    let cells = ((h / stride) * (w / stride)) as u64;
    let (c, win, hid) = (channels as u64, cfg.window() as u64, cfg.hidden as u64);
    let corr = cells * win * c;
    let refine = cells * (4 * c + win * hid * 9 + hid * 2 * 9);
    let k = iterations.max(1) as u64;
    2 * (k * corr + (k - 1) * refine)
}

/// Parameter-free flow from all pyramid levels: soft-argmax per level,
/// upsampled to full resolution, averaged over the levels left in `levels`.
pub fn rough_decode<T: Scalar>(
    tape: &mut Tape<T>,
    pyr1: &FeaturePyramid,
    pyr2: &FeaturePyramid,
    cfg: &DecoderConfig,
    levels: [bool; 3],
) -> Result<Var> {
    check_pair(tape, pyr1, pyr2)?;
    let flows: Vec<Var> = (0..3)
        .filter(|&l| levels[l])
        .map(|l| level_flow(tape, pyr1.levels[l], pyr2.levels[l], LEVEL_STRIDES[l], cfg))
        .collect();
    let Some((&first, rest)) = flows.split_first() else {
        return Err(Error::Usage("rough decoding needs at least one pyramid level".into()));
    };
    if rest.is_empty() {
        return Ok(first);
    }
    let sum = rest.iter().fold(first, |acc, &f| tape.add(acc, f));
    Ok(tape.scale(sum, T::lit(1.0 / flows.len() as f64)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::supernet::init_params;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn features(n: usize, c: usize, h: usize, w: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn([n, c, h, w], |_| rng.gen_range(-1.0..1.0))
    }

    fn pyramid(tape: &mut Tape<f64>, seed: u64, shift: (usize, usize)) -> FeaturePyramid {
        let sizes = [(32, 32, 4), (16, 16, 6), (8, 8, 32)];
        let mut levels = [Var(0); 3];
        for (l, &(h, w, c)) in sizes.iter().enumerate() {
            let mut t = features(1, c, h, w, seed + l as u64);
            if l == 2 && shift != (0, 0) {
                let src = t.clone();
                t = Tensor::from_fn([1, c, h, w], |i| {
                    let (ch, y, x) = (i / (h * w), (i / w) % h, i % w);
                    // out(x) = src(x - shift), so src(x) appears at x + shift
                    if x < shift.0 || y < shift.1 {
                        0.0
                    } else {
                        src.data()[(ch * h + y - shift.1) * w + x - shift.0]
                    }
                });
            }
            levels[l] = tape.constant(t);
        }
        FeaturePyramid { levels }
    }

    #[test]
    fn identical_pyramids_give_zero_flow() {
        let mut tape = Tape::new();
        let p = pyramid(&mut tape, 1, (0, 0));
        let cfg = DecoderConfig {
            temperature_scale: 0.01,
            ..DecoderConfig::default()
        };
        let dec = init_params::<f64>(&decoder_shapes(&cfg), 0);
        let flows = decode_flow(&mut tape, &p, &p, &dec, &cfg, 1, Binding::Frozen).unwrap();
        let v = tape.value(flows[0]);
        assert_eq!(v.shape(), &[1, 2, 64, 64]);
        let worst = v.data().iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(worst < 1e-3, "{worst}");
    }

    #[test]
    fn featureless_pyramids_give_exactly_zero_flow() {
        let mut tape = Tape::new();
        let z = [(32, 4), (16, 6), (8, 8)].map(|(s, c)| tape.constant(Tensor::zeros([1, c, s, s])));
        let p = FeaturePyramid { levels: z };
        let cfg = DecoderConfig::default();
        let dec = init_params::<f64>(&decoder_shapes(&cfg), 0);
        let flows = decode_flow(&mut tape, &p, &p, &dec, &cfg, 2, Binding::Frozen).unwrap();
        for f in flows {
            assert!(tape.value(f).data().iter().all(|&x| x == 0.0));
        }
        let r = rough_decode(&mut tape, &p, &p, &cfg, [true; 3]).unwrap();
        assert!(tape.value(r).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn one_cell_shift_reads_as_eight_pixels() {
        let mut tape = Tape::new();
        let p1 = pyramid(&mut tape, 1, (0, 0));
        let p2 = pyramid(&mut tape, 1, (1, 0));
        let cfg = DecoderConfig {
            temperature_scale: 0.01,
            ..DecoderConfig::default()
        };
        let dec = init_params::<f64>(&decoder_shapes(&cfg), 0);
        let flows = decode_flow(&mut tape, &p1, &p2, &dec, &cfg, 1, Binding::Frozen).unwrap();
        let f = FlowField::from_planes(tape.value(flows[0]), 0);
        // interior of the stride-8 grid, away from the shifted-in border
        for y in 16..48 {
            for x in 16..48 {
                let (u, v) = f.at(y, x);
                assert!((u - 8.0).abs() < 0.5 && v.abs() < 0.5, "({u}, {v}) at {x},{y}");
            }
        }
    }

    #[test]
    fn rough_level_three_matches_first_estimate() {
        let mut tape = Tape::new();
        let p1 = pyramid(&mut tape, 3, (0, 0));
        let p2 = pyramid(&mut tape, 9, (0, 0));
        let cfg = DecoderConfig::default();
        let dec = init_params::<f64>(&decoder_shapes(&cfg), 0);
        let flows = decode_flow(&mut tape, &p1, &p2, &dec, &cfg, 3, Binding::Frozen).unwrap();
        let r = rough_decode(&mut tape, &p1, &p2, &cfg, [false, false, true]).unwrap();
        assert_eq!(tape.value(flows[0]), tape.value(r));
        assert_eq!(flows.len(), 3);
        let again = rough_decode(&mut tape, &p1, &p2, &cfg, [true; 3]).unwrap();
        let once = rough_decode(&mut tape, &p1, &p2, &cfg, [true; 3]).unwrap();
        assert_eq!(tape.value(again), tape.value(once));
    }

    #[test]
    fn zero_iterations_is_an_error() {
        let mut tape = Tape::new();
        let p = pyramid(&mut tape, 1, (0, 0));
        let cfg = DecoderConfig::default();
        let dec = init_params::<f64>(&decoder_shapes(&cfg), 0);
        assert!(decode_flow(&mut tape, &p, &p, &dec, &cfg, 0, Binding::Frozen).is_err());
    }

    #[test]
    fn decoder_size_ignores_the_encoder() {
        let cfg = DecoderConfig::default();
        let n: usize = decoder_shapes(&cfg).iter().map(|(_, s, _)| s.iter().product::<usize>()).sum();
        assert_eq!(n, 32 * 81 * 9 + 32 + 2 * 32 * 9 + 2);
    }

    use super::super::FlowField;
}
