use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::CheckOutcome;
use crate::autodiff::check::{check_graph, GradCheck};
use crate::{Tape, Tensor, Var};

const STEP: f64 = 1e-3;
pub const PER_OP_REL_TOL: f64 = 1e-4;
pub const END_TO_END_REL_TOL: f64 = 1e-3;
pub const ABS_TOL: f64 = 1e-6;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

/// Random values kept at least `gap` away from zero, for ops with a kink there.
fn away_from_zero(shape: &[usize], gap: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = rng.gen_range(gap..1.0);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

fn summarize(name: &str, checks: &[GradCheck], tol: f64) -> CheckOutcome {
    let passed = checks.iter().all(|c| c.passed);
    let worst = checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    let abs = checks.iter().map(|c| c.max_abs_error).fold(0.0, f64::max);
    CheckOutcome::new(
        format!("gradient {name}"),
        passed,
        format!("max abs err {abs:.2e}, max rel err {worst:.2e} over entries above {ABS_TOL:.0e} (tol {tol:.0e})"),
    )
}

type Builder = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Var>;

/// Finite-difference check of every differentiable operation, 64-bit.
pub fn op_gradient_suite() -> Vec<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let r = &mut rng;
    let grid = |n: usize, ho: usize, wo: usize, h: usize, w: usize, rng: &mut ChaCha8Rng| {
        // coordinates kept off the integer lattice where bilinear weights kink
        Tensor::from_fn([n, ho, wo, 2], |i| {
            let extent = if i % 2 == 0 { w } else { h } as f64;
            let base = rng.gen_range(-1.0..extent) as i64 as f64;
            base + rng.gen_range(0.1..0.9)
        })
    };
    let cases: Vec<(&str, Vec<Tensor<f64>>, Builder)> = vec![
        (
            "conv2d 3x3 stride1",
            vec![random(&[2, 3, 5, 5], r), random(&[4, 3, 3, 3], r)],
            Box::new(|t, v| t.conv2d(v[0], v[1], 1, 1, 1)),
        ),
        (
            "conv2d 7x7 stride2",
            vec![random(&[1, 3, 8, 8], r), random(&[2, 3, 7, 7], r)],
            Box::new(|t, v| t.conv2d(v[0], v[1], 1, 2, 3)),
        ),
        (
            "conv2d depthwise 5x5 stride2",
            vec![random(&[2, 4, 6, 6], r), random(&[4, 1, 5, 5], r)],
            Box::new(|t, v| t.conv2d(v[0], v[1], 4, 2, 2)),
        ),
        (
            "conv2d pointwise",
            vec![random(&[2, 5, 3, 4], r), random(&[3, 5, 1, 1], r)],
            Box::new(|t, v| t.conv2d(v[0], v[1], 1, 1, 0)),
        ),
        (
            "conv2d pointwise stride2",
            vec![random(&[1, 3, 4, 4], r), random(&[2, 3, 1, 1], r)],
            Box::new(|t, v| t.conv2d(v[0], v[1], 1, 2, 0)),
        ),
        (
            "instance_norm",
            vec![random(&[2, 3, 3, 4], r), random(&[3], r), random(&[3], r)],
            Box::new(|t, v| t.instance_norm(v[0], v[1], v[2], 1e-5)),
        ),
        (
            "instance_norm_relu",
            vec![
                away_from_zero(&[2, 3, 3, 4], 0.05, r),
                away_from_zero(&[3], 0.2, r),
                random(&[3], r),
            ],
            Box::new(|t, v| t.instance_norm_relu(v[0], v[1], v[2], 1e-5)),
        ),
        (
            "channel_rms_norm",
            vec![random(&[2, 5, 2, 3], r)],
            Box::new(|t, v| t.channel_rms_norm(v[0], 1e-6)),
        ),
        (
            "add_relu",
            vec![away_from_zero(&[2, 7], 0.05, r), random(&[2, 7], r).map(|v| v * 1e-2)],
            Box::new(|t, v| t.add_relu(v[0], v[1])),
        ),
        (
            "window_expectation",
            vec![random(&[2, 9, 2, 3], r)],
            Box::new(|t, v| t.window_expectation(v[0], 1)),
        ),
        (
            "relu",
            vec![away_from_zero(&[3, 4], 0.05, r)],
            Box::new(|t, v| t.relu(v[0])),
        ),
        (
            "leaky_relu",
            vec![away_from_zero(&[3, 4], 0.05, r)],
            Box::new(|t, v| t.leaky_relu(v[0], 0.1)),
        ),
        (
            "abs",
            vec![away_from_zero(&[3, 4], 0.05, r)],
            Box::new(|t, v| t.abs(v[0])),
        ),
        (
            "softmax axis1",
            vec![random(&[2, 5, 3], r)],
            Box::new(|t, v| t.softmax(v[0], 1)),
        ),
        (
            "softmax_lastdim",
            vec![random(&[3, 6], r)],
            Box::new(|t, v| t.softmax_lastdim(v[0])),
        ),
        (
            "l1_loss",
            vec![random(&[2, 3, 4], r), random(&[2, 3, 4], r)],
            Box::new(|t, v| t.l1_loss(v[0], v[1])),
        ),
        (
            "l2_loss",
            vec![random(&[2, 3, 4], r), random(&[2, 3, 4], r)],
            Box::new(|t, v| t.l2_loss(v[0], v[1])),
        ),
        (
            "add",
            vec![random(&[3, 4], r), random(&[3, 4], r)],
            Box::new(|t, v| t.add(v[0], v[1])),
        ),
        (
            "sub",
            vec![random(&[3, 4], r), random(&[3, 4], r)],
            Box::new(|t, v| t.sub(v[0], v[1])),
        ),
        (
            "mul",
            vec![random(&[3, 4], r), random(&[3, 4], r)],
            Box::new(|t, v| t.mul(v[0], v[1])),
        ),
        (
            "scale",
            vec![random(&[3, 4], r)],
            Box::new(|t, v| t.scale(v[0], -2.5)),
        ),
        (
            "matmul",
            vec![random(&[3, 4], r), random(&[4, 5], r)],
            Box::new(|t, v| t.matmul(v[0], v[1])),
        ),
        (
            "avg_pool2x2",
            vec![random(&[2, 2, 4, 6], r)],
            Box::new(|t, v| t.avg_pool2x2(v[0])),
        ),
        (
            "bilinear_upsample x4",
            vec![random(&[1, 2, 3, 4], r)],
            Box::new(|t, v| t.bilinear_upsample(v[0], 4)),
        ),
        (
            "bilinear_sample",
            vec![random(&[2, 3, 5, 6], r), grid(2, 4, 3, 5, 6, r)],
            Box::new(|t, v| t.bilinear_sample(v[0], v[1])),
        ),
        (
            "local_corr r2",
            vec![random(&[2, 3, 4, 5], r), random(&[2, 3, 4, 5], r)],
            Box::new(|t, v| t.local_corr(v[0], v[1], 2)),
        ),
        (
            "reduce_max",
            vec![random(&[2, 4, 3], r)],
            Box::new(|t, v| t.reduce_max(v[0], 1)),
        ),
        (
            "reduce_mean",
            vec![random(&[2, 4, 3], r)],
            Box::new(|t, v| t.reduce_mean(v[0], 1)),
        ),
        (
            "narrow",
            vec![random(&[3, 5, 2], r)],
            Box::new(|t, v| t.narrow(v[0], 1, 1, 3)),
        ),
        (
            "concat",
            vec![random(&[2, 2, 3], r), random(&[2, 1, 3], r)],
            Box::new(|t, v| t.concat(&[v[0], v[1]], 1)),
        ),
        (
            "reshape",
            vec![random(&[2, 6], r)],
            Box::new(|t, v| t.reshape(v[0], &[3, 4])),
        ),
        (
            "add_channel_bias",
            vec![random(&[2, 3, 2, 2], r), random(&[3], r)],
            Box::new(|t, v| t.add_channel_bias(v[0], v[1])),
        ),
        (
            "mean",
            vec![random(&[4, 3], r)],
            Box::new(|t, v| t.mean(v[0])),
        ),
    ];
    cases
        .into_iter()
        .map(|(name, inputs, build)| {
            let checks = check_graph(&inputs, build, STEP, PER_OP_REL_TOL, ABS_TOL);
            summarize(name, &checks, PER_OP_REL_TOL)
        })
        .collect()
}

/// Two conv/norm/relu layers, a correlation, soft-argmax and an L1 loss:
/// the full chain of operations the flow model uses, checked end to end.
pub fn end_to_end_gradient_check() -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let r = &mut rng;
    let inputs = vec![
        random(&[2, 3, 8, 8], r),
        random(&[4, 3, 3, 3], r),
        Tensor::from_fn([4], |_| 1.0 + 0.1 * r.gen_range(-1.0..1.0)),
        random(&[4], r),
        random(&[4, 1, 3, 3], r),
        random(&[3, 4, 1, 1], r),
        random(&[1, 2, 4, 4], r),
    ];
    let build = |t: &mut Tape<f64>, v: &[Var]| {
        let x = t.conv2d(v[0], v[1], 1, 2, 1);
        let x = t.instance_norm(x, v[2], v[3], 1e-5);
        let x = t.leaky_relu(x, 0.2);
        let x = t.conv2d(x, v[4], 4, 1, 1);
        let feat = t.conv2d(x, v[5], 1, 1, 0);
        let f1 = t.narrow(feat, 0, 0, 1);
        let f2 = t.narrow(feat, 0, 1, 1);
        let corr = t.local_corr(f1, f2, 1);
        let prob = t.softmax(corr, 1);
        let flow = t.window_expectation(prob, 1);
        t.l2_loss(flow, v[6])
    };
    let checks = check_graph(&inputs, build, STEP, END_TO_END_REL_TOL, ABS_TOL);
    summarize("end-to-end toy model", &checks, END_TO_END_REL_TOL)
}
