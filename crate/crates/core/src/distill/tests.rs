use super::*;
use crate::autodiff::Tensor;
use crate::supernet::init_params;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn feat(n: usize, c: usize, h: usize, w: usize, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn([n, c, h, w], |_| rng.gen_range(-1.0..1.0))
}

fn params(kind: AlignmentKind) -> ParamStore<f64> {
    init_params(&align_shapes(kind, &[6, 8, 10], &[5, 8, 12]), 1)
}

#[test]
fn max_and_avg_hand_pixel() {
    let mut tape = Tape::<f64>::new();
    let f = tape.constant(Tensor::new([1, 2, 1, 1], vec![-3.0, 2.0]));
    let store = ParamStore::new();
    let m = align(&mut tape, AlignmentKind::ChannelMax, f, Side::Student, 0, &store, Binding::Frozen).unwrap();
    let a = align(&mut tape, AlignmentKind::ChannelAvg, f, Side::Student, 0, &store, Binding::Frozen).unwrap();
    assert_eq!(tape.value(m).data(), &[3.0]);
    assert_eq!(tape.value(a).data(), &[2.5]);
}

#[test]
fn reductions_ignore_channel_order() {
    let x = feat(1, 5, 3, 3, 2);
    let perm = [3, 0, 4, 1, 2];
    let y = Tensor::from_fn([1, 5, 3, 3], |i| {
        let (c, p) = (i / 9, i % 9);
        x.data()[perm[c] * 9 + p]
    });
    for kind in [AlignmentKind::ChannelMax, AlignmentKind::ChannelAvg] {
        let mut tape = Tape::<f64>::new();
        let (a, b) = (tape.constant(x.clone()), tape.constant(y.clone()));
        let s = ParamStore::new();
        let ga = align(&mut tape, kind, a, Side::Student, 0, &s, Binding::Frozen).unwrap();
        let gb = align(&mut tape, kind, b, Side::Student, 0, &s, Binding::Frozen).unwrap();
        for (p, q) in tape.value(ga).data().iter().zip(tape.value(gb).data()) {
            assert!((p - q).abs() < 1e-15);
        }
    }
}

#[test]
fn output_channel_counts() {
    for (kind, expect) in [
        (AlignmentKind::ChannelMax, 1),
        (AlignmentKind::ChannelAvg, 1),
        (AlignmentKind::SpatialAttention, 4),
        (AlignmentKind::Projection, 12),
    ] {
        let store = params(kind);
        let mut tape = Tape::<f64>::new();
        let f = tape.constant(feat(2, 7, 4, 4, 0));
        let g = align(&mut tape, kind, f, Side::Student, 2, &store, Binding::Trainable).unwrap();
        assert_eq!(tape.shape(g), &[2, expect, 4, 4]);
    }
}

#[test]
fn projection_passes_teacher_through() {
    let store = params(AlignmentKind::Projection);
    let mut tape = Tape::<f64>::new();
    let f = tape.constant(feat(1, 8, 4, 4, 3));
    let g = align(&mut tape, AlignmentKind::Projection, f, Side::Teacher, 1, &store, Binding::Trainable).unwrap();
    assert_eq!(g, f);
    assert_eq!(tape.value(g), tape.value(f));
}

#[test]
fn projection_width_errors_name_the_level() {
    let store = params(AlignmentKind::Projection);
    let mut tape = Tape::<f64>::new();
    let f = tape.constant(feat(1, 11, 4, 4, 3));
    let err = align(&mut tape, AlignmentKind::Projection, f, Side::Student, 2, &store, Binding::Trainable).unwrap_err();
    assert!(err.to_string().contains("level 2"), "{err}");
    let t = tape.constant(feat(1, 9, 4, 4, 3));
    assert!(align(&mut tape, AlignmentKind::Projection, t, Side::Teacher, 2, &store, Binding::Trainable).is_err());
}

#[test]
fn identical_pyramids_cost_nothing() {
    for kind in [AlignmentKind::ChannelMax, AlignmentKind::ChannelAvg, AlignmentKind::SpatialAttention] {
        let store = params(kind);
        let mut tape = Tape::<f64>::new();
        let p: Vec<Var> = [(6, 8), (8, 4), (10, 2)]
            .iter()
            .enumerate()
            .map(|(i, &(c, s))| tape.constant(feat(1, c, s, s, i as u64)))
            .collect();
        let cfg = DistillConfig { kind, ..DistillConfig::default() };
        let l = distill_loss(&mut tape, &p, &p, &cfg, &store, Binding::Trainable).unwrap();
        assert_eq!(tape.value(l).item(), 0.0);
    }
}

#[test]
fn two_level_hand_case() {
    // channel-avg maps of constant features: |2| vs 0 gives mse 4, |1| vs 0 gives 1
    let mut tape = Tape::<f64>::new();
    let t = vec![
        tape.constant(Tensor::full([1, 3, 2, 2], 2.0)),
        tape.constant(Tensor::full([1, 3, 2, 2], -1.0)),
    ];
    let s = vec![
        tape.constant(Tensor::zeros([1, 2, 2, 2])),
        tape.constant(Tensor::zeros([1, 2, 2, 2])),
    ];
    let cfg = DistillConfig {
        gamma: 0.5,
        lambda: 1.0,
        kind: AlignmentKind::ChannelAvg,
    };
    let l = distill_loss(&mut tape, &t, &s, &cfg, &ParamStore::new(), Binding::Frozen).unwrap();
    assert_eq!(tape.value(l).item(), 3.0);
    assert!(distill_loss(&mut tape, &t, &s[..1], &cfg, &ParamStore::new(), Binding::Frozen).is_err());
}

#[test]
fn no_gradient_reaches_the_teacher() {
    let store = params(AlignmentKind::Projection);
    let mut tape = Tape::<f64>::new();
    let t = tape.variable(feat(1, 12, 2, 2, 0));
    let s = tape.variable(feat(1, 10, 2, 2, 1));
    let cfg = DistillConfig {
        kind: AlignmentKind::Projection,
        ..DistillConfig::default()
    };
    let mut store3 = store.clone();
    store3.split_off_prefix("align.proj0");
    store3.split_off_prefix("align.proj1");
    let l = distill_loss(&mut tape, &[t], &[s], &cfg, &renumber(&store3), Binding::Trainable).unwrap();
    let g = tape.backward(l);
    assert!(g.wrt(t).is_none());
    assert!(g.wrt(s).unwrap().iter().any(|&v| v != 0.0));
}

/// Moves level-2 projection weights to level 0.
fn renumber(store: &ParamStore<f64>) -> ParamStore<f64> {
    let mut out = ParamStore::new();
    out.insert("align.proj0.w", store.get("align.proj2.w").clone());
    out
}

#[test]
fn scaling_level_losses_scales_the_sum() {
    let mut tape = Tape::<f64>::new();
    let ls: Vec<Var> = [0.3, 1.7, 2.2].iter().map(|&v| tape.constant(Tensor::scalar(v))).collect();
    let ls2: Vec<Var> = [0.3, 1.7, 2.2].iter().map(|&v| tape.constant(Tensor::scalar(v * 4.0))).collect();
    let a = combine_levels(&mut tape, &ls, 0.8);
    let b = combine_levels(&mut tape, &ls2, 0.8);
    let (a, b) = (tape.value(a).item(), tape.value(b).item());
    assert!((b - 4.0 * a).abs() < 1e-12);
    assert!((a - (0.64 * 0.3 + 0.8 * 1.7 + 2.2)).abs() < 1e-12);
}

#[test]
fn total_loss_cases() {
    let mut tape = Tape::<f64>::new();
    let f = tape.variable(Tensor::scalar(0.7));
    let d = tape.variable(Tensor::scalar(0.3));
    let t0 = total_loss(&mut tape, f, d, 0.0);
    assert_eq!(t0, f);
    let t1 = total_loss(&mut tape, f, d, 1.0);
    assert!((tape.value(t1).item() - 1.0).abs() < 1e-15);
}

#[test]
fn total_gradient_is_linear_in_lambda() {
    let store = params(AlignmentKind::Projection);
    let lambda = 0.37;
    let grads = |which: u8| {
        let mut tape = Tape::<f64>::new();
        let x = tape.variable(feat(1, 6, 4, 4, 5));
        let t = tape.constant(feat(1, 5, 4, 4, 6));
        let y = tape.relu(x);
        let target = tape.constant(feat(1, 6, 4, 4, 7));
        let lf = tape.l1_loss(y, target);
        let cfg = DistillConfig {
            kind: AlignmentKind::Projection,
            ..DistillConfig::default()
        };
        let ld = distill_loss(&mut tape, &[t], &[y], &cfg, &store, Binding::Frozen).unwrap();
        let root = match which {
            0 => lf,
            1 => ld,
            _ => total_loss(&mut tape, lf, ld, lambda),
        };
        tape.backward(root).wrt(x).unwrap().to_vec()
    };
    let (gf, gd, gt) = (grads(0), grads(1), grads(2));
    for i in 0..gt.len() {
        assert!((gt[i] - (gf[i] + lambda * gd[i])).abs() < 1e-12);
    }
}

#[test]
fn kind_flags_round_trip() {
    for k in AlignmentKind::ALL {
        assert_eq!(k.flag().parse::<AlignmentKind>().unwrap(), k);
        assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{}\"", k.flag()));
    }
    assert!("maximum".parse::<AlignmentKind>().is_err());
}
