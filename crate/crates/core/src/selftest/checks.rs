use num_bigint::BigUint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::CheckOutcome;
use crate::autodiff::{ParamStore, Tape, Tensor};
use crate::distill::{align, distill_loss, total_loss, AlignmentKind, DistillConfig, Side};
use crate::evolve::{pareto_front, search, CostModel, EvolutionConfig, GeneSpace};
use crate::flow_task::{decode_flo, encode_flo, f1_all, DecoderConfig, FlowField, OutlierRule};
use crate::search_space::{count_flops, count_params, enumerate, layerwise_reference_count, SearchSpaceSpec};
use crate::supernet::{
    build_standalone, build_supernet, decode_checkpoint, encode_checkpoint, Binding, SubNetView,
};
use crate::train::Evaluation;

fn outcome(name: &str, failures: Vec<String>, ok_detail: String) -> CheckOutcome {
    if failures.is_empty() {
        CheckOutcome::new(name, true, ok_detail)
    } else {
        CheckOutcome::new(name, false, failures.join("; "))
    }
}

/// Per-layer count of the full-size space: exactly 101010100^6, log10 48.026.
pub fn cardinality_check() -> CheckOutcome {
    let c = layerwise_reference_count();
    // per cell: 100 + 100^2 + 100^3 + 100^4
    let cell: BigUint = (1..=4u32).map(|d| BigUint::from(100u32).pow(d)).sum();
    let mut fails = Vec::new();
    if cell != BigUint::from(101_010_100u64) || c.exact != cell.pow(6) {
        fails.push(format!("count {} is not 101010100^6", c.exact));
    }
    if (c.log10 - 48.026).abs() > 1e-3 {
        fails.push(format!("log10 {} outside 48.026 +- 0.001", c.log10));
    }
    outcome("cardinality", fails, format!("101010100^6, log10 {:.4}", c.log10))
}

fn oracle_genomes(spec: &SearchSpaceSpec, n: u64) -> Vec<crate::search_space::ArchConfig> {
    let mut v = vec![spec.min_config(), spec.max_config()];
    v.extend((0..n).map(|s| spec.random_sample(1000 + s)));
    v
}

/// Analytic params and FLOPs against an instantiated model's element count
/// and the tape's multiply-accumulate counter.
pub fn cost_model_check() -> CheckOutcome {
    let mut fails = Vec::new();
    let spec = SearchSpaceSpec::desk();
    let genomes = oracle_genomes(&spec, 20);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (h, w) = (32, 48);
    let x = Tensor::<f32>::from_fn([1, 3, h, w], |_| rng.gen_range(-1.0..1.0));
    for g in &genomes {
        let analytic = match count_flops(g, &spec, h as u32, w as u32) {
            Ok(c) => c,
            Err(e) => {
                fails.push(e.to_string());
                continue;
            }
        };
        let store = build_standalone::<f32>(&spec, g, 0).expect("valid genome builds");
        if store.num_elements() as u64 != analytic.params {
            fails.push(format!("{}: {} params instantiated vs {}", g.to_json(), store.num_elements(), analytic.params));
        }
        let view = SubNetView::over(&spec, &store, g).expect("standalone view");
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        view.forward(&mut tape, xv, Binding::Frozen).expect("forward");
        if 2 * tape.macs() != analytic.flops {
            fails.push(format!("{}: {} flops counted vs {}", g.to_json(), 2 * tape.macs(), analytic.flops));
        }
    }
    let full = SearchSpaceSpec::table_s1();
    for g in oracle_genomes(&full, 20) {
        let store = build_standalone::<f32>(&full, &g, 0).expect("valid genome builds");
        let p = count_params(&g, &full).map(|c| c.params).unwrap_or(0);
        if store.num_elements() as u64 != p {
            fails.push(format!("full-size {}: {} vs {}", g.to_json(), store.num_elements(), p));
        }
    }
    outcome(
        "cost model",
        fails,
        format!("{} genomes exact at two scales", genomes.len()),
    )
}

/// Super-network views against standalone models built from the sliced weights.
pub fn slice_equivalence_check() -> CheckOutcome {
    let spec = SearchSpaceSpec::desk();
    let net = build_supernet::<f32>(&spec, 9).expect("supernet");
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = Tensor::<f32>::from_fn([2, 3, 32, 32], |_| rng.gen_range(-1.0..1.0));
    let mut fails = Vec::new();
    let genomes = oracle_genomes(&spec, 10);
    for g in &genomes {
        let view = net.select(g).expect("valid genome");
        let alone = view.extract();
        let standalone = SubNetView::over(&spec, &alone, g).expect("standalone view");
        let run = |v: &SubNetView<'_, f32>| {
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let p = v.forward(&mut tape, xv, Binding::Frozen).expect("forward");
            p.levels.map(|l| tape.value(l).clone())
        };
        let (a, b) = (run(&view), run(&standalone));
        let same = a
            .iter()
            .zip(&b)
            .all(|(p, q)| p.shape() == q.shape() && p.data().iter().zip(q.data()).all(|(u, v)| u.to_bits() == v.to_bits()));
        if !same {
            fails.push(format!("{} differs", g.to_json()));
        }
    }
    outcome("slice equivalence", fails, format!("{} genomes bitwise identical", genomes.len()))
}

/// Hand-derived values of the alignment, distillation and outlier formulas.
pub fn equation_checks() -> CheckOutcome {
    let mut fails = Vec::new();
    let none = ParamStore::<f64>::new();

    let mut tape = Tape::<f64>::new();
    let f = tape.constant(Tensor::new([1, 2, 1, 1], vec![-3.0, 2.0]));
    for (kind, expect) in [(AlignmentKind::ChannelMax, 3.0), (AlignmentKind::ChannelAvg, 2.5)] {
        let g = align(&mut tape, kind, f, Side::Student, 0, &none, Binding::Frozen).expect("align");
        if tape.value(g).data() != [expect] {
            fails.push(format!("{kind} of (-3, 2) gave {:?}", tape.value(g).data()));
        }
    }

    let shapes = crate::distill::align_shapes(AlignmentKind::Projection, &[4, 6, 8], &[4, 6, 8]);
    let store = crate::supernet::init_params::<f64>(&shapes, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let t = tape.constant(Tensor::from_fn([1, 6, 3, 3], |_| rng.gen_range(-1.0..1.0)));
    match align(&mut tape, AlignmentKind::Projection, t, Side::Teacher, 1, &store, Binding::Frozen) {
        Ok(v) if v == t => {}
        _ => fails.push("projection does not pass the teacher through".into()),
    }

    let mut tape = Tape::<f64>::new();
    let teacher = [
        tape.constant(Tensor::full([1, 3, 2, 2], 2.0)),
        tape.constant(Tensor::full([1, 3, 2, 2], -1.0)),
    ];
    let student = [tape.constant(Tensor::zeros([1, 2, 2, 2])), tape.constant(Tensor::zeros([1, 2, 2, 2]))];
    let cfg = DistillConfig {
        gamma: 0.5,
        lambda: 1.0,
        kind: AlignmentKind::ChannelAvg,
    };
    let l = distill_loss(&mut tape, &teacher, &student, &cfg, &none, Binding::Frozen).expect("loss");
    // levels with losses 4 and 1 under gamma 0.5: 0.5 * 4 + 1 * 1
    if tape.value(l).item() != 3.0 {
        fails.push(format!("two-level loss {} != 3", tape.value(l).item()));
    }

    let lf = tape.variable(Tensor::scalar(0.7));
    let ld = tape.variable(Tensor::scalar(0.3));
    if total_loss(&mut tape, lf, ld, 0.0) != lf {
        fails.push("lambda 0 does not return the flow loss".into());
    }
    for lambda in [1.0, 2.0] {
        let v = total_loss(&mut tape, lf, ld, lambda);
        if (tape.value(v).item() - (0.7 + lambda * 0.3)).abs() > 1e-15 {
            fails.push(format!("lambda {lambda} total {}", tape.value(v).item()));
        }
    }

    let one = |u: f32| FlowField::new(Tensor::new([1, 1, 2], vec![u, 0.0]));
    let gt = one(100.0);
    let near = f1_all(&one(104.0), &gt, &[true], OutlierRule::And).expect("f1");
    let far = f1_all(&one(106.0), &gt, &[true], OutlierRule::And).expect("f1");
    if (near, far) != (0.0, 100.0) {
        fails.push(format!("f1 at epe 4 and 6 gave {near} and {far}"));
    }
    outcome("equations", fails, "alignment, distillation, total loss and outlier cases".into())
}

/// Search invariants, an exhaustive micro-space oracle and a brute-force
/// Pareto oracle.
pub fn evolution_checks() -> CheckOutcome {
    let mut fails = Vec::new();
    let spec = SearchSpaceSpec::desk();
    let dec = DecoderConfig::default();
    let cost = CostModel {
        spec: &spec,
        decoder: &dec,
        frame: (64, 64),
    };
    let score = |g: &crate::search_space::ArchConfig| {
        let h = g.genes().iter().fold(17u64, |h, &v| h.wrapping_mul(31).wrapping_add(v as u64));
        Ok(Evaluation {
            aepe: (h % 1009) as f64,
            f1_all: 0.0,
            l_d: None,
        })
    };
    let cfg = EvolutionConfig {
        seed: 3,
        ..EvolutionConfig::default()
    };
    match search(&GeneSpace::new(&spec, None), &cost, &cfg, 1, score) {
        Ok(out) => {
            if let Some(c) = out.history.iter().find(|c| c.params >= out.bound) {
                fails.push(format!("candidate with {} params over bound {}", c.params, out.bound));
            }
            let mut prev = f64::INFINITY;
            for g in 0..cfg.generations {
                let best = out.history.iter().filter(|c| c.generation == g).map(|c| c.fitness).fold(f64::INFINITY, f64::min);
                if best > prev {
                    fails.push(format!("best fitness rose in generation {g}"));
                }
                prev = best;
            }
        }
        Err(e) => fails.push(e.to_string()),
    }

    let micro = micro_space();
    let micro_cost = CostModel {
        spec: &micro,
        decoder: &dec,
        frame: (64, 64),
    };
    let all: Vec<_> = enumerate(&micro).collect();
    let least = all.iter().map(|g| micro_cost.params(g).expect("valid")).min().expect("nonempty");
    let by_size = |g: &crate::search_space::ArchConfig| {
        Ok(Evaluation {
            aepe: micro_cost.params(g)? as f64,
            f1_all: 0.0,
            l_d: None,
        })
    };
    let mcfg = EvolutionConfig {
        seed: 4,
        param_bound: Some(u64::MAX),
        ..EvolutionConfig::default()
    };
    match search(&GeneSpace::new(&micro, None), &micro_cost, &mcfg, 1, by_size) {
        Ok(out) if out.best.params == least => {}
        Ok(out) => fails.push(format!("micro-space search found {} params, exhaustive {least}", out.best.params)),
        Err(e) => fails.push(e.to_string()),
    }

    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let pts: Vec<(f64, f64)> = (0..1000).map(|_| (rng.gen_range(0..60) as f64, rng.gen_range(0..60) as f64)).collect();
    let mut brute: Vec<(f64, f64)> = pts
        .iter()
        .filter(|p| !pts.iter().any(|q| (q.0 <= p.0 && q.1 < p.1) || (q.0 < p.0 && q.1 <= p.1)))
        .copied()
        .collect();
    brute.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    if pareto_front(&pts, |p| *p) != brute {
        fails.push("Pareto front differs from brute-force dominance".into());
    }
    outcome(
        "evolution",
        fails,
        format!("bound held, elitism monotone, micro-space of {} agrees, front of 1000 agrees", all.len()),
    )
}

/// 144 genomes over three partly pinned blocks.
pub fn micro_space() -> SearchSpaceSpec {
    let mut spec = SearchSpaceSpec::desk();
    for (i, b) in spec.blocks.iter_mut().enumerate() {
        if b.fixed() {
            continue;
        }
        let keep = match i {
            1 => [true, true, true, false],
            2 => [false, true, false, true],
            5 => [false, false, true, false],
            _ => [false; 4],
        };
        for (list, k) in [&mut b.widths, &mut b.depths, &mut b.kernels, &mut b.expansions].into_iter().zip(keep) {
            if !k {
                list.truncate(1);
            }
        }
    }
    spec
}

/// `.flo` byte round trips and checkpoint round trips.
pub fn format_checks() -> CheckOutcome {
    let mut fails = Vec::new();
    let mut expect = b"PIEH".to_vec();
    expect.extend([1, 0, 0, 0, 1, 0, 0, 0]);
    expect.extend([0u8; 8]);
    if encode_flo(&FlowField::zeros(1, 1)).ok() != Some(expect) {
        fails.push("1x1 zero flow is not the 20-byte reference file".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for i in 0..100 {
        let (h, w) = (rng.gen_range(1..12), rng.gen_range(1..12));
        let f = FlowField::new(Tensor::from_fn([h, w, 2], |_| rng.gen_range(-80.0..80.0)));
        let bytes = encode_flo(&f).expect("encode");
        match decode_flo(&bytes, "mem") {
            Ok(back) if back == f && encode_flo(&back).ok().as_ref() == Some(&bytes) => {}
            _ => fails.push(format!("flow {i} ({h}x{w}) does not round-trip")),
        }
    }

    let spec = SearchSpaceSpec::desk();
    let net = build_supernet::<f32>(&spec, 4).expect("supernet");
    let bytes = encode_checkpoint(net.params.iter().map(|(k, p)| (k, &p.value)));
    match decode_checkpoint(&bytes, "mem") {
        Ok(entries) => {
            let mut store = ParamStore::<f32>::new();
            for (k, t) in entries {
                store.insert(k, t);
            }
            let g = spec.random_sample(2);
            let x = Tensor::<f32>::from_fn([1, 3, 32, 32], |_| rng.gen_range(-1.0..1.0));
            let run = |p: &ParamStore<f32>| {
                let view = SubNetView::over(&spec, p, &g).expect("view");
                let mut tape = Tape::new();
                let xv = tape.constant(x.clone());
                let pyr = view.forward(&mut tape, xv, Binding::Frozen).expect("forward");
                pyr.levels.map(|l| tape.value(l).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
            };
            if !store.bitwise_eq(&net.params) || run(&store) != run(&net.params) {
                fails.push("checkpoint reload changes the forward pass".into());
            }
        }
        Err(e) => fails.push(e.to_string()),
    }
    outcome("formats", fails, "100 flows and a checkpoint round-trip byte for byte".into())
}
