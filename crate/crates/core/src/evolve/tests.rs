use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::search_space::enumerate;

fn desk() -> SearchSpaceSpec {
    SearchSpaceSpec::desk()
}

/// 144 genomes: three blocks keep some choices, the rest are pinned.
fn micro_spec() -> SearchSpaceSpec {
    let mut spec = desk();
    for (i, b) in spec.blocks.iter_mut().enumerate() {
        if b.fixed() {
            continue;
        }
        match i {
            1 => b.expansions.truncate(1),
            2 => {
                b.widths.truncate(1);
                b.kernels.truncate(1);
            }
            5 => {
                b.widths.truncate(1);
                b.depths.truncate(1);
                b.expansions.truncate(1);
            }
            _ => {
                b.widths.truncate(1);
                b.depths.truncate(1);
                b.kernels.truncate(1);
                b.expansions.truncate(1);
            }
        }
    }
    spec
}

fn dec() -> DecoderConfig {
    DecoderConfig::default()
}

fn cost<'a>(spec: &'a SearchSpaceSpec, dec: &'a DecoderConfig) -> CostModel<'a> {
    CostModel { spec, decoder: dec, frame: (64, 64) }
}

fn metrics(aepe: f64) -> Evaluation {
    Evaluation { aepe, f1_all: 0.0, l_d: None }
}

fn small_cfg(seed: u64) -> EvolutionConfig {
    EvolutionConfig {
        population: 20,
        survivors: 10,
        offspring: 10,
        generations: 6,
        seed,
        ..EvolutionConfig::default()
    }
}

/// Deterministic pseudo-error that is unrelated to size.
fn scramble(g: &ArchConfig) -> f64 {
    let h = g.genes().iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &v| (h ^ v as u64).wrapping_mul(0x100_0000_01b3));
    (h % 10_007) as f64 / 100.0
}

#[test]
fn crossover_of_a_genome_with_itself_is_that_genome() {
    let spec = desk();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let a = spec.sample_with(&mut rng);
        assert_eq!(crossover(&a, &a, &mut rng), a);
    }
}

proptest! {
    #[test]
    fn crossover_genes_come_from_a_parent(sa in any::<u64>(), sb in any::<u64>(), s in any::<u64>()) {
        let spec = desk();
        let (a, b) = (spec.random_sample(sa), spec.random_sample(sb));
        let child = crossover(&a, &b, &mut ChaCha8Rng::seed_from_u64(s));
        prop_assert!(spec.validate(&child).is_ok());
        for ((c, x), y) in child.genes().iter().zip(a.genes()).zip(b.genes()) {
            prop_assert!(*c == x || *c == y);
        }
        let again = crossover(&a, &b, &mut ChaCha8Rng::seed_from_u64(s));
        prop_assert_eq!(child, again);
    }

    #[test]
    fn mutation_stays_valid(sg in any::<u64>(), s in any::<u64>(), p in 0.0f64..=1.0) {
        let spec = desk();
        let space = GeneSpace::new(&spec, Some(&[1, 2, 4]));
        let g = space.sample(&mut ChaCha8Rng::seed_from_u64(sg));
        let m = space.mutate(&g, p, &mut ChaCha8Rng::seed_from_u64(s));
        prop_assert!(spec.validate(&m).is_ok());
        prop_assert!(m.decoder_iterations.is_some_and(|k| [1, 2, 4].contains(&k)));
    }

    #[test]
    fn front_matches_brute_force(pts in prop::collection::vec((0u8..40, 0u8..40), 1..1000)) {
        let pts: Vec<(f64, f64)> = pts.into_iter().map(|(x, y)| (x as f64, y as f64)).collect();
        let front = pareto_front(&pts, |p| *p);
        let dominated = |p: &(f64, f64)| {
            pts.iter().any(|q| (q.0 <= p.0 && q.1 < p.1) || (q.0 < p.0 && q.1 <= p.1))
        };
        let mut brute: Vec<(f64, f64)> = pts.iter().filter(|p| !dominated(p)).copied().collect();
        brute.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        prop_assert_eq!(front, brute);
    }
}

#[test]
fn mutation_with_zero_probability_is_identity() {
    let spec = desk();
    let space = GeneSpace::new(&spec, None);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let g = space.sample(&mut rng);
        assert_eq!(space.mutate(&g, 0.0, &mut rng), g);
    }
}

#[test]
fn forced_mutation_over_singleton_choices_is_identity() {
    let mut spec = desk();
    for b in spec.blocks.iter_mut() {
        b.widths.truncate(1);
        b.depths.truncate(1);
        b.kernels.truncate(1);
        b.expansions.truncate(1);
    }
    let space = GeneSpace::new(&spec, Some(&[3]));
    let g = space.sample(&mut ChaCha8Rng::seed_from_u64(0));
    assert_eq!(space.mutate(&g, 1.0, &mut ChaCha8Rng::seed_from_u64(9)), g);
}

#[test]
fn per_gene_change_rate_matches_binomial_bound() {
    let spec = desk();
    let space = GeneSpace::new(&spec, None);
    let p = 0.1;
    let n = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let g = spec.min_config();
    let base = g.genes();
    let mut changed = vec![0usize; base.len()];
    for _ in 0..n {
        let m = space.mutate(&g, p, &mut rng).genes();
        for (i, (a, b)) in m.iter().zip(&base).enumerate() {
            changed[i] += (a != b) as usize;
        }
    }
    for (i, c) in space.choices().iter().enumerate() {
        let expect = p * (1.0 - 1.0 / c.len() as f64);
        let rate = changed[i] as f64 / n as f64;
        assert!(
            rate >= 0.9 * expect && rate <= 1.1 * expect,
            "gene {i}: rate {rate} expected {expect}"
        );
    }
}

#[test]
fn default_bound_is_sixty_percent_of_max() {
    let spec = desk();
    let max = count_params(&spec.max_config(), &spec).unwrap().params;
    assert_eq!(default_param_bound(&spec).unwrap(), max * 3 / 5);
}

#[test]
fn config_checks() {
    assert!(EvolutionConfig::default().check().is_ok());
    for bad in [
        EvolutionConfig { offspring: 49, ..Default::default() },
        EvolutionConfig { generations: 0, ..Default::default() },
        EvolutionConfig { mutation_prob: 0.0, ..Default::default() },
        EvolutionConfig { mutation_prob: 1.0, ..Default::default() },
        EvolutionConfig { joint_iterations_search: true, iteration_choices: vec![0, 2], ..Default::default() },
    ] {
        assert!(bad.check().is_err(), "{bad:?}");
    }
}

#[test]
fn history_respects_bound_and_best_never_worsens() {
    let spec = desk();
    let d = dec();
    let cm = cost(&spec, &d);
    let cfg = small_cfg(4);
    let out = search(&GeneSpace::new(&spec, None), &cm, &cfg, 1, |g| Ok(metrics(scramble(g)))).unwrap();
    assert_eq!(out.history.len(), cfg.population * cfg.generations);
    assert!(out.history.iter().all(|c| c.params < out.bound));
    assert!(out.history.iter().all(|c| c.params == count_params(&c.genome, &spec).unwrap().params));
    let mut prev = f64::INFINITY;
    for gen in 0..cfg.generations {
        let best = out
            .history
            .iter()
            .filter(|c| c.generation == gen)
            .map(|c| c.fitness)
            .fold(f64::INFINITY, f64::min);
        assert!(best <= prev, "generation {gen}: {best} > {prev}");
        prev = best;
    }
    assert_eq!(out.best.fitness, prev);
}

#[test]
fn search_is_deterministic_and_caches_repeats() {
    let spec = desk();
    let d = dec();
    let cm = cost(&spec, &d);
    let cfg = small_cfg(11);
    let space = GeneSpace::new(&spec, None);
    let calls = std::sync::atomic::AtomicUsize::new(0);
    let a = search(&space, &cm, &cfg, 1, |g| {
        calls.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        Ok(metrics(scramble(g)))
    })
    .unwrap();
    let b = search(&space, &cm, &cfg, 3, |g| Ok(metrics(scramble(g)))).unwrap();
    assert_eq!(a.history, b.history);
    let distinct: std::collections::HashSet<_> = a.history.iter().map(|c| &c.genome).collect();
    assert_eq!(calls.into_inner(), distinct.len());
    let c = search(&space, &cm, &small_cfg(12), 1, |g| Ok(metrics(scramble(g)))).unwrap();
    assert_ne!(a.history, c.history);
}

#[test]
fn micro_space_search_matches_exhaustive_enumeration() {
    let spec = micro_spec();
    let all: Vec<ArchConfig> = enumerate(&spec).collect();
    assert!(all.len() <= 256 && all.len() > 50, "{}", all.len());
    let d = dec();
    let cm = cost(&spec, &d);
    let mut sizes: Vec<u64> = all.iter().map(|g| cm.params(g).unwrap()).collect();
    sizes.sort();
    let cfg = EvolutionConfig { seed: 5, param_bound: Some(sizes[sizes.len() / 2]), ..Default::default() };
    let bound = cfg.bound(&spec).unwrap();
    // fitness = params, so the answer is the smallest feasible genome
    let least = all.iter().map(|g| cm.params(g).unwrap()).min().unwrap();
    let oracle: Vec<&ArchConfig> = all.iter().filter(|g| cm.params(g).unwrap() == least).collect();
    assert!(least < bound);
    let out = search(&GeneSpace::new(&spec, None), &cm, &cfg, 1, |g| Ok(metrics(cm.params(g)? as f64))).unwrap();
    assert!(oracle.contains(&&out.best.genome), "{} not among {}", out.best.genome.to_json(), oracle.len());
    assert_eq!(out.best.params, least);

    // a size-unrelated fitness, so the optimum is not simply the min config
    let target = |g: &ArchConfig| scramble(g);
    let best = all
        .iter()
        .filter(|g| cm.params(g).unwrap() < bound)
        .map(target)
        .fold(f64::INFINITY, f64::min);
    let out = search(&GeneSpace::new(&spec, None), &cm, &cfg, 1, |g| Ok(metrics(target(g)))).unwrap();
    assert_eq!(out.best.fitness, best);
}

#[test]
fn impossible_bound_reports_min_params() {
    let spec = desk();
    let d = dec();
    let cm = cost(&spec, &d);
    let cfg = EvolutionConfig { param_bound: Some(10), ..small_cfg(0) };
    let err = search(&GeneSpace::new(&spec, None), &cm, &cfg, 1, |_| Ok(metrics(0.0))).err().unwrap();
    let min = count_params(&spec.min_config(), &spec).unwrap().params;
    match err {
        Error::Infeasible { bound, min_params } => assert_eq!((bound, min_params), (10, min)),
        e => panic!("unexpected {e}"),
    }
}

#[test]
fn fad_term_enters_fitness_only_with_teacher_loss() {
    let cfg = EvolutionConfig::default();
    let with = Evaluation { aepe: 2.0, f1_all: 0.0, l_d: Some(5.0) };
    assert_eq!(fitness(&cfg, &with), 2.5);
    assert_eq!(fitness(&cfg, &metrics(2.0)), 2.0);
    assert_eq!(fitness(&cfg, &metrics(f64::NAN)), f64::INFINITY);
}

#[test]
fn joint_search_carries_iterations_and_prices_them() {
    let spec = desk();
    let d = dec();
    let cm = cost(&spec, &d);
    let g = spec.max_config();
    let f1 = cm.flops(&g.clone().with_decoder_iterations(Some(1))).unwrap();
    let f4 = cm.flops(&g.clone().with_decoder_iterations(Some(4))).unwrap();
    let enc = count_flops(&g, &spec, 64, 64).unwrap().flops;
    assert_eq!(f1 - 2 * enc, decoder_flops(&d, spec.head_width() as usize, 64, 64, 1));
    assert!(f4 > f1);
    let cfg = EvolutionConfig { joint_iterations_search: true, iteration_choices: vec![1, 2, 4], ..small_cfg(2) };
    let out = search(&GeneSpace::from_config(&spec, &cfg), &cm, &cfg, 1, |g| {
        Ok(metrics(10.0 / g.decoder_iterations.unwrap() as f64))
    })
    .unwrap();
    assert!(out.history.iter().all(|c| c.genome.decoder_iterations.is_some()));
    assert_eq!(out.best.genome.decoder_iterations, Some(4));
}

#[test]
fn decoder_cost_counts_each_stage() {
    let d = dec();
    let (c, cells, win) = (16u64, 64u64, 81u64);
    let corr = cells * win * c;
    assert_eq!(decoder_flops(&d, 16, 64, 64, 1), 2 * corr);
    let refine = cells * (4 * c + win * 32 * 9 + 32 * 2 * 9);
    assert_eq!(decoder_flops(&d, 16, 64, 64, 3), 2 * (3 * corr + 2 * refine));
}

#[test]
fn small_fronts() {
    assert_eq!(pareto_front(&[(3.0, 4.0)], |p| *p), vec![(3.0, 4.0)]);
    assert_eq!(pareto_front(&[(2.0, 2.0), (1.0, 1.0)], |p| *p), vec![(1.0, 1.0)]);
    assert_eq!(
        pareto_front(&[(1.0, 3.0), (2.0, 1.0), (1.0, 3.0)], |p| *p),
        vec![(1.0, 3.0), (1.0, 3.0), (2.0, 1.0)]
    );
}

#[test]
fn candidate_front_uses_distinct_genomes() {
    let spec = desk();
    let d = dec();
    let cm = cost(&spec, &d);
    let out = search(&GeneSpace::new(&spec, None), &cm, &small_cfg(8), 1, |g| Ok(metrics(scramble(g)))).unwrap();
    let front = candidate_front(&out.history, ParetoAxis::Params);
    let distinct: std::collections::HashSet<_> = front.iter().map(|c| &c.genome).collect();
    assert_eq!(distinct.len(), front.len());
    assert!(front.windows(2).all(|w| w[0].params <= w[1].params && w[0].metrics.aepe > w[1].metrics.aepe));
    assert!(front.iter().any(|c| c.fitness == out.best.fitness));
}

#[test]
fn history_csv_round_trips() {
    let spec = desk();
    let d = dec();
    let cm = cost(&spec, &d);
    let out = search(&GeneSpace::new(&spec, None), &cm, &small_cfg(1), 1, |g| {
        Ok(Evaluation { aepe: scramble(g), f1_all: 12.5, l_d: Some(0.25) })
    })
    .unwrap();
    let mut buf = Vec::new();
    write_search_history(&mut buf, &out.history).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("generation,index,genome_json,params,flops,aepe,f1_all,l_d,fitness\n"));
    assert_eq!(read_search_history(&buf[..], "s.csv").unwrap(), out.history);
    let broken = text.replacen(",12.5,", ",oops,", 2);
    let err = read_search_history(broken.as_bytes(), "s.csv").unwrap_err().to_string();
    assert!(err.starts_with("s.csv:2:"), "{err}");

    let mut buf = Vec::new();
    write_pareto(&mut buf, &[(1.0, 2.5, spec.min_config())]).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("x,y,genome_json\n1,2.5,"), "{text}");
}
