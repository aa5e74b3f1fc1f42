use flownas::distill::DistillConfig;
use flownas::evolve::{search_supernet, EvolutionConfig};
use flownas::flow_task::{gen_dataset, DecoderConfig, FramePair, MotionConfig};
use flownas::search_space::SearchSpaceSpec;
use flownas::supernet::{decode_checkpoint, encode_checkpoint};
use flownas::train::{train_supernet, train_teacher, FlowModel, TeacherFeatures, TrainConfig};

fn tiny() -> (SearchSpaceSpec, DecoderConfig, Vec<FramePair>, Vec<FramePair>, TrainConfig) {
    let m = MotionConfig::with_max_disp(4.0);
    let cfg = TrainConfig {
        steps: 5,
        batch_size: 2,
        eval_interval: 5,
        ..TrainConfig::default()
    };
    let dec = DecoderConfig {
        iterations: 2,
        ..DecoderConfig::default()
    };
    (
        SearchSpaceSpec::desk(),
        dec,
        gen_dataset(1, 4, 32, 32, &m).unwrap(),
        gen_dataset(2, 3, 32, 32, &m).unwrap(),
        cfg,
    )
}

fn weights(m: &FlowModel) -> Vec<u8> {
    let e = m.entries();
    encode_checkpoint(e.iter().map(|(k, v)| (k.as_str(), v)))
}

#[test]
fn distilled_pipeline_is_reproducible_end_to_end() {
    let (spec, dec, train, val, cfg) = tiny();
    let run = || {
        let (teacher, _) = train_teacher(&spec, &dec, &train, &val, &cfg, None).unwrap();
        let d = DistillConfig::default();
        let sup = train_supernet(&spec, &dec, &train, &val, &cfg, Some(&teacher), Some(&d)).unwrap();
        let feats = TeacherFeatures::compute(&teacher, &val).unwrap();
        let evo = EvolutionConfig {
            population: 4,
            survivors: 2,
            offspring: 2,
            generations: 2,
            ..EvolutionConfig::default()
        };
        let found = search_supernet(&spec, &sup.model, &val, &evo, Some((&feats, &d)), 1).unwrap();
        (weights(&sup.model), found)
    };
    let (w1, s1) = run();
    let (w2, s2) = run();
    assert_eq!(w1, w2);
    assert_eq!(s1.best.genome, s2.best.genome);
    assert_eq!(s1.history.len(), 8);
    assert!(s1.history.iter().all(|c| c.params < s1.bound && c.metrics.l_d.is_some()));
    let best = s1.history.iter().map(|c| c.fitness).fold(f64::INFINITY, f64::min);
    assert_eq!(s1.best.fitness, best);
}

#[test]
fn checkpoint_bytes_survive_a_decode_encode_cycle() {
    let (spec, dec, ..) = tiny();
    let m = FlowModel::supernet(&spec, &dec, 9).unwrap();
    let bytes = weights(&m);
    let back = decode_checkpoint(&bytes, "mem").unwrap();
    assert_eq!(back.len(), m.entries().len());
    assert_eq!(encode_checkpoint(back.iter().map(|(k, v)| (k.as_str(), v))), bytes);
    let mut cut = bytes.clone();
    cut.truncate(bytes.len() - 1);
    assert!(decode_checkpoint(&cut, "mem").unwrap_err().to_string().contains("mem"));
}
