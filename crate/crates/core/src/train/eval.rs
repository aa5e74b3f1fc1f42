use serde::{Deserialize, Serialize};

use super::{encode_pair, FlowModel, TeacherModel};
use crate::autodiff::{Tape, Tensor};
use crate::distill::{distill_loss, DistillConfig};
use crate::error::{Error, Result};
use crate::flow_task::{aepe, decode_flow, f1_all, FlowField, FramePair, OutlierRule};
use crate::search_space::ArchConfig;
use crate::supernet::{Binding, FeaturePyramid};

/// Pairs per forward pass during evaluation.
pub const EVAL_CHUNK: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub aepe: f64,
    pub f1_all: f64,
    /// Distillation loss against a teacher, when one was supplied.
    pub l_d: Option<f64>,
}

/// Teacher pyramids of an evaluation split, computed once and reused for
/// every candidate.
pub struct TeacherFeatures {
    /// Per chunk, the levels of frame 1 then frame 2.
    chunks: Vec<([Tensor<f32>; 3], [Tensor<f32>; 3])>,
    pairs: usize,
}

impl TeacherFeatures {
    pub fn compute(teacher: &TeacherModel, pairs: &[FramePair]) -> Result<Self> {
        let view = teacher.model.view(&teacher.config)?;
        let mut chunks = Vec::new();
        for chunk in pairs.chunks(EVAL_CHUNK) {
            let refs: Vec<&FramePair> = chunk.iter().collect();
            let mut tape = Tape::new();
            let (a, b) = encode_pair(&mut tape, &view, &refs, Binding::Frozen)?;
            let grab = |p: FeaturePyramid| p.levels.map(|l| tape.value(l).clone());
            chunks.push((grab(a), grab(b)));
        }
        Ok(Self {
            chunks,
            pairs: pairs.len(),
        })
    }
}

fn run_chunks(
    model: &FlowModel,
    genome: &ArchConfig,
    pairs: &[FramePair],
    iterations: usize,
    teacher: Option<(&TeacherFeatures, &DistillConfig)>,
    mut sink: impl FnMut(&[FramePair], &Tensor<f32>),
) -> Result<Option<f64>> {
    if let Some((t, _)) = teacher {
        if t.pairs != pairs.len() {
            return Err(Error::Usage(format!(
                "teacher features cover {} pairs, split has {}",
                t.pairs,
                pairs.len()
            )));
        }
    }
    let view = model.view(genome)?;
    let mut l_d = 0.0;
    for (c, chunk) in pairs.chunks(EVAL_CHUNK).enumerate() {
        let refs: Vec<&FramePair> = chunk.iter().collect();
        let mut tape = Tape::new();
        let (p1, p2) = encode_pair(&mut tape, &view, &refs, Binding::Frozen)?;
        let preds = decode_flow(&mut tape, &p1, &p2, &model.params, &model.decoder, iterations, Binding::Frozen)?;
        sink(chunk, tape.value(*preds.last().expect("at least one estimate")));
        if let Some((t, d)) = teacher {
            let (a, b) = &t.chunks[c];
            let t1 = a.clone().map(|x| tape.constant(x));
            let t2 = b.clone().map(|x| tape.constant(x));
            let la = distill_loss(&mut tape, &t1, &p1.levels, d, &model.params, Binding::Frozen)?;
            let lb = distill_loss(&mut tape, &t2, &p2.levels, d, &model.params, Binding::Frozen)?;
            let v = 0.5 * (tape.value(la).item() as f64 + tape.value(lb).item() as f64);
            l_d += v * chunk.len() as f64;
        }
    }
    Ok(teacher.map(|_| l_d / pairs.len() as f64))
}

/// Final flow estimate for every pair.
pub fn predict(model: &FlowModel, genome: &ArchConfig, pairs: &[FramePair], iterations: Option<usize>) -> Result<Vec<FlowField>> {
    let k = iterations.unwrap_or_else(|| model.iterations_for(genome));
    let mut out = Vec::with_capacity(pairs.len());
    run_chunks(model, genome, pairs, k, None, |chunk, flow| {
        out.extend((0..chunk.len()).map(|i| FlowField::from_planes(flow, i)));
    })?;
    Ok(out)
}

/// Mean end-point error and outlier percentage over all pixels of `pairs`,
/// with the distillation loss when teacher features are given. Reads the
/// weights only.
pub fn evaluate(
    model: &FlowModel,
    genome: &ArchConfig,
    pairs: &[FramePair],
    iterations: Option<usize>,
    teacher: Option<(&TeacherFeatures, &DistillConfig)>,
) -> Result<Evaluation> {
    if pairs.is_empty() {
        return Err(Error::Usage("evaluation split is empty".into()));
    }
    let k = iterations.unwrap_or_else(|| model.iterations_for(genome));
    let (mut e_sum, mut f_sum) = (0.0, 0.0);
    let mut failure = None;
    let l_d = run_chunks(model, genome, pairs, k, teacher, |chunk, flow| {
        for (i, p) in chunk.iter().enumerate() {
            let pred = FlowField::from_planes(flow, i);
            let r = aepe(&pred, &p.gt, &p.gt.valid)
                .and_then(|e| Ok((e, f1_all(&pred, &p.gt, &p.gt.valid, OutlierRule::And)?)));
            match r {
                Ok((e, f)) => {
                    e_sum += e;
                    f_sum += f;
                }
                Err(e) => failure = Some(e),
            }
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    let n = pairs.len() as f64;
    Ok(Evaluation {
        aepe: e_sum / n,
        f1_all: f_sum / n,
        l_d,
    })
}
