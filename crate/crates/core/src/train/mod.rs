//! Training loops for the teacher, the weight-sharing encoder (with or
//! without feature distillation) and single fixed genomes, plus evaluation.

mod eval;
mod history;

pub use eval::{evaluate, predict, Evaluation, TeacherFeatures, EVAL_CHUNK};
pub use history::{read_history, write_history, HistoryRow, HISTORY_HEADER};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, AdamConfig, ParamStore, Tape, Tensor, Var};
use crate::distill::{align_shapes, distill_loss, total_loss, DistillConfig};
use crate::error::{Error, Result};
use crate::flow_task::{decode_flow, decoder_shapes, flow_loss, rough_decode, DecoderConfig, FramePair, DECODER_PREFIX};
use crate::search_space::{ArchConfig, SearchSpaceSpec};
use crate::supernet::{
    build_standalone, init_params, resolved_widths, supernet_shapes, Binding, FeaturePyramid, SubNetView,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Teacher,
    #[default]
    VanillaSupernet,
    FadSupernet,
    Standalone,
    StandaloneFad,
}

impl TrainMode {
    pub fn name(self) -> &'static str {
        match self {
            TrainMode::Teacher => "teacher",
            TrainMode::VanillaSupernet => "vanilla_supernet",
            TrainMode::FadSupernet => "fad_supernet",
            TrainMode::Standalone => "standalone",
            TrainMode::StandaloneFad => "standalone_fad",
        }
    }

    pub fn uses_teacher(self) -> bool {
        matches!(self, TrainMode::FadSupernet | TrainMode::StandaloneFad)
    }

    pub fn samples_genomes(self) -> bool {
        matches!(self, TrainMode::VanillaSupernet | TrainMode::FadSupernet)
    }
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        use TrainMode::*;
        [Teacher, VanillaSupernet, FadSupernet, Standalone, StandaloneFad]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown training mode {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub clip_norm: Option<f64>,
    /// Fraction of steps spent ramping the learning rate up linearly.
    pub warmup_frac: f64,
    pub seed: u64,
    /// Validation metrics are filled in on every step divisible by this.
    pub eval_interval: u64,
    /// Decay of the per-estimate flow loss weights.
    pub gamma_flow: f64,
    /// Weight of an extra flow loss on the parameter-free estimates of the
    /// two finer pyramid levels.
    pub rough_loss_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::VanillaSupernet,
            steps: 3000,
            batch_size: 4,
            lr: 3e-3,
            weight_decay: 1e-5,
            clip_norm: Some(1.0),
            warmup_frac: 0.05,
            seed: 0,
            eval_interval: 500,
            gamma_flow: 0.8,
            rough_loss_weight: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Usage(m));
        if self.steps == 0 {
            return bad("training needs at least one step".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.lr));
        }
        if !(0.0..1.0).contains(&self.warmup_frac) {
            return bad(format!("warmup fraction {} must lie in [0, 1)", self.warmup_frac));
        }
        if self.eval_interval == 0 {
            return bad("eval interval must be positive".into());
        }
        Ok(())
    }

    fn warmup_steps(&self) -> u64 {
        (self.warmup_frac * self.steps as f64).ceil() as u64
    }

    /// Learning rate used by update `step` (0-based).
    pub fn lr_at(&self, step: u64) -> f64 {
        let w = self.warmup_steps();
        if step < w {
            self.lr * (step + 1) as f64 / w as f64
        } else {
            self.lr
        }
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            clip_norm: self.clip_norm,
            ..AdamConfig::default()
        }
    }
}

pub(crate) fn mix(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// RNG for one training step; batches and sampled genomes depend only on
/// the seed and the step index.
pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

/// Encoder (weight-sharing or exact-size), decoder and alignment
/// parameters in one store.
#[derive(Clone, Debug)]
pub struct FlowModel {
    pub spec: SearchSpaceSpec,
    pub decoder: DecoderConfig,
    pub params: ParamStore<f32>,
}

impl FlowModel {
    /// Weight-sharing encoder plus a fresh decoder.
    pub fn supernet(spec: &SearchSpaceSpec, decoder: &DecoderConfig, seed: u64) -> Result<Self> {
        spec.check()?;
        let mut params = init_params(&supernet_shapes(spec), mix(seed, 1));
        params.merge(init_params(&decoder_shapes(decoder), mix(seed, 2)));
        Ok(Self {
            spec: spec.clone(),
            decoder: decoder.clone(),
            params,
        })
    }

    /// Exact-size encoder for one genome plus a fresh decoder.
    pub fn standalone(spec: &SearchSpaceSpec, config: &ArchConfig, decoder: &DecoderConfig, seed: u64) -> Result<Self> {
        let mut params = build_standalone(spec, config, mix(seed, 1))?;
        params.merge(init_params(&decoder_shapes(decoder), mix(seed, 2)));
        Ok(Self {
            spec: spec.clone(),
            decoder: decoder.clone(),
            params,
        })
    }

    pub fn view(&self, config: &ArchConfig) -> Result<SubNetView<'_, f32>> {
        SubNetView::over(&self.spec, &self.params, config)
    }

    /// Decoder iterations used when evaluating `config`.
    pub fn iterations_for(&self, config: &ArchConfig) -> usize {
        config.decoder_iterations.map_or(self.decoder.iterations, |k| k as usize)
    }

    pub fn encoder_params(&self) -> usize {
        self.params.num_elements_with_prefix(crate::supernet::ENCODER_PREFIX)
    }

    pub fn decoder_params(&self) -> usize {
        self.params.num_elements_with_prefix(DECODER_PREFIX)
    }

    /// Rebuilds a model from checkpoint entries; optimizer and trainer
    /// entries are skipped.
    pub fn from_entries(spec: &SearchSpaceSpec, decoder: &DecoderConfig, entries: &[(String, Tensor<f32>)]) -> Self {
        let mut params = ParamStore::new();
        for (name, t) in entries {
            if !name.starts_with("adam.") && !name.starts_with("train.") {
                params.insert(name.clone(), t.clone());
            }
        }
        Self {
            spec: spec.clone(),
            decoder: decoder.clone(),
            params,
        }
    }

    pub fn entries(&self) -> Vec<(String, Tensor<f32>)> {
        self.params.iter().map(|(k, p)| (k.to_string(), p.value.clone())).collect()
    }
}

/// A trained fixed-genome model whose encoder supervises students.
#[derive(Clone, Debug)]
pub struct TeacherModel {
    pub config: ArchConfig,
    pub model: FlowModel,
}

impl TeacherModel {
    /// Channels of the teacher's three pyramid levels.
    pub fn level_channels(&self) -> [usize; 3] {
        let spec = &self.model.spec;
        let widths = resolved_widths(spec, &self.config);
        let taps = spec.pyramid_taps();
        [widths[taps[0]], widths[taps[1]], spec.head_width() as usize]
    }
}

/// Largest channel count a student can emit at each pyramid level.
pub fn student_level_channels(spec: &SearchSpaceSpec) -> [usize; 3] {
    let taps = spec.pyramid_taps();
    let max = |i: usize| *spec.scaled_widths(i).iter().max().expect("non-empty widths") as usize;
    [max(taps[0]), max(taps[1]), spec.head_width() as usize]
}

/// Stacks `[C, H, W]` frames into `[N, C, H, W]`.
pub fn stack<'a>(frames: impl IntoIterator<Item = &'a Tensor<f32>>) -> Tensor<f32> {
    let mut data = Vec::new();
    let mut shape = None;
    let mut n = 0;
    for f in frames {
        shape.get_or_insert_with(|| f.shape().to_vec());
        data.extend_from_slice(f.data());
        n += 1;
    }
    let mut s = vec![n];
    s.extend(shape.unwrap_or_default());
    Tensor::new(s, data)
}

/// Encodes both frames of a batch in one pass and splits the pyramid.
pub(crate) fn encode_pair(
    tape: &mut Tape<f32>,
    view: &SubNetView<'_, f32>,
    pairs: &[&FramePair],
    binding: Binding,
) -> Result<(FeaturePyramid, FeaturePyramid)> {
    let n = pairs.len();
    let images = stack(pairs.iter().map(|p| &p.frame1).chain(pairs.iter().map(|p| &p.frame2)));
    let x = tape.constant(images);
    let pyr = view.forward(tape, x, binding)?;
    Ok(split_pyramid(tape, &pyr, n))
}

pub(crate) fn split_pyramid(tape: &mut Tape<f32>, pyr: &FeaturePyramid, n: usize) -> (FeaturePyramid, FeaturePyramid) {
    let a = pyr.levels.map(|l| tape.narrow(l, 0, 0, n));
    let b = pyr.levels.map(|l| tape.narrow(l, 0, n, n));
    (FeaturePyramid { levels: a }, FeaturePyramid { levels: b })
}

pub(crate) fn gt_planes(pairs: &[&FramePair]) -> Tensor<f32> {
    let planes: Vec<Tensor<f32>> = pairs.iter().map(|p| p.gt.to_planes()).collect();
    stack(&planes)
}

/// Losses of one training step, measured before its update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLosses {
    pub l_flow: f64,
    pub l_d: Option<f64>,
}

/// Owns a model and its optimizer state through a training run.
pub struct Trainer<'t> {
    pub cfg: TrainConfig,
    pub distill: Option<DistillConfig>,
    teacher: Option<&'t TeacherModel>,
    /// Genome for the fixed-architecture modes.
    pub fixed: Option<ArchConfig>,
    pub model: FlowModel,
    adam: Adam<f32>,
    pub step: u64,
    pub history: Vec<HistoryRow>,
}

impl<'t> Trainer<'t> {
    /// Builds fresh weights for `cfg.mode`. `fixed` names the genome for the
    /// teacher and standalone modes (the teacher defaults to the max config).
    pub fn new(
        spec: &SearchSpaceSpec,
        decoder: &DecoderConfig,
        cfg: &TrainConfig,
        fixed: Option<&ArchConfig>,
        teacher: Option<&'t TeacherModel>,
        distill: Option<&DistillConfig>,
    ) -> Result<Self> {
        cfg.check()?;
        let mode = cfg.mode;
        if mode.uses_teacher() != teacher.is_some() {
            return Err(Error::Usage(format!(
                "mode {} {} a teacher",
                mode.name(),
                if mode.uses_teacher() { "requires" } else { "does not take" }
            )));
        }
        let fixed = match mode {
            TrainMode::Teacher => Some(fixed.cloned().unwrap_or_else(|| spec.max_config())),
            TrainMode::Standalone | TrainMode::StandaloneFad => Some(
                fixed
                    .cloned()
                    .ok_or_else(|| Error::Usage(format!("mode {} needs a genome", mode.name())))?,
            ),
            _ => None,
        };
        let mut model = match &fixed {
            Some(g) => FlowModel::standalone(spec, g, decoder, cfg.seed)?,
            None => FlowModel::supernet(spec, decoder, cfg.seed)?,
        };
        let distill = if mode.uses_teacher() {
            let d = distill.cloned().unwrap_or_default();
            d.check()?;
            let t = teacher.expect("checked above");
            if t.model.spec.blocks.len() != spec.blocks.len() {
                return Err(Error::Usage("teacher and student search spaces differ in depth".into()));
            }
            let student = match &fixed {
                Some(g) => {
                    let w = resolved_widths(spec, g);
                    let taps = spec.pyramid_taps();
                    [w[taps[0]], w[taps[1]], spec.head_width() as usize]
                }
                None => student_level_channels(spec),
            };
            let shapes = align_shapes(d.kind, &student, &t.level_channels());
            model.params.merge(init_params(&shapes, mix(cfg.seed, 3)));
            Some(d)
        } else {
            None
        };
        Ok(Self {
            cfg: cfg.clone(),
            distill,
            teacher,
            fixed,
            adam: Adam::new(cfg.adam()),
            model,
            step: 0,
            history: Vec::new(),
        })
    }

    pub fn done(&self) -> bool {
        self.step >= self.cfg.steps
    }

    /// Batch indices and genome for `step`.
    pub fn plan_step(&self, step: u64, train_len: usize) -> (Vec<usize>, ArchConfig) {
        let mut rng = step_rng(self.cfg.seed, step);
        let idx: Vec<usize> = (0..self.cfg.batch_size).map(|_| rng.gen_range(0..train_len)).collect();
        let genome = match &self.fixed {
            Some(g) => g.clone(),
            None => self.model.spec.sample_with(&mut rng),
        };
        (idx, genome)
    }

    /// Forward pass and losses of one batch without touching the weights.
    /// Returns the tape and the loss node to differentiate.
    fn losses(&self, batch: &[&FramePair], genome: &ArchConfig, binding: Binding) -> Result<(Tape<f32>, Var, StepLosses)> {
        let mut tape = Tape::new();
        let view = self.model.view(genome)?;
        let (p1, p2) = encode_pair(&mut tape, &view, batch, binding)?;
        let preds = decode_flow(
            &mut tape,
            &p1,
            &p2,
            &self.model.params,
            &self.model.decoder,
            self.model.decoder.iterations,
            binding,
        )?;
        let gt = tape.constant(gt_planes(batch));
        let mut l_flow = flow_loss(&mut tape, &preds, gt, self.cfg.gamma_flow)?;
        if self.cfg.rough_loss_weight > 0.0 {
            for mask in [[true, false, false], [false, true, false]] {
                let r = rough_decode(&mut tape, &p1, &p2, &self.model.decoder, mask)?;
                let l = tape.l1_loss(r, gt);
                let l = tape.scale(l, self.cfg.rough_loss_weight as f32);
                l_flow = tape.add(l_flow, l);
            }
        }
        let mut losses = StepLosses {
            l_flow: tape.value(l_flow).item() as f64,
            l_d: None,
        };
        let root = match (self.teacher, &self.distill) {
            (Some(t), Some(d)) => {
                let tview = t.model.view(&t.config)?;
                let (t1, t2) = encode_pair(&mut tape, &tview, batch, Binding::Frozen)?;
                let params = &self.model.params;
                let a = distill_loss(&mut tape, &t1.levels, &p1.levels, d, params, binding)?;
                let b = distill_loss(&mut tape, &t2.levels, &p2.levels, d, params, binding)?;
                let sum = tape.add(a, b);
                let l_d = tape.scale(sum, 0.5);
                losses.l_d = Some(tape.value(l_d).item() as f64);
                total_loss(&mut tape, l_flow, l_d, d.lambda)
            }
            _ => l_flow,
        };
        Ok((tape, root, losses))
    }

    /// Loss of the current weights on a batch, as the next step would see it.
    pub fn probe(&self, batch: &[&FramePair], genome: &ArchConfig) -> Result<StepLosses> {
        Ok(self.losses(batch, genome, Binding::Frozen)?.2)
    }

    /// Runs one update. Validation metrics are attached when the step index
    /// is a multiple of the eval interval.
    pub fn step_once(&mut self, train: &[FramePair], val: &[FramePair]) -> Result<&HistoryRow> {
        if train.is_empty() {
            return Err(Error::Usage("empty training split".into()));
        }
        let step = self.step;
        let (idx, genome) = self.plan_step(step, train.len());
        let batch: Vec<&FramePair> = idx.iter().map(|&i| &train[i]).collect();
        let diverged = |what: String| Error::Divergence(format!("{what} at step {step} for genome {}", genome.to_json()));
        let metrics = if step % self.cfg.eval_interval == 0 && !val.is_empty() {
            Some(evaluate(&self.model, &genome, val, None, None)?)
        } else {
            None
        };
        let (tape, root, losses) = self.losses(&batch, &genome, Binding::Trainable)?;
        let total = tape.value(root).item();
        if !total.is_finite() {
            return Err(diverged(format!("loss is {total}")));
        }
        tape.backward(root).accumulate_into(&mut self.model.params);
        drop(tape);
        self.adam
            .step(&mut self.model.params, self.cfg.lr_at(step))
            .map_err(|e| diverged(e.to_string()))?;
        self.step += 1;
        self.history.push(HistoryRow {
            step,
            mode: self.cfg.mode,
            genome,
            aepe: metrics.as_ref().map(|m| m.aepe),
            f1_all: metrics.as_ref().map(|m| m.f1_all),
            l_flow: losses.l_flow,
            l_d: losses.l_d,
        });
        Ok(self.history.last().expect("just pushed"))
    }

    /// Steps until `cfg.steps` updates are done.
    pub fn run(&mut self, train: &[FramePair], val: &[FramePair]) -> Result<()> {
        while !self.done() {
            self.step_once(train, val)?;
        }
        Ok(())
    }

    /// Everything needed to continue the run: weights, optimizer moments
    /// and the step counter.
    pub fn checkpoint_entries(&self) -> Vec<(String, Tensor<f32>)> {
        let mut out = self.model.entries();
        out.extend(self.adam.state_tensors());
        out.push(("train.step".into(), Tensor::scalar(self.step as f32)));
        out
    }

    /// Restores state written by [`Trainer::checkpoint_entries`] into a
    /// trainer built with the same configuration.
    pub fn restore(&mut self, entries: &[(String, Tensor<f32>)]) -> Result<()> {
        let mut step = None;
        let mut seen = 0;
        for (name, t) in entries {
            if name == "train.step" {
                step = Some(t.item() as u64);
            } else if name.starts_with("adam.") {
                continue;
            } else if self.model.params.contains(name) && self.model.params.get(name).shape() == t.shape() {
                *self.model.params.get_mut(name) = t.clone();
                seen += 1;
            } else {
                return Err(Error::Shape(format!("checkpoint entry {name} {:?} does not fit this model", t.shape())));
            }
        }
        if seen != self.model.params.len() {
            return Err(Error::Shape(format!(
                "checkpoint holds {seen} of the model's {} parameters",
                self.model.params.len()
            )));
        }
        let step = step.ok_or_else(|| Error::Shape("checkpoint lacks the trainer step".into()))?;
        if step > self.cfg.steps {
            return Err(Error::Usage(format!("checkpoint is at step {step}, past the configured {}", self.cfg.steps)));
        }
        self.adam = Adam::from_state(self.cfg.adam(), entries.iter().map(|(k, t)| (k.as_str(), t)));
        self.step = step;
        Ok(())
    }

    pub fn flow_model(&self) -> FlowModel {
        self.model.clone()
    }
}

/// Result of a complete training run.
pub struct TrainOutcome {
    pub model: FlowModel,
    pub history: Vec<HistoryRow>,
    /// Validation metrics of the final weights (fixed genome or max config).
    pub final_metrics: Option<Evaluation>,
}

/// Ends a run: validation metrics of the final weights on the fixed genome,
/// or the max config for the super-network modes.
pub fn finish(trainer: Trainer<'_>, val: &[FramePair]) -> Result<TrainOutcome> {
    let genome = trainer.fixed.clone().unwrap_or_else(|| trainer.model.spec.max_config());
    let model = trainer.flow_model();
    let final_metrics = if val.is_empty() {
        None
    } else {
        Some(evaluate(&model, &genome, val, None, None)?)
    };
    Ok(TrainOutcome {
        model,
        history: trainer.history,
        final_metrics,
    })
}

/// Trains a fixed-architecture teacher (default: max config) on the flow
/// loss alone.
pub fn train_teacher(
    spec: &SearchSpaceSpec,
    decoder: &DecoderConfig,
    train: &[FramePair],
    val: &[FramePair],
    cfg: &TrainConfig,
    config: Option<&ArchConfig>,
) -> Result<(TeacherModel, TrainOutcome)> {
    let cfg = TrainConfig {
        mode: TrainMode::Teacher,
        ..cfg.clone()
    };
    let mut t = Trainer::new(spec, decoder, &cfg, config, None, None)?;
    t.run(train, val)?;
    let config = t.fixed.clone().expect("teacher genome");
    let outcome = finish(t, val)?;
    let teacher = TeacherModel {
        config,
        model: outcome.model.clone(),
    };
    Ok((teacher, outcome))
}

/// Single-path training of the weight-sharing encoder; distills from
/// `teacher` when one is given.
pub fn train_supernet(
    spec: &SearchSpaceSpec,
    decoder: &DecoderConfig,
    train: &[FramePair],
    val: &[FramePair],
    cfg: &TrainConfig,
    teacher: Option<&TeacherModel>,
    distill: Option<&DistillConfig>,
) -> Result<TrainOutcome> {
    let mode = if teacher.is_some() {
        TrainMode::FadSupernet
    } else {
        TrainMode::VanillaSupernet
    };
    let cfg = TrainConfig { mode, ..cfg.clone() };
    let mut t = Trainer::new(spec, decoder, &cfg, None, teacher, distill)?;
    t.run(train, val)?;
    finish(t, val)
}

/// Fresh exact-size weights for one genome, optionally distilled.
pub fn train_standalone(
    spec: &SearchSpaceSpec,
    decoder: &DecoderConfig,
    config: &ArchConfig,
    train: &[FramePair],
    val: &[FramePair],
    cfg: &TrainConfig,
    teacher: Option<&TeacherModel>,
    distill: Option<&DistillConfig>,
) -> Result<TrainOutcome> {
    let mode = if teacher.is_some() {
        TrainMode::StandaloneFad
    } else {
        TrainMode::Standalone
    };
    let cfg = TrainConfig { mode, ..cfg.clone() };
    let mut t = Trainer::new(spec, decoder, &cfg, Some(config), teacher, distill)?;
    t.run(train, val)?;
    finish(t, val)
}
