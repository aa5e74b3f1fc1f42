//! Feature alignment distillation: map student and teacher features of
//! different widths into a common space and penalize their distance level
//! by level, deeper levels weighted more.

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::supernet::{Binding, Init};

/// Prefix shared by every alignment parameter name.
pub const ALIGN_PREFIX: &str = "align.";

/// Channels of the shared attention reduction.
pub const ATTENTION_CHANNELS: usize = 4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AlignmentKind {
    /// Learned 1x1 map of student features to the teacher's width; teacher
    /// features pass through.
    #[serde(rename = "projection")]
    Projection,
    /// Shared 1x1 reduction to four maps, each softmax-normalized over space.
    #[serde(rename = "attention")]
    SpatialAttention,
    /// Per-pixel maximum absolute activation over channels.
    #[default]
    #[serde(rename = "max")]
    ChannelMax,
    /// Per-pixel mean absolute activation over channels.
    #[serde(rename = "avg")]
    ChannelAvg,
}

impl AlignmentKind {
    pub const ALL: [AlignmentKind; 4] = [
        AlignmentKind::ChannelMax,
        AlignmentKind::ChannelAvg,
        AlignmentKind::Projection,
        AlignmentKind::SpatialAttention,
    ];

    pub fn flag(self) -> &'static str {
        match self {
            AlignmentKind::Projection => "projection",
            AlignmentKind::SpatialAttention => "attention",
            AlignmentKind::ChannelMax => "max",
            AlignmentKind::ChannelAvg => "avg",
        }
    }
}

impl std::str::FromStr for AlignmentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.flag() == s)
            .ok_or_else(|| Error::Usage(format!("unknown alignment {s:?}, expected projection, attention, max or avg")))
    }
}

impl std::fmt::Display for AlignmentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.flag())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    /// Level weight base: level i of N gets gamma^(N-i).
    pub gamma: f64,
    /// Weight of the distillation term in the total loss.
    pub lambda: f64,
    pub kind: AlignmentKind,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            gamma: 0.8,
            lambda: 1.0,
            kind: AlignmentKind::ChannelMax,
        }
    }
}

impl DistillConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Usage(format!("distillation gamma {} must lie in (0, 1]", self.gamma)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Usage(format!("distillation lambda {} must be non-negative", self.lambda)));
        }
        Ok(())
    }
}

/// Which network a feature map comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Teacher,
    Student,
}

fn weight_name(kind: AlignmentKind, level: usize) -> String {
    let tag = match kind {
        AlignmentKind::Projection => "proj",
        _ => "attn",
    };
    format!("{ALIGN_PREFIX}{tag}{level}.w")
}

/// Alignment parameters for pyramids whose student levels hold at most
/// `student_max[i]` channels and whose teacher levels hold `teacher[i]`.
pub fn align_shapes(kind: AlignmentKind, student_max: &[usize], teacher: &[usize]) -> Vec<(String, Vec<usize>, Init)> {
    match kind {
        AlignmentKind::ChannelMax | AlignmentKind::ChannelAvg => Vec::new(),
        AlignmentKind::Projection => (0..teacher.len())
            .map(|l| (weight_name(kind, l), vec![teacher[l], student_max[l], 1, 1], Init::HeUniform))
            .collect(),
        AlignmentKind::SpatialAttention => (0..teacher.len())
            .map(|l| {
                let c = student_max[l].max(teacher[l]);
                (weight_name(kind, l), vec![ATTENTION_CHANNELS, c, 1, 1], Init::HeUniform)
            })
            .collect(),
    }
}

fn bind_prefix<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    name: &str,
    channels: usize,
    binding: Binding,
) -> Result<Var> {
    if !store.contains(name) {
        return Err(Error::Shape(format!("alignment parameter {name} is missing")));
    }
    let s = store.get(name).shape();
    if channels > s[1] {
        return Err(Error::Shape(format!(
            "alignment {name} accepts at most {} channels, got {channels}",
            s[1]
        )));
    }
    let ranges = [0..s[0], 0..channels, 0..1, 0..1];
    Ok(match binding {
        Binding::Trainable => tape.param_slice(store, name, &ranges),
        Binding::Frozen => tape.frozen_slice(store, name, &ranges),
    })
}

/// Maps one pyramid level into the common space.
pub fn align<T: Scalar>(
    tape: &mut Tape<T>,
    kind: AlignmentKind,
    f: Var,
    side: Side,
    level: usize,
    params: &ParamStore<T>,
    binding: Binding,
) -> Result<Var> {
    let shape = tape.shape(f).to_vec();
    if shape.len() != 4 {
        return Err(Error::Shape(format!("feature map {shape:?} must be [N, C, H, W]")));
    }
    let c = shape[1];
    match kind {
        AlignmentKind::ChannelMax => {
            let a = tape.abs(f);
            Ok(tape.reduce_max(a, 1))
        }
        AlignmentKind::ChannelAvg => {
            let a = tape.abs(f);
            Ok(tape.reduce_mean(a, 1))
        }
        AlignmentKind::Projection => {
            let name = weight_name(kind, level);
            let t_ch = params
                .contains(&name)
                .then(|| params.get(&name).shape()[0])
                .ok_or_else(|| Error::Shape(format!("alignment parameter {name} is missing")))?;
            match side {
                Side::Teacher if c != t_ch => Err(Error::Shape(format!(
                    "level {level}: teacher has {c} channels, projection expects {t_ch}"
                ))),
                Side::Teacher => Ok(f),
                Side::Student => {
                    let w = bind_prefix(tape, params, &name, c, binding).map_err(|e| match e {
                        Error::Shape(m) => Error::Shape(format!("level {level}: {m}")),
                        e => e,
                    })?;
                    Ok(tape.conv2d(f, w, 1, 1, 0))
                }
            }
        }
        AlignmentKind::SpatialAttention => {
            let w = bind_prefix(tape, params, &weight_name(kind, level), c, binding)?;
            let (n, h, wd) = (shape[0], shape[2], shape[3]);
            let a = tape.conv2d(f, w, 1, 1, 0);
            let flat = tape.reshape(a, &[n, ATTENTION_CHANNELS, h * wd]);
            let p = tape.softmax(flat, 2);
            let p = tape.scale(p, T::lit((h * wd) as f64));
            Ok(tape.reshape(p, &[n, ATTENTION_CHANNELS, h, wd]))
        }
    }
}

/// `gamma^(N-i)` for levels `i = 1..=N`.
pub fn level_weights(n: usize, gamma: f64) -> Vec<f64> {
    (1..=n).map(|i| gamma.powi((n - i) as i32)).collect()
}

/// Weighted sum of per-level losses.
pub fn combine_levels<T: Scalar>(tape: &mut Tape<T>, losses: &[Var], gamma: f64) -> Var {
    let weights = level_weights(losses.len(), gamma);
    let mut total: Option<Var> = None;
    for (&l, w) in losses.iter().zip(weights) {
        let term = if w == 1.0 { l } else { tape.scale(l, T::lit(w)) };
        total = Some(match total {
            Some(t) => tape.add(t, term),
            None => term,
        });
    }
    total.expect("at least one level")
}

/// `sum_i gamma^(N-i) * mse(g(teacher_i), g(student_i))`. Teacher features
/// are detached before alignment.
pub fn distill_loss<T: Scalar>(
    tape: &mut Tape<T>,
    teacher: &[Var],
    student: &[Var],
    cfg: &DistillConfig,
    params: &ParamStore<T>,
    binding: Binding,
) -> Result<Var> {
    if teacher.len() != student.len() || teacher.is_empty() {
        return Err(Error::Shape(format!(
            "teacher pyramid has {} levels, student {}",
            teacher.len(),
            student.len()
        )));
    }
    let mut losses = Vec::with_capacity(teacher.len());
    for (level, (&t, &s)) in teacher.iter().zip(student).enumerate() {
        let (ts, ss) = (tape.shape(t), tape.shape(s));
        if ts[0] != ss[0] || ts[2..] != ss[2..] {
            return Err(Error::Shape(format!(
                "level {level}: teacher {ts:?} and student {ss:?} differ in batch or spatial size"
            )));
        }
        let t = tape.detach(t);
        let gt = align(tape, cfg.kind, t, Side::Teacher, level, params, binding)?;
        let gs = align(tape, cfg.kind, s, Side::Student, level, params, binding)?;
        losses.push(tape.l2_loss(gs, gt));
    }
    Ok(combine_levels(tape, &losses, cfg.gamma))
}

/// `l_flow + lambda * l_d`; with lambda zero the flow loss is returned as is.
pub fn total_loss<T: Scalar>(tape: &mut Tape<T>, l_flow: Var, l_d: Var, lambda: f64) -> Var {
    if lambda == 0.0 {
        return l_flow;
    }
    let w = if lambda == 1.0 { l_d } else { tape.scale(l_d, T::lit(lambda)) };
    tape.add(l_flow, w)
}

#[cfg(test)]
mod tests;
