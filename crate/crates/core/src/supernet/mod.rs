//! The weight-sharing encoder: one maximal parameter set from which every
//! genome is read by slicing.

mod checkpoint;
mod plan;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use plan::{
    plan, resolved_widths, standalone_shapes, supernet_shapes, ConvStep, EncoderPlan, Init,
    LayerPlan, NormStep, Slice, ENCODER_PREFIX,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::search_space::{ArchConfig, SearchSpaceSpec};

pub const NORM_EPS: f64 = 1e-5;

/// Encoder outputs at strides 2, 4 and 8.
#[derive(Clone, Copy, Debug)]
pub struct FeaturePyramid {
    pub levels: [Var; 3],
}

/// Whether encoder parameters receive gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binding {
    Trainable,
    Frozen,
}

/// Initializes `shapes` into a fresh store, drawing in the given order.
pub fn init_params<T: Scalar>(shapes: &[(String, Vec<usize>, Init)], seed: u64) -> ParamStore<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for (name, shape, init) in shapes {
        let t = match init {
            Init::Ones => Tensor::full(shape.clone(), T::one()),
            Init::Zeros => Tensor::zeros(shape.clone()),
            Init::HeUniform => {
                let fan_in: usize = shape[1..].iter().product();
                let bound = (6.0 / fan_in as f64).sqrt();
                let n: usize = shape.iter().product();
                Tensor::new(
                    shape.clone(),
                    (0..n).map(|_| T::lit(rng.gen_range(-bound..bound))).collect(),
                )
            }
        };
        store.insert(name.clone(), t);
    }
    store
}

/// Maximal encoder weights for a search space.
#[derive(Clone, Debug)]
pub struct SuperNet<T> {
    pub spec: SearchSpaceSpec,
    pub params: ParamStore<T>,
}

pub fn build_supernet<T: Scalar>(spec: &SearchSpaceSpec, seed: u64) -> Result<SuperNet<T>> {
    spec.check()?;
    Ok(SuperNet {
        spec: spec.clone(),
        params: init_params(&supernet_shapes(spec), seed),
    })
}

impl<T: Scalar> SuperNet<T> {
    /// Total encoder parameter count.
    pub fn num_params(&self) -> usize {
        self.params.num_elements_with_prefix(ENCODER_PREFIX)
    }

    pub fn select(&self, config: &ArchConfig) -> Result<SubNetView<'_, T>> {
        Ok(SubNetView {
            spec: &self.spec,
            params: &self.params,
            config: config.clone(),
            plan: plan(&self.spec, config, &self.params)?,
        })
    }
}

/// One genome read out of a parameter store without copying.
pub struct SubNetView<'a, T> {
    pub spec: &'a SearchSpaceSpec,
    pub params: &'a ParamStore<T>,
    pub config: ArchConfig,
    pub plan: EncoderPlan,
}

impl<'a, T: Scalar> SubNetView<'a, T> {
    /// Views `params` (supernet-shaped or standalone-shaped) as `config`.
    pub fn over(spec: &'a SearchSpaceSpec, params: &'a ParamStore<T>, config: &ArchConfig) -> Result<Self> {
        Ok(Self {
            spec,
            params,
            config: config.clone(),
            plan: plan(spec, config, params)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape<T>, images: Var, binding: Binding) -> Result<FeaturePyramid> {
        encode(tape, self.params, &self.plan, images, binding)
    }

    /// Copies this genome's slices into a store with exactly-sized parameters.
    pub fn extract(&self) -> ParamStore<T> {
        let mut out = ParamStore::new();
        for s in self.plan.slices() {
            out.insert(s.name.clone(), self.params.get(&s.name).slice(&s.ranges));
        }
        out
    }
}

/// Fresh exactly-sized weights for one genome.
pub fn build_standalone<T: Scalar>(spec: &SearchSpaceSpec, config: &ArchConfig, seed: u64) -> Result<ParamStore<T>> {
    spec.validate(config)?;
    Ok(init_params(&standalone_shapes(spec, config), seed))
}

fn bind<T: Scalar>(tape: &mut Tape<T>, store: &ParamStore<T>, s: &Slice, binding: Binding) -> Var {
    match binding {
        Binding::Trainable => tape.param_slice(store, &s.name, &s.ranges),
        Binding::Frozen => tape.frozen_slice(store, &s.name, &s.ranges),
    }
}

fn conv_norm<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    x: Var,
    (conv, norm): &(ConvStep, NormStep),
    binding: Binding,
    relu: bool,
) -> Var {
    let w = bind(tape, store, &conv.weight, binding);
    let y = tape.conv2d(x, w, conv.groups, conv.stride, conv.padding);
    let g = bind(tape, store, &norm.gamma, binding);
    let b = bind(tape, store, &norm.beta, binding);
    let eps = T::lit(NORM_EPS);
    if relu {
        tape.instance_norm_relu(y, g, b, eps)
    } else {
        tape.instance_norm(y, g, b, eps)
    }
}

/// Runs an encoder plan on `images [N, 3, H, W]`.
pub fn encode<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    plan: &EncoderPlan,
    images: Var,
    binding: Binding,
) -> Result<FeaturePyramid> {
    let shape = tape.shape(images).to_vec();
    if shape.len() != 4 || shape[1] != 3 {
        return Err(Error::Shape(format!("encoder input {shape:?} must be [N, 3, H, W]")));
    }
    if shape[2] % 8 != 0 || shape[3] % 8 != 0 || shape[2] == 0 || shape[3] == 0 {
        return Err(Error::Shape(format!(
            "encoder input {}x{} must have both sides divisible by 8",
            shape[2], shape[3]
        )));
    }
    let mut x = conv_norm(tape, store, images, &plan.stem, binding, true);
    let mut taps = [None; 3];
    for (i, layers) in &plan.blocks {
        for layer in layers {
            let skip = match &layer.shortcut {
                Some(s) => conv_norm(tape, store, x, s, binding, false),
                None => x,
            };
            let mut y = conv_norm(tape, store, x, &layer.expand, binding, true);
            y = conv_norm(tape, store, y, &layer.depthwise, binding, true);
            y = conv_norm(tape, store, y, &layer.project, binding, true);
            x = tape.add_relu(y, skip);
        }
        if let Some(t) = plan.taps.iter().position(|t| t == i) {
            taps[t] = Some(x);
        }
    }
    let hw = bind(tape, store, &plan.head.weight, binding);
    let out = tape.conv2d(x, hw, 1, 1, 0);
    taps[2] = Some(out);
    Ok(FeaturePyramid {
        levels: taps.map(|t| t.expect("every pyramid tap is produced")),
    })
}
