use std::ops::Range;

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::search_space::{ArchConfig, SearchSpaceSpec, IMAGE_CHANNELS};

/// Prefix shared by every encoder parameter name.
pub const ENCODER_PREFIX: &str = "enc.";

/// A named parameter and the sub-block of it one genome reads.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Slice {
    pub name: String,
    pub ranges: Vec<Range<usize>>,
}

impl Slice {
    pub fn len(&self) -> usize {
        self.ranges.iter().map(|r| r.len()).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug)]
pub struct ConvStep {
    pub weight: Slice,
    pub groups: usize,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Clone, Debug)]
pub struct NormStep {
    pub gamma: Slice,
    pub beta: Slice,
}

/// One separable-convolution layer.
#[derive(Clone, Debug)]
pub struct LayerPlan {
    pub expand: (ConvStep, NormStep),
    pub depthwise: (ConvStep, NormStep),
    pub project: (ConvStep, NormStep),
    /// `None` means an identity residual.
    pub shortcut: Option<(ConvStep, NormStep)>,
}

/// Every parameter slice and op a genome's encoder forward uses, in order.
#[derive(Clone, Debug)]
pub struct EncoderPlan {
    pub stem: (ConvStep, NormStep),
    /// Layers of each searchable block, paired with the block's table index.
    pub blocks: Vec<(usize, Vec<LayerPlan>)>,
    pub head: ConvStep,
    pub taps: [usize; 3],
}

impl EncoderPlan {
    pub fn slices(&self) -> Vec<&Slice> {
        let mut pairs = vec![&self.stem];
        for (_, layers) in &self.blocks {
            for l in layers {
                pairs.extend([&l.expand, &l.depthwise, &l.project]);
                pairs.extend(&l.shortcut);
            }
        }
        let mut out: Vec<&Slice> = pairs
            .into_iter()
            .flat_map(|(c, n)| [&c.weight, &n.gamma, &n.beta])
            .collect();
        out.push(&self.head.weight);
        out
    }
}

/// How a parameter is initialized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Uniform in +-sqrt(6 / fan_in), fan_in = shape[1] * k * k.
    HeUniform,
    Ones,
    Zeros,
}

pub(crate) fn conv_name(base: &str) -> String {
    format!("{ENCODER_PREFIX}{base}.w")
}

fn norm_names(base: &str) -> (String, String) {
    (
        format!("{ENCODER_PREFIX}{base}.gamma"),
        format!("{ENCODER_PREFIX}{base}.beta"),
    )
}

fn push_conv(out: &mut Vec<(String, Vec<usize>, Init)>, base: &str, shape: [usize; 4], norm: bool) {
    out.push((conv_name(base), shape.to_vec(), Init::HeUniform));
    if norm {
        let (g, b) = norm_names(base);
        out.push((g, vec![shape[0]], Init::Ones));
        out.push((b, vec![shape[0]], Init::Zeros));
    }
}

/// Parameter shapes of an encoder where every block holds the given layer
/// count, widths, kernel and expansion. `dims(i)` returns
/// `(in_width, out_width, depth, kernel, expansion)` for table row `i`.
fn encoder_shapes(
    spec: &SearchSpaceSpec,
    dims: impl Fn(usize) -> (usize, usize, usize, usize, usize),
) -> Vec<(String, Vec<usize>, Init)> {
    let mut out = Vec::new();
    let last = spec.blocks.len() - 1;
    for i in 0..=last {
        let (cin, w, depth, k, e) = dims(i);
        if i == 0 {
            push_conv(&mut out, "stem", [w, cin, k, k], true);
        } else if i == last {
            push_conv(&mut out, "head", [w, cin, 1, 1], false);
        } else {
            for l in 0..depth {
                let c = if l == 0 { cin } else { w };
                let h = e * c;
                push_conv(&mut out, &format!("b{i}.l{l}.expand"), [h, c, 1, 1], true);
                push_conv(&mut out, &format!("b{i}.l{l}.dw"), [h, 1, k, k], true);
                push_conv(&mut out, &format!("b{i}.l{l}.project"), [w, h, 1, 1], true);
            }
            if spec.has_projection(i) {
                push_conv(&mut out, &format!("b{i}.short"), [w, cin, 1, 1], true);
            }
        }
    }
    out
}

/// Shapes of the maximal weight-sharing encoder.
pub fn supernet_shapes(spec: &SearchSpaceSpec) -> Vec<(String, Vec<usize>, Init)> {
    let maxw = |i: usize| -> usize {
        if i == 0 {
            IMAGE_CHANNELS as usize
        } else {
            *spec.scaled_widths(i - 1).iter().max().unwrap() as usize
        }
    };
    encoder_shapes(spec, |i| {
        let b = &spec.blocks[i];
        (
            maxw(i),
            spec.scaled(b.max_width()) as usize,
            b.max_depth() as usize,
            b.max_kernel() as usize,
            b.max_expansion() as usize,
        )
    })
}

/// Shapes of a model holding exactly one genome.
pub fn standalone_shapes(spec: &SearchSpaceSpec, config: &ArchConfig) -> Vec<(String, Vec<usize>, Init)> {
    let widths = resolved_widths(spec, config);
    let mut genes = vec![None; spec.blocks.len()];
    for ((i, _), g) in spec.searchable().zip(&config.blocks) {
        genes[i] = Some(g);
    }
    encoder_shapes(spec, |i| {
        let cin = if i == 0 { IMAGE_CHANNELS as usize } else { widths[i - 1] };
        match genes[i] {
            Some(g) => (cin, widths[i], g.depth as usize, g.kernel as usize, g.expansion as usize),
            None => (cin, widths[i], 1, spec.blocks[i].kernels[0] as usize, 1),
        }
    })
}

/// Scaled output width of every table row under `config`.
pub fn resolved_widths(spec: &SearchSpaceSpec, config: &ArchConfig) -> Vec<usize> {
    let mut genes = config.blocks.iter();
    spec.blocks
        .iter()
        .map(|b| {
            let w = if b.fixed() {
                b.widths[0]
            } else {
                genes.next().expect("validated genome").width
            };
            spec.scaled(w) as usize
        })
        .collect()
}

fn prefix(n: usize) -> Range<usize> {
    0..n
}

fn conv_slice<T: Scalar>(
    store: &ParamStore<T>,
    base: &str,
    out_ch: usize,
    in_ch: usize,
    k: usize,
) -> Result<Slice> {
    let name = conv_name(base);
    if !store.contains(&name) {
        return Err(Error::Shape(format!("parameter {name} is missing")));
    }
    let shape = store.get(&name).shape();
    if shape[0] < out_ch || shape[1] < in_ch || shape[2] < k {
        return Err(Error::Shape(format!(
            "parameter {name} of shape {shape:?} cannot hold [{out_ch}, {in_ch}, {k}, {k}]"
        )));
    }
    let off = (shape[2] - k) / 2;
    Ok(Slice {
        name,
        ranges: vec![prefix(out_ch), prefix(in_ch), off..off + k, off..off + k],
    })
}

fn norm_slice(base: &str, ch: usize) -> NormStep {
    let (g, b) = norm_names(base);
    NormStep {
        gamma: Slice {
            name: g,
            ranges: vec![prefix(ch)],
        },
        beta: Slice {
            name: b,
            ranges: vec![prefix(ch)],
        },
    }
}

/// Resolves the selection of `config` against the stored shapes of `store`:
/// channel prefixes for width and expansion, layer prefixes for depth, and a
/// centered crop for kernel size.
pub fn plan<T: Scalar>(
    spec: &SearchSpaceSpec,
    config: &ArchConfig,
    store: &ParamStore<T>,
) -> Result<EncoderPlan> {
    spec.validate(config)?;
    let widths = resolved_widths(spec, config);
    let last = spec.blocks.len() - 1;
    let stem_b = &spec.blocks[0];
    let k0 = stem_b.kernels[0] as usize;
    let stem = (
        ConvStep {
            weight: conv_slice(store, "stem", widths[0], IMAGE_CHANNELS as usize, k0)?,
            groups: 1,
            stride: stem_b.stride as usize,
            padding: k0 / 2,
        },
        norm_slice("stem", widths[0]),
    );
    let mut blocks = Vec::new();
    for ((i, b), g) in spec.searchable().zip(&config.blocks) {
        let w = widths[i];
        let k = g.kernel as usize;
        let mut layers = Vec::new();
        for l in 0..g.depth as usize {
            let cin = if l == 0 { widths[i - 1] } else { w };
            let stride = if l == 0 { b.stride as usize } else { 1 };
            let h = g.expansion as usize * cin;
            let base = format!("b{i}.l{l}");
            let pw = |name: &str, o: usize, c: usize, s: usize| -> Result<(ConvStep, NormStep)> {
                let full = format!("{base}.{name}");
                Ok((
                    ConvStep {
                        weight: conv_slice(store, &full, o, c, 1)?,
                        groups: 1,
                        stride: s,
                        padding: 0,
                    },
                    norm_slice(&full, o),
                ))
            };
            let dw_base = format!("{base}.dw");
            let shortcut = if l == 0 && spec.has_projection(i) {
                let sb = format!("b{i}.short");
                Some((
                    ConvStep {
                        weight: conv_slice(store, &sb, w, cin, 1)?,
                        groups: 1,
                        stride,
                        padding: 0,
                    },
                    norm_slice(&sb, w),
                ))
            } else {
                None
            };
            layers.push(LayerPlan {
                expand: pw("expand", h, cin, 1)?,
                depthwise: (
                    ConvStep {
                        weight: conv_slice(store, &dw_base, h, 1, k)?,
                        groups: h,
                        stride,
                        padding: k / 2,
                    },
                    norm_slice(&dw_base, h),
                ),
                project: pw("project", w, h, 1)?,
                shortcut,
            });
        }
        blocks.push((i, layers));
    }
    let head = ConvStep {
        weight: conv_slice(store, "head", widths[last], widths[last - 1], 1)?,
        groups: 1,
        stride: 1,
        padding: 0,
    };
    Ok(EncoderPlan {
        stem,
        blocks,
        head,
        taps: spec.pyramid_taps(),
    })
}
