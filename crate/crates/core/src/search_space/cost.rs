use serde::Serialize;

use super::genome::ArchConfig;
use super::spec::{SearchSpaceSpec, IMAGE_CHANNELS};
use crate::autodiff::conv_out_size;
use crate::error::Result;

/// Cost of one encoder block.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct BlockCost {
    pub name: String,
    pub params: u64,
    /// Multiply-accumulates; zero when no input size was given.
    pub macs: u64,
}

/// Exact encoder cost of a genome.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CostReport {
    pub params: u64,
    /// Two per multiply-accumulate. Zero for a params-only report.
    pub flops: u64,
    pub input: Option<(u32, u32)>,
    pub blocks: Vec<BlockCost>,
}

/// MACs of one convolution producing an `ho x wo` map.
pub fn conv_macs(c_in: u64, c_out: u64, kernel: u64, groups: u64, ho: u64, wo: u64) -> u64 {
    c_out * (c_in / groups) * kernel * kernel * ho * wo
}

/// Parameter count of the encoder instantiated for `config`.
pub fn count_params(config: &ArchConfig, spec: &SearchSpaceSpec) -> Result<CostReport> {
    let blocks = walk(config, spec, None)?;
    Ok(CostReport {
        params: blocks.iter().map(|b| b.params).sum(),
        flops: 0,
        input: None,
        blocks,
    })
}

/// Parameter and FLOP counts for one `input_h x input_w` image.
pub fn count_flops(
    config: &ArchConfig,
    spec: &SearchSpaceSpec,
    input_h: u32,
    input_w: u32,
) -> Result<CostReport> {
    let blocks = walk(config, spec, Some((input_h, input_w)))?;
    Ok(CostReport {
        params: blocks.iter().map(|b| b.params).sum(),
        flops: 2 * blocks.iter().map(|b| b.macs).sum::<u64>(),
        input: Some((input_h, input_w)),
        blocks,
    })
}

fn walk(
    config: &ArchConfig,
    spec: &SearchSpaceSpec,
    input: Option<(u32, u32)>,
) -> Result<Vec<BlockCost>> {
    spec.validate(config)?;
    let (mut h, mut w) = input.map_or((0, 0), |(h, w)| (h as u64, w as u64));
    let shrink = |n: u64, k: u64, s: u64| {
        if n == 0 {
            0
        } else {
            conv_out_size(n as usize, k as usize, s as usize, k as usize / 2) as u64
        }
    };
    let mut out = Vec::with_capacity(spec.blocks.len());
    let last = spec.blocks.len() - 1;
    let mut genes = config.blocks.iter();
    let mut c = IMAGE_CHANNELS as u64;
    for (i, b) in spec.blocks.iter().enumerate() {
        let s = b.stride as u64;
        let (params, macs, width) = if i == 0 {
            let wd = spec.stem_width() as u64;
            let k = b.kernels[0] as u64;
            let (ho, wo) = (shrink(h, k, s), shrink(w, k, s));
            (h, w) = (ho, wo);
            (c * wd * k * k + 2 * wd, conv_macs(c, wd, k, 1, ho, wo), wd)
        } else if i == last {
            let wd = spec.head_width() as u64;
            (c * wd, conv_macs(c, wd, 1, 1, h, w), wd)
        } else {
            let g = genes.next().expect("validated genome");
            let wd = spec.scaled(g.width) as u64;
            let (k, e) = (g.kernel as u64, g.expansion as u64);
            let mut params = 0;
            let mut macs = 0;
            for layer in 0..g.depth {
                let (cin, stride) = if layer == 0 { (c, s) } else { (wd, 1) };
                let hidden = e * cin;
                let (ho, wo) = (shrink(h, k, stride), shrink(w, k, stride));
                params += cin * hidden + 2 * hidden;
                params += hidden * k * k + 2 * hidden;
                params += hidden * wd + 2 * wd;
                macs += conv_macs(cin, hidden, 1, 1, h, w);
                macs += conv_macs(hidden, hidden, k, hidden, ho, wo);
                macs += conv_macs(hidden, wd, 1, 1, ho, wo);
                if layer == 0 && spec.has_projection(i) {
                    params += cin * wd + 2 * wd;
                    macs += conv_macs(cin, wd, 1, 1, ho, wo);
                }
                (h, w) = (ho, wo);
            }
            (params, macs, wd)
        };
        c = width;
        out.push(BlockCost {
            name: b.name.clone(),
            params,
            macs,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pointwise_hand_count() {
        assert_eq!(2 * conv_macs(2, 3, 1, 1, 4, 4), 192);
    }

    #[test]
    fn flops_scale_with_area() {
        let spec = SearchSpaceSpec::desk();
        for seed in 0..5 {
            let g = spec.random_sample(seed);
            let a = count_flops(&g, &spec, 64, 64).unwrap().flops;
            let b = count_flops(&g, &spec, 128, 128).unwrap().flops;
            assert_eq!(b, 4 * a);
        }
    }

    #[test]
    fn min_sample_max_ordering() {
        for spec in [SearchSpaceSpec::table_s1(), SearchSpaceSpec::desk()] {
            let lo = count_params(&spec.min_config(), &spec).unwrap().params;
            let hi = count_params(&spec.max_config(), &spec).unwrap().params;
            for seed in 0..100 {
                let p = count_params(&spec.random_sample(seed), &spec).unwrap().params;
                assert!(lo <= p && p <= hi);
            }
        }
    }

    #[test]
    fn invalid_genome_is_rejected() {
        let spec = SearchSpaceSpec::table_s1();
        let mut g = spec.max_config();
        g.blocks[2].kernel = 7;
        assert!(count_params(&g, &spec).is_err());
    }

    #[test]
    fn breakdown_sums_to_total() {
        let spec = SearchSpaceSpec::table_s1();
        let r = count_flops(&spec.random_sample(1), &spec, 64, 96).unwrap();
        assert_eq!(r.blocks.len(), 8);
        assert_eq!(r.params, r.blocks.iter().map(|b| b.params).sum::<u64>());
        assert_eq!(r.flops, 2 * r.blocks.iter().map(|b| b.macs).sum::<u64>());
    }
}
