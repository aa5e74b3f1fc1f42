use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};

use super::genome::ArchConfig;
use super::spec::SearchSpaceSpec;

/// Exact architecture count with its base-10 logarithm.
#[derive(Clone, Debug, PartialEq)]
pub struct Cardinality {
    pub exact: BigUint,
    pub log10: f64,
}

impl Cardinality {
    fn new(exact: BigUint) -> Self {
        let log10 = big_log10(&exact);
        Self { exact, log10 }
    }
}

fn big_log10(n: &BigUint) -> f64 {
    if n.is_zero() {
        return f64::NEG_INFINITY;
    }
    // keep the top 52 bits so the f64 conversion is exact in its mantissa
    let bits = n.bits();
    let shift = bits.saturating_sub(52);
    let top = (n >> shift).to_f64().expect("fits in f64");
    top.log10() + shift as f64 * 2f64.log10()
}

/// Number of distinct per-block genomes: the product over searchable blocks
/// of |width| x |depth| x |kernel| x |expansion|.
pub fn cardinality(spec: &SearchSpaceSpec) -> Cardinality {
    let exact = spec
        .gene_choices()
        .iter()
        .fold(BigUint::one(), |acc, c| acc * BigUint::from(c.len()));
    Cardinality::new(exact)
}

/// Count for a space where every layer picks its own op from
/// `choices_per_layer` options and each of `cells` cells picks a depth:
/// `(sum over depths d of choices_per_layer^d)^cells`.
pub fn per_layer_cardinality(choices_per_layer: u64, depths: &[u32], cells: u32) -> Cardinality {
    let base = BigUint::from(choices_per_layer);
    let per_cell = depths
        .iter()
        .fold(BigUint::zero(), |acc, &d| acc + base.pow(d));
    Cardinality::new(per_cell.pow(cells))
}

/// The per-layer counting of the full-size space: 10 widths x 2 kernels x 5
/// expansion ratios per layer, depths 1 to 4, six cells.
pub fn layerwise_reference_count() -> Cardinality {
    per_layer_cardinality(10 * 2 * 5, &[1, 2, 3, 4], 6)
}

/// Every genome of `spec`, in mixed-radix order over the gene vector.
pub fn enumerate(spec: &SearchSpaceSpec) -> impl Iterator<Item = ArchConfig> + '_ {
    let choices = spec.gene_choices();
    let mut index = vec![0usize; choices.len()];
    let mut done = false;
    std::iter::from_fn(move || {
        if done {
            return None;
        }
        let genes: Vec<u32> = index.iter().zip(&choices).map(|(&i, c)| c[i]).collect();
        done = true;
        for (i, c) in index.iter_mut().zip(&choices).rev() {
            *i += 1;
            if *i < c.len() {
                done = false;
                break;
            }
            *i = 0;
        }
        Some(ArchConfig::from_genes(spec, &genes))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search_space::spec::{BlockKind, BlockSpec};

    #[test]
    fn layerwise_reference_is_about_ten_to_the_48() {
        let c = layerwise_reference_count();
        assert_eq!(c.exact, BigUint::from(101_010_100u64).pow(6));
        assert!((c.log10 - 48.026).abs() < 1e-3, "log10 {}", c.log10);
    }

    #[test]
    fn per_block_table_count() {
        let c = cardinality(&SearchSpaceSpec::table_s1());
        assert_eq!(c.exact, BigUint::from(80_621_568u64));
        assert_eq!(80_621_568u64, 8 * 36 * 36 * 54 * 18 * 8);
    }

    #[test]
    fn micro_space_matches_enumeration() {
        let block = |name: &str, widths: Vec<u32>| BlockSpec {
            name: name.into(),
            kind: BlockKind::SepConv,
            widths,
            depths: vec![1],
            kernels: vec![3],
            expansions: vec![1],
            stride: 1,
        };
        let mut spec = SearchSpaceSpec::table_s1();
        spec.blocks = vec![
            spec.blocks[0].clone(),
            {
                let mut a = block("a", vec![4, 8]);
                a.stride = 2;
                a
            },
            {
                let mut b = block("b", vec![8, 12]);
                b.stride = 2;
                b
            },
            spec.blocks[7].clone(),
        ];
        spec.check().unwrap();
        let brute = crate::search_space::enumerate(&spec).count();
        assert_eq!(brute, 4);
        assert_eq!(cardinality(&spec).exact, BigUint::from(brute));
    }
}
