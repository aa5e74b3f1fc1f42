//! Encoder search space: the block table, genomes, and exact analytic costs.

mod cardinality;
mod cost;
mod genome;
mod spec;

pub use cardinality::{
    cardinality, enumerate, layerwise_reference_count, per_layer_cardinality, Cardinality,
};
pub use cost::{conv_macs, count_flops, count_params, BlockCost, CostReport};
pub use genome::{ArchConfig, BlockGenes, GENES_PER_BLOCK};
pub use spec::{BlockKind, BlockSpec, ChannelScale, SearchSpaceSpec, IMAGE_CHANNELS};
