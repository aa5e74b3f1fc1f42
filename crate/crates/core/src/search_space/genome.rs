use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::spec::SearchSpaceSpec;
use crate::error::{Error, Result, Violation};

/// Genes of one searchable block. Widths are table (unscaled) values.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockGenes {
    pub name: String,
    pub width: u32,
    pub depth: u32,
    pub kernel: u32,
    pub expansion: u32,
}

/// An architecture genome: one gene tuple per searchable block and an
/// optional decoder iteration count.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub blocks: Vec<BlockGenes>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decoder_iterations: Option<u32>,
}

/// Genes per searchable block, in vector order.
pub const GENES_PER_BLOCK: usize = 4;

impl ArchConfig {
    /// Compact canonical JSON (field order fixed by the type).
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("genome serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn block(&self, name: &str) -> Option<&BlockGenes> {
        self.blocks.iter().find(|b| b.name == name)
    }

    /// Flattened `[width, depth, kernel, expansion]` per block, then the
    /// decoder iteration count when present.
    pub fn genes(&self) -> Vec<u32> {
        let mut g: Vec<u32> = self
            .blocks
            .iter()
            .flat_map(|b| [b.width, b.depth, b.kernel, b.expansion])
            .collect();
        g.extend(self.decoder_iterations);
        g
    }

    /// Inverse of [`ArchConfig::genes`]. A trailing extra gene becomes the
    /// decoder iteration count.
    pub fn from_genes(spec: &SearchSpaceSpec, genes: &[u32]) -> Self {
        let names: Vec<&str> = spec.searchable().map(|(_, b)| b.name.as_str()).collect();
        let body = names.len() * GENES_PER_BLOCK;
        assert!(
            genes.len() == body || genes.len() == body + 1,
            "gene vector of length {} for {} blocks",
            genes.len(),
            names.len()
        );
        Self {
            blocks: names
                .iter()
                .zip(genes.chunks(GENES_PER_BLOCK))
                .map(|(n, g)| BlockGenes {
                    name: n.to_string(),
                    width: g[0],
                    depth: g[1],
                    kernel: g[2],
                    expansion: g[3],
                })
                .collect(),
            decoder_iterations: genes.get(body).copied(),
        }
    }

    pub fn with_decoder_iterations(mut self, iterations: Option<u32>) -> Self {
        self.decoder_iterations = iterations;
        self
    }
}

impl SearchSpaceSpec {
    /// Choice set of every gene in [`ArchConfig::genes`] order, excluding the
    /// decoder iteration gene.
    pub fn gene_choices(&self) -> Vec<Vec<u32>> {
        self.searchable()
            .flat_map(|(_, b)| {
                [
                    b.widths.clone(),
                    b.depths.clone(),
                    b.kernels.clone(),
                    b.expansions.clone(),
                ]
            })
            .collect()
    }

    /// Every field's smallest choice.
    pub fn min_config(&self) -> ArchConfig {
        let genes: Vec<u32> = self.gene_choices().iter().map(|c| c[0]).collect();
        ArchConfig::from_genes(self, &genes)
    }

    /// Every field's largest choice.
    pub fn max_config(&self) -> ArchConfig {
        let genes: Vec<u32> = self.gene_choices().iter().map(|c| *c.last().unwrap()).collect();
        ArchConfig::from_genes(self, &genes)
    }

    /// Lists every gene outside its choice set and every structural mismatch.
    pub fn violations(&self, config: &ArchConfig) -> Vec<Violation> {
        let mut out = Vec::new();
        let blocks: Vec<_> = self.searchable().map(|(_, b)| b).collect();
        if blocks.len() != config.blocks.len() {
            out.push(Violation {
                block: "*".into(),
                field: "blocks".into(),
                message: format!(
                    "expected {} searchable blocks, got {}",
                    blocks.len(),
                    config.blocks.len()
                ),
            });
        }
        for (b, g) in blocks.iter().zip(&config.blocks) {
            if b.name != g.name {
                out.push(Violation {
                    block: g.name.clone(),
                    field: "name".into(),
                    message: format!("expected block {}", b.name),
                });
                continue;
            }
            for (field, value, choices) in [
                ("width", g.width, &b.widths),
                ("depth", g.depth, &b.depths),
                ("kernel", g.kernel, &b.kernels),
                ("expansion", g.expansion, &b.expansions),
            ] {
                if !choices.contains(&value) {
                    out.push(Violation {
                        block: g.name.clone(),
                        field: field.into(),
                        message: format!("{value} not in {choices:?}"),
                    });
                }
            }
        }
        if config.decoder_iterations == Some(0) {
            out.push(Violation {
                block: "decoder".into(),
                field: "decoder_iterations".into(),
                message: "must be at least 1".into(),
            });
        }
        out
    }

    pub fn validate(&self, config: &ArchConfig) -> Result<()> {
        let v = self.violations(config);
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(v))
        }
    }

    /// Uniform independent draw of every gene from `rng`.
    pub fn sample_with<R: Rng>(&self, rng: &mut R) -> ArchConfig {
        let genes: Vec<u32> = self
            .gene_choices()
            .iter()
            .map(|c| c[rng.gen_range(0..c.len())])
            .collect();
        ArchConfig::from_genes(self, &genes)
    }

    /// Uniform genome, deterministic in `seed`.
    pub fn random_sample(&self, seed: u64) -> ArchConfig {
        self.sample_with(&mut ChaCha8Rng::seed_from_u64(seed))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Genome searched on KITTI in the published architecture table.
    pub(crate) fn kitti_genome() -> ArchConfig {
        let spec = SearchSpaceSpec::table_s1();
        let rows = [
            (64, 2, 3, 1),
            (72, 1, 5, 4),
            (88, 1, 3, 6),
            (104, 2, 5, 5),
            (120, 2, 5, 6),
            (136, 1, 5, 6),
        ];
        let genes: Vec<u32> = rows.iter().flat_map(|&(w, d, k, e)| [w, d, k, e]).collect();
        ArchConfig::from_genes(&spec, &genes)
    }

    #[test]
    fn published_genome_validates() {
        let spec = SearchSpaceSpec::table_s1();
        spec.validate(&kitti_genome()).unwrap();
    }

    #[test]
    fn off_table_width_is_reported() {
        let spec = SearchSpaceSpec::table_s1();
        let mut g = kitti_genome();
        g.blocks[0].width = 60;
        let v = spec.violations(&g);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].block, "SepConv-1");
        assert_eq!(v[0].field, "width");
        assert!(v[0].message.contains("60"));
    }

    #[test]
    fn sampling_is_seeded_and_valid() {
        let spec = SearchSpaceSpec::table_s1();
        assert_eq!(spec.random_sample(9), spec.random_sample(9));
        for seed in 0..200 {
            spec.validate(&spec.random_sample(seed)).unwrap();
        }
    }

    #[test]
    fn width_frequencies_are_uniform() {
        let spec = SearchSpaceSpec::table_s1();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 10_000;
        let narrow = (0..n)
            .filter(|_| spec.sample_with(&mut rng).blocks[0].width == 56)
            .count();
        let f = narrow as f64 / n as f64;
        assert!((0.47..=0.53).contains(&f), "frequency {f}");
    }

    #[test]
    fn json_schema_round_trip() {
        let g = kitti_genome().with_decoder_iterations(Some(4));
        let text = g.to_json();
        assert!(text.starts_with("{\"blocks\":[{\"name\":\"SepConv-1\",\"width\":64,\"depth\":2,\"kernel\":3,\"expansion\":1}"));
        assert!(text.ends_with(",\"decoder_iterations\":4}"));
        assert_eq!(ArchConfig::from_json(&text).unwrap(), g);
        assert!(!kitti_genome().to_json().contains("decoder_iterations"));
        assert!(ArchConfig::from_json("{\"blocks\":[],\"extra\":1}").is_err());
    }

    #[test]
    fn genes_round_trip() {
        let spec = SearchSpaceSpec::table_s1();
        let g = spec.random_sample(3).with_decoder_iterations(Some(2));
        assert_eq!(ArchConfig::from_genes(&spec, &g.genes()), g);
    }
}
