//! Parameter-constrained evolutionary search over genomes, scored with
//! inherited super-network weights, and Pareto fronts over its history.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distill::DistillConfig;
use crate::error::{Error, Result};
use crate::flow_task::{decoder_flops, DecoderConfig, FramePair};
use crate::search_space::{count_flops, count_params, ArchConfig, SearchSpaceSpec};
use crate::train::{evaluate, mix, Evaluation, FlowModel, TeacherFeatures};

mod io;
mod pareto;

pub use io::{read_search_history, write_pareto, write_search_history, PARETO_HEADER, SEARCH_HEADER};
pub use pareto::{candidate_front, pareto_front, ParetoAxis};

/// Attempts at drawing a random genome under the bound before giving up.
pub const MAX_REJECTIONS: usize = 10_000;
/// Crossover/mutation retries per child before a fresh random genome.
pub const MAX_BREED_ATTEMPTS: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvolutionConfig {
    pub population: usize,
    pub survivors: usize,
    pub offspring: usize,
    pub generations: usize,
    /// Per-gene resampling probability.
    pub mutation_prob: f64,
    /// Exclusive bound on encoder parameters. `None` uses
    /// [`default_param_bound`].
    pub param_bound: Option<u64>,
    pub w_err: f64,
    pub w_fad: f64,
    /// Adds the decoder iteration count to the genome.
    pub joint_iterations_search: bool,
    pub iteration_choices: Vec<u32>,
    pub seed: u64,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            population: 100,
            survivors: 50,
            offspring: 50,
            generations: 20,
            mutation_prob: 0.1,
            param_bound: None,
            w_err: 1.0,
            w_fad: 0.1,
            joint_iterations_search: false,
            iteration_choices: (1..=8).collect(),
            seed: 0,
        }
    }
}

impl EvolutionConfig {
    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Usage(m));
        if self.survivors == 0 || self.survivors + self.offspring != self.population {
            return bad(format!(
                "survivors ({}) + offspring ({}) must equal population ({}) with at least one survivor",
                self.survivors, self.offspring, self.population
            ));
        }
        if self.generations == 0 {
            return bad("generations must be at least 1".into());
        }
        if !(self.mutation_prob > 0.0 && self.mutation_prob < 1.0) {
            return bad(format!("mutation_prob must lie in (0, 1), got {}", self.mutation_prob));
        }
        if self.joint_iterations_search && (self.iteration_choices.is_empty() || self.iteration_choices.contains(&0)) {
            return bad(format!("iteration choices must be nonempty and positive, got {:?}", self.iteration_choices));
        }
        if !(self.w_err.is_finite() && self.w_fad.is_finite()) {
            return bad("fitness weights must be finite".into());
        }
        Ok(())
    }

    pub fn bound(&self, spec: &SearchSpaceSpec) -> Result<u64> {
        match self.param_bound {
            Some(p) => Ok(p),
            None => default_param_bound(spec),
        }
    }
}

/// 60% of the max config's encoder parameters, rounded down.
pub fn default_param_bound(spec: &SearchSpaceSpec) -> Result<u64> {
    let max = count_params(&spec.max_config(), spec)?.params;
    Ok(max * 3 / 5)
}

/// Choice sets of every gene, in [`ArchConfig::genes`] order, optionally
/// followed by the decoder iteration gene.
#[derive(Clone, Debug)]
pub struct GeneSpace {
    template: ArchConfig,
    choices: Vec<Vec<u32>>,
}

impl GeneSpace {
    pub fn new(spec: &SearchSpaceSpec, iteration_choices: Option<&[u32]>) -> Self {
        let mut choices = spec.gene_choices();
        let mut template = spec.min_config();
        if let Some(it) = iteration_choices {
            choices.push(it.to_vec());
            template.decoder_iterations = it.first().copied();
        }
        Self { template, choices }
    }

    pub fn from_config(spec: &SearchSpaceSpec, cfg: &EvolutionConfig) -> Self {
        Self::new(spec, cfg.joint_iterations_search.then_some(&cfg.iteration_choices[..]))
    }

    pub fn choices(&self) -> &[Vec<u32>] {
        &self.choices
    }

    fn build(&self, genes: &[u32]) -> ArchConfig {
        with_genes(&self.template, genes)
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> ArchConfig {
        let genes: Vec<u32> = self.choices.iter().map(|c| c[rng.gen_range(0..c.len())]).collect();
        self.build(&genes)
    }

    /// Resamples each gene uniformly from its choice set with probability
    /// `prob`; the redraw may return the same value.
    pub fn mutate<R: Rng>(&self, g: &ArchConfig, prob: f64, rng: &mut R) -> ArchConfig {
        let mut genes = g.genes();
        assert_eq!(genes.len(), self.choices.len(), "genome does not match the gene space");
        for (v, c) in genes.iter_mut().zip(&self.choices) {
            if rng.gen::<f64>() < prob {
                *v = c[rng.gen_range(0..c.len())];
            }
        }
        self.build(&genes)
    }
}

fn with_genes(template: &ArchConfig, genes: &[u32]) -> ArchConfig {
    let mut out = template.clone();
    for (b, g) in out.blocks.iter_mut().zip(genes.chunks(4)) {
        b.width = g[0];
        b.depth = g[1];
        b.kernel = g[2];
        b.expansion = g[3];
    }
    out.decoder_iterations = genes.get(4 * template.blocks.len()).copied();
    out
}

/// Uniform per-gene choice between the two parents.
pub fn crossover<R: Rng>(a: &ArchConfig, b: &ArchConfig, rng: &mut R) -> ArchConfig {
    let (ga, gb) = (a.genes(), b.genes());
    assert_eq!(ga.len(), gb.len(), "parents have different gene counts");
    let child: Vec<u32> = ga.iter().zip(&gb).map(|(&x, &y)| if rng.gen::<bool>() { x } else { y }).collect();
    with_genes(a, &child)
}

/// Encoder parameters and whole-model FLOPs (encoder on both frames plus
/// the decoder at the genome's iteration count).
#[derive(Clone, Debug)]
pub struct CostModel<'a> {
    pub spec: &'a SearchSpaceSpec,
    pub decoder: &'a DecoderConfig,
    pub frame: (usize, usize),
}

impl CostModel<'_> {
    pub fn params(&self, g: &ArchConfig) -> Result<u64> {
        Ok(count_params(g, self.spec)?.params)
    }

    pub fn flops(&self, g: &ArchConfig) -> Result<u64> {
        let (h, w) = self.frame;
        let enc = count_flops(g, self.spec, h as u32, w as u32)?.flops;
        let k = g.decoder_iterations.map_or(self.decoder.iterations, |k| k as usize);
        Ok(2 * enc + decoder_flops(self.decoder, self.spec.head_width() as usize, h, w, k))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub generation: usize,
    pub index: usize,
    pub genome: ArchConfig,
    pub params: u64,
    pub flops: u64,
    pub metrics: Evaluation,
    pub fitness: f64,
}

pub struct SearchOutcome {
    pub best: Candidate,
    /// Every population member of every generation, survivors included.
    pub history: Vec<Candidate>,
    pub bound: u64,
}

fn candidate_rng(seed: u64, generation: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0x5EA2C4 + generation as u64));
    rng.set_stream(index as u64);
    rng
}

/// Rejection-samples a genome with fewer than `bound` parameters.
pub fn random_valid<R: Rng>(space: &GeneSpace, cost: &CostModel, bound: u64, rng: &mut R) -> Result<ArchConfig> {
    for _ in 0..MAX_REJECTIONS {
        let g = space.sample(rng);
        if cost.params(&g)? < bound {
            return Ok(g);
        }
    }
    Err(Error::Infeasible {
        bound,
        min_params: cost.params(&cost.spec.min_config())?,
    })
}

/// `n` independent valid genomes, deterministic in `seed`.
pub fn random_valid_genomes(space: &GeneSpace, cost: &CostModel, bound: u64, seed: u64, n: usize) -> Result<Vec<ArchConfig>> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0xBA5E));
    (0..n).map(|_| random_valid(space, cost, bound, &mut rng)).collect()
}

/// `k` unconstrained uniform genomes, deterministic in `seed`; the fixed
/// panel used to compare trained super-networks.
pub fn random_panel(spec: &SearchSpaceSpec, seed: u64, k: usize) -> Vec<ArchConfig> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0xF165));
    (0..k).map(|_| spec.sample_with(&mut rng)).collect()
}

fn breed(
    space: &GeneSpace,
    cost: &CostModel,
    bound: u64,
    parents: &[ArchConfig],
    prob: f64,
    rng: &mut ChaCha8Rng,
) -> Result<ArchConfig> {
    for _ in 0..MAX_BREED_ATTEMPTS {
        let a = &parents[rng.gen_range(0..parents.len())];
        let b = &parents[rng.gen_range(0..parents.len())];
        let child = space.mutate(&crossover(a, b, rng), prob, rng);
        if cost.params(&child)? < bound {
            return Ok(child);
        }
    }
    random_valid(space, cost, bound, rng)
}

fn fitness(cfg: &EvolutionConfig, m: &Evaluation) -> f64 {
    let f = cfg.w_err * m.aepe + m.l_d.map_or(0.0, |l| cfg.w_fad * l);
    if f.is_nan() {
        f64::INFINITY
    } else {
        f
    }
}

/// Scores the genomes missing from `cache`, at most `jobs` at a time.
/// Results land in input order, so the outcome does not depend on `jobs`.
fn score_missing(
    population: &[ArchConfig],
    cache: &mut HashMap<ArchConfig, Evaluation>,
    jobs: usize,
    score: &(impl Fn(&ArchConfig) -> Result<Evaluation> + Sync),
) -> Result<()> {
    let mut todo: Vec<&ArchConfig> = Vec::new();
    for g in population {
        if !cache.contains_key(g) && !todo.contains(&g) {
            todo.push(g);
        }
    }
    let jobs = jobs.max(1);
    let results: Vec<Result<Evaluation>> = if jobs == 1 || todo.len() < 2 {
        todo.iter().map(|g| score(g)).collect()
    } else {
        let per = todo.len().div_ceil(jobs);
        std::thread::scope(|s| {
            let handles: Vec<_> = todo
                .chunks(per)
                .map(|chunk| s.spawn(move || chunk.iter().map(|g| score(g)).collect::<Vec<_>>()))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("evaluation thread panicked"))
                .collect()
        })
    };
    for (g, r) in todo.into_iter().zip(results) {
        cache.insert(g.clone(), r?);
    }
    Ok(())
}

/// Elitist evolution. `score` runs once per distinct genome, on up to
/// `jobs` threads; repeats reuse the cached result.
pub fn search(
    space: &GeneSpace,
    cost: &CostModel,
    cfg: &EvolutionConfig,
    jobs: usize,
    score: impl Fn(&ArchConfig) -> Result<Evaluation> + Sync,
) -> Result<SearchOutcome> {
    cfg.check()?;
    let bound = cfg.bound(cost.spec)?;
    let mut cache: HashMap<ArchConfig, Evaluation> = HashMap::new();
    let mut history = Vec::new();
    let mut population: Vec<ArchConfig> = (0..cfg.population)
        .map(|i| random_valid(space, cost, bound, &mut candidate_rng(cfg.seed, 0, i)))
        .collect::<Result<_>>()?;
    let mut ranked: Vec<Candidate> = Vec::new();
    for generation in 0..cfg.generations {
        if generation > 0 {
            let parents: Vec<ArchConfig> = ranked.iter().map(|c| c.genome.clone()).collect();
            population = parents.clone();
            for j in 0..cfg.offspring {
                let mut rng = candidate_rng(cfg.seed, generation, cfg.survivors + j);
                population.push(breed(space, cost, bound, &parents, cfg.mutation_prob, &mut rng)?);
            }
        }
        score_missing(&population, &mut cache, jobs, &score)?;
        let mut scored = Vec::with_capacity(population.len());
        for (index, genome) in population.iter().enumerate() {
            let metrics = cache[genome];
            scored.push(Candidate {
                generation,
                index,
                genome: genome.clone(),
                params: cost.params(genome)?,
                flops: cost.flops(genome)?,
                metrics,
                fitness: fitness(cfg, &metrics),
            });
        }
        history.extend(scored.iter().cloned());
        scored.sort_by(|a, b| a.fitness.total_cmp(&b.fitness).then(a.index.cmp(&b.index)));
        scored.truncate(cfg.survivors);
        ranked = scored;
    }
    Ok(SearchOutcome {
        best: ranked[0].clone(),
        history,
        bound,
    })
}

/// Scores genomes on `val` with weights inherited from a trained
/// super-network; L_D enters the fitness only when teacher features are given.
pub fn search_supernet(
    spec: &SearchSpaceSpec,
    model: &FlowModel,
    val: &[FramePair],
    cfg: &EvolutionConfig,
    teacher: Option<(&TeacherFeatures, &DistillConfig)>,
    jobs: usize,
) -> Result<SearchOutcome> {
    let first = val
        .first()
        .ok_or_else(|| Error::Usage("search needs a nonempty validation split".into()))?;
    let cost = CostModel {
        spec,
        decoder: &model.decoder,
        frame: (first.gt.height(), first.gt.width()),
    };
    let space = GeneSpace::from_config(spec, cfg);
    search(&space, &cost, cfg, jobs, |g| evaluate(model, g, val, None, teacher))
}

#[cfg(test)]
mod tests;
