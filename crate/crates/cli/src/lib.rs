//! The `flownas` command line: dataset generation, training, search,
//! evaluation and CSV reports over one JSON run configuration.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use flownas::distill::AlignmentKind;
use flownas::evolve::{
    candidate_front, random_panel, read_search_history, search_supernet, write_pareto, write_search_history,
    ParetoAxis,
};
use flownas::flow_task::write_flo;
use flownas::search_space::{count_params, ArchConfig};
use flownas::supernet::{read_checkpoint, write_checkpoint};
use flownas::train::{
    evaluate, finish, predict, read_history, train_standalone, write_history, Evaluation, TeacherFeatures,
    TeacherModel, TrainMode, Trainer,
};
use flownas::{Error, Result};
use serde::Serialize;

pub mod config;
pub mod dataset;
pub mod model;

use config::RunConfig;
use dataset::{read_dataset, write_dataset};
use model::{ModelMeta, SavedModel, HISTORY, METRICS, RESUME};

#[derive(Debug, Parser)]
#[command(name = "flownas", version, about = "Weight-sharing encoder search for optical flow")]
pub struct Cli {
    /// Base run configuration (JSON). Flags override its values.
    #[arg(long, global = true, env = config::CONFIG_ENV)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic frame pairs (PPM) with exact flow (.flo) and a manifest.
    GenData(GenDataArgs),
    /// Train the fixed-architecture teacher on the flow loss.
    TrainTeacher(TeacherArgs),
    /// Train the weight-sharing super-network, one sampled genome per step.
    TrainSupernet(SupernetArgs),
    /// Train one genome from scratch.
    TrainStandalone(StandaloneArgs),
    /// Evolutionary search with inherited super-network weights.
    Search(SearchArgs),
    /// Evaluate a model on a dataset split.
    Eval(EvalArgs),
    /// Pareto front of a search history.
    Pareto(ParetoArgs),
    /// Paired comparison tables over a random genome panel.
    Report(ReportArgs),
    /// Run the invariant and oracle checks.
    Selftest,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Output directory [default: <paths.data>/train, or <paths.data> with --all]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// [default: dataset.train_seed]
    #[arg(long)]
    pub seed: Option<u64>,
    /// [default: dataset.train_count]
    #[arg(long)]
    pub count: Option<usize>,
    /// Square frame side in pixels [default: dataset.size]
    #[arg(long)]
    pub size: Option<usize>,
    /// [default: dataset.motion.max_disp]
    #[arg(long)]
    pub max_disp: Option<f64>,
    /// Write train/, val/ and test/ from the dataset section instead of one split.
    #[arg(long)]
    pub all: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Model directory to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Training split [default: <paths.data>/train]
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Validation split [default: <paths.data>/val]
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub eval_interval: Option<u64>,
    /// Continue from the resume checkpoint in --out.
    #[arg(long)]
    pub resume: bool,
    /// Steps between resume checkpoints [default: train.eval_interval]
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Stop after this many steps of the current invocation, leaving a
    /// resume checkpoint.
    #[arg(long)]
    pub halt_after: Option<u64>,
}

#[derive(Debug, Args)]
pub struct DistillArgs {
    /// Distill from --teacher.
    #[arg(long)]
    pub fad: bool,
    /// Teacher model directory.
    #[arg(long)]
    pub teacher: Option<PathBuf>,
    /// Channel alignment: projection, attention, max or avg [default: distill.kind]
    #[arg(long)]
    pub align: Option<AlignmentKind>,
    /// Weight of the distillation loss [default: distill.lambda]
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Per-level decay of the distillation loss [default: distill.gamma]
    #[arg(long)]
    pub gamma: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TeacherArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    /// Genome JSON [default: the max config]
    #[arg(long)]
    pub genome: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SupernetArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub distill: DistillArgs,
}

#[derive(Debug, Args)]
pub struct StandaloneArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub distill: DistillArgs,
    /// Genome JSON.
    #[arg(long)]
    pub genome: PathBuf,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    /// Trained super-network directory.
    #[arg(long)]
    pub model: PathBuf,
    /// [default: <paths.data>/val]
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Exclusive encoder parameter bound [default: 60% of the max config]
    #[arg(long)]
    pub param_bound: Option<u64>,
    /// [default: evolution.generations]
    #[arg(long)]
    pub generations: Option<usize>,
    /// Search the decoder iteration count with the encoder.
    #[arg(long)]
    pub joint_iterations: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Teacher whose feature loss joins the fitness.
    #[arg(long)]
    pub teacher: Option<PathBuf>,
    /// Concurrent candidate evaluations.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Genome JSON [default: the model's own genome, else the max config]
    #[arg(long)]
    pub genome: Option<PathBuf>,
    /// Dataset split [default: <paths.data>/val]
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Decoder estimates [default: genome gene, else decoder.iterations]
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Write one predicted .flo per sample here.
    #[arg(long)]
    pub dump_flow: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ParetoArgs {
    /// Search history CSV.
    #[arg(long)]
    pub history: PathBuf,
    /// Cost axis: flops or params.
    #[arg(long, default_value = "flops")]
    pub x: ParetoAxis,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Vanilla super-network directory.
    #[arg(long)]
    pub vanilla: PathBuf,
    /// Distilled super-network directory.
    #[arg(long)]
    pub fad: PathBuf,
    /// [default: <paths.data>/val]
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// [default: <paths.data>/train]
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long, default_value_t = 12)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Steps per from-scratch model for the inherit-vs-standalone table; 0 skips it.
    #[arg(long, default_value_t = 0)]
    pub standalone_steps: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Process exit code for an error: 2 usage or configuration, 3 data or
/// parse, 4 numeric divergence.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Usage(_) | Error::InvalidConfig(_) | Error::InvalidSpec(_) | Error::Infeasible { .. } => 2,
        Error::Divergence(_) => 4,
        Error::Parse { .. } | Error::ParseLine { .. } | Error::Shape(_) | Error::Io(_) | Error::Json(_) => 3,
    }
}

/// Runs one parsed command; returns whether every check passed (only
/// `selftest` can report false).
pub fn run(cli: Cli) -> Result<bool> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::GenData(a) => gen_data(&mut cfg, a)?,
        Command::TrainTeacher(a) => train_teacher_cmd(&mut cfg, a)?,
        Command::TrainSupernet(a) => train_supernet_cmd(&mut cfg, a)?,
        Command::TrainStandalone(a) => train_standalone_cmd(&mut cfg, a)?,
        Command::Search(a) => search_cmd(&mut cfg, a)?,
        Command::Eval(a) => eval_cmd(&cfg, a)?,
        Command::Pareto(a) => pareto_cmd(&cfg, a)?,
        Command::Report(a) => report_cmd(&mut cfg, a)?,
        Command::Selftest => return Ok(selftest_cmd()),
    }
    Ok(true)
}

fn split(cfg: &RunConfig, given: &Option<PathBuf>, name: &str) -> PathBuf {
    given.clone().unwrap_or_else(|| cfg.paths.data.join(name))
}

fn read_genome(path: &Path) -> Result<ArchConfig> {
    let text = std::fs::read_to_string(path)?;
    ArchConfig::from_json(text.trim()).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        offset: 0,
        message: e.to_string(),
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn metric_line(e: &Evaluation) -> String {
    format!("aepe={} f1_all={}", e.aepe, e.f1_all)
}

fn gen_data(cfg: &mut RunConfig, a: GenDataArgs) -> Result<()> {
    let d = &mut cfg.dataset;
    if let Some(s) = a.size {
        d.size = s;
    }
    if let Some(m) = a.max_disp {
        d.motion.max_disp = m;
    }
    if a.all {
        if a.seed.is_some() || a.count.is_some() {
            return Err(Error::Usage("--all takes seeds and counts from the dataset section".into()));
        }
        let root = a.out.unwrap_or_else(|| cfg.paths.data.clone());
        let d = &cfg.dataset;
        for (name, seed, count) in [
            ("train", d.train_seed, d.train_count),
            ("val", d.val_seed, d.val_count),
            ("test", d.test_seed, d.test_count),
        ] {
            let m = write_dataset(&root.join(name), seed, count, d.size, &d.motion)?;
            println!("{}: {} pairs", root.join(name).display(), m.samples.len());
        }
        return cfg.write_snapshot(&root);
    }
    let seed = a.seed.unwrap_or(cfg.dataset.train_seed);
    let count = a.count.unwrap_or(cfg.dataset.train_count);
    cfg.dataset.train_seed = seed;
    cfg.dataset.train_count = count;
    let out = a.out.unwrap_or_else(|| cfg.paths.data.join("train"));
    let d = &cfg.dataset;
    let m = write_dataset(&out, seed, count, d.size, &d.motion)?;
    println!("{}: {} pairs", out.display(), m.samples.len());
    cfg.write_snapshot(&out)
}

fn apply_train_overrides(cfg: &mut RunConfig, a: &TrainArgs) {
    let t = &mut cfg.train;
    if let Some(v) = a.steps {
        t.steps = v;
    }
    if let Some(v) = a.lr {
        t.lr = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.seed {
        t.seed = v;
    }
    if let Some(v) = a.eval_interval {
        t.eval_interval = v;
    }
}

/// Validates the distillation flags and loads the teacher.
fn teacher_from(cfg: &mut RunConfig, a: &DistillArgs) -> Result<Option<TeacherModel>> {
    if let Some(k) = a.align {
        cfg.distill.kind = k;
    }
    if let Some(l) = a.lambda {
        cfg.distill.lambda = l;
    }
    if let Some(g) = a.gamma {
        cfg.distill.gamma = g;
    }
    match (a.fad, &a.teacher) {
        (true, None) => Err(Error::Usage("--fad requires --teacher <model dir>".into())),
        (false, Some(_)) => Err(Error::Usage("--teacher is only used with --fad".into())),
        (false, None) => Ok(None),
        (true, Some(dir)) => {
            cfg.distill.check()?;
            Ok(Some(SavedModel::load(dir)?.into_teacher()?))
        }
    }
}

fn run_training(
    cfg: &RunConfig,
    a: &TrainArgs,
    mode: TrainMode,
    fixed: Option<&ArchConfig>,
    teacher: Option<&TeacherModel>,
) -> Result<()> {
    let spec = cfg.search_space.resolve()?;
    let tcfg = flownas::train::TrainConfig {
        mode,
        ..cfg.train.clone()
    };
    tcfg.check()?;
    let distill = teacher.map(|_| cfg.distill.clone());
    let train = read_dataset(&split(cfg, &a.train, "train"))?;
    let val = read_dataset(&split(cfg, &a.val, "val"))?;
    let mut t = Trainer::new(&spec, &cfg.decoder, &tcfg, fixed, teacher, distill.as_ref())?;
    let out = &a.out;
    std::fs::create_dir_all(out)?;
    let mut earlier = Vec::new();
    if a.resume {
        let entries = read_checkpoint(&out.join(RESUME))?;
        t.restore(&entries)?;
        let path = out.join(HISTORY);
        earlier = read_history(File::open(&path)?, &path.display().to_string())?;
        earlier.retain(|r| r.step < t.step);
    }
    cfg.write_snapshot(out)?;
    let every = a.checkpoint_every.unwrap_or(tcfg.eval_interval).max(1);
    let save = |t: &Trainer<'_>, earlier: &[flownas::train::HistoryRow]| -> Result<()> {
        let entries = t.checkpoint_entries();
        write_checkpoint(&out.join(RESUME), entries.iter().map(|(k, v)| (k.as_str(), v)))?;
        let rows: Vec<_> = earlier.iter().chain(&t.history).cloned().collect();
        write_history(BufWriter::new(File::create(out.join(HISTORY))?), &rows, true)
    };
    let mut ran = 0;
    while !t.done() {
        t.step_once(&train, &val)?;
        ran += 1;
        if t.step % every == 0 {
            save(&t, &earlier)?;
        }
        if a.halt_after == Some(ran) && !t.done() {
            save(&t, &earlier)?;
            println!("halted at step {}", t.step);
            return Ok(());
        }
    }
    save(&t, &earlier)?;
    let fixed = t.fixed.clone();
    let outcome = finish(t, &val)?;
    let meta = ModelMeta {
        mode,
        search_space: spec,
        decoder: cfg.decoder.clone(),
        arch: fixed,
        distill,
    };
    SavedModel::save(out, &meta, &outcome.model)?;
    if let Some(m) = outcome.final_metrics {
        write_json(&out.join(METRICS), &m)?;
        println!("{}", metric_line(&m));
    }
    Ok(())
}

fn train_teacher_cmd(cfg: &mut RunConfig, a: TeacherArgs) -> Result<()> {
    apply_train_overrides(cfg, &a.train);
    let genome = a.genome.as_deref().map(read_genome).transpose()?;
    run_training(cfg, &a.train, TrainMode::Teacher, genome.as_ref(), None)
}

fn train_supernet_cmd(cfg: &mut RunConfig, a: SupernetArgs) -> Result<()> {
    apply_train_overrides(cfg, &a.train);
    let teacher = teacher_from(cfg, &a.distill)?;
    let mode = if teacher.is_some() {
        TrainMode::FadSupernet
    } else {
        TrainMode::VanillaSupernet
    };
    run_training(cfg, &a.train, mode, None, teacher.as_ref())
}

fn train_standalone_cmd(cfg: &mut RunConfig, a: StandaloneArgs) -> Result<()> {
    apply_train_overrides(cfg, &a.train);
    let genome = read_genome(&a.genome)?;
    cfg.search_space.resolve()?.validate(&genome)?;
    let teacher = teacher_from(cfg, &a.distill)?;
    let mode = if teacher.is_some() {
        TrainMode::StandaloneFad
    } else {
        TrainMode::Standalone
    };
    run_training(cfg, &a.train, mode, Some(&genome), teacher.as_ref())
}

fn search_cmd(cfg: &mut RunConfig, a: SearchArgs) -> Result<()> {
    let e = &mut cfg.evolution;
    if a.param_bound.is_some() {
        e.param_bound = a.param_bound;
    }
    if let Some(g) = a.generations {
        e.generations = g;
    }
    if a.joint_iterations {
        e.joint_iterations_search = true;
    }
    if let Some(s) = a.seed {
        e.seed = s;
    }
    e.check()?;
    let saved = SavedModel::load(&a.model)?;
    if !saved.meta.mode.samples_genomes() {
        return Err(Error::Usage(format!(
            "search needs a super-network, {} holds a {} model",
            a.model.display(),
            saved.meta.mode.name()
        )));
    }
    let spec = saved.meta.search_space.clone();
    let val = read_dataset(&split(cfg, &a.val, "val"))?;
    let teacher = a.teacher.as_deref().map(|d| SavedModel::load(d)?.into_teacher()).transpose()?;
    let features = teacher.as_ref().map(|t| TeacherFeatures::compute(t, &val)).transpose()?;
    let distill = saved.meta.distill.clone().unwrap_or_else(|| cfg.distill.clone());
    let out = search_supernet(
        &spec,
        &saved.model,
        &val,
        &cfg.evolution,
        features.as_ref().map(|f| (f, &distill)),
        a.jobs,
    )?;
    std::fs::create_dir_all(&a.out)?;
    cfg.write_snapshot(&a.out)?;
    write_search_history(BufWriter::new(File::create(a.out.join("history.csv"))?), &out.history)?;
    std::fs::write(a.out.join("best.json"), out.best.genome.to_json() + "\n")?;
    println!(
        "best params={} bound={} fitness={} {}",
        out.best.params,
        out.bound,
        out.best.fitness,
        metric_line(&out.best.metrics)
    );
    Ok(())
}

fn eval_cmd(cfg: &RunConfig, a: EvalArgs) -> Result<()> {
    let saved = SavedModel::load(&a.model)?;
    let genome = match &a.genome {
        Some(p) => read_genome(p)?,
        None => saved.default_genome(),
    };
    saved.meta.search_space.validate(&genome)?;
    if a.iterations == Some(0) {
        return Err(Error::Usage("--iterations must be at least 1".into()));
    }
    let data = read_dataset(&split(cfg, &a.data, "val"))?;
    let m = evaluate(&saved.model, &genome, &data, a.iterations, None)?;
    println!("{}", metric_line(&m));
    if let Some(dir) = &a.dump_flow {
        std::fs::create_dir_all(dir)?;
        for (i, f) in predict(&saved.model, &genome, &data, a.iterations)?.iter().enumerate() {
            write_flo(&dir.join(format!("{i:04}_pred.flo")), f)?;
        }
    }
    Ok(())
}

fn pareto_cmd(cfg: &RunConfig, a: ParetoArgs) -> Result<()> {
    let history = read_search_history(File::open(&a.history)?, &a.history.display().to_string())?;
    if history.is_empty() {
        return Err(Error::ParseLine {
            path: a.history.display().to_string(),
            line: 2,
            message: "history holds no candidates".into(),
        });
    }
    let front = candidate_front(&history, a.x);
    let points: Vec<(f64, f64, ArchConfig)> = front
        .iter()
        .map(|c| {
            let x = match a.x {
                ParetoAxis::Flops => c.flops,
                ParetoAxis::Params => c.params,
            };
            (x as f64, c.metrics.aepe, c.genome.clone())
        })
        .collect();
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
        cfg.write_snapshot(dir)?;
    }
    write_pareto(BufWriter::new(File::create(&a.out)?), &points)?;
    println!("{} of {} candidates on the front", points.len(), history.len());
    Ok(())
}

fn report_cmd(cfg: &mut RunConfig, a: ReportArgs) -> Result<()> {
    let vanilla = SavedModel::load(&a.vanilla)?;
    let fad = SavedModel::load(&a.fad)?;
    let spec = vanilla.meta.search_space.clone();
    if fad.meta.search_space != spec {
        return Err(Error::Usage("the two super-networks use different search spaces".into()));
    }
    let val = read_dataset(&split(cfg, &a.val, "val"))?;
    let panel = random_panel(&spec, a.seed, a.k);
    std::fs::create_dir_all(&a.out)?;
    cfg.write_snapshot(&a.out)?;
    let mut w = csv_writer(&a.out.join("fad_vs_vanilla.csv"))?;
    w.write_record([
        "index",
        "genome_json",
        "params",
        "aepe_vanilla",
        "aepe_fad",
        "f1_vanilla",
        "f1_fad",
        "delta_aepe",
    ])
    .map_err(csv_err)?;
    let (mut sum_v, mut sum_f, mut wins) = (0.0, 0.0, 0);
    for (i, g) in panel.iter().enumerate() {
        let ev = evaluate(&vanilla.model, g, &val, None, None)?;
        let ef = evaluate(&fad.model, g, &val, None, None)?;
        sum_v += ev.aepe;
        sum_f += ef.aepe;
        wins += (ef.aepe < ev.aepe) as usize;
        w.write_record([
            i.to_string(),
            g.to_json(),
            count_params(g, &spec)?.params.to_string(),
            ev.aepe.to_string(),
            ef.aepe.to_string(),
            ev.f1_all.to_string(),
            ef.f1_all.to_string(),
            (ef.aepe - ev.aepe).to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    let k = a.k.max(1) as f64;
    println!(
        "mean aepe vanilla={} fad={} improved={}/{}",
        sum_v / k,
        sum_f / k,
        wins,
        a.k
    );
    if a.standalone_steps > 0 {
        let train = read_dataset(&split(cfg, &a.train, "train"))?;
        cfg.train.steps = a.standalone_steps;
        let mut w = csv_writer(&a.out.join("inherit_vs_standalone.csv"))?;
        w.write_record(["index", "genome_json", "aepe_inherit", "aepe_standalone"])
            .map_err(csv_err)?;
        for (i, g) in panel.iter().enumerate() {
            let inherit = evaluate(&fad.model, g, &val, None, None)?;
            let sa = train_standalone(&spec, &fad.meta.decoder, g, &train, &val, &cfg.train, None, None)?;
            let scratch = sa.final_metrics.expect("nonempty validation split");
            w.write_record([
                i.to_string(),
                g.to_json(),
                inherit.aepe.to_string(),
                scratch.aepe.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
    }
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    Ok(csv::Writer::from_writer(File::create(path)?))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.into())
}

fn selftest_cmd() -> bool {
    let mut ok = true;
    for c in flownas::selftest::run_all() {
        ok &= c.passed;
        println!("{c}");
    }
    ok
}
