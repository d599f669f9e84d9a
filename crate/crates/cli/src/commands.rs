use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use tacalign_core::config::{RunConfig, RESOLVED_CONFIG};
use tacalign_core::dataset::{
    category_counts, generate_dataset, read_ids, split_indices, write_ids, Dataset,
    GenerateConfig,
};
use tacalign_core::embed::{load_embedding_store, EmbeddingSource, FrozenSpace, DEFAULT_CODEBOOK_SEED, DEFAULT_DIM};
use tacalign_core::encoder::{gradient_check, load_checkpoint, random_check_instance, save_checkpoint, Activation};
use tacalign_core::eval::{
    check_disjoint, embed_dataset, eval_zero_shot, probe_all, report_csv, write_zero_shot_report, EvalEncoder,
    ProbeConfig, PromptSet,
};
use tacalign_core::geometry::{PoseAugment, SensorSpec};
use tacalign_core::grasp::{
    run_refinement, ExternalReasoner, GraspEnv, Reasoner, RuleBasedReasoner, TraceStatus, DEFAULT_INSTRUCTION,
    DEFAULT_MAX_ITERS, DEFAULT_NOISE_MM,
};
use tacalign_core::train::{full_loss_check, train as run_training, write_loss_csv, TrainConfig, TrainingSet};
use tacalign_core::vocab::Shape;
use tacalign_core::{Error, Result};

use crate::{Common, EvalArgs, GraspArgs, TrainArgs};

pub const ENCODER_TOLERANCE: f64 = 1e-4;
pub const FULL_LOSS_TOLERANCE: f64 = 1e-3;

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

/// Config file, then `--set`, then the shared flags.
fn base_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::new(),
    };
    cfg.apply_overrides(&common.overrides)?;
    if let Some(s) = common.seed {
        cfg.set("seed", s.to_string())?;
    }
    if let Some(o) = &common.out {
        cfg.set("out", path_str(o))?;
    }
    Ok(cfg)
}

fn set_path(cfg: &mut RunConfig, key: &str, p: &Option<PathBuf>) -> Result<()> {
    if let Some(p) = p {
        cfg.set(key, path_str(p))?;
    }
    Ok(())
}

/// An optional path: the empty string means unset.
fn optional_path(cfg: &mut RunConfig, key: &str) -> Result<Option<PathBuf>> {
    let v: String = cfg.resolve(key, String::new())?;
    Ok((!v.is_empty()).then(|| PathBuf::from(v)))
}

fn finish(cfg: &RunConfig, out: &Path) -> Result<()> {
    cfg.check_unused()?;
    fs::create_dir_all(out).map_err(|e| Error::file(out.to_path_buf(), e))?;
    cfg.write(&out.join(RESOLVED_CONFIG))
}

fn parse_shapes(list: &str) -> Result<Vec<Shape>> {
    if list == "all" {
        return Ok(Shape::ALL.to_vec());
    }
    list.split(',').map(|w| Shape::from_word(w.trim())).collect()
}

fn embedding_source(cfg: &mut RunConfig, sensor: &SensorSpec, fallback_dim: usize) -> Result<EmbeddingSource> {
    match optional_path(cfg, "embeddings")? {
        Some(p) => Ok(EmbeddingSource::Store(load_embedding_store(p)?)),
        None => {
            let seed = cfg.resolve("codebook_seed", DEFAULT_CODEBOOK_SEED)?;
            let dim = cfg.resolve("dim", fallback_dim)?;
            Ok(EmbeddingSource::Synthetic(FrozenSpace::new(seed, dim, sensor.clone())?))
        }
    }
}

pub fn generate(common: &Common) -> Result<ExitCode> {
    let mut cfg = base_config(common)?;
    let out: PathBuf = cfg.require::<String>("out")?.into();
    let d = GenerateConfig::default();
    let gen = GenerateConfig {
        count: cfg.resolve("count", d.count)?,
        seed: cfg.resolve("seed", d.seed)?,
        num_points: cfg.resolve("num_points", d.num_points)?,
        image_w: cfg.resolve("image_w", d.image_w)?,
        image_h: cfg.resolve("image_h", d.image_h)?,
        sensor: d.sensor.clone(),
        pose_augment: PoseAugment {
            rotate: cfg.resolve("augment_rotate", d.pose_augment.rotate)?,
            translate: cfg.resolve("augment_translate", d.pose_augment.translate)?,
        },
        jitter: cfg.resolve("jitter", d.jitter)?,
        shapes: parse_shapes(&cfg.resolve("shapes", "all".to_string())?)?,
    };
    cfg.check_unused()?;
    let rows = generate_dataset(&gen, &out, common.force)?;
    finish(&cfg, &out)?;
    println!("wrote {} samples to {}", rows.len(), out.display());
    for (dim, counts) in category_counts(&rows) {
        let parts: Vec<String> = counts.iter().map(|(w, n)| format!("{w}={n}")).collect();
        println!("{dim}: {}", parts.join(" "));
    }
    Ok(ExitCode::SUCCESS)
}

pub fn train(common: &Common, args: &TrainArgs) -> Result<ExitCode> {
    let mut cfg = base_config(common)?;
    set_path(&mut cfg, "data", &args.data)?;
    set_path(&mut cfg, "checkpoint", &args.checkpoint)?;
    set_path(&mut cfg, "embeddings", &args.embeddings)?;
    set_path(&mut cfg, "resume", &args.resume)?;
    if args.no_image_loss {
        cfg.set("image_loss", "false")?;
    }
    let data: PathBuf = cfg.require::<String>("data")?.into();
    let out: PathBuf = cfg.require::<String>("out")?.into();
    let checkpoint: PathBuf = cfg.resolve("checkpoint", path_str(&out.join("checkpoint.tclc")))?.into();
    if checkpoint.exists() && !common.force {
        return Err(Error::OutputExists(checkpoint));
    }
    let sensor = SensorSpec::default();
    let ds = Dataset::load(&data)?;
    let d = TrainConfig::default();
    let seed = cfg.resolve("seed", d.seed)?;
    let resume = optional_path(&mut cfg, "resume")?;
    let start = resume.as_ref().map(|p| load_checkpoint(p, None)).transpose()?;
    let source = embedding_source(&mut cfg, &sensor, start.as_ref().map_or(DEFAULT_DIM, |p| p.dim))?;
    let tc = TrainConfig {
        batch_size: cfg.resolve("batch_size", d.batch_size)?,
        epochs: cfg.resolve("epochs", d.epochs)?,
        learning_rate: cfg.resolve("learning_rate", d.learning_rate)?,
        beta1: cfg.resolve("beta1", d.beta1)?,
        beta2: cfg.resolve("beta2", d.beta2)?,
        epsilon: cfg.resolve("epsilon", d.epsilon)?,
        seed,
        dim: source.dim(),
        image_loss: cfg.resolve("image_loss", d.image_loss)?,
    };
    let test_count = cfg.resolve("test_count", (ds.len() / 5).min(500))?;
    let split_seed = cfg.resolve("split_seed", seed)?;
    finish(&cfg, &out)?;

    let (train_idx, test_idx) = split_indices(ds.len(), test_count, split_seed)?;
    let train_ds = ds.subset(&train_idx);
    write_ids(&out.join("train_ids.txt"), train_ds.rows.iter().map(|r| &r.id))?;
    write_ids(&out.join("test_ids.txt"), test_idx.iter().map(|&i| &ds.rows[i].id))?;

    let set = TrainingSet::from_dataset(&train_ds, &source, &sensor)?;
    let outcome = run_training(&set, &tc, start)?;
    save_checkpoint(&outcome.init, out.join("init.tclc"))?;
    save_checkpoint(&outcome.params, &checkpoint)?;
    write_loss_csv(&out.join("loss.csv"), &outcome.history)?;
    if let (Some(first), Some(last)) = (outcome.history.first(), outcome.history.last()) {
        println!(
            "trained {} epochs on {} samples: total loss {:.4} -> {:.4}, tau {:.4}",
            tc.epochs,
            set.len(),
            first.total,
            last.total,
            last.tau
        );
    }
    println!("checkpoint: {}", checkpoint.display());
    Ok(ExitCode::SUCCESS)
}

/// The dataset plus the train and held-out index lists recorded next to
/// the checkpoint, if any.
struct EvalSplit {
    ds: Dataset,
    train: Vec<usize>,
    test: Vec<usize>,
}

fn load_split(cfg: &mut RunConfig, data: &Path, checkpoint: Option<&Path>) -> Result<EvalSplit> {
    let ds = Dataset::load(data)?;
    let beside = |name: &str| {
        checkpoint
            .and_then(Path::parent)
            .map(|d| d.join(name))
            .filter(|p| p.exists())
            .map(|p| path_str(&p))
            .unwrap_or_default()
    };
    let test_file = cfg.resolve("test_ids", beside("test_ids.txt"))?;
    let train_file = cfg.resolve("train_ids", beside("train_ids.txt"))?;
    let index: HashMap<&str, usize> = ds.rows.iter().enumerate().map(|(i, r)| (r.id.as_str(), i)).collect();
    let lookup = |ids: &[String]| -> Result<Vec<usize>> {
        ids.iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::Data(format!("split id {id} is not in {}", data.display())))
            })
            .collect()
    };
    let test_ids = if test_file.is_empty() { None } else { Some(read_ids(Path::new(&test_file))?) };
    let train_ids = if train_file.is_empty() { None } else { Some(read_ids(Path::new(&train_file))?) };
    if let (Some(tr), Some(te)) = (&train_ids, &test_ids) {
        check_disjoint(tr, te)?;
    }
    let test = match &test_ids {
        Some(ids) => lookup(ids)?,
        None => (0..ds.len()).collect(),
    };
    let train = match &train_ids {
        Some(ids) => lookup(ids)?,
        None => {
            let held: std::collections::HashSet<usize> = test.iter().copied().collect();
            (0..ds.len()).filter(|i| !held.contains(i)).collect()
        }
    };
    Ok(EvalSplit { ds, train, test })
}

struct EvalSetup {
    out: PathBuf,
    sensor: SensorSpec,
    split: EvalSplit,
    source: EmbeddingSource,
    params: Option<tacalign_core::encoder::EncoderParams<f32>>,
}

fn eval_setup(cfg: &mut RunConfig, args: &EvalArgs) -> Result<EvalSetup> {
    set_path(cfg, "data", &args.data)?;
    set_path(cfg, "checkpoint", &args.checkpoint)?;
    set_path(cfg, "embeddings", &args.embeddings)?;
    if args.oracle_encoder {
        cfg.set("oracle_encoder", "true")?;
    }
    let data: PathBuf = cfg.require::<String>("data")?.into();
    let out: PathBuf = cfg.require::<String>("out")?.into();
    let oracle = cfg.resolve("oracle_encoder", false)?;
    let checkpoint = optional_path(cfg, "checkpoint")?;
    let params = match (&checkpoint, oracle) {
        (_, true) => None,
        (Some(p), false) => Some(load_checkpoint(p, None)?),
        (None, false) => return Err(Error::Config("--checkpoint is required unless --oracle-encoder is set".into())),
    };
    let sensor = SensorSpec::default();
    let source = embedding_source(cfg, &sensor, params.as_ref().map_or(DEFAULT_DIM, |p| p.dim))?;
    if let Some(p) = &params {
        if p.dim != source.dim() {
            return Err(Error::Shape(format!(
                "checkpoint width {} does not match embedding width {}",
                p.dim,
                source.dim()
            )));
        }
    }
    let split = load_split(cfg, &data, checkpoint.as_deref())?;
    Ok(EvalSetup { out, sensor, split, source, params })
}

impl EvalSetup {
    fn encoder(&self) -> EvalEncoder<'_> {
        match &self.params {
            Some(p) => EvalEncoder::Trained(p),
            None => EvalEncoder::Oracle(&self.source),
        }
    }
}

pub fn eval_zeroshot(common: &Common, args: &EvalArgs) -> Result<ExitCode> {
    let mut cfg = base_config(common)?;
    let setup = eval_setup(&mut cfg, args)?;
    finish(&cfg, &setup.out)?;
    let prompts = PromptSet::from_source(&setup.source)?;
    let test = setup.split.ds.subset(&setup.split.test);
    let report = eval_zero_shot(&test, &setup.encoder(), &prompts, &setup.sensor)?;
    write_zero_shot_report(&setup.out, &report)?;
    print!("{}", report_csv(report.dims.iter().map(|d| (d.dimension, d.accuracy(), d.n()))));
    Ok(ExitCode::SUCCESS)
}

pub fn eval_probe(common: &Common, args: &EvalArgs) -> Result<ExitCode> {
    let mut cfg = base_config(common)?;
    let setup = eval_setup(&mut cfg, args)?;
    let d = ProbeConfig::default();
    let pc = ProbeConfig {
        epochs: cfg.resolve("probe_epochs", d.epochs)?,
        batch_size: cfg.resolve("probe_batch_size", d.batch_size)?,
        learning_rate: cfg.resolve("probe_learning_rate", d.learning_rate)?,
        seed: cfg.resolve("seed", d.seed)?,
    };
    finish(&cfg, &setup.out)?;
    let train = setup.split.ds.subset(&setup.split.train);
    let test = setup.split.ds.subset(&setup.split.test);
    let enc = setup.encoder();
    let ftr = embed_dataset(&enc, &train, &setup.sensor)?;
    let fte = embed_dataset(&enc, &test, &setup.sensor)?;
    let truth = |ds: &Dataset| ds.rows.iter().map(|r| r.categories()).collect::<Vec<_>>();
    let rows = probe_all(&ftr, &truth(&train), &fte, &truth(&test), &pc)?;
    let csv = report_csv(rows);
    let path = setup.out.join("probe_report.csv");
    fs::write(&path, &csv).map_err(|e| Error::File { path, source: e })?;
    print!("{csv}");
    Ok(ExitCode::SUCCESS)
}

pub fn gradcheck(common: &Common) -> Result<ExitCode> {
    let mut cfg = base_config(common)?;
    let seed = cfg.resolve("seed", 0u64)?;
    let dim = cfg.resolve("dim", 16usize)?;
    let points = cfg.resolve("points", 32usize)?;
    let batch = cfg.resolve("batch_size", 4usize)?;
    let eps = cfg.resolve("eps", 1e-4f64)?;
    let out = optional_path(&mut cfg, "out")?;
    match &out {
        Some(o) => finish(&cfg, o)?,
        None => cfg.check_unused()?,
    }
    let (params, pts, probe) = random_check_instance(seed, dim, points)?;
    let enc = gradient_check(&params, &pts, &probe, eps, Activation::Relu)?;
    let full = full_loss_check(seed, batch, dim, points, eps)?;
    let ok = enc < ENCODER_TOLERANCE && full < FULL_LOSS_TOLERANCE;
    println!("encoder max relative error {enc:.3e} (limit {ENCODER_TOLERANCE:.0e})");
    println!("full objective max relative error {full:.3e} (limit {FULL_LOSS_TOLERANCE:.0e})");
    println!("{}", if ok { "PASS" } else { "FAIL" });
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

pub fn grasp_demo(common: &Common, args: &GraspArgs) -> Result<ExitCode> {
    let mut cfg = base_config(common)?;
    if let Some(s) = &args.scenario {
        cfg.set("scenario", s.clone())?;
    }
    if let Some(r) = &args.reasoner {
        cfg.set("reasoner", r.clone())?;
    }
    let out: PathBuf = cfg.require::<String>("out")?.into();
    let scenario = cfg.resolve("scenario", "random".to_string())?;
    let seed = cfg.resolve("seed", 0u64)?;
    let default_noise = if scenario == "fig6" { 0.0 } else { DEFAULT_NOISE_MM };
    let noise = cfg.resolve("noise_mm", default_noise)?;
    let max_iters = cfg.resolve("max_iters", DEFAULT_MAX_ITERS)?;
    let instruction = cfg.resolve("instruction", DEFAULT_INSTRUCTION.to_string())?;
    let reasoner_cmd = cfg.resolve("reasoner", String::new())?;
    finish(&cfg, &out)?;

    let sensor = SensorSpec::default();
    let mut env = match scenario.as_str() {
        "fig6" => {
            let mut e = GraspEnv::fig6(sensor, seed);
            e.noise_mm = noise;
            e
        }
        "random" => GraspEnv::new(sensor, seed, noise),
        other => return Err(Error::Config(format!("unknown scenario {other}"))),
    };
    let mut reasoner: Box<dyn Reasoner> = if reasoner_cmd.is_empty() {
        Box::new(RuleBasedReasoner)
    } else {
        let mut parts = reasoner_cmd.split_whitespace().map(String::from);
        let program = parts.next().unwrap_or_default();
        Box::new(ExternalReasoner::spawn(&program, &parts.collect::<Vec<_>>())?)
    };
    let clouds = out.join("clouds");
    fs::create_dir_all(&clouds).map_err(|e| Error::file(clouds.clone(), e))?;
    let trace = run_refinement(&mut env, reasoner.as_mut(), &instruction, max_iters, Some(&clouds));
    trace.write(&out)?;
    print!("{}", trace.to_text());
    match &trace.status {
        TraceStatus::Success => Ok(ExitCode::SUCCESS),
        TraceStatus::MaxIters => {
            eprintln!("no success descriptor within {max_iters} iterations");
            Ok(ExitCode::FAILURE)
        }
        TraceStatus::Error(e) => Err(Error::Data(format!("refinement stopped: {e}"))),
    }
}
