//! File-driven entry points, one per CLI subcommand. Every command writes
//! its outputs under `out` and a [`RunManifest`] next to them.

use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{
    evaluate, finetune_spn, gradient_suite, infer_batch, load_split, pretrain_spn, test_time_optimize, train_semi,
    train_srn, InputStyle, PipelineError, RunConfig, RunManifest, Sample, SrnData, SrnSource, TrainLog,
};
use crate::io::write_atomic;
use crate::nets::{SpnModel, SrnModel};
use crate::raster::{rasterize, read_pgm, synthesize_handdrawn_with, write_pgm, SketchImage};
use crate::sketch::dataset::{parse_dataset, serialize_dataset};
use crate::sketch::Sketch;
use crate::synthgen::{build_corpus, CorpusSpec, RandomSource};

const STREAM_HANDDRAW: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    SynthGen,
    Render,
    Handdraw,
    TrainSrn,
    PretrainSpn,
    FinetuneSpn,
    TrainSemi,
    Infer,
    Ttopt,
    Eval,
    Gradcheck,
}

impl Command {
    pub const ALL: [Command; 11] = [
        Self::SynthGen,
        Self::Render,
        Self::Handdraw,
        Self::TrainSrn,
        Self::PretrainSpn,
        Self::FinetuneSpn,
        Self::TrainSemi,
        Self::Infer,
        Self::Ttopt,
        Self::Eval,
        Self::Gradcheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::SynthGen => "synth-gen",
            Self::Render => "render",
            Self::Handdraw => "handdraw",
            Self::TrainSrn => "train-srn",
            Self::PretrainSpn => "pretrain-spn",
            Self::FinetuneSpn => "finetune-spn",
            Self::TrainSemi => "train-semi",
            Self::Infer => "infer",
            Self::Ttopt => "ttopt",
            Self::Eval => "eval",
            Self::Gradcheck => "gradcheck",
        }
    }
}

/// Resolved arguments of one run.
#[derive(Debug, Clone)]
pub struct Invocation {
    pub config: RunConfig,
    pub out: PathBuf,
    /// Sketch JSONL for `render`/`handdraw`; image file, image directory or
    /// corpus directory for `infer`/`ttopt`/`eval`.
    pub input: Option<PathBuf>,
}

/// What a finished run produced. `passed` is false only when `gradcheck`
/// found an op over tolerance.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub manifest: RunManifest,
    pub passed: bool,
}

pub fn run(cmd: Command, inv: &Invocation) -> Result<Outcome, PipelineError> {
    inv.config.validate()?;
    std::fs::create_dir_all(&inv.out)?;
    let mut m = RunManifest::new(cmd.name(), &inv.config);
    let passed = match cmd {
        Command::SynthGen => synth_gen(inv, &mut m)?,
        Command::Render | Command::Handdraw => render(cmd, inv, &mut m)?,
        Command::TrainSrn => train_srn_cmd(inv, &mut m)?,
        Command::PretrainSpn => pretrain_cmd(inv, &mut m)?,
        Command::FinetuneSpn => finetune_cmd(inv, &mut m)?,
        Command::TrainSemi => semi_cmd(inv, &mut m)?,
        Command::Infer | Command::Ttopt => infer_cmd(cmd, inv, &mut m)?,
        Command::Eval => eval_cmd(inv, &mut m)?,
        Command::Gradcheck => gradcheck_cmd(inv, &mut m)?,
    };
    m.write(&inv.out)?;
    Ok(Outcome { manifest: m, passed })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    write_atomic(path, &serde_json::to_vec_pretty(value).expect("value serializes"))?;
    Ok(())
}

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path, PipelineError> {
    p.as_deref().ok_or_else(|| PipelineError::Config(format!("{what} is not set")))
}

fn load_srn(cfg: &RunConfig) -> Result<SrnModel, PipelineError> {
    let path = required(&cfg.checkpoints.srn, "checkpoints.srn")?;
    SrnModel::load(path, cfg.srn.clone()).map_err(PipelineError::CheckpointMismatch)
}

/// The configured parameterizer checkpoint, or a fresh seeded model.
fn load_or_init_spn(cfg: &RunConfig) -> Result<SpnModel, PipelineError> {
    match &cfg.checkpoints.spn {
        Some(p) => SpnModel::load(p, cfg.spn.clone()).map_err(PipelineError::CheckpointMismatch),
        None => Ok(SpnModel::new(cfg.spn.clone(), cfg.seed)?),
    }
}

fn corpus_split(dir: Option<&Path>, split: &str, cfg: &RunConfig) -> Result<Vec<Sample>, PipelineError> {
    let dir = dir.or(cfg.data.corpus.as_deref()).ok_or_else(|| PipelineError::Config("data.corpus is not set".into()))?;
    load_split(dir, split, cfg.data.input_style, cfg.spn.image_size, cfg.data.limit)
}

fn log_notes(m: &mut RunManifest, log: &TrainLog, out: &Path) -> Result<(), PipelineError> {
    write_json(&out.join("train_log.json"), log)?;
    m.outputs.push("train_log.json".into());
    m.note("steps", log.step_losses.len());
    if let Some(l) = log.final_loss() {
        m.note("final_loss", l);
    }
    Ok(())
}

fn synth_gen(inv: &Invocation, m: &mut RunManifest) -> Result<bool, PipelineError> {
    let c = &inv.config.corpus;
    let spec = CorpusSpec {
        n_train: c.n_train,
        n_val: c.n_val,
        n_test: c.n_test,
        image_size: c.image_size,
        handdrawn: c.handdrawn,
    };
    let corpus = build_corpus(&inv.config.generator, &spec, &inv.out)?;
    m.outputs.extend(["manifest.json", "train.jsonl", "val.jsonl", "test.jsonl", "images"].map(String::from));
    if corpus.handdrawn.is_some() {
        m.outputs.push("images_hd".into());
    }
    m.note("counts", serde_json::to_value(&corpus.counts).expect("counts serialize"));
    Ok(true)
}

fn render(cmd: Command, inv: &Invocation, m: &mut RunManifest) -> Result<bool, PipelineError> {
    let path = required(&inv.input, "--input (sketch JSONL)")?;
    let sketches = parse_dataset(path)?;
    let size = inv.config.corpus.image_size;
    let hd = inv.config.corpus.handdrawn.unwrap_or_default();
    let mut rng = RandomSource::stream(inv.config.seed, STREAM_HANDDRAW);
    for (i, s) in sketches.iter().enumerate() {
        let img = match cmd {
            Command::Handdraw => synthesize_handdrawn_with(s, &hd, size, size, &mut rng),
            _ => rasterize(s, size, size),
        };
        let name = format!("{i}.pgm");
        write_pgm(&img, &inv.out.join(&name))?;
        m.outputs.push(name);
    }
    Ok(true)
}

fn train_srn_cmd(inv: &Invocation, m: &mut RunManifest) -> Result<bool, PipelineError> {
    let cfg = &inv.config;
    let mut srn = match &cfg.checkpoints.srn {
        Some(p) => SrnModel::load(p, cfg.srn.clone()).map_err(PipelineError::CheckpointMismatch)?,
        None => SrnModel::new(cfg.srn.clone(), cfg.seed)?,
    };
    let log = match cfg.train.srn_source {
        SrnSource::Generator => train_srn(&mut srn, SrnData::Generator(&cfg.generator), &cfg.train, cfg.seed)?,
        SrnSource::Corpus => {
            let dir = required(&cfg.data.corpus, "data.corpus")?;
            let samples = load_split(dir, "train", InputStyle::Precise, cfg.srn.image_size, cfg.data.limit)?;
            train_srn(&mut srn, SrnData::Samples(&samples), &cfg.train, cfg.seed)?
        }
    };
    srn.save(&inv.out.join("srn.pcso"))?;
    m.outputs.push("srn.pcso".into());
    m.note("srn_hash", srn.params.content_hash());
    log_notes(m, &log, &inv.out)?;
    Ok(true)
}

fn unlabeled_images(cfg: &RunConfig) -> Result<Vec<SketchImage>, PipelineError> {
    Ok(corpus_split(cfg.data.unlabeled.as_deref(), "train", cfg)?.into_iter().map(|s| s.input).collect())
}

fn save_spn(spn: &SpnModel, m: &mut RunManifest, out: &Path) -> Result<(), PipelineError> {
    spn.save(&out.join("spn.pcso"))?;
    m.outputs.push("spn.pcso".into());
    m.note("spn_hash", spn.params.content_hash());
    Ok(())
}

/// Records the renderer hash before and after a run that must not touch it.
fn frozen_notes(m: &mut RunManifest, before: String, srn: &SrnModel) {
    let after = srn.params.content_hash();
    m.note("srn_unchanged", before == after);
    m.note("srn_hash_before", before);
    m.note("srn_hash_after", after);
}

fn pretrain_cmd(inv: &Invocation, m: &mut RunManifest) -> Result<bool, PipelineError> {
    let cfg = &inv.config;
    let srn = load_srn(cfg)?;
    let before = srn.params.content_hash();
    let mut spn = load_or_init_spn(cfg)?;
    let images = unlabeled_images(cfg)?;
    let log = pretrain_spn(&mut spn, &srn, &images, &cfg.train, cfg.seed)?;
    save_spn(&spn, m, &inv.out)?;
    frozen_notes(m, before, &srn);
    log_notes(m, &log, &inv.out)?;
    Ok(true)
}

fn finetune_cmd(inv: &Invocation, m: &mut RunManifest) -> Result<bool, PipelineError> {
    let cfg = &inv.config;
    let mut spn = load_or_init_spn(cfg)?;
    let labeled = corpus_split(cfg.data.labeled.as_deref(), "train", cfg)?;
    let log = finetune_spn(&mut spn, &labeled, &cfg.train, cfg.seed)?;
    save_spn(&spn, m, &inv.out)?;
    log_notes(m, &log, &inv.out)?;
    Ok(true)
}

fn semi_cmd(inv: &Invocation, m: &mut RunManifest) -> Result<bool, PipelineError> {
    let cfg = &inv.config;
    let srn = load_srn(cfg)?;
    let before = srn.params.content_hash();
    let mut spn = load_or_init_spn(cfg)?;
    let labeled = corpus_split(cfg.data.labeled.as_deref(), "train", cfg)?;
    let images = unlabeled_images(cfg)?;
    let log = train_semi(&mut spn, &srn, &labeled, &images, &cfg.train, &cfg.semi, cfg.seed)?;
    save_spn(&spn, m, &inv.out)?;
    frozen_notes(m, before, &srn);
    log_notes(m, &log, &inv.out)?;
    Ok(true)
}

/// A single PGM, a directory of `{i}.pgm` files, or a corpus directory
/// (its evaluation split). Without `input`, `data.corpus` is used.
fn load_images(input: Option<&Path>, cfg: &RunConfig) -> Result<Vec<SketchImage>, PipelineError> {
    match input {
        Some(p) if p.is_file() => Ok(vec![read_pgm(p)?]),
        Some(p) if p.is_dir() && !p.join("manifest.json").exists() => {
            let mut files: Vec<PathBuf> = std::fs::read_dir(p)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "pgm"))
                .collect();
            // Numeric stems sort numerically, the rest lexically after them.
            files.sort_by_key(|f| {
                let stem = f.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
                (stem.parse::<u64>().unwrap_or(u64::MAX), stem)
            });
            files.iter().map(|f| Ok(read_pgm(f)?)).collect()
        }
        other => Ok(corpus_split(other, &cfg.data.eval_split, cfg)?.into_iter().map(|s| s.input).collect()),
    }
}

fn infer_cmd(cmd: Command, inv: &Invocation, m: &mut RunManifest) -> Result<bool, PipelineError> {
    let cfg = &inv.config;
    let spn = load_or_init_spn(cfg)?;
    let images = load_images(inv.input.as_deref(), cfg)?;
    let quota = cfg.infer.quota.as_ref();
    let sketches: Vec<Sketch> = if cmd == Command::Ttopt {
        let srn = load_srn(cfg)?;
        let before = srn.params.content_hash();
        let spn_before = spn.params.content_hash();
        let mut traces = Vec::with_capacity(images.len());
        let mut sketches = Vec::with_capacity(images.len());
        for img in &images {
            let r = test_time_optimize(&spn, &srn, img, &cfg.ttopt, quota)?;
            traces.push(r.trace);
            sketches.push(r.inference.sketch);
        }
        write_json(&inv.out.join("traces.json"), &traces)?;
        m.outputs.push("traces.json".into());
        let improved = traces.iter().filter(|t| t.last() <= t.first()).count();
        m.note("improved", improved);
        m.note("spn_unchanged", spn_before == spn.params.content_hash());
        frozen_notes(m, before, &srn);
        sketches
    } else {
        infer_batch(&spn, &images, quota)?.into_iter().map(|i| i.sketch).collect()
    };
    serialize_dataset(&sketches, &inv.out.join("predictions.jsonl"))?;
    m.outputs.push("predictions.jsonl".into());
    m.note("images", images.len());
    Ok(true)
}

fn eval_cmd(inv: &Invocation, m: &mut RunManifest) -> Result<bool, PipelineError> {
    let cfg = &inv.config;
    let spn = load_or_init_spn(cfg)?;
    let samples = corpus_split(inv.input.as_deref(), &cfg.data.eval_split, cfg)?;
    let report = evaluate(&spn, &samples, cfg.infer.quota.as_ref())?;
    report.write_json(&inv.out.join("eval_report.json"))?;
    m.outputs.push("eval_report.json".into());
    m.note("summary", serde_json::to_value(&report.summary).expect("summary serializes"));
    Ok(true)
}

fn gradcheck_cmd(inv: &Invocation, m: &mut RunManifest) -> Result<bool, PipelineError> {
    let entries = gradient_suite(inv.config.seed, &inv.config.srn)?;
    write_json(&inv.out.join("gradcheck.json"), &entries)?;
    m.outputs.push("gradcheck.json".into());
    let failed: Vec<&str> = entries.iter().filter(|e| !e.passed).map(|e| e.name.as_str()).collect();
    m.note("checked_ops", entries.len());
    m.note("failed_ops", failed.clone());
    Ok(failed.is_empty())
}
