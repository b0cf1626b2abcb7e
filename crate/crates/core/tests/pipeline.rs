use cadsketch_core::nets::{SpnConfig, SrnConfig, TransformerConfig};
use cadsketch_core::pipeline::commands::{run, Command, Invocation};
use cadsketch_core::pipeline::{
    evaluate, finetune_spn, infer_batch, load_split, pretrain_spn, score_predictions, test_time_optimize, train_semi,
    train_srn, zero_shot_infer, InputStyle, RunConfig, RunManifest, Sample, SemiConfig, SrnData, TrainConfig,
    TtoptConfig, TypeQuota, MANIFEST_FILE,
};
use cadsketch_core::sketch::tokens::LINE;
use cadsketch_core::synthgen::{sample_sketch, GeneratorConfig, RandomSource};
use cadsketch_core::{PrimitiveKind, SketchImage, SpnModel, SrnModel};

fn tiny_transformer() -> TransformerConfig {
    TransformerConfig { layers: 1, heads: 2, d_model: 16, d_ff: 32, patch: 8 }
}

fn srn_config() -> SrnConfig {
    SrnConfig { transformer: tiny_transformer(), image_size: 32 }
}

fn spn_config() -> SpnConfig {
    SpnConfig { transformer: tiny_transformer(), image_size: 32, backbone_channels: 4, backbone_layers: 2 }
}

fn samples(n: usize, seed: u64) -> Vec<Sample> {
    let mut rng = RandomSource::new(seed);
    (0..n)
        .map(|_| {
            let (_, s) = sample_sketch(&GeneratorConfig::default(), &mut rng).unwrap();
            Sample::render(s, 32).unwrap()
        })
        .collect()
}

fn train_cfg(steps: usize) -> TrainConfig {
    TrainConfig { lr: 1e-3, batch_size: 4, max_steps: Some(steps), ..TrainConfig::default() }
}

fn inputs(s: &[Sample]) -> Vec<SketchImage> {
    s.iter().map(|s| s.input.clone()).collect()
}

#[test]
fn pretraining_leaves_renderer_untouched() {
    let srn = SrnModel::new(srn_config(), 1).unwrap();
    let mut spn = SpnModel::new(spn_config(), 2).unwrap();
    let before = srn.params.content_hash();
    let spn_before = spn.params.content_hash();
    let data = samples(6, 3);
    let log = pretrain_spn(&mut spn, &srn, &inputs(&data), &train_cfg(3), 0).unwrap();
    assert_eq!(log.step_losses.len(), 3);
    assert_eq!(srn.params.content_hash(), before);
    assert_ne!(spn.params.content_hash(), spn_before);
}

#[test]
fn test_time_optimization_freezes_both_networks() {
    let srn = SrnModel::new(srn_config(), 1).unwrap();
    let spn = SpnModel::new(spn_config(), 2).unwrap();
    let (a, b) = (srn.params.content_hash(), spn.params.content_hash());
    let img = &samples(1, 4)[0].input;
    let r = test_time_optimize(&spn, &srn, img, &TtoptConfig { steps: 3, lr: 0.05 }, None).unwrap();
    assert_eq!(r.trace.len(), 4);
    assert_eq!(srn.params.content_hash(), a);
    assert_eq!(spn.params.content_hash(), b);
}

#[test]
fn zero_step_optimization_is_plain_inference() {
    let srn = SrnModel::new(srn_config(), 1).unwrap();
    let spn = SpnModel::new(spn_config(), 2).unwrap();
    for s in samples(3, 5) {
        let plain = zero_shot_infer(&spn, &s.input, None).unwrap();
        let r = test_time_optimize(&spn, &srn, &s.input, &TtoptConfig { steps: 0, lr: 0.05 }, None).unwrap();
        assert_eq!(r.inference, plain);
        assert_eq!(r.trace.len(), 1);
    }
}

#[test]
fn line_quota_yields_only_lines() {
    let spn = SpnModel::new(spn_config(), 2).unwrap();
    let quota = TypeQuota { line: 16, ..TypeQuota::default() };
    for inf in infer_batch(&spn, &inputs(&samples(4, 6)), Some(&quota)).unwrap() {
        assert!(inf.grid.slots.iter().all(|s| s[0] == LINE));
        assert!(inf.sketch.iter().all(|p| p.kind() == PrimitiveKind::Line));
    }
}

#[test]
fn mixed_quota_counts_types() {
    let spn = SpnModel::new(spn_config(), 2).unwrap();
    let quota = TypeQuota { arc: 1, circle: 2, line: 3, point: 4 };
    let inf = zero_shot_infer(&spn, &samples(1, 7)[0].input, Some(&quota)).unwrap();
    let count = |t: u8| inf.grid.slots.iter().filter(|s| s[0] == t).count();
    assert_eq!([count(3), count(4), count(5), count(6), count(0)], [1, 2, 3, 4, 6]);
}

#[test]
fn zero_render_weight_matches_finetuning() {
    let srn = SrnModel::new(srn_config(), 1).unwrap();
    let data = samples(6, 8);
    let mut a = SpnModel::new(spn_config(), 2).unwrap();
    let mut b = a.clone();
    let la = finetune_spn(&mut a, &data, &train_cfg(4), 9).unwrap();
    let w = SemiConfig { lambda_render: 0.0, lambda_param: 1.0 };
    let lb = train_semi(&mut b, &srn, &data, &inputs(&data), &train_cfg(4), &w, 9).unwrap();
    assert_eq!(la.step_losses, lb.step_losses);
    assert_eq!(a.params.content_hash(), b.params.content_hash());
}

#[test]
fn zero_param_weight_matches_pretraining() {
    let srn = SrnModel::new(srn_config(), 1).unwrap();
    let data = samples(6, 10);
    let mut a = SpnModel::new(spn_config(), 2).unwrap();
    let mut b = a.clone();
    let la = pretrain_spn(&mut a, &srn, &inputs(&data), &train_cfg(4), 11).unwrap();
    let w = SemiConfig { lambda_render: 1.0, lambda_param: 0.0 };
    let lb = train_semi(&mut b, &srn, &data, &inputs(&data), &train_cfg(4), &w, 11).unwrap();
    assert_eq!(la.step_losses, lb.step_losses);
    assert_eq!(a.params.content_hash(), b.params.content_hash());
}

#[test]
fn matched_loss_never_exceeds_identity() {
    let mut spn = SpnModel::new(spn_config(), 2).unwrap();
    let log = finetune_spn(&mut spn, &samples(8, 12), &train_cfg(6), 0).unwrap();
    assert_eq!(log.assignment_losses.len(), 6);
    for &(m, i) in &log.assignment_losses {
        assert!(m <= i + 1e-9, "{m} > {i}");
    }
}

#[test]
fn ground_truth_scores_perfectly() {
    let data = samples(12, 13);
    let preds: Vec<_> = data.iter().map(|s| s.grid).collect();
    let r = score_predictions(&preds, &data).unwrap();
    assert_eq!(r.samples.len(), data.len());
    assert_eq!(r.summary.samples, data.len());
    assert_eq!(r.summary.acc, 1.0);
    assert_eq!(r.summary.param_mse, 0.0);
    assert_eq!(r.summary.img_mse, 0.0);
    assert_eq!(r.summary.chamfer, 0.0);
}

#[test]
fn summary_is_mean_of_samples() {
    let spn = SpnModel::new(spn_config(), 2).unwrap();
    let data = samples(9, 14);
    let r = evaluate(&spn, &data, None).unwrap();
    assert_eq!(r.samples.len(), 9);
    let mean = |f: fn(&cadsketch_core::pipeline::SampleReport) -> f64| r.samples.iter().map(f).sum::<f64>() / 9.0;
    assert!((r.summary.acc - mean(|s| s.metrics.acc)).abs() < 1e-9);
    assert!((r.summary.param_mse - mean(|s| s.metrics.param_mse)).abs() < 1e-9);
    assert!((r.summary.img_mse - mean(|s| s.metrics.img_mse)).abs() < 1e-9);
    assert!((r.summary.chamfer - mean(|s| s.metrics.chamfer)).abs() < 1e-9);
}

#[test]
fn renderer_training_is_deterministic() {
    let data = samples(5, 15);
    let run = || {
        let mut srn = SrnModel::new(srn_config(), 1).unwrap();
        let log = train_srn(&mut srn, SrnData::Samples(&data), &train_cfg(4), 3).unwrap();
        (log.step_losses, srn.params.content_hash())
    };
    assert_eq!(run(), run());
    let gen = GeneratorConfig::default();
    let mut srn = SrnModel::new(srn_config(), 1).unwrap();
    let log = train_srn(&mut srn, SrnData::Generator(&gen), &train_cfg(2), 3).unwrap();
    assert!(log.step_losses.iter().all(|l| l.is_finite()));
}

#[test]
fn config_round_trips_through_toml() {
    let mut cfg = RunConfig::default().with_seed(42);
    cfg.srn = srn_config();
    cfg.spn = spn_config();
    cfg.infer.quota = Some(TypeQuota { line: 4, ..TypeQuota::default() });
    cfg.data.corpus = Some("corpus".into());
    let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(back.generator.seed, 42);
}

#[test]
fn config_rejects_bad_values() {
    for text in [
        "[train]\nbatch_size = 0",
        "[semi]\nlambda_render = -1.0",
        "[infer.quota]\nline = 17",
        "[train]\nlearning_rate = 0.1",
        "[srn]\nimage_size = 32",
    ] {
        assert!(RunConfig::from_toml(text).is_err(), "{text}");
    }
    assert!(RunConfig::from_toml("").is_ok());
}

fn tiny_run(dir: &std::path::Path) -> RunConfig {
    let mut cfg = RunConfig::default().with_seed(7);
    cfg.srn = srn_config();
    cfg.spn = spn_config();
    cfg.corpus.n_train = 6;
    cfg.corpus.n_val = 2;
    cfg.corpus.n_test = 3;
    cfg.corpus.image_size = 32;
    cfg.train = train_cfg(2);
    cfg.ttopt.steps = 2;
    cfg.data.corpus = Some(dir.join("corpus"));
    cfg
}

fn invoke(cmd: Command, cfg: &RunConfig, out: std::path::PathBuf) -> RunManifest {
    let outcome = run(cmd, &Invocation { config: cfg.clone(), out: out.clone(), input: None }).unwrap();
    assert!(outcome.passed);
    let text = std::fs::read_to_string(out.join(MANIFEST_FILE)).unwrap();
    let m: RunManifest = serde_json::from_str(&text).unwrap();
    assert_eq!(m, outcome.manifest);
    assert_eq!(m.seed, cfg.seed);
    for o in &m.outputs {
        assert!(out.join(o).exists(), "{o}");
    }
    m
}

#[test]
fn commands_chain_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny_run(tmp.path());
    invoke(Command::SynthGen, &cfg, tmp.path().join("corpus"));
    let train = load_split(&tmp.path().join("corpus"), "train", InputStyle::Precise, 32, None).unwrap();
    assert_eq!(train.len(), 6);

    let m = invoke(Command::TrainSrn, &cfg, tmp.path().join("srn"));
    assert_eq!(m.notes["steps"], 2);
    cfg.checkpoints.srn = Some(tmp.path().join("srn/srn.pcso"));

    let m = invoke(Command::PretrainSpn, &cfg, tmp.path().join("pre"));
    assert_eq!(m.notes["srn_unchanged"], true);
    cfg.checkpoints.spn = Some(tmp.path().join("pre/spn.pcso"));

    invoke(Command::FinetuneSpn, &cfg, tmp.path().join("ft"));
    let m = invoke(Command::TrainSemi, &cfg, tmp.path().join("semi"));
    assert_eq!(m.notes["srn_unchanged"], true);

    let m = invoke(Command::Eval, &cfg, tmp.path().join("eval"));
    assert_eq!(m.notes["summary"]["samples"], 3);
    invoke(Command::Infer, &cfg, tmp.path().join("infer"));
    let m = invoke(Command::Ttopt, &cfg, tmp.path().join("tto"));
    assert_eq!(m.notes["srn_unchanged"], true);
    assert_eq!(m.notes["spn_unchanged"], true);
}

#[test]
fn render_commands_write_one_image_per_sketch() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_run(tmp.path());
    invoke(Command::SynthGen, &cfg, tmp.path().join("corpus"));
    for cmd in [Command::Render, Command::Handdraw] {
        let out = tmp.path().join(cmd.name());
        let inv = Invocation { config: cfg.clone(), out: out.clone(), input: Some(tmp.path().join("corpus/test.jsonl")) };
        let m = run(cmd, &inv).unwrap().manifest;
        assert_eq!(m.outputs, ["0.pgm", "1.pgm", "2.pgm"]);
    }
    // Precise renders match the corpus images byte for byte.
    for i in 0..3 {
        let a = std::fs::read(tmp.path().join(format!("render/{i}.pgm"))).unwrap();
        let b = std::fs::read(tmp.path().join(format!("corpus/images/test/{i}.pgm"))).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn corpus_bytes_are_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_run(tmp.path());
    invoke(Command::SynthGen, &cfg, tmp.path().join("a"));
    invoke(Command::SynthGen, &cfg, tmp.path().join("b"));
    for f in ["train.jsonl", "val.jsonl", "test.jsonl", "manifest.json", "images/train/5.pgm"] {
        assert_eq!(std::fs::read(tmp.path().join("a").join(f)).unwrap(), std::fs::read(tmp.path().join("b").join(f)).unwrap());
    }
}

#[test]
fn missing_renderer_checkpoint_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_run(tmp.path());
    let inv = Invocation { config: cfg, out: tmp.path().join("x"), input: None };
    assert!(run(Command::PretrainSpn, &inv).is_err());
}

#[test]
fn mismatched_checkpoint_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny_run(tmp.path());
    let srn = SrnModel::new(srn_config(), 1).unwrap();
    srn.save(&tmp.path().join("srn.pcso")).unwrap();
    cfg.checkpoints.srn = Some(tmp.path().join("srn.pcso"));
    cfg.srn.transformer.d_ff = 64;
    let inv = Invocation { config: cfg, out: tmp.path().join("x"), input: None };
    let err = run(Command::PretrainSpn, &inv).unwrap_err();
    assert!(matches!(err, cadsketch_core::pipeline::PipelineError::CheckpointMismatch(_)), "{err}");
}
