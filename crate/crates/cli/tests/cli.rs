use std::path::Path;
use std::process::{Command, Output};

fn cadsketch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cadsketch")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn help_lists_every_subcommand() {
    let o = cadsketch(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    for sub in [
        "synth-gen", "render", "handdraw", "train-srn", "pretrain-spn", "finetune-spn", "train-semi", "infer", "ttopt",
        "eval", "gradcheck",
    ] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let o = cadsketch(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("frobnicate"));
}

#[test]
fn unknown_flag_is_named() {
    let o = cadsketch(&["eval", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--bogus"));
    let o = cadsketch(&["eval", "--seed", "abc"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--seed"));
}

#[test]
fn missing_subcommand_is_a_usage_error() {
    assert_eq!(cadsketch(&[]).status.code(), Some(1));
}

#[test]
fn runtime_failures_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let o = cadsketch(&["pretrain-spn", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("checkpoints.srn"));

    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "[train]\nbatch_size = 0\n").unwrap();
    let o = cadsketch(&["eval", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("batch_size"));
}

fn write_tiny_config(path: &Path) {
    std::fs::write(
        path,
        r#"
[srn]
image_size = 32
[srn.transformer]
layers = 1
heads = 2
d_model = 16
d_ff = 32
patch = 8

[spn]
image_size = 32
backbone_channels = 4
backbone_layers = 1
[spn.transformer]
layers = 1
heads = 2
d_model = 16
d_ff = 32
patch = 8

[corpus]
n_train = 4
n_val = 1
n_test = 2
image_size = 32

[train]
batch_size = 2
max_steps = 1
"#,
    )
    .unwrap();
}

#[test]
fn synth_gen_then_eval_writes_manifests() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    write_tiny_config(&cfg);
    let corpus = tmp.path().join("corpus");
    let o = cadsketch(&["synth-gen", "--config", cfg.to_str().unwrap(), "--seed", "3", "--out", corpus.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(corpus.join("run_manifest.json").exists());
    assert!(corpus.join("images/test/1.pgm").exists());

    let out = tmp.path().join("eval");
    let o = cadsketch(&[
        "eval",
        "--config",
        cfg.to_str().unwrap(),
        "--input",
        corpus.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("eval_report.json")).unwrap()).unwrap();
    assert_eq!(report["samples"].as_array().unwrap().len(), 2);
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("run_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "eval");
    assert!(manifest["git_describe"].is_string());
}

#[test]
fn gradcheck_passes_on_default_renderer() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("g");
    let o = cadsketch(&["gradcheck", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    let entries: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("gradcheck.json")).unwrap()).unwrap();
    let entries = entries.as_array().unwrap();
    assert!(entries.len() > 20);
    assert!(entries.iter().all(|e| e["passed"] == true));
}
