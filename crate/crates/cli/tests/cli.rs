mod common;

use std::path::Path;
use std::process::{Command, Output};

use medsuggest_core::pipeline::{sha256_file, CONFIG_ENV, MANIFEST_FILE, METRICS_FILE};

fn medsuggest(args: &[&str], config: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_medsuggest"));
    cmd.args(args).env_remove(CONFIG_ENV).env("RUST_LOG", "warn");
    if let Some(c) = config {
        cmd.env(CONFIG_ENV, c);
    }
    cmd.output().unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("medsuggest.toml");
    std::fs::write(&path, common::tiny_config(dir).to_toml_string().unwrap()).unwrap();
    path
}

#[test]
fn full_workflow_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let cfg_arg = cfg.to_str().unwrap();

    let out = stdout(&medsuggest(&["gen-synth"], Some(&cfg)));
    assert!(out.contains("24 patients, 8 drugs"), "{out}");
    assert!(dir.path().join("data/patients.csv").exists());

    // config via the environment variable
    let out = stdout(&medsuggest(&["train"], Some(&cfg)));
    assert!(out.contains("recall"), "{out}");
    let run = dir.path().join("run");
    assert!(run.join(MANIFEST_FILE).exists());

    // config via the flag
    let eval = stdout(&medsuggest(&["--config", cfg_arg, "eval"], None));
    assert_eq!(
        eval,
        std::fs::read_to_string(run.join(METRICS_FILE)).unwrap(),
        "eval of the saved bundle must reproduce the run's metric table"
    );

    let patients = dir.path().join("new_patients.csv");
    std::fs::write(&patients, "id,x1,x0\nA,5.0,4.0\nB,,6.0\n").unwrap();
    let out = stdout(&medsuggest(
        &["suggest", "--patient-file", patients.to_str().unwrap(), "--k", "3"],
        Some(&cfg),
    ));
    let lines: Vec<serde_json::Value> = out.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0]["id"], "A");
    assert_eq!(lines[1]["drugs"].as_array().unwrap().len(), 3);

    let out = stdout(&medsuggest(&["explain", "--drugs", "drug00,1"], Some(&cfg)));
    let e: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert!(e["p"].as_u64().unwrap() >= 2);
    assert!(e["ss"].is_f64());

    let out = medsuggest(&["explain", "--drugs", "nosuchdrug"], Some(&cfg));
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nosuchdrug"));

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "id,height\nA,1\n").unwrap();
    let out = medsuggest(&["suggest", "--patient-file", bad.to_str().unwrap()], Some(&cfg));
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("height"));

    // rerun from the manifest reproduces the metric table byte for byte
    let again = dir.path().join("again");
    stdout(&medsuggest(
        &[
            "train",
            "--manifest",
            run.join(MANIFEST_FILE).to_str().unwrap(),
            "--out",
            again.to_str().unwrap(),
        ],
        None,
    ));
    assert_eq!(
        sha256_file(&run.join(METRICS_FILE)).unwrap(),
        sha256_file(&again.join(METRICS_FILE)).unwrap()
    );

    // ablation flags reach the pipeline
    let ablated = dir.path().join("no_ddi");
    stdout(&medsuggest(
        &["train", "--no-ddi", "--delta", "0", "--out", ablated.to_str().unwrap()],
        Some(&cfg),
    ));
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(ablated.join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(m["config"]["mdgcn"]["use_ddi"], false);
    assert_eq!(m["config"]["mdgcn"]["delta"], 0.0);
}

#[test]
fn gen_synth_overrides_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("elsewhere");
    stdout(&medsuggest(
        &["gen-synth", "--out", out.to_str().unwrap(), "--seed", "7"],
        Some(&cfg),
    ));
    assert!(out.join("ddi_edges.csv").exists());

    let broken = dir.path().join("broken.toml");
    std::fs::write(&broken, "[synth]\ngroups = 50\n").unwrap();
    let o = medsuggest(&["gen-synth"], Some(&broken));
    assert!(!o.status.success());

    let o = medsuggest(&["--config", "/nonexistent.toml", "gen-synth"], None);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("nonexistent"));
}

#[test]
fn print_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let printed = stdout(&medsuggest(&["print-config"], Some(&cfg)));
    let parsed = medsuggest_core::pipeline::PipelineConfig::from_toml_str(&printed).unwrap();
    assert_eq!(parsed, common::tiny_config(dir.path()));
    let defaults = stdout(&medsuggest(&["print-config"], None));
    assert_eq!(
        medsuggest_core::pipeline::PipelineConfig::from_toml_str(&defaults).unwrap(),
        Default::default()
    );
}

#[test]
fn serve_without_a_model_fails_fast() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let o = medsuggest(&["serve", "--port", "0"], Some(&cfg));
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("loading model"));
}

#[test]
fn conflicting_train_flags_are_rejected() {
    let o = medsuggest(&["train", "--manifest", "m.json", "--no-ddi"], None);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("cannot be used with"));
}

#[test]
fn example_config_documents_the_defaults() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../medsuggest.example.toml");
    let parsed = medsuggest_core::pipeline::PipelineConfig::load(&path).unwrap();
    assert_eq!(parsed, Default::default());
}
