use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn dsre(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dsre"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn eval_before_train_names_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let out = dsre(&["eval", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("run train first"), "{}", stderr(&out));
}

#[test]
fn later_stage_without_inputs_names_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let lex = dir.path().join("lex.tsv");
    fs::write(&lex, "cui\tpreferred_name\tsynonyms\tsemantic_type\tsemantic_group\n").unwrap();
    let cfg = dir.path().join("cfg.toml");
    fs::write(&cfg, format!("[paths]\nlexicon = {:?}\n", lex.to_str().unwrap())).unwrap();
    let out = dsre(&["gen-pos", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("run ingest first"), "{}", stderr(&out));
}

#[test]
fn invalid_config_field_exits_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    fs::write(&cfg, "[train]\nlearning_rate = -1.0\n").unwrap();
    let out = dsre(&["train", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("train.learning_rate"), "{}", stderr(&out));

    fs::write(&cfg, "[model]\nd_rr = 3\n").unwrap();
    let out = dsre(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("d_rr"), "{}", stderr(&out));
}

#[test]
fn missing_input_file_is_a_validation_error() {
    let out = dsre(&["ingest", "--config", "/nonexistent/dsre.toml"]);
    assert_eq!(out.status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    fs::write(&cfg, "[paths]\ncorpus = \"/nonexistent/corpus.jsonl\"\n").unwrap();
    let out = dsre(&["ingest", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("paths.corpus"), "{}", stderr(&out));
}

#[test]
fn synth_demo_writes_metrics_and_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let out = dsre(&["synth-demo", "--seed", "3", "--out", d.path().to_str().unwrap()]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let metrics: serde_json::Value =
        serde_json::from_slice(&fs::read(a.path().join("metrics_mix.json")).unwrap()).unwrap();
    assert!(metrics["overall_accuracy"].as_f64().unwrap() > 0.5);
    let fa = files(a.path());
    assert!(fa.iter().any(|(n, _)| n == "dataset_type1.jsonl"));
    assert_eq!(fa, files(b.path()));
}

#[test]
fn stages_run_individually_on_synth_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    let demo = dsre(&["synth-demo", "--seed", "5", "--epochs", "2", "--out", out_dir]);
    assert!(demo.status.success(), "{}", stderr(&demo));
    let inputs = dir.path().join("inputs");
    let cfg = dir.path().join("cfg.toml");
    let p = |f: &str| inputs.join(f).to_str().unwrap().to_string();
    fs::write(
        &cfg,
        format!(
            r#"dataset = "type1"

[paths]
corpus = {:?}
lexicon = {:?}
triplets = {:?}
cui_embeddings = {:?}

[[schema]]
label = "MC"
directed = true
slots = [["DISO", "DISO"]]

[[schema]]
label = "DDx"
directed = false
slots = [["DISO", "DISO"]]

[[schema]]
label = "IN"
directed = true
slots = [["DISO", "ANAT"]]

[sampler]
pool_size = 150
irrelevant_groups = ["CHEM"]
hierarchy_relation = "IN"

[embeddings]
dim = 16
epochs = 1

[model]
d_e = 16
d_r = 16
d_k = 16
d_c = 4

[train]
epochs = 2
learning_rate = 0.01
"#,
            p("corpus.jsonl"),
            p("lexicon.tsv"),
            p("triplets.tsv"),
            p("cui.vec")
        ),
    )
    .unwrap();
    let run_dir = dir.path().join("run");
    let run_dir = run_dir.to_str().unwrap();
    for stage in [
        "ingest",
        "extract-triplets",
        "gen-pos",
        "gen-neg",
        "build-dataset",
        "train",
        "eval",
        "cross-test",
        "predict",
    ] {
        let out = dsre(&[stage, "--config", cfg.to_str().unwrap(), "--out", run_dir, "--threads", "2"]);
        assert!(out.status.success(), "{stage}: {}", stderr(&out));
    }
    let preds = fs::read_to_string(Path::new(run_dir).join("predictions_type1.jsonl")).unwrap();
    assert!(preds.lines().count() > 0);
    let first: serde_json::Value = serde_json::from_str(preds.lines().next().unwrap()).unwrap();
    let total: f64 = first["probabilities"].as_object().unwrap().values().map(|v| v.as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-9);
}
