//! End-to-end runs of the `fedattn` binary.

use std::path::Path;
use std::process::{Command, Output};

use fedattn::data::{load_dataset_dir, DatasetManifest, MANIFEST_FILE};

fn fedattn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedattn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn success(args: &[&str]) -> String {
    let out = fedattn(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn manifest(dir: &Path) -> DatasetManifest {
    serde_json::from_slice(&std::fs::read(dir.join(MANIFEST_FILE)).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(Result::unwrap).collect()
}

fn prepare(dir: &Path, samples: usize, clients: usize) {
    success(&[
        "prepare-data",
        "--synthetic",
        "--samples",
        &samples.to_string(),
        "--clients",
        &clients.to_string(),
        "--out",
        s(dir),
    ]);
}

#[test]
fn prepare_data_table_sizes_and_rerun_is_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        success(&["prepare-data", "--synthetic", "--clients", "5", "--sizes", "1000,1000,1000,1000,920", "--out", s(dir)]);
    }
    let m = manifest(&a);
    assert_eq!(m.shard_files.len(), 5);
    for (file, size) in m.shard_files.iter().zip([1000, 1000, 1000, 1000, 920]) {
        let text = std::fs::read_to_string(a.join(file)).unwrap();
        assert_eq!(text.lines().count(), size, "{file}");
        assert_eq!(std::fs::read(a.join(file)).unwrap(), std::fs::read(b.join(file)).unwrap());
    }
    assert_eq!(m.shard_crc32, manifest(&b).shard_crc32);

    let single = tmp.path().join("single");
    prepare(&single, 200, 1);
    assert_eq!(manifest(&single).shard_sizes, vec![200]);
}

#[test]
fn centralized_metrics_rows_and_evaluation_only() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    prepare(&data, 300, 3);
    let run = tmp.path().join("c1");
    success(&["train-centralized", "--data", s(&data), "--client", "1", "--epochs", "5", "--preset", "desk", "--out", s(&run)]);
    let rows = csv_rows(&run.join("metrics.csv"));
    assert_eq!(rows.len(), 5);
    assert_eq!(&rows[4][0], "5");
    assert!(run.join("model.fedw").exists() && run.join("manifest.json").exists());

    let zero = tmp.path().join("c0");
    success(&["train-centralized", "--data", s(&data), "--epochs", "0", "--preset", "desk", "--out", s(&zero)]);
    assert!(csv_rows(&zero.join("metrics.csv")).is_empty());

    let table = success(&[
        "evaluate",
        "--data",
        s(&data),
        "--model",
        &format!("trained={}", s(&run.join("model.fedw"))),
        "--model",
        &format!("untrained={}", s(&zero.join("model.fedw"))),
    ]);
    assert!(table.contains("trained") && table.contains("untrained"), "{table}");
}

/// On disjoint shards a model trained on one client does worse on everyone's
/// test data than on its own.
#[test]
fn pooled_test_loss_exceeds_own_test_loss() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    success(&["prepare-data", "--synthetic", "--sizes", "1000,1000,1000,1000,920", "--out", s(&data)]);
    let mut holds = 0;
    for client in 0..5 {
        let run = tmp.path().join(format!("c{client}"));
        success(&[
            "train-centralized",
            "--data",
            s(&data),
            "--client",
            &client.to_string(),
            "--preset",
            "desk",
            "--out",
            s(&run),
        ]);
        let rows = csv_rows(&run.join("metrics.csv"));
        let last = rows.last().unwrap();
        let own: f64 = last[2].parse().unwrap();
        let pooled: f64 = last[3].parse().unwrap();
        holds += usize::from(pooled >= own);
    }
    assert!(holds >= 4, "held for {holds}/5 clients");
}

#[test]
fn federated_runs_single_client_and_transports() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    prepare(&data, 240, 3);
    let common = ["--preset", "desk", "--hidden", "16", "--embed", "8", "--local-epochs", "1"];

    let one = tmp.path().join("one");
    let mut args = vec!["train-federated", "--data", s(&data), "--rounds", "1", "--clients", "1", "--out", s(&one)];
    args.extend(common);
    success(&args);
    let rows = csv_rows(&one.join("metrics.csv"));
    let client = rows.iter().find(|r| &r[1] == "0").unwrap();
    let global = rows.iter().find(|r| &r[1] == "global").unwrap();
    // One client: the global model is its update, scored on the same data.
    assert_eq!(&client[2], &global[2]);

    let mut finals = Vec::new();
    for transport in ["in-process", "socket"] {
        let out = tmp.path().join(transport);
        let mut args = vec!["train-federated", "--data", s(&data), "--rounds", "2", "--transport", transport, "--out", s(&out)];
        args.extend(common);
        success(&args);
        let rows = csv_rows(&out.join("metrics.csv"));
        assert_eq!(rows.iter().filter(|r| &r[1] == "global").count(), 2);
        assert!(out.join("round_1.fedw").exists() && out.join("round_2.fedw").exists());
        finals.push(std::fs::read(out.join("final.fedw")).unwrap());
    }
    assert_eq!(finals[0], finals[1]);

    // Existing checkpoints are not overwritten without --resume.
    let existing = tmp.path().join("socket");
    let mut args = vec!["train-federated", "--data", s(&data), "--rounds", "2", "--out", s(&existing)];
    args.extend(common);
    assert!(!fedattn(&args).status.success());
}

#[test]
fn infer_reports_attention() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    prepare(&data, 100, 1);
    let run = tmp.path().join("run");
    success(&["train-centralized", "--data", s(&data), "--epochs", "2", "--preset", "desk", "--out", s(&run)]);
    let model = run.join("model.fedw");
    let ds = load_dataset_dir(&data).unwrap();
    let pair = ds.vocab.detokenize(&ds.shards[0].train[0]).unwrap();
    let symptoms = pair.symptoms.join(",");
    let json_path = tmp.path().join("attention.json");

    let text = success(&[
        "infer",
        "--model",
        s(&model),
        "--data",
        s(&data),
        "--symptoms",
        &symptoms,
        "--attention-out",
        s(&json_path),
    ]);
    assert!(text.starts_with("prediction: "), "{text}");
    assert!(text.contains('['), "heatmap marks each row's maximum: {text}");

    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(&json_path).unwrap()).unwrap();
    let inputs = report["input_tokens"].as_array().unwrap();
    assert_eq!(inputs.len(), pair.symptoms.len() + 2);
    assert_eq!(inputs[0], "<start>");
    for row in report["weights"].as_array().unwrap() {
        let row: Vec<f64> = row.as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
        assert_eq!(row.len(), inputs.len());
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    let out = fedattn(&["infer", "--model", s(&model), "--data", s(&data), "--symptoms", "no_such_symptom"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown symptom"));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(fedattn(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(fedattn(&["--help"]).status.code(), Some(0));
    let data = tmp.path().join("data");
    prepare(&data, 60, 1);
    let missing = tmp.path().join("missing.fedw");
    let out = fedattn(&["infer", "--model", s(&missing), "--data", s(&data), "--symptoms", "a"]);
    assert_eq!(out.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.fedw"));
    let bad = fedattn(&["prepare-data", "--synthetic", "--samples", "100", "--sizes", "10,20", "--out", s(&data)]);
    assert_eq!(bad.status.code(), Some(2));
}
