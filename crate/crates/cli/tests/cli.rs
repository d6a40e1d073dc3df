mod common;

use std::time::Instant;

use common::*;

#[test]
fn toy_train_fits_quickly() {
    let out = tempfile::tempdir().unwrap();
    let t = Instant::now();
    let dir = train(out.path(), &[]);
    assert!(t.elapsed().as_secs() < 60);
    for f in ["checkpoint.json", "history.csv", "manifest.json", "config.toml", "coordinates.csv"] {
        assert!(dir.join(f).is_file(), "{f} missing");
    }
    let report = read_json(&dir.join("report.json"));
    assert_eq!(report["train_accuracy"], 100.0);
    let manifest = read_json(&dir.join("manifest.json"));
    assert_eq!(manifest["command"], "train");
    assert!(dir.file_name().unwrap().to_str().unwrap().ends_with("-s0"));

    let cp = dir.join("checkpoint.json");
    let toy = toy_dir().join("toy.jsonl");
    let ev = out.path().join("eval.json");
    ok(&["eval", "--checkpoint", s(&cp), "--data", s(&toy), "--out", s(&ev)]);
    let ev = read_json(&ev);
    assert_eq!(ev["seen_accuracy"], 100.0);
    assert!(ev["unseen_accuracy"].is_null());

    let coords = ok(&["export-coords", "--checkpoint", s(&cp)]);
    assert_eq!(coords.lines().count(), 4);
    assert!(coords.starts_with("intent,b0"));
}

#[test]
fn reruns_are_bitwise_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let da = train(a.path(), &["--seed", "4"]);
    let db = train(b.path(), &["--seed", "4"]);
    assert_eq!(da.file_name(), db.file_name());
    for f in ["history.csv", "checkpoint.json"] {
        assert_eq!(std::fs::read(da.join(f)).unwrap(), std::fs::read(db.join(f)).unwrap(), "{f}");
    }
    let dc = train(a.path(), &["--seed", "5"]);
    assert_ne!(
        std::fs::read(da.join("checkpoint.json")).unwrap(),
        std::fs::read(dc.join("checkpoint.json")).unwrap()
    );
}

#[test]
fn missing_embeddings_fail_before_training() {
    let out = tempfile::tempdir().unwrap();
    let cfg = toy_config();
    let r = run(&[
        "train",
        "--config",
        s(&cfg),
        "--output-dir",
        s(out.path()),
        "--set",
        "embeddings.path=nope.txt",
    ]);
    assert_eq!(r.status.code(), Some(5));
    let err = String::from_utf8_lossy(&r.stderr);
    assert!(err.contains("embeddings.path") && err.contains("nope.txt"), "{err}");
    assert_eq!(std::fs::read_dir(out.path()).unwrap().count(), 0);
}

#[test]
fn config_errors_exit_with_config_code() {
    let out = tempfile::tempdir().unwrap();
    let cfg = toy_config();
    let r = run(&["train", "--config", s(&cfg), "--output-dir", s(out.path()), "--set", "model.form=spiral"]);
    assert_eq!(r.status.code(), Some(3));
    let r = run(&["train", "--config", s(&cfg), "--bogus"]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn add_intent_flow() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path();
    let dir = train(&p.join("runs"), &["--set", "data.unseen=[\"GetWeather\",\"BookRestaurant\"]"]);
    let cp = dir.join("checkpoint.json");
    let (weather, rest, music) = (p.join("weather.jsonl"), p.join("rest.jsonl"), p.join("music.jsonl"));
    toy_subset(&weather, &["GetWeather"]);
    toy_subset(&rest, &["BookRestaurant"]);
    toy_subset(&music, &["PlayMusic"]);

    let one = p.join("one.json");
    ok(&["add-intent", "--checkpoint", s(&cp), "--data", s(&weather), "--seen", s(&music), "--out", s(&one)]);
    let meta = &read_json(&one)["metadata"];
    assert_eq!(meta["epsilon"], 0.2);
    assert_eq!(meta["zeta"], 1.0);
    assert_eq!(meta["omega"], true);
    let diff = read_json(&p.join("one.diff.json"));
    assert_eq!(diff["frozen_intact"], true);
    assert!(p.join("one.history.csv").is_file());

    let two = p.join("two.json");
    ok(&["add-intent", "--checkpoint", s(&one), "--data", s(&rest), "--seen", s(&music), "--out", s(&two)]);
    let cp2 = read_json(&two);
    assert_eq!(cp2["labels"], serde_json::json!(["PlayMusic", "GetWeather", "BookRestaurant"]));
    assert_eq!(cp2["metadata"]["extensions"].as_array().unwrap().len(), 2);
    let diff = read_json(&p.join("two.diff.json"));
    assert_eq!(diff["frozen_intact"], true);
    assert_eq!(diff["changed_blocks"], serde_json::json!([]));

    // coordinates only: no expansion matrices for the new intent
    let plain = p.join("plain.json");
    ok(&[
        "add-intent", "--checkpoint", s(&cp), "--data", s(&weather), "--seen", s(&music), "--out", s(&plain),
        "--omega", "off", "--epsilon", "0.5",
    ]);
    let plain_cp = read_json(&plain);
    assert_eq!(plain_cp["model"]["expansions"]["by_intent"], serde_json::json!({}));
    assert_eq!(plain_cp["metadata"]["epsilon"], 0.5);
    assert_eq!(read_json(&p.join("plain.diff.json"))["frozen_intact"], true);

    let r = run(&["add-intent", "--checkpoint", s(&one), "--data", s(&weather), "--seen", s(&music)]);
    assert_eq!(r.status.code(), Some(3));
    let r = run(&["add-intent", "--checkpoint", s(&one), "--data", s(&rest), "--seen", s(&music), "--out", s(&one)]);
    assert_ne!(r.status.code(), Some(0));
}

#[test]
fn detection_and_roc() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path();
    let dir = train(&p.join("runs"), &["--set", "data.unseen=[\"GetWeather\"]"]);
    let cp = dir.join("checkpoint.json");
    let toy = toy_dir().join("toy.jsonl");

    let csv_path = p.join("detect.csv");
    ok(&["detect", "--checkpoint", s(&cp), "--data", s(&toy), "--rho", "0.5", "--out", s(&csv_path)]);
    let text = std::fs::read_to_string(&csv_path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("index,text,intent,value,decision"));
    for line in lines {
        let fields: Vec<&str> = line.rsplitn(3, ',').collect();
        let value: f64 = fields[1].parse().unwrap();
        assert_eq!(fields[0], if value > 0.5 { "unseen" } else { "seen" });
    }

    let roc_dir = p.join("roc");
    let stdout = ok(&["roc", "--checkpoint", s(&cp), "--data", s(&toy), "--out-dir", s(&roc_dir)]);
    assert!(stdout.starts_with("auc "));
    let roc = read_json(&roc_dir.join("roc.json"));
    let auc = roc["auc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&auc));
    assert_eq!(roc["unseen_sentences"], 30);
    assert!(std::fs::read_to_string(roc_dir.join("roc.csv")).unwrap().starts_with("threshold,fpr,tpr"));

    let seen_only = p.join("seen.jsonl");
    toy_subset(&seen_only, &["PlayMusic", "BookRestaurant"]);
    let r = run(&["roc", "--checkpoint", s(&cp), "--data", s(&seen_only), "--out-dir", s(&p.join("roc2"))]);
    assert_eq!(r.status.code(), Some(8));
}

#[test]
fn grad_check_passes() {
    let stdout = ok(&["grad-check", "--seed", "3"]);
    assert!(stdout.contains("max relative error"));
}

#[test]
fn convert_rejects_bad_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let r = run(&["convert", "--format", "snips", "--input", s(tmp.path()), "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(4));
    let r = run(&["convert", "--format", "atis", "--input", s(&toy_dir().join("toy.jsonl")), "--out", s(&out)]);
    assert_ne!(r.status.code(), Some(0));
}

#[test]
fn convert_atis_keeps_shared_intents() {
    let tmp = tempfile::tempdir().unwrap();
    let train_path = tmp.path().join("train.csv");
    let test_path = tmp.path().join("test.csv");
    std::fs::write(&train_path, "query,intent\nBOS show me flights EOS,flight\nhow much,airfare\nwhat meal,meal\n").unwrap();
    std::fs::write(&test_path, "query,intent\nlist flights,flight\nfare please,airfare\nground transport,ground_service\n").unwrap();
    let out = tmp.path().join("atis");
    ok(&[
        "convert", "--format", "atis", "--input", s(&train_path), "--test", s(&test_path), "--out", s(&out),
    ]);
    let report = read_json(&out.join("conversion.json"));
    assert_eq!(report["splits"]["train"]["total"], 2);
    assert_eq!(report["splits"]["test"]["intents"], 2);
    assert_eq!(report["dropped_intents"], serde_json::json!(["ground_service", "meal"]));
    let first = std::fs::read_to_string(out.join("train.jsonl")).unwrap();
    assert!(first.lines().next().unwrap().contains("\"show me flights\""), "{first}");
}
