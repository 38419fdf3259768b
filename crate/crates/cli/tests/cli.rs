use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tfac::aggregate::{aggregate_probes, AggregationMethod};
use tfac::annkm::KMeansParams;
use tfac::hac::{hac_cluster, Linkage, LinkageSpec, Metric, StopRule};
use tfac::io::load_dataset;
use tfac::synth::{generate, probe_features, SynthConfig};

fn tfac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tfac")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = tfac(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(tfac(&["cluster", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(tfac(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(tfac(&["synth", "--galleries", "3", "--out", "x"]).status.code(), Some(2));
    assert_eq!(tfac(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_data_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = tfac(&["cluster", "--data", s(&dir.path().join("absent")), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn synth_and_cluster_match_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["synth", "--subjects", "25", "--noise", "0.8", "--seed", "3", "--out", s(&data)]);
    let cfg = SynthConfig { num_subjects: 25, within_subject_noise: 0.8, seed: 3, ..Default::default() };
    let lib = generate(&cfg).unwrap();
    let loaded = load_dataset(&data.join("embeddings.femb"), &data.join("metadata.csv")).unwrap();
    assert_eq!(loaded.samples, lib.dataset.samples);

    let mut split = Vec::new();
    lib.split.write_csv(&mut split).unwrap();
    assert_eq!(fs::read(data.join("split.csv")).unwrap(), split);

    let out = dir.path().join("c");
    ok(&["cluster", "--data", s(&data), "--linkage", "complete", "--k", "20", "--out", s(&out)]);
    let templates = lib.dataset.templates(false).unwrap();
    let ids: Vec<u64> = templates.iter().map(|t| t.template_id).collect();
    let pts: Vec<&[f32]> = templates.iter().map(|t| t.primary().as_slice()).collect();
    let spec = LinkageSpec::new(Linkage::Complete, Metric::Cosine, StopRule::NumClusters(20));
    let c = hac_cluster(&ids, &pts, &spec).unwrap();
    let mut want = Vec::new();
    c.write_csv(&mut want).unwrap();
    assert_eq!(fs::read(out.join("clustering.csv")).unwrap(), want);
}

#[test]
fn aggregate_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["synth", "--subjects", "20", "--image-fraction", "0", "--multimodal", "--seed", "8", "--out", s(&data)]);
    let out = dir.path().join("agg");
    ok(&["aggregate", "--data", s(&data), "--k", "4", "--seed", "2", "--out", s(&out)]);
    let got = tfac::io::load_templates(&out.join("probes.femb"), &out.join("probes.csv")).unwrap();

    let cfg = SynthConfig {
        num_subjects: 20,
        image_fraction: 0.0,
        multimodal: Some(Default::default()),
        seed: 8,
        ..Default::default()
    };
    let lib = generate(&cfg).unwrap();
    let probes = probe_features(&lib.dataset, &lib.split).unwrap();
    let want = aggregate_probes(&probes, AggregationMethod::Cluster(4), &KMeansParams::default(), 2).unwrap();
    assert_eq!(got, want);
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("synth.json");
    fs::write(&cfg, r#"{"subjects": 12, "seed": 5, "multimodal": true}"#).unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["--config", s(&cfg), "synth", "--out", s(&a)]);
    ok(&["--config", s(&cfg), "synth", "--subjects", "7", "--out", s(&b)]);
    let manifest = |p: &Path| -> serde_json::Value {
        serde_json::from_slice(&fs::read(p.join("manifest.json")).unwrap()).unwrap()
    };
    let (ma, mb) = (manifest(&a), manifest(&b));
    assert_eq!(ma["config"]["subjects"], 12);
    assert_eq!(ma["config"]["seed"], 5);
    assert_eq!(ma["config"]["multimodal"], true);
    assert_eq!(mb["config"]["subjects"], 7);
    assert_ne!(ma["config_digest"], mb["config_digest"]);
    assert_eq!(ma["command"], "synth");

    fs::write(&cfg, r#"{"threads": 3}"#).unwrap();
    assert_eq!(tfac(&["--config", s(&cfg), "synth", "--out", s(&a)]).status.code(), Some(2));
}

#[test]
fn closed_set_data_leaves_tpir_blank() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["synth", "--subjects", "15", "--galleries", "1", "--openset-fraction", "0", "--seed", "1", "--out", s(&data)]);
    let agg = dir.path().join("agg");
    ok(&["aggregate", "--data", s(&data), "--method", "mean", "--out", s(&agg)]);
    let out = dir.path().join("id");
    ok(&["identify", "--data", s(&data), "--probes", s(&agg), "--out", s(&out)]);
    assert!(out.join("scores_gallery1.csv").exists());
    assert!(!out.join("scores_gallery2.csv").exists());
    let report = fs::read_to_string(out.join("report.csv")).unwrap();
    let rows: Vec<&str> = report.lines().collect();
    assert_eq!(rows[0], "gallery,rank1,rank5,rank10,rank25,rank50,tpir_fpir_0.1,tpir_fpir_0.01");
    assert_eq!(rows.len(), 3, "{report}");
    assert!(rows[1..].iter().all(|r| r.ends_with(",,")), "{report}");
}
