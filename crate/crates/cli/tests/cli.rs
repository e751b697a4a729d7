use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn tdc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tdc"))
        .args(args)
        .env_remove("TDC_SEED")
        .output()
        .expect("binary runs")
}

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn schema_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../schemas")
        .join(format!("{name}.schema.json"))
}

fn check_schema(name: &str, doc: &Value) {
    let schema: Value =
        serde_json::from_str(&fs::read_to_string(schema_path(name)).unwrap()).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = validator
        .iter_errors(doc)
        .map(|e| format!("{} at {}", e, e.instance_path))
        .collect();
    assert!(errors.is_empty(), "{name}: {errors:#?}");
}

/// Runs a subcommand that prints JSON, checks exit 0 and the schema.
fn run_json(schema: &str, args: &[&str]) -> Value {
    let out = tdc(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let doc: Value = serde_json::from_slice(&out.stdout).unwrap();
    check_schema(schema, &doc);
    doc
}

fn read(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn toy_cluster_discards_the_far_point() {
    let doc = run_json(
        "cluster",
        &[
            "cluster",
            &fixture("toy.csv"),
            "--g",
            "2",
            "--r",
            "4",
            "--starts",
            "50",
        ],
    );
    let mut clusters: Vec<Vec<u64>> = serde_json::from_value(doc["clusters"].clone()).unwrap();
    clusters.sort();
    assert_eq!(clusters, vec![vec![1, 2], vec![3, 4]]);
    assert_eq!(doc["discarded"], serde_json::json!([5]));
    assert!((doc["det"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(doc["certificate"]["passed"], true);
    assert!(doc["manifest"]["input_digest"].as_str().unwrap().len() == 64);
}

#[test]
fn single_cluster_without_trimming() {
    let doc = run_json(
        "cluster",
        &[
            "cluster",
            &fixture("toy.csv"),
            "--g",
            "1",
            "--r",
            "5",
            "--starts",
            "10",
        ],
    );
    assert_eq!(doc["labels"], serde_json::json!([1, 1, 1, 1, 1]));
    assert_eq!(doc["discarded"], serde_json::json!([]));
}

#[test]
fn malformed_csv_exits_2_with_the_row() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    fs::write(&path, "1,2\n3,4\n5,oops\n").unwrap();
    let out = tdc(&["cluster", p(&path), "--g", "1", "--r", "3"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3"), "{err}");
    fs::write(&path, "1,2\n3\n").unwrap();
    assert_eq!(
        tdc(&["cluster", p(&path), "--g", "1", "--r", "2"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn degenerate_data_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("line.csv");
    fs::write(&path, "0,0\n1,1\n2,2\n3,3\n4,4\n5,5\n").unwrap();
    let out = tdc(&[
        "cluster",
        p(&path),
        "--g",
        "1",
        "--r",
        "5",
        "--starts",
        "20",
    ]);
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn invalid_settings_exit_1() {
    let out = tdc(&["cluster", &fixture("toy.csv"), "--g", "2", "--r", "9"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn seed_falls_back_to_the_environment() {
    let run = |env: Option<&str>, extra: &[&str]| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_tdc"));
        c.args([
            "cluster",
            &fixture("ten_point_line.csv"),
            "--g",
            "2",
            "--r",
            "8",
            "--starts",
            "5",
            "--patience",
            "0",
        ])
        .args(extra);
        match env {
            Some(v) => c.env("TDC_SEED", v),
            None => c.env_remove("TDC_SEED"),
        };
        let out = c.output().unwrap();
        assert!(out.status.success());
        serde_json::from_slice::<Value>(&out.stdout).unwrap()
    };
    assert_eq!(run(Some("17"), &[])["manifest"]["seed"], 17);
    assert_eq!(run(Some("17"), &["--seed", "3"])["manifest"]["seed"], 3);
    assert_eq!(run(None, &[])["manifest"]["seed"], 0);
    assert_eq!(
        run(Some("17"), &[])["per_start"],
        run(None, &["--seed", "17"])["per_start"]
    );
}

#[test]
fn thread_count_does_not_change_the_result() {
    let args = [
        "cluster",
        &fixture("ten_point_line.csv"),
        "--g",
        "2",
        "--r",
        "8",
        "--starts",
        "200",
    ];
    let one = run_json("cluster", &[&args[..], &["--threads", "1"]].concat());
    let many = run_json("cluster", &[&args[..], &["--threads", "4"]].concat());
    assert_eq!(one, many);
}

#[test]
fn generate_cluster_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for d in [1usize, 2, 4] {
        let prefix = dir.path().join(format!("d{d}"));
        let ds = d.to_string();
        let out = tdc(&[
            "generate",
            "--d",
            &ds,
            "--seed",
            "5",
            "--out-prefix",
            p(&prefix),
        ]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        let csv = prefix.with_extension("csv");
        let truth_path = dir.path().join(format!("d{d}.truth.json"));
        let truth = read(&truth_path);
        check_schema("truth", &truth);
        let n = truth["n"].as_u64().unwrap() as usize;
        assert_eq!(n, 200 * d + 22 * d);
        let r = (200 * d).to_string();
        let g = (2 * d).to_string();
        let result = dir.path().join(format!("d{d}.result.json"));
        let out = tdc(&[
            "cluster",
            p(&csv),
            "--g",
            &g,
            "--r",
            &r,
            "--starts",
            "100",
            "--out",
            p(&result),
        ]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        check_schema("cluster", &read(&result));
        let eval = run_json("evaluate", &["evaluate", p(&result), p(&truth_path)]);
        let max = eval["max_distance"].as_f64().unwrap();
        assert!(max < 0.2, "d={d}: max Bhattacharyya {max}");
        assert_eq!(eval["outliers_true"], 22 * d);
    }
}

#[test]
fn generation_is_deterministic_and_sized() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for prefix in [&a, &b] {
        assert!(tdc(&[
            "generate",
            "--d",
            "8",
            "--seed",
            "9",
            "--out-prefix",
            p(prefix)
        ])
        .status
        .success());
    }
    let csv_a = fs::read(a.with_extension("csv")).unwrap();
    assert_eq!(csv_a, fs::read(b.with_extension("csv")).unwrap());
    assert_eq!(
        fs::read(dir.path().join("a.truth.json")).unwrap(),
        fs::read(dir.path().join("b.truth.json")).unwrap()
    );
    let truth = read(&dir.path().join("a.truth.json"));
    let labels = truth["labels"].as_array().unwrap();
    assert_eq!(labels.len(), 1776);
    assert_eq!(labels.iter().filter(|l| l.as_u64() == Some(0)).count(), 176);
    assert_eq!(String::from_utf8(csv_a).unwrap().lines().count(), 1776);

    let c = dir.path().join("c");
    assert!(tdc(&[
        "generate",
        "--d",
        "2",
        "--outliers",
        "none",
        "--out-prefix",
        p(&c)
    ])
    .status
    .success());
    let truth = read(&dir.path().join("c.truth.json"));
    assert_eq!(truth["n"], 400);
    assert!(truth["labels"]
        .as_array()
        .unwrap()
        .iter()
        .all(|l| l.as_u64() != Some(0)));
}

#[test]
fn generate_accepts_a_spec_file() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    fs::write(
        &spec,
        r#"{"d": 2, "clusters": 3, "per_cluster": 50, "alpha": 0.99,
            "outlier_mode": {"diffuse": {"mu": [0, 0], "v": 4}}, "outlier_count": 10, "seed": 1}"#,
    )
    .unwrap();
    let prefix = dir.path().join("s");
    let out = tdc(&["generate", "--spec", p(&spec), "--out-prefix", p(&prefix)]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let truth = read(&dir.path().join("s.truth.json"));
    check_schema("truth", &truth);
    assert_eq!(truth["n"], 160);
    assert_eq!(truth["params"].as_array().unwrap().len(), 3);
    fs::write(&spec, "{not json").unwrap();
    assert_eq!(
        tdc(&["generate", "--spec", p(&spec), "--out-prefix", p(&prefix)])
            .status
            .code(),
        Some(2)
    );
}

fn cluster_result(dir: &Path) -> (PathBuf, PathBuf) {
    let prefix = dir.join("g");
    assert!(tdc(&[
        "generate",
        "--d",
        "2",
        "--seed",
        "2",
        "--out-prefix",
        p(&prefix)
    ])
    .status
    .success());
    let result = dir.join("g.result.json");
    let csv = prefix.with_extension("csv");
    let out = tdc(&[
        "cluster",
        p(&csv),
        "--g",
        "4",
        "--r",
        "400",
        "--starts",
        "100",
        "--out",
        p(&result),
    ]);
    assert!(out.status.success());
    (result, dir.join("g.truth.json"))
}

#[test]
fn evaluation_ignores_label_order() {
    let dir = tempfile::tempdir().unwrap();
    let (result, truth) = cluster_result(dir.path());
    let base = run_json("evaluate", &["evaluate", p(&result), p(&truth)]);
    let mut doc = read(&result);
    let perm = [3u64, 1, 4, 2];
    let labels: Vec<Value> = doc["labels"]
        .as_array()
        .unwrap()
        .iter()
        .map(|l| match l.as_u64().unwrap() {
            0 => Value::from(0),
            k => Value::from(perm[k as usize - 1]),
        })
        .collect();
    doc["labels"] = Value::from(labels);
    let means = doc["means"].as_array().unwrap().clone();
    let mut moved = means.clone();
    for (j, m) in means.into_iter().enumerate() {
        moved[perm[j] as usize - 1] = m;
    }
    doc["means"] = Value::from(moved);
    let permuted = dir.path().join("permuted.json");
    fs::write(&permuted, serde_json::to_string(&doc).unwrap()).unwrap();
    let other = run_json("evaluate", &["evaluate", p(&permuted), p(&truth)]);
    for key in [
        "max_distance",
        "distances",
        "misclassified",
        "outlier_precision",
        "outlier_recall",
    ] {
        assert_eq!(base[key], other[key], "{key}");
    }
}

#[test]
fn perfect_recovery_scores_zero() {
    let dir = tempfile::tempdir().unwrap();
    let (result, truth_path) = cluster_result(dir.path());
    let truth = read(&truth_path);
    let mut doc = read(&result);
    doc["labels"] = truth["labels"].clone();
    doc["means"] = truth["params"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["mean"].clone())
        .collect();
    doc["covariance"] = truth["params"][0]["cov"].clone();
    let perfect = dir.path().join("perfect.json");
    fs::write(&perfect, serde_json::to_string(&doc).unwrap()).unwrap();
    let eval = run_json("evaluate", &["evaluate", p(&perfect), p(&truth_path)]);
    assert!(eval["max_distance"].as_f64().unwrap() < 1e-12);
    assert_eq!(eval["misclassified"], 0);
    assert_eq!(eval["outlier_precision"], 1.0);
    assert_eq!(eval["outlier_recall"], 1.0);
    assert_eq!(eval["permutation"], serde_json::json!([1, 2, 3, 4]));
}

#[test]
fn oracle_on_the_twin_fixture_keeps_the_twins() {
    let doc = run_json(
        "oracle",
        &[
            "oracle",
            &fixture("ten_point_twins.csv"),
            "--g",
            "2",
            "--r",
            "8",
        ],
    );
    let cost = doc["cost"].as_f64().unwrap();
    let expected = 10.0 + 5.0 / 6.0 * 3.2f64.powi(2) + 5e-7;
    assert!((cost - expected).abs() < 1e-6, "{cost}");
    let retained: Vec<u64> = serde_json::from_value(doc["retained"].clone()).unwrap();
    assert!(retained.contains(&7) && retained.contains(&8));
    let trace = run_json(
        "oracle",
        &[
            "oracle",
            &fixture("toy.csv"),
            "--g",
            "2",
            "--r",
            "4",
            "--objective",
            "trace",
        ],
    );
    assert_eq!(trace["objective"], "Trace");
    assert_eq!(trace["discarded"], serde_json::json!([5]));
}

#[test]
fn sweep_recommends_the_planted_level() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("s");
    assert!(tdc(&[
        "generate",
        "--d",
        "2",
        "--seed",
        "1",
        "--out-prefix",
        p(&prefix)
    ])
    .status
    .success());
    let csv = prefix.with_extension("csv");
    let doc = run_json(
        "sweep-r",
        &[
            "sweep-r",
            p(&csv),
            "--g",
            "4",
            "--r",
            "378,400,422,444",
            "--starts",
            "200",
        ],
    );
    assert_eq!(doc["recommended"], 400, "{:#}", doc["entries"]);
    assert_eq!(doc["entries"].as_array().unwrap().len(), 4);
}

#[test]
fn breakdown_probes() {
    let mean = run_json(
        "breakdown-mean",
        &[
            "breakdown",
            "mean",
            &fixture("ten_point_line.csv"),
            "--g",
            "2",
            "--r",
            "8",
            "--indices",
            "7,8",
        ],
    );
    assert_eq!(mean["breakdown"], false);
    assert_eq!(mean["plan"]["indices"], serde_json::json!([7, 8]));

    let dir = tempfile::tempdir().unwrap();
    let line = dir.path().join("line.csv");
    fs::write(&line, "-2\n-1\n0\n1\n2\n3.2\n4.2\n5.2\n6.2\n7.2\n").unwrap();
    let below = run_json(
        "breakdown-mean",
        &[
            "breakdown",
            "mean",
            p(&line),
            "--g",
            "2",
            "--r",
            "8",
            "--indices",
            "7,8",
            "--multistart",
            "--starts",
            "100",
        ],
    );
    assert_eq!(below["breakdown"], true);
    assert_eq!(below["verdict"], "means break down");
    assert!(below["steps"][0]["multistart_cost"].is_number());

    let data = dir.path().join("eight.csv");
    fs::write(&data, "0.3\n-1.1\n0.8\n2.0\n-0.4\n1.5\n-2.2\n0.1\n").unwrap();
    let ssp = run_json(
        "breakdown-ssp",
        &[
            "breakdown",
            "ssp",
            p(&data),
            "--g",
            "2",
            "--r",
            "6",
            "--indices",
            "1,3,5,7",
            "--placement",
            "far-apart",
        ],
    );
    assert_eq!(ssp["m"], 4);
    assert_eq!(ssp["bounded_regime"], false);
    assert_eq!(ssp["verdict"], "λ_max unbounded");

    let plan = dir.path().join("plan.json");
    fs::write(
        &plan,
        r#"{"indices": [2], "magnitudes": [100, 10000], "placement": {"far_apart": {"factor": 2}}}"#,
    )
    .unwrap();
    let plan_doc: Value = serde_json::from_str(&fs::read_to_string(&plan).unwrap()).unwrap();
    check_schema("plan", &plan_doc);
    let bounded = run_json(
        "breakdown-ssp",
        &[
            "breakdown",
            "ssp",
            p(&data),
            "--g",
            "2",
            "--r",
            "6",
            "--plan",
            p(&plan),
        ],
    );
    assert_eq!(bounded["verdict"], "eigenvalues bounded");
    assert_eq!(bounded["plan"]["indices"], serde_json::json!([2]));
}

#[test]
fn separation_and_flip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("two.csv");
    fs::write(&data, "0\n0.1\n0.2\n10\n10.1\n10.2\n").unwrap();
    let doc = run_json(
        "breakdown-separation",
        &[
            "breakdown",
            "separation",
            p(&data),
            "--r",
            "6",
            "--partition",
            "1,2,3;4,5,6",
            "--u",
            "3",
            "--mode",
            "exact",
        ],
    );
    assert_eq!(doc["holds"], true);
    assert_eq!(doc["mode"], "Exact");
    let single = tdc(&[
        "breakdown",
        "separation",
        p(&data),
        "--r",
        "6",
        "--partition",
        "1,2,3,4,5,6",
        "--u",
        "3",
    ]);
    assert_eq!(single.status.code(), Some(1));

    let flip = run_json("breakdown-flip", &["breakdown", "flip"]);
    let (f, c) = (
        flip["flip"].as_f64().unwrap(),
        flip["critical_gap"].as_f64().unwrap(),
    );
    assert!((f - c).abs() < 1e-6, "{f} vs {c}");
}
