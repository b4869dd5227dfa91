use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use hazardfit::cohort::parse_cohort_csv;
use hazardfit::CohortMeta;
use tempfile::TempDir;

fn hazardfit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hazardfit"))
        .args(args)
        .current_dir(dir)
        .env_remove("HAZARDFIT_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "exit {:?}\nstderr: {}", out.status.code(), String::from_utf8_lossy(&out.stderr));
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn simulate(dir: &Path, file: &str, model: &str, params: &str, n0: &str, seed: &str) {
    ok(&hazardfit(dir, &["simulate", "--model", model, "--params", params, "--n0", n0, "--seed", seed, "--out", file]));
}

fn csv_rows(path: &Path) -> Vec<BTreeMap<String, String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let headers = r.headers().unwrap().clone();
    r.records()
        .map(|rec| headers.iter().map(String::from).zip(rec.unwrap().iter().map(String::from)).collect())
        .collect()
}

const GOMPERTZ: &str = r#"{"alpha":0.06,"beta":0.1}"#;

#[test]
fn all_models_give_nine_row_comparison() {
    let tmp = TempDir::new().unwrap();
    simulate(tmp.path(), "dk_m_1900.csv", "gompertz", GOMPERTZ, "100000", "1");
    ok(&hazardfit(tmp.path(), &["fit", "--data", "dk_m_1900.csv", "--all-models", "--out", "out"]));
    let rows = csv_rows(&tmp.path().join("out/comparison.csv"));
    assert_eq!(rows.len(), 9);
    assert_eq!(rows.iter().filter(|r| r["delta_aic"].parse::<f64>().unwrap() == 0.0).count(), 1);
    assert!(rows.iter().all(|r| r["cohort"] == "dk_m_1900"));
    for token in ["gompertz", "lynchbrown"] {
        let json: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(tmp.path().join(format!("out/fit_{token}.json"))).unwrap())
                .unwrap();
        assert_eq!(json["model"], token);
        assert!(json["params"].is_object());
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("out/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "fit");
    assert_eq!(manifest["models"].as_array().unwrap().len(), 9);
    assert_eq!(manifest["config"]["seed"], 0);
    assert_eq!(csv_rows(&tmp.path().join("out/curves.csv")).len(), 9 * 31);
}

#[test]
fn unknown_model_lists_valid_names() {
    let tmp = TempDir::new().unwrap();
    simulate(tmp.path(), "c.csv", "gompertz", GOMPERTZ, "1000", "1");
    let out = hazardfit(tmp.path(), &["fit", "--data", "c.csv", "--model", "gompert"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("gompertz, kannisto, weibull"), "{}", stderr(&out));
}

#[test]
fn missing_or_malformed_data_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let out = hazardfit(tmp.path(), &["fit", "--data", "nope.csv"]);
    assert_eq!(out.status.code(), Some(2));
    fs::write(tmp.path().join("bad.csv"), "age,survivors,deaths\n80,10,20\n").unwrap();
    let out = hazardfit(tmp.path(), &["fit", "--data", "bad.csv", "--model", "gompertz"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn same_seed_gives_identical_json() {
    let tmp = TempDir::new().unwrap();
    simulate(tmp.path(), "c.csv", "gompertz", GOMPERTZ, "20000", "2");
    for (dir, threads) in [("a", "1"), ("b", "4")] {
        let out = Command::new(env!("CARGO_BIN_EXE_hazardfit"))
            .args(["fit", "--data", "c.csv", "--model", "perks", "--model", "makeham", "--seed", "9", "--out", dir])
            .current_dir(tmp.path())
            .env("HAZARDFIT_THREADS", threads)
            .output()
            .unwrap();
        ok(&out);
    }
    for file in ["fit_perks.json", "fit_makeham.json", "comparison.csv", "curves.csv"] {
        let a = fs::read(tmp.path().join("a").join(file)).unwrap();
        let b = fs::read(tmp.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file}");
    }
}

#[test]
fn replay_reproduces_outputs() {
    let tmp = TempDir::new().unwrap();
    simulate(tmp.path(), "c.csv", "logistic", r#"{"alpha":0.05,"beta":0.12,"gamma":0.01,"delta":0.02}"#, "30000", "5");
    ok(&hazardfit(tmp.path(), &["cv", "--data", "c.csv", "--model", "gompertz", "--model", "logistic", "--out", "o"]));
    let first = fs::read(tmp.path().join("o/cv.csv")).unwrap();
    fs::remove_file(tmp.path().join("o/cv.csv")).unwrap();
    ok(&hazardfit(tmp.path(), &["replay", "--manifest", "o/manifest.json"]));
    assert_eq!(fs::read(tmp.path().join("o/cv.csv")).unwrap(), first);
}

#[test]
fn cv_default_has_five_folds_and_ranks_one_to_eight() {
    let tmp = TempDir::new().unwrap();
    simulate(tmp.path(), "c.csv", "gompertz", GOMPERTZ, "20000", "3");
    ok(&hazardfit(tmp.path(), &["cv", "--data", "c.csv", "--exclude", "weibull", "--out", "o"]));
    let rows = csv_rows(&tmp.path().join("o/cv.csv"));
    assert_eq!(rows.len(), 8 * 6);
    assert!(rows.iter().all(|r| r["model"] != "weibull"));
    let mut ranks: Vec<usize> =
        rows.iter().filter(|r| r["fold"] == "mean").map(|r| r["rank"].parse().unwrap()).collect();
    ranks.sort();
    assert_eq!(ranks, (1..=8).collect::<Vec<_>>());
    for model in ["gompertz", "perks"] {
        let folds: Vec<f64> = rows
            .iter()
            .filter(|r| r["model"] == model && r["fold"] != "mean")
            .map(|r| r["error"].parse().unwrap())
            .collect();
        let mean: f64 =
            rows.iter().find(|r| r["model"] == model && r["fold"] == "mean").unwrap()["error"].parse().unwrap();
        assert_eq!(folds.len(), 5);
        assert!((folds.iter().sum::<f64>() / 5.0 - mean).abs() <= 1e-15 * mean.abs());
    }
}

#[test]
fn one_fold_is_rejected() {
    let tmp = TempDir::new().unwrap();
    simulate(tmp.path(), "c.csv", "gompertz", GOMPERTZ, "1000", "1");
    let out = hazardfit(tmp.path(), &["cv", "--data", "c.csv", "--folds", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("K must be ≥ 2"));
}

#[test]
fn simulate_validates_inputs() {
    let tmp = TempDir::new().unwrap();
    let out = hazardfit(tmp.path(), &["simulate", "--model", "gompertz", "--params", GOMPERTZ, "--n0", "0"]);
    assert_eq!(out.status.code(), Some(2));
    let out = hazardfit(
        tmp.path(),
        &["simulate", "--model", "gompertz", "--params", r#"{"alpha":-1,"beta":0.1}"#, "--n0", "5"],
    );
    assert_eq!(out.status.code(), Some(2));
    let out = hazardfit(tmp.path(), &["simulate", "--model", "gompertz", "--params", r#"{"alpha":1}"#, "--n0", "5"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulated_file_reingests() {
    let tmp = TempDir::new().unwrap();
    let out = hazardfit(
        tmp.path(),
        &["simulate", "--model", "kannisto", "--params", GOMPERTZ, "--n0", "5000", "--seed", "8"],
    );
    ok(&out);
    assert!(out.stderr.is_empty());
    let d = parse_cohort_csv(out.stdout.as_slice(), CohortMeta::default()).unwrap();
    assert_eq!((d.first_age(), d.last_age(), d.initial_size()), (80, 110, 5000));
    assert_eq!(d.to_csv_string().as_bytes(), out.stdout.as_slice());
}

/// Gompertz MLE from a large simulated cohort lands near the truth.
#[test]
fn simulate_then_fit_recovers_parameters() {
    let tmp = TempDir::new().unwrap();
    simulate(tmp.path(), "c.csv", "gompertz", GOMPERTZ, "200000", "11");
    ok(&hazardfit(tmp.path(), &["fit", "--data", "c.csv", "--model", "gompertz", "--out", "o"]));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("o/fit_gompertz.json")).unwrap()).unwrap();
    let alpha = json["params"]["alpha"].as_f64().unwrap();
    let beta = json["params"]["beta"].as_f64().unwrap();
    assert!((alpha / 0.06 - 1.0).abs() < 0.02, "alpha {alpha}");
    assert!((beta / 0.1 - 1.0).abs() < 0.02, "beta {beta}");
}

#[test]
fn batch_continues_past_bad_files() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    fs::create_dir(&data).unwrap();
    simulate(&data, "dk_m_1900.csv", "gompertz", GOMPERTZ, "20000", "1");
    simulate(&data, "se_f_1890.csv", "makeham", r#"{"alpha":0.05,"beta":0.11,"gamma":0.01}"#, "20000", "2");
    fs::write(data.join("no_f_1880.csv"), "age,survivors,deaths\n80,10,20\n").unwrap();
    let out =
        hazardfit(tmp.path(), &["study", "batch", "--dir", "data", "--models", "gompertz,makeham,perks", "--out", "b"]);
    ok(&out);
    assert!(stderr(&out).contains("no_f_1880"));
    let failures = csv_rows(&tmp.path().join("b/failures.csv"));
    assert_eq!(failures.len(), 1);
    assert_eq!(csv_rows(&tmp.path().join("b/comparisons.csv")).len(), 6);
    let summary = csv_rows(&tmp.path().join("b/summary.csv"));
    assert!(summary.iter().any(|r| r["cohort"] == "sex=female"));
    assert!(summary.iter().any(|r| r["cohort"] == "country=dk"));

    ok(&hazardfit(tmp.path(), &["study", "summary", "--table", "b/batch.csv", "--out", "s"]));
    assert_eq!(
        fs::read(tmp.path().join("s/summary.csv")).unwrap(),
        fs::read(tmp.path().join("b/summary.csv")).unwrap()
    );
}

#[test]
fn downsample_table_size() {
    let tmp = TempDir::new().unwrap();
    simulate(tmp.path(), "c.csv", "gompertz", GOMPERTZ, "20000", "4");
    let args = [
        "study",
        "downsample",
        "--data",
        "c.csv",
        "--fractions",
        "1.0,0.5,0.3,0.1",
        "--replicates",
        "3",
        "--models",
        "gompertz,weibull",
        "--out",
        "d",
    ];
    ok(&hazardfit(tmp.path(), &args));
    let rows = csv_rows(&tmp.path().join("d/downsample.csv"));
    let deltas = rows.iter().filter(|r| r["metric"] == "delta_aic").count();
    assert_eq!(deltas, 4 * 3 * 2);
    assert_eq!(rows.len(), 4 * 3 * (2 + 1));
    assert_eq!(csv_rows(&tmp.path().join("d/downsample_means.csv")).len(), 4 * 2 * 2);
}

#[test]
fn identical_delta_rows_merge_at_zero() {
    let tmp = TempDir::new().unwrap();
    let table = "cohort,fraction,replicate,model,metric,value\n\
        a_m_1,,,gompertz,delta_aic,0\n\
        a_m_1,,,makeham,delta_aic,0\n\
        a_m_1,,,weibull,delta_aic,40\n\
        b_f_1,,,gompertz,delta_aic,3\n\
        b_f_1,,,makeham,delta_aic,3\n\
        b_f_1,,,weibull,delta_aic,0\n";
    fs::write(tmp.path().join("t.csv"), table).unwrap();
    ok(&hazardfit(tmp.path(), &["study", "cluster", "--table", "t.csv", "--out", "c"]));
    let newick = fs::read_to_string(tmp.path().join("c/dendrogram.nwk")).unwrap();
    assert!(newick.contains("(gompertz:0.0000000000000000e0,makeham:0.0000000000000000e0)"), "{newick}");
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("c/dendrogram.json")).unwrap()).unwrap();
    assert_eq!(json["dendrogram"]["merges"][0]["height"], 0.0);
}

#[test]
fn cluster_needs_one_source() {
    let tmp = TempDir::new().unwrap();
    let out = hazardfit(tmp.path(), &["study", "cluster"]);
    assert_eq!(out.status.code(), Some(2));
}
