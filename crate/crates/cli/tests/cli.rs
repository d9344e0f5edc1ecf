use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mdfa"));
    cmd.env_remove("MDFA_SEED");
    cmd
}

fn example() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/example_100x6.csv")
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn json_file(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn matrix(v: &serde_json::Value) -> Vec<Vec<f64>> {
    v.as_array()
        .unwrap()
        .iter()
        .map(|row| row.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect())
        .collect()
}

#[test]
fn fit_example_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fit.json");
    let o = run(bin().args(["fit", "--factors", "2", "--output"]).arg(&out).arg("--input").arg(example()));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json_file(&out);
    let lambda = matrix(&v["lambda"]);
    assert_eq!(lambda.len(), 6);
    assert!(lambda.iter().all(|r| r.len() == 2));
    assert_eq!(v["psi2"].as_array().unwrap().len(), 6);
    assert!(v["psi2"].as_array().unwrap().iter().all(|x| x.as_f64().unwrap() > 0.0));
    let trace: Vec<f64> = v["loss_trace"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert!(trace.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    assert!(v["scores"].is_null());
}

#[test]
fn cov_only_matches_data_path() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for (out, extra) in [(&a, None), (&b, Some("--cov-only"))] {
        let mut cmd = bin();
        cmd.args(["fit", "--factors", "2", "--tol", "1e-13", "--output"]).arg(out).arg("--input").arg(example());
        if let Some(flag) = extra {
            cmd.arg(flag);
        }
        assert!(run(&mut cmd).status.success());
    }
    let (la, lb) = (matrix(&json_file(&a)["lambda"]), matrix(&json_file(&b)["lambda"]));
    let gap: f64 = la.iter().flatten().zip(lb.iter().flatten()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    assert!(gap < 1e-6, "{gap}");
}

#[test]
fn fit_options_map_through() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fit.json");
    let o = run(bin()
        .args(["fit", "--factors", "2", "--ic5", "--sparse-k", "6", "--scores", "--denominator", "n", "--output"])
        .arg(&out)
        .arg("--input")
        .arg(example()));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json_file(&out);
    let lambda = matrix(&v["lambda"]);
    assert_eq!(lambda[0][1], 0.0);
    assert!(lambda.iter().flatten().filter(|x| **x != 0.0).count() <= 6);
    assert_eq!(v["denominator"], "n");
    assert_eq!(matrix(&v["scores"]["f"]).len(), 100);
}

#[test]
fn too_many_factors_is_a_usage_error() {
    let o = run(bin().args(["fit", "--factors", "6", "--input"]).arg(example()));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("m < p"));
}

#[test]
fn malformed_inputs_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "1,2,3\n4,x,6\n").unwrap();
    let o = run(bin().args(["fit", "--factors", "1", "--input"]).arg(&bad));
    assert_eq!(o.status.code(), Some(2));
    let o = run(bin().args(["fit", "--factors", "1", "--no-such-flag", "--input"]).arg(&bad));
    assert_eq!(o.status.code(), Some(2));
    let o = run(bin().args(["report", "--output"]).arg(dir.path()).arg("--input").arg(&bad));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn rank_deficient_data_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("flat.csv");
    // Third column duplicates the first: singular covariance.
    let rows: String = (0..20)
        .map(|i| {
            let a = (i as f64 * 0.7).sin();
            let b = (i as f64 * 1.3).cos();
            let c = (i as f64 * 0.4).sin() * 2.0;
            format!("{a},{b},{a},{c}\n")
        })
        .collect();
    fs::write(&data, rows).unwrap();
    let o = run(bin().args(["fit", "--factors", "1", "--cov-only", "--input"]).arg(&data));
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

fn simulate(out: &Path, seed: Option<&str>, workers: &str) -> Output {
    let mut cmd = bin();
    cmd.args([
        "simulate",
        "--setting",
        "1",
        "--n-grid",
        "60,120",
        "--reps",
        "3",
        "--estimators",
        "mdfa,pca",
        "--workers",
        workers,
        "--output",
    ])
    .arg(out);
    match seed {
        Some(s) => cmd.args(["--seed", s]),
        None => cmd.env("MDFA_SEED", "77"),
    };
    run(&mut cmd)
}

#[test]
fn simulate_is_deterministic_and_summarized() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c, d) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"), dir.path().join("d"));
    assert!(simulate(&a, Some("77"), "1").status.success());
    assert!(simulate(&b, Some("77"), "1").status.success());
    assert!(simulate(&c, Some("77"), "3").status.success());
    assert!(simulate(&d, None, "2").status.success());
    for file in ["records.csv", "records.jsonl", "summary.csv"] {
        let first = fs::read(a.join(file)).unwrap();
        for other in [&b, &c, &d] {
            assert_eq!(first, fs::read(other.join(file)).unwrap(), "{file}");
        }
    }
    let records = fs::read_to_string(a.join("records.csv")).unwrap();
    assert_eq!(records.lines().count(), 1 + 2 * 3 * 2);
    assert!(records.starts_with("setting,n,rep,estimator,se_lambda,se_total,iters,runtime_s,converged\n"));
    let summary = fs::read_to_string(a.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count() - 1, 2 * 2);
}

#[test]
fn report_renders_valid_svg_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    assert!(simulate(&sim, Some("5"), "1").status.success());
    let (r1, r2) = (dir.path().join("r1"), dir.path().join("r2"));
    for out in [&r1, &r2] {
        let o = run(bin().args(["report", "--input"]).arg(sim.join("records.csv")).arg("--output").arg(out));
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let svg = fs::read_to_string(r1.join("S1.svg")).unwrap();
    assert_eq!(svg, fs::read_to_string(r2.join("S1.svg")).unwrap());
    let doc = roxmltree::Document::parse(&svg).expect("well-formed XML");
    let estimators: Vec<&str> = doc
        .descendants()
        .filter(|n| n.has_tag_name("polyline"))
        .filter_map(|n| n.attribute("data-estimator"))
        .collect();
    assert!(estimators.contains(&"mdfa") && estimators.contains(&"pca"), "{estimators:?}");
    assert!(doc.descendants().any(|n| n.has_tag_name("text") && n.text().is_some_and(|t| t.contains("sample size"))));
}

#[test]
fn asymptotics_reports_ten_dimensional_v() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("asym.json");
    let o = run(bin().args(["asymptotics", "--output"]).arg(&out));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json_file(&out);
    let cov = matrix(&v["V"]);
    assert_eq!(cov.len(), 10);
    assert!(cov.iter().all(|r| r.len() == 10));
    assert_eq!(v["gamma_source"], "NORMAL_CLOSED_FORM");
    assert!(v["mc_covariance"].is_null());

    let o = run(bin()
        .args(["asymptotics", "--n", "500", "--reps", "20", "--cov-only", "--seed", "3", "--output"])
        .arg(&out));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(matrix(&json_file(&out)["mc_covariance"]).len(), 10);
}

#[test]
fn asymptotics_rejects_unidentified_truth() {
    let o = run(bin().args(["asymptotics", "--reps", "5", "--n", "100", "--loadings", "0.8,0.7,0,0,0"]));
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}
