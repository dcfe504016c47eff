use std::path::Path;
use std::process::{Command, Output};

fn amr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_amr"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = amr(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn read_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

fn simulate(dir: &Path, n: usize) -> String {
    let data = dir.join("data.csv");
    ok(&[
        "simulate",
        "--n",
        &n.to_string(),
        "--p-i",
        "2",
        "--mu0",
        "linear",
        "--seed",
        "3",
        "--out",
        data.to_str().unwrap(),
    ]);
    data.to_str().unwrap().to_string()
}

#[test]
fn simulate_then_estimate_suite() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), 300);
    let (header, rows) = read_rows(Path::new(&data));
    assert_eq!(header[0], "y");
    assert_eq!(header[1], "a");
    assert_eq!(rows.len(), 300);

    let report = dir.path().join("report.csv");
    ok(&[
        "estimate",
        "--input",
        &data,
        "--method",
        "suite",
        "--folds",
        "3",
        "--seed",
        "7",
        "--out",
        report.to_str().unwrap(),
    ]);
    let (header, rows) = read_rows(&report);
    assert_eq!(
        header.join(","),
        "method,theta_hat,n,K,var_hat,ci_low,ci_high,fingerprint,var_efficient,var_conservative,\
ci_eff_low,ci_eff_high,ci_cons_low,ci_cons_high,delta_hat"
    );
    let methods: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(methods, ["IPW", "AIPW", "MR", "AMR"]);
    for r in &rows {
        assert_eq!(r[2], "300");
        assert_eq!(r[3], "3");
        let theta: f64 = r[1].parse().unwrap();
        let (lo, hi): (f64, f64) = (r[5].parse().unwrap(), r[6].parse().unwrap());
        assert!(lo <= theta && theta <= hi);
    }
    // Only AMR carries the conservative interval.
    assert!(rows[..3].iter().all(|r| r[9].is_empty() && r[14].is_empty()));
    let amr = &rows[3];
    assert_eq!(amr[4], amr[9]);
    assert_eq!(amr[5], amr[12]);
    let delta: f64 = amr[14].parse().unwrap();
    assert!(delta.is_finite());
}

#[test]
fn estimate_is_reproducible_and_reports_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), 200);
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "[weights]\ncv_folds = 3\n[outcome]\nlearner = \"ridge\"\n").unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&[
            "estimate",
            "--input",
            &data,
            "--method",
            "att",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        std::fs::read(out).unwrap()
    };
    assert_eq!(run("a.csv"), run("b.csv"));

    std::fs::write(&cfg, "[weights]\ncv_fold = 3\n").unwrap();
    let out = amr(&[
        "estimate",
        "--input",
        &data,
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("c.csv").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("cv_fold"));
}

#[test]
fn estimate_rejects_missing_columns() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), 50);
    let out = amr(&[
        "estimate",
        "--input",
        &data,
        "--x-cols",
        "z*",
        "--out",
        dir.path().join("r.csv").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
}

#[test]
fn diagnose_writes_three_files() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), 200);
    let prefix = dir.path().join("diag_");
    ok(&[
        "diagnose",
        "--input",
        &data,
        "--out-prefix",
        prefix.to_str().unwrap(),
        "--bins",
        "10",
    ]);
    for name in ["imbalance.csv", "weights.csv", "propensity_hist.csv"] {
        let path = dir.path().join(format!("diag_{name}"));
        let (_, rows) = read_rows(&path);
        assert!(!rows.is_empty(), "{name} is empty");
    }
    let (_, hist) = read_rows(&dir.path().join("diag_propensity_hist.csv"));
    assert_eq!(hist.len(), 10);
    let total: usize = hist.iter().map(|r| r[2].parse::<usize>().unwrap()).sum();
    assert_eq!(total, 200);
}

#[test]
fn bench_output_is_independent_of_workers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    std::fs::write(
        &cfg,
        "reps = 3\nmaster_seed = 5\n[grid]\nn = [150]\np_i = [1, 2]\n[simulation]\nmu0 = \"linear\"\n",
    )
    .unwrap();
    let run = |name: &str, workers: &str| {
        let out = dir.path().join(name);
        ok(&[
            "bench",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--workers",
            workers,
        ]);
        std::fs::read(out).unwrap()
    };
    let one = run("w1.csv", "1");
    assert_eq!(one, run("w3.csv", "3"));
    let (header, rows) = read_rows(&dir.path().join("w1.csv"));
    assert_eq!(header.len(), 11);
    // IPW, AIPW, MR, AMR and AMR-efficient per cell.
    assert_eq!(rows.len(), 10);
}

#[test]
fn bench_rejects_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    std::fs::write(&cfg, "reps = 0\n").unwrap();
    let out = amr(&[
        "bench",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("r.csv").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
}
