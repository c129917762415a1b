use std::path::Path;
use std::process::{Command, Output};

use matmed_cli::manifest::Manifest;

fn matmed(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_matmed"))
        .args(args)
        .env("MATMED_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = matmed(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

fn column(rows: &[Vec<String>], idx: usize) -> Vec<f64> {
    rows.iter().map(|r| r[idx].parse().unwrap()).collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_fit_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    let report = ok(&["simulate", "--scenario", "low", "--n", "100", "--seed", "7", "--out", s(&sim)]);
    assert!(report.contains("true NIE"));
    for f in ["matrix.csv", "subjects.csv", "truth.json", "manifest.json"] {
        assert!(sim.join(f).exists(), "{f}");
    }

    let fit = dir.path().join("fit");
    let matrix = sim.join("matrix.csv");
    let subjects = sim.join("subjects.csv");
    ok(&[
        "fit", "--matrix", s(&matrix), "--subjects", s(&subjects), "--p0", "2", "--q0", "2", "--iters", "600",
        "--burnin", "200", "--thin", "2", "--kappas", "0.05,0.1,0.15", "--seed", "11", "--out", s(&fit),
    ]);

    let (header, rows) = read_csv(&fit.join("effects.csv"));
    assert_eq!(header, ["effect", "mean", "lo", "hi"]);
    let mean = column(&rows, 1);
    assert!((mean[0] + mean[1] - mean[2]).abs() < 1e-12, "TE = NIE + NDE");
    for r in &rows {
        let v: Vec<f64> = r[1..].iter().map(|x| x.parse().unwrap()).collect();
        assert!(v[1] <= v[0] && v[0] <= v[2], "{r:?}");
    }

    let (header, rows) = read_csv(&fit.join("mediation_map.csv"));
    assert_eq!(header, ["row", "col", "quantity"]);
    assert_eq!(rows.len(), 100);
    assert!(column(&rows, 2).iter().all(|&v| v >= 0.0));

    let maps: Vec<Vec<f64>> = ["0.05", "0.1", "0.15"]
        .iter()
        .map(|k| column(&read_csv(&fit.join(format!("prob_map_{k}.csv"))).1, 2))
        .collect();
    for m in 0..100 {
        assert!((0.0..=1.0).contains(&maps[0][m]));
        assert!(maps[0][m] >= maps[1][m] && maps[1][m] >= maps[2][m]);
    }

    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(fit.join("fit_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["kappa_rule"], "user");
    assert!(summary["dic_variant"].as_str().unwrap().contains("complete-data"));

    let manifest = Manifest::load(&fit.join("manifest.json")).unwrap();
    assert_eq!(manifest.command, "fit");
    assert_eq!(manifest.seed, Some(11));
    assert!(manifest.output_digest("effects.csv").is_some());
    assert_eq!(manifest.inputs.len(), 2);

    let again = dir.path().join("again");
    let report = ok(&["replay", "--manifest", s(&fit.join("manifest.json")), "--out", s(&again)]);
    assert!(report.contains("bit-identical"));
    for f in ["effects.csv", "mediation_map.csv", "draws.json"] {
        assert_eq!(std::fs::read(fit.join(f)).unwrap(), std::fs::read(again.join(f)).unwrap());
    }

    // effects and maps recomputed from the saved chain agree with the fit
    let eff = dir.path().join("eff");
    ok(&["effects", "--draws", s(&fit.join("draws.json")), "--out", s(&eff)]);
    assert_eq!(std::fs::read(fit.join("effects.csv")).unwrap(), std::fs::read(eff.join("effects.csv")).unwrap());
    let map = dir.path().join("map");
    ok(&["map", "--draws", s(&fit.join("draws.json")), "--kappas", "0.05,0.1,0.15", "--out", s(&map)]);
    assert_eq!(
        std::fs::read(fit.join("prob_map_0.1.csv")).unwrap(),
        std::fs::read(map.join("prob_map_0.1.csv")).unwrap()
    );
}

#[test]
fn replay_detects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    ok(&["simulate", "--n", "20", "--seed", "3", "--out", s(&sim)]);
    let ts = dir.path().join("ts");
    ok(&[
        "two-step", "--matrix", s(&sim.join("matrix.csv")), "--subjects", s(&sim.join("subjects.csv")), "--p0", "2",
        "--q0", "2", "--out", s(&ts),
    ]);
    let mut m = Manifest::load(&ts.join("manifest.json")).unwrap();
    m.outputs[0].sha256 = "0".repeat(64);
    m.save(&ts).unwrap();
    let out = matmed(&["replay", "--manifest", s(&ts.join("manifest.json")), "--out", s(&dir.path().join("r"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("\"error\":\"replay-mismatch\""));
}

#[test]
fn config_file_runs_and_rejects_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"command":"simulate","scenario":"high","n":12,"seed":5}"#).unwrap();
    let out_dir = dir.path().join("o");
    ok(&["run", "--config", s(&cfg), "--out", s(&out_dir)]);
    let (_, rows) = read_csv(&out_dir.join("matrix.csv"));
    assert_eq!(rows.len(), 12 * 10 * 50);

    std::fs::write(&cfg, r#"{"command":"simulate","scenario":"high","n":12,"seed":5,"nn":1}"#).unwrap();
    let out = matmed(&["run", "--config", s(&cfg), "--out", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("\"error\":\"config\""));
}

#[test]
fn error_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = matmed(&["simulate", "--n", "10", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let out = matmed(&["bogus"]);
    assert_eq!(out.status.code(), Some(2));

    let m = dir.path().join("m.csv");
    let sub = dir.path().join("s.csv");
    std::fs::write(&m, "subject_id,row_index,col_index,value\na,0,0,1\nb,0,0,2\n").unwrap();
    std::fs::write(&sub, "subject_id,E,Y\na,1,1\nb,0,3\n").unwrap();
    let out = matmed(&[
        "two-step", "--matrix", s(&m), "--subjects", s(&sub), "--p0", "1", "--q0", "1", "--out", s(&dir.path().join("x")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("\"error\":\"parse\"") && err.contains(":3:"), "{err}");

    let out = Command::new(env!("CARGO_BIN_EXE_matmed"))
        .args(["simulate", "--n", "10", "--seed", "1", "--out", s(&dir.path().join("y"))])
        .env("MATMED_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn replicate_paper_table_layout() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("rep");
    ok(&[
        "replicate-paper", "--table1", "--desk-scale", "--replicates", "2", "--n", "60", "--iters", "300", "--burnin",
        "100", "--seed", "1", "--out", s(&out),
    ]);
    let (header, rows) = read_csv(&out.join("table1.csv"));
    assert_eq!(
        header,
        ["scenario", "n", "method", "effect", "truth", "mean", "mse_x1000", "var_x1000", "bias_x1000", "replicates"]
    );
    assert_eq!(rows.len(), 6);
    let methods: Vec<&str> = rows.iter().map(|r| r[2].as_str()).collect();
    assert_eq!(methods, ["joint", "joint", "joint", "two-step", "two-step", "two-step"]);
    let effects: Vec<&str> = rows.iter().map(|r| r[3].as_str()).collect();
    assert_eq!(effects, ["NIE", "NDE", "TE", "NIE", "NDE", "TE"]);
    assert!(!out.join("figures").exists());
}
