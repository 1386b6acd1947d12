use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_phreservoir"));
    c.env_remove("PHRESERVOIR_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let o = run(args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn metric<'a>(csv: &'a str, name: &str) -> &'a str {
    csv.lines()
        .find_map(|l| l.strip_prefix(&format!("{name},,")))
        .unwrap_or_else(|| panic!("no {name} row in\n{csv}"))
}

fn rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect()
}

#[test]
fn constant_zero_series_fits_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let body: String = std::iter::once("hydro_year_start,inflow_hm3\n".to_string())
        .chain((0..12).map(|k| format!("{},0\n", 1990 + k)))
        .collect();
    let data = write(dir.path(), "zeros.csv", &body);
    let model = dir.path().join("m.json");
    let out = ok(&["fit", "--data", p(&data), "--regimes", "1", "--emission", "degenerate:0", "--out", p(&model)]);
    assert_eq!(metric(&out, "loglik"), "0");
    assert_eq!(metric(&out, "iterations"), "1");
    let check = ok(&["validate", "--model", p(&model), "--data", p(&data)]);
    assert_eq!(metric(&check, "loglik"), "0");
}

#[test]
fn reloaded_model_reproduces_the_fitted_loglik() {
    let dir = tempfile::tempdir().unwrap();
    let mut body = String::from("hydro_year_start,inflow_hm3\n");
    let ys = [0.2, 0.4, 3.1, 9.0, 12.5, 0.1, 0.3, 2.2, 3.9, 15.0, 11.0, 0.2, 1.5, 2.8, 18.0, 0.6];
    for (k, y) in ys.iter().enumerate() {
        body.push_str(&format!("{},{y}\n", 2000 + k));
    }
    let data = write(dir.path(), "inflows.csv", &body);
    let model = dir.path().join("m.json");
    let out = ok(&[
        "--seed", "5", "fit", "--data", p(&data), "--regimes", "2", "--phases", "2", "1", "--restarts", "3",
        "--labels", "dry", "wet", "--out", p(&model),
    ]);
    let check = ok(&["validate", "--model", p(&model), "--data", p(&data)]);
    // the file holds the collapsed model, scored by structured_loglik
    assert_eq!(metric(&out, "structured_loglik"), metric(&check, "loglik"));
    let em: f64 = metric(&out, "loglik").parse().unwrap();
    assert!(em >= metric(&check, "loglik").parse::<f64>().unwrap() - 1e-9);
    let json = std::fs::read_to_string(&model).unwrap();
    assert!(json.contains("\"dry\"") && json.contains("\"seed\": 5"));
}

#[test]
fn audit_ranks_the_tampered_year_first() {
    let dir = tempfile::tempdir().unwrap();
    let mut body = String::from("hydro_year_start,inflow_hm3,outflow_hm3,stored_hm3\n");
    let mut v = 40.0f64;
    for k in 0..10 {
        let y = 5.0 + k as f64;
        let recorded = if k == 6 { v + 7.5 } else { v };
        body.push_str(&format!("{},{y},8,{recorded}\n", 1970 + k));
        v = (v + y - 8.0).clamp(0.0, 50.0);
    }
    let data = write(dir.path(), "res.csv", &body);
    let top = dir.path().join("top.csv");
    let table = ok(&["audit", "--data", p(&data), "--capacity", "50", "--summary-out", p(&top), "--top", "2"]);
    assert!(table.starts_with("hydro_year_start,computed_hm3,recorded_hm3,discrepancy_hm3\n"));
    let ranked = rows(&std::fs::read_to_string(top).unwrap());
    assert_eq!(ranked[0][1], "1976");
    // computed minus recorded
    assert_eq!(ranked[0][2], "-7.5");
    assert_eq!(ranked.len(), 2);
}

#[test]
fn reliability_at_horizon_zero() {
    let out = ok(&["reliability", "--model", "preset:two-regime-poisson", "--release", "5", "--capacity", "20", "--horizon", "0"]);
    let r = rows(&out);
    assert_eq!(r.len(), 5);
    assert_eq!(r[0], ["0", "0", "", "0", ""]);
    for row in &r[1..] {
        assert_eq!(&row[1..4], ["0", "1", "1"]);
    }
}

#[test]
fn max_states_pools_the_top_levels() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("moran.csv");
    ok(&[
        "reliability", "--model", "preset:two-regime-poisson", "--release", "5", "--capacity", "20",
        "--max-states", "4", "--matrix-out", p(&m),
    ]);
    let entries = rows(&std::fs::read_to_string(&m).unwrap());
    assert_eq!(entries.len(), 16);
    for r in 0..4 {
        let total: f64 = entries
            .iter()
            .filter(|e| e[0] == r.to_string())
            .map(|e| e[2].parse::<f64>().unwrap())
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}

#[test]
fn forecast_columns_follow_levels() {
    let out = ok(&["forecast", "--model", "preset:three-regime-exponential", "--bootstrap", "50", "--horizon", "3", "--levels", "0.1,0.9"]);
    let mut lines = out.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("step,"), "{header}");
    assert!(header.contains("q10") && header.contains("q90"), "{header}");
    assert_eq!(lines.count(), 3);
}

#[test]
fn seed_flag_and_environment_agree() {
    let args = ["forecast", "--model", "preset:two-regime-poisson", "--bootstrap", "40"];
    let flag = ok(&[&["--seed", "9"][..], &args].concat());
    let env = bin().args(args).env("PHRESERVOIR_SEED", "9").output().unwrap();
    assert_eq!(flag.as_bytes(), &env.stdout[..]);
    assert_ne!(flag, ok(&[&["--seed", "10"][..], &args].concat()));
}

#[test]
fn simulate_writes_its_report_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("study");
    ok(&["--seed", "3", "simulate", "--replicates", "3", "--length", "60", "--out-dir", p(&out)]);
    for f in ["params.csv", "moran.csv", "curves.csv", "mttf.csv", "replicates.csv"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| run(args).status.code().unwrap();
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["fit", "--bogus"]), 1);
    assert_eq!(code(&["--workers", "0", "validate", "--model", "preset:two-regime-poisson"]), 1);
    assert_eq!(code(&["validate", "--model", "preset:nope"]), 1);
    assert_eq!(code(&["validate", "--model", p(&dir.path().join("missing.json"))]), 2);

    let gap = write(dir.path(), "gap.csv", "hydro_year_start,inflow_hm3\n2000,1\n2002,3\n");
    let o = run(&["validate", "--model", "preset:two-regime-poisson", "--data", p(&gap)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("3"));

    let frac = write(dir.path(), "frac.csv", "hydro_year_start,inflow_hm3\n2000,0\n2001,2.5\n");
    assert_eq!(code(&["validate", "--model", "preset:two-regime-poisson", "--data", p(&frac)]), 3);
    assert_eq!(code(&["reliability", "--model", "preset:two-regime-poisson", "--release", "5", "--capacity", "2"]), 2);
}
