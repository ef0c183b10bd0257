use std::path::{Path, PathBuf};
use std::process::Command;

use dtsm::cli::{export_results, parse_config, read_grid_csv, run_pipeline, RunConfig, Stage, StageStatus};
use dtsm::Error;

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

const MINIMAL_LQ: &str = r#"
[problem]
a = [[0.5]]
b = [[1.0]]
q = [[1.0]]
r = [[1.0]]
"#;

fn lq_config() -> RunConfig {
    let mut cfg = RunConfig::from_toml_str(MINIMAL_LQ).unwrap();
    cfg.grid.resolution = 21;
    cfg.checks.samples = 20;
    cfg.checks.tangent_pairs = 10;
    cfg
}

#[test]
fn minimal_config_gets_defaults() {
    let cfg = RunConfig::from_toml_str(MINIMAL_LQ).unwrap();
    let prob = cfg.problem().unwrap();
    assert_eq!(prob.s[(0, 0)], 0.0);
    assert!(prob.f_nl.is_zero() && prob.l_nl.is_zero());
    assert_eq!(prob.epsilon, 0.1);
    assert_eq!(cfg.stages, vec![Stage::Validate, Stage::Riccati, Stage::Spectral, Stage::Manifold, Stage::Dpe]);
}

#[test]
fn indefinite_r_is_rejected_by_name() {
    let text = MINIMAL_LQ.replace("r = [[1.0]]", "r = [[-1.0]]");
    let err = RunConfig::from_toml_str(&text).unwrap_err();
    assert!(err.is_input_error());
    assert!(err.to_string().contains("R positive definite"), "{err}");
}

#[test]
fn syntax_errors_report_position() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "[problem]\na = [[0.5]] ]\nb = 1\n").unwrap();
    let msg = parse_config(&path).unwrap_err().to_string();
    assert!(msg.contains("line 2"), "{msg}");
    assert!(msg.contains("column"), "{msg}");
}

#[test]
fn p2_config_round_trips() {
    let cfg = parse_config(&config_path("p2.toml")).unwrap();
    let text = cfg.to_toml_string().unwrap();
    assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);
}

#[test]
fn lq_pipeline_passes_with_flat_psi() {
    let out = run_pipeline(&lq_config()).unwrap();
    let rep = &out.report;
    assert!(rep.passed, "{:#?}", rep.checks);
    assert_eq!(rep.exit_code(), 0);
    assert!(rep.stages.iter().all(|s| s.status == StageStatus::Passed));
    assert!(rep.manifold.as_ref().unwrap().psi_sup <= 1e-14);

    let dir = tempfile::tempdir().unwrap();
    export_results(&out, dir.path()).unwrap();
    let p = rep.riccati.as_ref().unwrap().p[0][0];
    let rows = read_grid_csv(&std::fs::read_to_string(dir.path().join("pi_grid.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 21);
    for row in rows {
        let closed = 0.5 * p * row[0] * row[0];
        assert!((row[1] - closed).abs() <= 1e-14 * (1.0 + closed), "{row:?}");
    }
}

#[test]
fn unit_circle_mode_gates_downstream_stages() {
    let cfg = parse_config(&config_path("unit_circle.toml")).unwrap();
    let rep = run_pipeline(&cfg).unwrap().report;
    let status = |s: Stage| rep.stages.iter().find(|o| o.stage == s).unwrap().status;
    assert_eq!(status(Stage::Spectral), StageStatus::Failed);
    assert_eq!(status(Stage::Manifold), StageStatus::Skipped);
    assert_eq!(status(Stage::Dpe), StageStatus::Skipped);
    assert_eq!(rep.exit_code(), 1);
}

#[test]
fn p2_report_has_contraction_and_residuals() {
    let mut cfg = parse_config(&config_path("p2.toml")).unwrap();
    cfg.stages.retain(|s| *s != Stage::Oracle);
    cfg.checks.samples = 30;
    let rep = run_pipeline(&cfg).unwrap().report;
    assert!(rep.passed);
    assert!(rep.manifold.as_ref().unwrap().contraction_estimate < 1.0);
    let dpe = rep.dpe.as_ref().unwrap();
    assert_eq!(dpe.residuals.samples.len(), 30);
    assert!(dpe.residuals.passed);
}

#[test]
fn grid_csv_reimports_bit_exactly() {
    let mut cfg = parse_config(&config_path("p2.toml")).unwrap();
    cfg.stages = vec![Stage::Validate, Stage::Riccati, Stage::Spectral, Stage::Manifold, Stage::Dpe];
    cfg.checks.samples = 5;
    cfg.checks.tangent_pairs = 2;
    let out = run_pipeline(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    export_results(&out, dir.path()).unwrap();
    let sol = out.manifold.as_ref().unwrap();
    let rows = read_grid_csv(&std::fs::read_to_string(dir.path().join("psi_grid.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), sol.psi.node_count());
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(row[0].to_bits(), sol.psi.node(i)[0].to_bits());
        assert_eq!(row[1].to_bits(), sol.psi.at_node(i)[0].to_bits());
    }
    let cost = out.cost.as_ref().unwrap();
    let rows = read_grid_csv(&std::fs::read_to_string(dir.path().join("pi_grid.csv")).unwrap()).unwrap();
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(row[1].to_bits(), cost.pi.at_node(i)[0].to_bits());
    }
}

#[test]
fn empty_stage_list_echoes_config_only() {
    let mut cfg = lq_config();
    cfg.stages.clear();
    let out = run_pipeline(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    export_results(&out, dir.path()).unwrap();
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("results.json")).unwrap()).unwrap();
    let obj = json.as_object().unwrap();
    assert!(obj.contains_key("config"));
    for key in ["validation", "riccati", "spectral", "manifold", "dpe", "oracle"] {
        assert!(!obj.contains_key(key), "{key}");
    }
    assert!(json["stages"].as_array().unwrap().is_empty());
    assert!(json["checks"].as_array().unwrap().is_empty());
    let names: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names.len(), 2);
}

#[test]
fn tolerance_overrides_are_echoed() {
    let text = format!("{MINIMAL_LQ}\n[tolerances]\ninvariance = 3.5e-7\n");
    let mut cfg = RunConfig::from_toml_str(&text).unwrap();
    cfg.stages.clear();
    assert_eq!(cfg.tolerances.invariance, 3.5e-7);
    let json = serde_json::to_value(&run_pipeline(&cfg).unwrap().report).unwrap();
    assert_eq!(json["config"]["tolerances"]["invariance"].as_f64(), Some(3.5e-7));
    assert!(json["config"]["tolerances"].as_object().unwrap().len() > 20);
}

#[test]
fn unknown_tolerance_is_rejected() {
    let text = format!("{MINIMAL_LQ}\n[tolerances]\ninvarience = 1e-7\n");
    assert!(matches!(RunConfig::from_toml_str(&text), Err(Error::Config(_))));
}

fn dtsm(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_dtsm")).args(args).output().unwrap()
}

#[test]
fn single_thread_runs_are_byte_identical() {
    let cfg = config_path("p1_lq.toml");
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [&a, &b] {
        let out = dtsm(&["solve", cfg.to_str().unwrap(), "--threads", "1", "--out", dir.path().to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    }
    for file in ["results.json", "psi_grid.csv", "pi_grid.csv", "kappa_grid.csv", "trajectories.csv"] {
        let x = std::fs::read(a.path().join(file)).unwrap();
        let y = std::fs::read(b.path().join(file)).unwrap();
        assert!(x == y, "{file} differs");
    }
}

#[test]
fn binary_exit_codes() {
    let circle = config_path("unit_circle.toml");
    assert_eq!(dtsm(&["eig", circle.to_str().unwrap()]).status.code(), Some(1));
    assert_eq!(dtsm(&["validate", config_path("p1_lq.toml").to_str().unwrap()]).status.code(), Some(0));
    assert_eq!(dtsm(&["validate", "/nonexistent/config.toml"]).status.code(), Some(2));
    let p1 = config_path("p1_lq.toml");
    let out = dtsm(&["solve", p1.to_str().unwrap(), "--stages", "validate,dpe"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("requires stage"));
}
