use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn fieldinv(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fieldinv"))
        .args(args)
        .arg("--config")
        .arg(dir.join("cfg.json"))
        .arg("--workdir")
        .arg(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn write_cfg(dir: &Path, body: &str) {
    fs::write(dir.join("cfg.json"), body).unwrap();
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Small transient-diffusion run: coarse grid, few modes, short chain.
const SMALL_TD: &str = r#"{
  "schema_version": 1,
  "case": "transient_diffusion",
  "grid": {"nodes": [41], "extent": [[0.0, 1.0]]},
  "basis": {"r": 4, "stored_rank": 8, "length_nodes": 32},
  "surrogate": {"forward_level": 1, "forward_validation": 5, "prior_order": 7, "prior_validation": 50,
                "coc_order": 7, "coc_internal_rank": 16},
  "mcmc": {"steps": 2000, "burn_in": 1000, "adapt_interval": 200, "thin": 2, "checkpoint_every": 500},
  "post": {"stride": 1}
}"#;

#[test]
fn field_errors_name_the_path() {
    let dir = tempfile::tempdir().unwrap();
    write_cfg(dir.path(), r#"{"schema_version": 1, "case": "transient_diffusion", "basis": {"r": "eight"}}"#);
    let o = fieldinv(dir.path(), &["build-basis"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("basis.r"), "{}", stderr(&o));
}

#[test]
fn rank_above_grid_size_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    write_cfg(
        dir.path(),
        r#"{"schema_version": 1, "case": "transient_diffusion", "grid": {"nodes": [21], "extent": [[0.0, 1.0]]},
            "basis": {"r": 30, "stored_rank": 30}}"#,
    );
    let o = fieldinv(dir.path(), &["build-basis"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn missing_bundle_names_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    write_cfg(dir.path(), SMALL_TD);
    let o = fieldinv(dir.path(), &["sample"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("build-basis"), "{}", stderr(&o));
}

#[test]
fn unreachable_prior_threshold_exits_with_accuracy_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SMALL_TD.replace(r#""prior_order": 7,"#, r#""prior_order": 3, "prior_order_max": 5, "prior_rrmse_max": 1e-14,"#);
    write_cfg(dir.path(), &cfg);
    assert!(fieldinv(dir.path(), &["build-basis"]).status.success());
    let o = fieldinv(dir.path(), &["build-surrogates"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("RRMSE"));
}

#[test]
fn small_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_cfg(d, SMALL_TD);
    assert!(fieldinv(d, &["build-basis"]).status.success());
    let basis = fs::read(d.join("basis.bin")).unwrap();
    assert!(fieldinv(d, &["build-basis"]).status.success());
    assert_eq!(basis, fs::read(d.join("basis.bin")).unwrap());

    let o = fieldinv(d, &["build-surrogates"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let first: serde_json::Value = serde_json::from_slice(&fs::read(d.join("surrogate_report.json")).unwrap()).unwrap();
    assert_eq!(first["forward_solved"], first["forward_nodes"]);
    let forward = fs::read(d.join("forward.bin")).unwrap();
    assert!(fieldinv(d, &["build-surrogates"]).status.success());
    let second: serde_json::Value = serde_json::from_slice(&fs::read(d.join("surrogate_report.json")).unwrap()).unwrap();
    assert_eq!(second["forward_solved"], 0);
    assert_eq!(second["forward_cached"], first["forward_nodes"]);
    assert_eq!(forward, fs::read(d.join("forward.bin")).unwrap());

    assert!(fieldinv(d, &["make-data"]).status.success());
    let obs = fs::read_to_string(d.join("observations.csv")).unwrap();
    assert_eq!(obs.lines().count(), 235);
    assert!(fieldinv(d, &["make-data"]).status.success());
    assert_eq!(obs, fs::read_to_string(d.join("observations.csv")).unwrap());

    let o = fieldinv(d, &["sample"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(!d.join("checkpoint_com.json").exists());
    let chain = fs::read(d.join("chain_com.json")).unwrap();
    let o = fieldinv(d, &["post"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let q = fs::read_to_string(d.join("quantiles_com.csv")).unwrap();
    assert_eq!(q.lines().next().unwrap(), "x,q01,q05,q50,q95,q99,mean,map");
    assert_eq!(q.lines().count(), 42);
    let s: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("summary_com.json")).unwrap()).unwrap();
    let rate = s["acceptance_rate"].as_f64().unwrap();
    assert!(rate > 0.0 && rate < 1.0);
    assert_eq!(s["coordinates"].as_array().unwrap().len(), 4);
    assert!(s["multi_ess"].as_f64().unwrap() > 0.0);

    // sampling is reproducible from the config seed
    assert!(fieldinv(d, &["sample"]).status.success());
    assert_eq!(chain, fs::read(d.join("chain_com.json")).unwrap());

    let o = fieldinv(d, &["sample", "--mode", "coc"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(fieldinv(d, &["post", "--mode", "coc"]).status.success());
    assert!(d.join("summary_coc.json").exists());
}

#[test]
fn coc_without_bundle_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_cfg(d, &SMALL_TD.replace(r#""coc_order": 7,"#, r#""build_coc": false, "coc_order": 7,"#));
    for stage in ["build-basis", "build-surrogates", "make-data"] {
        assert!(fieldinv(d, &[stage]).status.success());
    }
    let o = fieldinv(d, &["sample", "--mode", "coc"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("build_coc"), "{}", stderr(&o));
}

#[test]
fn tomography_data_has_115_rows() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_cfg(d, r#"{"schema_version": 1, "case": "tomography"}"#);
    assert!(fieldinv(d, &["build-basis"]).status.success());
    let o = fieldinv(d, &["make-data"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let obs = fs::read_to_string(d.join("observations.csv")).unwrap();
    assert_eq!(obs.lines().next().unwrap(), "source_id,receiver_id,time");
    assert_eq!(obs.lines().count(), 116);
    let truth: serde_json::Value = serde_json::from_slice(&fs::read(d.join("truth.json")).unwrap()).unwrap();
    assert_eq!(truth["best_projection"].as_array().unwrap().len(), 20);
    assert_eq!(truth["sigma"], 0.002);
}
