//! End-to-end runs of the `viewdrift` binary.

use std::path::Path;
use std::process::{Command, Output};

use viewdrift::harness::{attack_suite, read_records, save_dir, RunConfig, ScenarioSource};

fn viewdrift(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_viewdrift"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("VIEWDRIFT_OUT")
        .output()
        .expect("binary runs")
}

fn files_with(dir: &Path, ext: &str) -> usize {
    std::fs::read_dir(dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == ext))
        .count()
}

/// Config attacking two suite scenarios with a short, small optimization.
fn quick_config(dir: &Path) -> std::path::PathBuf {
    let scn = dir.join("input");
    save_dir(&scn, &attack_suite(1).unwrap()[..2]).unwrap();
    let mut cfg = RunConfig { scenarios: ScenarioSource::Dir(scn), ..RunConfig::default() };
    cfg.experiment.attack.steps = 10;
    cfg.experiment.attack.texture_height = 16;
    cfg.experiment.attack.texture_width = 16;
    let path = dir.join("run.toml");
    std::fs::write(&path, toml::to_string(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn default_config_parses_back() {
    let dir = tempfile::tempdir().unwrap();
    let out = viewdrift(&["default-config"], dir.path());
    assert!(out.status.success());
    let cfg: RunConfig = toml::from_str(std::str::from_utf8(&out.stdout).unwrap()).unwrap();
    assert_eq!(cfg, RunConfig::default());
}

#[test]
fn generate_writes_the_bank() {
    let dir = tempfile::tempdir().unwrap();
    let out = viewdrift(&["generate"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(files_with(&dir.path().join("scenarios"), "scn"), 220);
}

#[test]
fn attack_then_report_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    let out_dir = dir.path().join("out");

    let out = viewdrift(&["attack", "--config", cfg, "--jobs", "2"], &out_dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let records = read_records(&out_dir.join("records.csv")).unwrap();
    assert_eq!(records.len(), 4);
    assert!(out_dir.join("summary.json").exists());
    assert!(files_with(&out_dir, "ppm") >= 2);

    std::fs::remove_file(out_dir.join("summary.json")).unwrap();
    let out = viewdrift(&["report"], &out_dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert!(summary.is_object());

    // evaluate the first texture with its own direction
    let r = &records[0];
    let mut run: RunConfig = toml::from_str(&std::fs::read_to_string(cfg).unwrap()).unwrap();
    run.eval.texture = Some(out_dir.join(&r.texture));
    run.eval.u = [r.u_x, r.u_y];
    let eval_cfg = dir.path().join("eval.toml");
    std::fs::write(&eval_cfg, toml::to_string(&run).unwrap()).unwrap();
    let eval_dir = dir.path().join("eval");
    let out = viewdrift(&["eval", "--config", eval_cfg.to_str().unwrap()], &eval_dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read_records(&eval_dir.join("records.csv")).unwrap().len(), 4);
}

#[test]
fn bad_config_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "[experiment]\nseeds = []\n").unwrap();
    let out = viewdrift(&["attack", "--config", path.to_str().unwrap()], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}
